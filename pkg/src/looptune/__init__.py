"""Historian-driven minimal retuning of PID loops on a simulated
compressor pressure process.

The library simulates a two-loop compressor plenum pressure process,
reconstructs past controller tunings from historian records, labels them
against step-response criteria, and searches for the smallest plausible
parameter change that flips a failing baseline to passing.
"""

from .control import ControllerTheta, PidParams, SimConfig, simulate_closed_loop
from .gpc import GpcFitError, fit_laplace, predict
from .ident import (HistorianBatch, LabeledDataset, generate_historian,
                    identify_controller, identify_pid, label_controllers,
                    label_step_test)
from .metrics import SpecThresholds, StepMetrics, pass_fail, step_metrics
from .outliers import lof_score
from .plant import (ContinuousTf, DiscreteTf, PlantParams,
                    linearized_pressure_tf, servo_tf, tustin_discretize)
from .search import (CostSpec, CounterfactualResult, PenaltySchedule,
                     expected_improvement, find_counterfactual, propose,
                     sample_decision_boundary)

__version__ = "0.1.0"

__all__ = [
    "ContinuousTf", "ControllerTheta", "CostSpec", "CounterfactualResult",
    "DiscreteTf", "GpcFitError", "HistorianBatch", "LabeledDataset",
    "PenaltySchedule", "PidParams", "PlantParams", "SimConfig",
    "SpecThresholds", "StepMetrics", "expected_improvement",
    "find_counterfactual", "fit_laplace", "generate_historian",
    "identify_controller", "identify_pid", "label_controllers",
    "label_step_test",
    "linearized_pressure_tf", "lof_score", "pass_fail", "predict",
    "propose", "sample_decision_boundary", "servo_tf", "simulate_closed_loop",
    "step_metrics", "tustin_discretize",
]
