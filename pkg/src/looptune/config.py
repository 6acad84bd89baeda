"""Experiment configuration parsed from a flat INI file.

Every numeric default stated by the library is overridable from the
file; a handful of fields (case, master seed, output directory, the
baseline controller) have no sensible default and must be present.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .control import ControllerTheta, PidParams, SimConfig
from .metrics import SpecThresholds
from .plant import PlantParams
from .search import PenaltySchedule


class ConfigError(Exception):
    """Raised for unreadable, incomplete, or inconsistent configuration."""


# default archive nominal: a mid-range tuning the simulated plant was
# historically operated with; past tunings are drawn around it
DEFAULT_NOMINAL_OUTER = (3.5, 0.08, 35.0, 0.3)
DEFAULT_NOMINAL_INNER = (2.0, 1.0, 0.5, 0.1)

# default baseline instances: reliably failing tunings that sit close to
# the pass/fail boundary of the simulated loop
DEFAULT_THETA0_OUTER = (3.0, 0.04, 40.0, 0.3)
DEFAULT_THETA0_INNER = (2.0, 1.0, 0.5, 0.1)


@dataclass
class ExperimentConfig:
    """Everything one Monte-Carlo retuning experiment needs."""

    case: str                      # "single" or "cascade"
    master_seed: int
    output_dir: Path
    theta0: ControllerTheta
    nominal: ControllerTheta
    instance: str = ""
    plant: PlantParams = field(default_factory=PlantParams)
    sim: SimConfig = field(default_factory=SimConfig)
    tau: SpecThresholds = field(default_factory=SpecThresholds)
    schedule: PenaltySchedule = field(default_factory=PenaltySchedule)
    n_hist: int = 30
    hist_spread: float = 0.5
    hist_samples: int = 1000
    beta: float = 0.1
    lof_k: int = 10
    lof_threshold: float = 1.5
    distance_weights: str = "scale"   # "scale" (raw-unit moves) or "unit"
    budget: int = 60
    n_starts: int = 16
    n_mc: int = 256
    max_extra_iters: int = 3
    n_runs: int = 100
    n_workers: int = 0             # 0 = available parallelism

    def __post_init__(self):
        if self.case not in ("single", "cascade"):
            raise ConfigError(f"experiment.case must be single or cascade, got {self.case!r}")
        if self.n_runs < 1:
            raise ConfigError("experiment.n_runs must be at least 1")
        want = 8 if self.case == "cascade" else 4
        if self.theta0.dim != want:
            raise ConfigError(
                f"instance.theta0 has {self.theta0.dim} entries; case {self.case} needs {want}"
            )
        if self.nominal.dim != want:
            raise ConfigError(
                f"instance.nominal has {self.nominal.dim} entries; case {self.case} needs {want}"
            )
        if self.distance_weights not in ("scale", "unit"):
            raise ConfigError("cost.distance_weights must be 'scale' or 'unit'")
        if not self.instance:
            self.instance = "case2" if self.case == "cascade" else "case1"

    @property
    def cascade(self) -> bool:
        return self.case == "cascade"


_REQUIRED = object()


def _get(cp, section, key, cast, default=_REQUIRED):
    if not cp.has_option(section, key):
        if default is _REQUIRED:
            raise ConfigError(f"missing required config field: {section}.{key}")
        return default
    raw = cp.get(section, key)
    try:
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


def _floats(raw: str) -> list[float]:
    return [float(tok) for tok in raw.replace(",", " ").split()]


def _theta_from_values(values, cascade: bool, what: str) -> ControllerTheta:
    want = 8 if cascade else 4
    if len(values) != want:
        raise ConfigError(f"{what} needs {want} comma-separated values, got {len(values)}")
    outer = PidParams(*values[:4])
    inner = PidParams(*values[4:]) if cascade else None
    return ControllerTheta(outer=outer, inner=inner)


def default_theta0(cascade: bool) -> ControllerTheta:
    vals = list(DEFAULT_THETA0_OUTER) + (list(DEFAULT_THETA0_INNER) if cascade else [])
    return _theta_from_values(vals, cascade, "default theta0")


def default_nominal(cascade: bool) -> ControllerTheta:
    vals = list(DEFAULT_NOMINAL_OUTER) + (list(DEFAULT_NOMINAL_INNER) if cascade else [])
    return _theta_from_values(vals, cascade, "default nominal")


def load_config(path) -> ExperimentConfig:
    """Parse an INI experiment file; raises ConfigError on any problem."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config file {path}: {exc}") from exc

    case = _get(cp, "experiment", "case", str)
    cascade = case == "cascade"
    master_seed = _get(cp, "experiment", "master_seed", int)
    output_dir = Path(_get(cp, "experiment", "output_dir", str))

    if cp.has_option("instance", "theta0"):
        theta0 = _theta_from_values(_floats(cp.get("instance", "theta0")), cascade,
                                    "instance.theta0")
    else:
        theta0 = default_theta0(cascade)
    if cp.has_option("instance", "nominal"):
        nominal = _theta_from_values(_floats(cp.get("instance", "nominal")), cascade,
                                     "instance.nominal")
    else:
        nominal = default_nominal(cascade)

    plant = PlantParams(
        ell_c=_get(cp, "plant", "ell_c", float, 2.0),
        B=_get(cp, "plant", "B", float, 2.0),
        k_T=_get(cp, "plant", "k_T", float, 0.20),
        a=_get(cp, "plant", "a", float, 0.18),
        alpha=_get(cp, "plant", "alpha", float, 0.30),
        K_v=_get(cp, "plant", "K_v", float, 1.0),
        T_v=_get(cp, "plant", "T_v", float, 0.5),
        T_s=_get(cp, "sim", "T_s", float, 0.1),
    )
    sim = SimConfig(
        r_step=_get(cp, "sim", "r_step", float, 1.0),
        horizon=_get(cp, "sim", "horizon", float, 100.0),
        T_s=_get(cp, "sim", "T_s", float, 0.1),
        sigma2_outer=_get(cp, "sim", "sigma2_outer", float, 0.01),
        sigma2_inner=_get(cp, "sim", "sigma2_inner", float, 0.005),
        noise_free=_get(cp, "sim", "noise_free", bool, False),
        seed=0,
    )
    tau = SpecThresholds(
        tau_e=_get(cp, "thresholds", "tau_e", float, 0.01),
        tau_rise=_get(cp, "thresholds", "tau_rise", float, 20.0),
        tau_settle=_get(cp, "thresholds", "tau_settle", float, 50.0),
        tau_os=_get(cp, "thresholds", "tau_os", float, 20.0),
        band=_get(cp, "thresholds", "band", float, 0.05),
    )
    schedule = PenaltySchedule(
        lambda0=_get(cp, "penalty", "lambda0", float, 2.0),
        lambda_max=_get(cp, "penalty", "lambda_max", float, 1e3),
        growth=_get(cp, "penalty", "growth", float, 1.2),
        epsilon=_get(cp, "penalty", "epsilon", float, 1e-3),
    )
    return ExperimentConfig(
        case=case,
        master_seed=master_seed,
        output_dir=output_dir,
        theta0=theta0,
        nominal=nominal,
        instance=_get(cp, "instance", "name", str, ""),
        plant=plant,
        sim=sim,
        tau=tau,
        schedule=schedule,
        n_hist=_get(cp, "historian", "n_hist", int, 30),
        hist_spread=_get(cp, "historian", "spread", float, 0.5),
        hist_samples=_get(cp, "historian", "n_samples", int, 1000),
        beta=_get(cp, "cost", "beta", float, 0.1),
        lof_k=_get(cp, "cost", "lof_k", int, 10),
        lof_threshold=_get(cp, "cost", "lof_threshold", float, 1.5),
        distance_weights=_get(cp, "cost", "distance_weights", str, "scale"),
        budget=_get(cp, "search", "budget", int, 60),
        n_starts=_get(cp, "search", "n_starts", int, 16),
        n_mc=_get(cp, "search", "n_mc", int, 256),
        max_extra_iters=_get(cp, "search", "max_extra_iters", int, 3),
        n_runs=_get(cp, "experiment", "n_runs", int, 100),
        n_workers=_get(cp, "experiment", "n_workers", int, 0),
    )
