"""Step-metric and pass/fail rule tests against closed-form responses."""

import numpy as np
import pytest

from looptune.control import SimConfig, StepResponseTrace
from looptune.metrics import (
    SpecThresholds,
    StepMetrics,
    pass_fail,
    step_metrics,
)


def trace_from(y, T_s=0.01, diverged=False):
    n = len(y)
    t = np.arange(n) * T_s
    z = np.zeros(n)
    return StepResponseTrace(
        t=t, r1=np.ones(n), u1=z, u2=z, y1=np.asarray(y, float), y2=z,
        T_s=T_s, diverged=diverged,
    )


NF = SimConfig(noise_free=True)


class TestStepMetricsOracle:
    def test_first_order_exponential(self):
        # y(t) = 1 - exp(-t): rise 10->90 is ln 9, settle into a 0.05 band
        # at ln 20, overshoot 0. Dense grid, long horizon so the tail mean
        # equals 1 to high accuracy.
        T_s = 0.001
        t = np.arange(0, 60.0, T_s)
        y = 1.0 - np.exp(-t)
        m = step_metrics(trace_from(y, T_s), NF)
        assert m.e_ss == pytest.approx(0.0, abs=1e-6)
        assert m.t_rise == pytest.approx(np.log(9.0), abs=2 * T_s)
        assert m.t_settle == pytest.approx(np.log(20.0), abs=2 * T_s)
        assert m.overshoot == pytest.approx(0.0, abs=1e-4)

    def test_damped_oscillation_overshoot(self):
        # y(t) = 1 + 0.3 exp(-t) cos(2 pi t): peak 1.3 at t=0 tail -> 1,
        # overshoot 30%.
        T_s = 0.001
        t = np.arange(0, 80.0, T_s)
        y = 1.0 + 0.3 * np.exp(-t) * np.cos(2 * np.pi * t)
        m = step_metrics(trace_from(y, T_s), NF)
        assert m.overshoot == pytest.approx(30.0, abs=0.1)
        assert m.e_ss == pytest.approx(0.0, abs=1e-3)

    def test_instant_step_settles_at_zero(self):
        y = np.ones(1000)
        m = step_metrics(trace_from(y), NF)
        assert m.t_settle == 0.0
        assert m.t_rise == 0.0
        assert m.e_ss == pytest.approx(0.0)
        assert m.overshoot == pytest.approx(0.0)

    def test_negative_step_direction(self):
        T_s = 0.001
        t = np.arange(0, 60.0, T_s)
        y = -(1.0 - np.exp(-t))
        m = step_metrics(trace_from(y, T_s), SimConfig(r_step=-1.0, noise_free=True))
        assert m.e_ss == pytest.approx(0.0, abs=1e-6)
        assert m.t_rise == pytest.approx(np.log(9.0), abs=2 * T_s)
        assert m.overshoot == pytest.approx(0.0, abs=1e-4)

    def test_never_settles_is_undefined(self):
        # Sustained oscillation wider than the band: no settling time.
        T_s = 0.01
        t = np.arange(0, 100.0, T_s)
        y = 1.0 + 0.2 * np.cos(0.5 * t)
        m = step_metrics(trace_from(y, T_s), NF)
        assert m.t_settle is None

    def test_diverged_trace_all_undefined(self):
        m = step_metrics(trace_from(np.ones(100), diverged=True), NF)
        assert m.as_tuple() == (None, None, None, None)

    def test_flat_zero_response(self):
        m = step_metrics(trace_from(np.zeros(500)), NF)
        assert m.e_ss == pytest.approx(-1.0)
        assert m.t_rise is None and m.t_settle is None and m.overshoot is None


class TestNoisyMetrics:
    def test_noise_robust_settling(self):
        # A settled response plus noise below the smoothing-averaged level
        # must still register as settled well before the horizon.
        rng = np.random.default_rng(0)
        T_s = 0.1
        t = np.arange(0, 100.0, T_s)
        y = (1.0 - np.exp(-t)) + 0.1 * rng.standard_normal(len(t))
        m = step_metrics(trace_from(y, T_s), SimConfig())
        assert m.t_settle is not None
        assert m.t_settle < 20.0
        assert abs(m.e_ss) < 0.01


class TestPassFail:
    def test_undefined_metric_fails(self):
        assert pass_fail(StepMetrics(0.0, 1.0, None, 0.0), SpecThresholds()) == 0

    def test_thresholds_are_inclusive(self):
        tau = SpecThresholds()
        at_limits = StepMetrics(
            e_ss=tau.tau_e, t_rise=tau.tau_rise, t_settle=tau.tau_settle,
            overshoot=tau.tau_os,
        )
        assert pass_fail(at_limits, tau) == 1

    def test_each_violation_fails(self):
        tau = SpecThresholds()
        ok = StepMetrics(0.0, 1.0, 2.0, 0.0)
        assert pass_fail(ok, tau) == 1
        assert pass_fail(StepMetrics(0.02, 1.0, 2.0, 0.0), tau) == 0
        assert pass_fail(StepMetrics(-0.02, 1.0, 2.0, 0.0), tau) == 0
        assert pass_fail(StepMetrics(0.0, 25.0, 2.0, 0.0), tau) == 0
        assert pass_fail(StepMetrics(0.0, 1.0, 60.0, 0.0), tau) == 0
        assert pass_fail(StepMetrics(0.0, 1.0, 2.0, 25.0), tau) == 0

    def test_thresholds_validated(self):
        with pytest.raises(ValueError):
            SpecThresholds(tau_e=0.0)
