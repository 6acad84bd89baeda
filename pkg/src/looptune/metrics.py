"""Time-domain step-response metrics and the pass/fail rule."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.ndimage import uniform_filter1d

from .control import SimConfig, StepResponseTrace


@dataclass(frozen=True)
class StepMetrics:
    """Specification vector of one step test; None marks an undefined metric.

    An undefined metric (a crossing that never happens, a response that
    never settles, a diverged trace) always counts as a violation.
    """

    e_ss: Optional[float]
    t_rise: Optional[float]
    t_settle: Optional[float]
    overshoot: Optional[float]

    def as_tuple(self):
        return (self.e_ss, self.t_rise, self.t_settle, self.overshoot)


@dataclass(frozen=True)
class SpecThresholds:
    """Pass thresholds: |e_ss|, rise time, settling time, overshoot percent."""

    tau_e: float = 0.01
    tau_rise: float = 20.0   # [s]
    tau_settle: float = 50.0 # [s]
    tau_os: float = 20.0     # [%]
    band: float = 0.05       # absolute settling band

    def __post_init__(self):
        if min(self.tau_e, self.tau_rise, self.tau_settle, self.tau_os, self.band) <= 0:
            raise ValueError("thresholds must be positive")


UNDEFINED = StepMetrics(None, None, None, None)


def _first_crossing(t: np.ndarray, y: np.ndarray, level: float, rising: bool) -> Optional[float]:
    hit = (y >= level) if rising else (y <= level)
    idx = np.flatnonzero(hit)
    return float(t[idx[0]]) if idx.size else None


def step_metrics(
    trace: StepResponseTrace,
    cfg: SimConfig,
    band: float = 0.05,
    smooth_window: float = 10.0,
    tail_frac: float = 0.5,
) -> StepMetrics:
    """Compute (e_ss, t_rise, t_settle, overshoot) from a step trace.

    The final value is the mean of the last ``tail_frac`` of the horizon.
    Under measurement noise the signal is smoothed with a centered moving
    average of width ``smooth_window`` seconds before crossing/settling
    detection: the settling band is smaller than the noise standard
    deviation, so raw samples can never stay in-band.
    """
    if trace.diverged or len(trace.y1) < 2:
        return UNDEFINED
    t = trace.t
    y = np.asarray(trace.y1, float)
    r_step = float(cfg.r_step)
    if r_step == 0:
        raise ValueError("step amplitude must be nonzero")

    n_tail = max(1, int(round(tail_frac * len(y))))
    y_inf = float(np.mean(y[-n_tail:]))
    e_ss = y_inf - r_step

    if cfg.noise_free:
        ys = y
    else:
        w = max(1, int(round(smooth_window / trace.T_s)))
        ys = uniform_filter1d(y, size=w, mode="nearest")

    step_change = y_inf  # signals are deviations from the pre-step point (0)
    if step_change == 0:
        return StepMetrics(e_ss=e_ss, t_rise=None, t_settle=None, overshoot=None)
    sign = 1.0 if step_change > 0 else -1.0
    rising = step_change > 0

    t10 = _first_crossing(t, ys, 0.1 * step_change, rising)
    t90 = _first_crossing(t, ys, 0.9 * step_change, rising)
    t_rise = None
    if t10 is not None and t90 is not None and t90 >= t10:
        t_rise = t90 - t10

    # settling: first time after which the smoothed response stays in-band
    outside = np.abs(ys - y_inf) > band
    if not cfg.noise_free:
        # the centered average has no forward support in the last half
        # window; those estimates collapse onto single noisy samples
        h = max(1, int(round(smooth_window / trace.T_s))) // 2
        if h > 0:
            outside[-h:] = False
    if outside[-1]:
        t_settle = None
    else:
        last_out = np.flatnonzero(outside)
        t_settle = float(t[last_out[-1] + 1]) if last_out.size else 0.0

    peak = sign * float(np.max(sign * ys))
    overshoot = 100.0 * max(0.0, sign * (peak - y_inf)) / abs(step_change)

    return StepMetrics(e_ss=e_ss, t_rise=t_rise, t_settle=t_settle, overshoot=overshoot)


def pass_fail(m: StepMetrics, tau: SpecThresholds) -> int:
    """1 iff every metric is defined and within its threshold (inclusive)."""
    if any(v is None for v in m.as_tuple()):
        return 0
    ok = (
        abs(m.e_ss) <= tau.tau_e
        and m.t_rise <= tau.tau_rise
        and m.t_settle <= tau.tau_settle
        and m.overshoot <= tau.tau_os
    )
    return int(ok)
