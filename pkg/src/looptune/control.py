"""Discrete position-form PID and closed-loop step-test simulators.

Two loop architectures are supported: a single pressure loop where the
pressure controller drives the servo valve directly, and a cascade
where an inner controller closes the vane-position loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.signal import lfilter

from .plant import DiscreteTf

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class PidParams:
    """PID gains with a first-order derivative filter."""

    K_p: float
    K_i: float = 0.0
    K_d: float = 0.0
    T_f: float = 0.1

    def __post_init__(self):
        vals = (self.K_p, self.K_i, self.K_d, self.T_f)
        if not all(np.isfinite(vals)):
            raise ValueError("PID parameters must be finite")
        if self.K_d != 0.0 and self.T_f <= 0.0:
            raise ValueError("derivative filter time constant must be positive when K_d != 0")

    def as_array(self) -> np.ndarray:
        return np.array([self.K_p, self.K_i, self.K_d, self.T_f])


@dataclass(frozen=True)
class ControllerTheta:
    """Controller parameter vector: outer PID plus optional inner PID."""

    outer: PidParams
    inner: Optional[PidParams] = None

    @property
    def dim(self) -> int:
        return 4 if self.inner is None else 8

    def as_vector(self) -> np.ndarray:
        v = self.outer.as_array()
        if self.inner is not None:
            v = np.concatenate([v, self.inner.as_array()])
        return v

    @staticmethod
    def from_vector(v) -> "ControllerTheta":
        v = np.asarray(v, float)
        if v.shape == (4,):
            return ControllerTheta(outer=PidParams(*v))
        if v.shape == (8,):
            return ControllerTheta(outer=PidParams(*v[:4]), inner=PidParams(*v[4:]))
        raise ValueError("controller vector must have 4 or 8 entries")


@dataclass(frozen=True)
class SimConfig:
    """Step-test configuration: excitation, noise and horizon."""

    r_step: float = 1.0
    horizon: float = 100.0      # [s]
    T_s: float = 0.1            # [s], must match the plant discretization
    sigma2_outer: float = 0.01  # variance of the pressure measurement noise
    sigma2_inner: float = 0.005 # variance of the vane-position measurement noise
    noise_free: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.sigma2_outer < 0 or self.sigma2_inner < 0:
            raise ValueError("noise variances must be nonnegative")
        if self.horizon <= 50.0:
            raise ValueError("horizon must exceed the 50 s settling threshold")


@dataclass
class StepResponseTrace:
    """Recorded closed-loop signals on a uniform time grid."""

    t: np.ndarray
    r1: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    T_s: float
    diverged: bool = False

    def __post_init__(self):
        n = len(self.t)
        for name in ("r1", "u1", "u2", "y1", "y2"):
            if len(getattr(self, name)) != n:
                raise ValueError("trace signals must have equal lengths")


class DiscretePid:
    """Position-form PID: forward-Euler integral, Tustin-filtered derivative.

    u[k] = K_p e[k] + I[k] + D[k]
    I[k] = I[k-1] + K_i T_s e[k-1]
    D[k] = (2T_f - T_s)/(2T_f + T_s) D[k-1] + 2K_d/(2T_f + T_s) (e[k] - e[k-1])
    """

    def __init__(self, pid: PidParams, T_s: float):
        if T_s <= 0:
            raise ValueError("sampling period must be positive")
        if pid.K_d != 0.0 and pid.T_f <= 0.0:
            raise ValueError("derivative filter time constant must be positive when K_d != 0")
        self.kp = pid.K_p
        self.ki_ts = pid.K_i * T_s
        if pid.K_d != 0.0:
            den = 2.0 * pid.T_f + T_s
            self.ad = (2.0 * pid.T_f - T_s) / den
            self.bd = 2.0 * pid.K_d / den
        else:
            self.ad = 0.0
            self.bd = 0.0
        self.reset()

    def reset(self) -> None:
        self._i = 0.0
        self._d = 0.0
        self._e_prev = 0.0

    def step_one(self, e: float) -> float:
        d = self.ad * self._d + self.bd * (e - self._e_prev)
        u = self.kp * e + self._i + d
        self._i += self.ki_ts * e
        self._d = d
        self._e_prev = e
        return u


def pid_response(pid: PidParams, e, T_s: float) -> np.ndarray:
    """Vectorized PID output for a full error sequence (zero initial state)."""
    e = np.asarray(e, float)
    i_term = pid.K_i * T_s * np.concatenate([[0.0], np.cumsum(e)[:-1]])
    if pid.K_d != 0.0:
        den = 2.0 * pid.T_f + T_s
        ad = (2.0 * pid.T_f - T_s) / den
        bd = 2.0 * pid.K_d / den
        de = np.diff(e, prepend=0.0)
        d_term = lfilter([bd], [1.0, -ad], de)
    else:
        d_term = 0.0
    return pid.K_p * e + i_term + d_term


def simulate_closed_loop(
    g1d: DiscreteTf,
    g2d: DiscreteTf,
    theta: ControllerTheta,
    cfg: SimConfig,
    reference: Optional[np.ndarray] = None,
) -> StepResponseTrace:
    """Run a closed-loop test and record the historian signals.

    Per sample the loop is evaluated as: read measurements (previous
    plant outputs plus fresh noise), compute controllers, advance the
    plants. The recorded y1/y2 are the measurements the controllers
    acted on, which is what a plant historian archives.

    If |y1| exceeds the divergence bound the trace is truncated and
    flagged, which downstream labeling treats as a fail.
    """
    T_s = cfg.T_s
    n = int(round(cfg.horizon / T_s))
    t = np.arange(n) * T_s
    if reference is None:
        r = np.full(n, float(cfg.r_step))
    else:
        r = np.asarray(reference, float)
        if len(r) != n:
            raise ValueError("reference length must match the horizon")

    rng = np.random.default_rng(cfg.seed)
    if cfg.noise_free:
        v1 = np.zeros(n)
        v2 = np.zeros(n)
    else:
        v1 = np.sqrt(cfg.sigma2_outer) * rng.standard_normal(n)
        v2 = np.sqrt(cfg.sigma2_inner) * rng.standard_normal(n)

    g1 = g1d.copy()
    g2 = g2d.copy()
    c1 = DiscretePid(theta.outer, T_s)
    c2 = DiscretePid(theta.inner, T_s) if theta.inner is not None else None

    u1_rec = np.zeros(n)
    u2_rec = np.zeros(n)
    y1_rec = np.zeros(n)
    y2_rec = np.zeros(n)
    y1_prev = 0.0
    y2_prev = 0.0
    diverged = False
    for k in range(n):
        y1m = y1_prev + v1[k]
        y2m = y2_prev + v2[k]
        u1 = c1.step_one(r[k] - y1m)
        if c2 is None:
            u2 = u1
        else:
            u2 = c2.step_one(u1 - y2m)
        y2_prev = g2.step_one(u2)
        y1_prev = g1.step_one(y2_prev)
        u1_rec[k] = u1
        u2_rec[k] = u2
        y1_rec[k] = y1m
        y2_rec[k] = y2m
        if not (abs(y1_prev) < DIVERGENCE_BOUND):
            diverged = True
            k += 1
            t, r = t[:k], r[:k]
            u1_rec, u2_rec = u1_rec[:k], u2_rec[:k]
            y1_rec, y2_rec = y1_rec[:k], y2_rec[:k]
            break

    return StepResponseTrace(
        t=t, r1=r, u1=u1_rec, u2=u2_rec, y1=y1_rec, y2=y2_rec, T_s=T_s, diverged=diverged
    )
