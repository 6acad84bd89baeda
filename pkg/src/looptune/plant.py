"""Linearized compressor-plenum-throttle plant and servo models.

The pressure path is a two-state small-signal model around a healthy
operating point (duct momentum + plenum mass balance), exposed as a
second-order transfer function from vane position to pressure rise.
The vane servo is a first-order lag. Both are discretized with the
bilinear transform for sample-by-sample closed-loop simulation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the compressor loop plus the sampling period.

    All quantities are nondimensional except the servo time constant
    ``T_v`` and sampling period ``T_s`` (seconds).
    """

    ell_c: float = 2.0      # duct length parameter
    B: float = 2.0          # compressibility/inertia parameter
    k_T: float = 0.20       # throttle pressure-flow slope
    a: float = 0.18         # characteristic slope wrt flow at the operating point
    alpha: float = 0.30     # characteristic slope wrt vane position
    K_v: float = 1.0        # servo static gain
    T_v: float = 0.5        # servo time constant [s]
    T_s: float = 0.1        # sampling period [s]

    def __post_init__(self):
        if self.ell_c <= 0 or self.B <= 0 or self.k_T <= 0:
            raise ValueError("ell_c, B and k_T must be positive")
        if self.T_v <= 0:
            raise ValueError("servo time constant must be positive")
        if self.T_s <= 0:
            raise ValueError("sampling period must be positive")


@dataclass(frozen=True)
class OperatingPoint:
    """Linearization anchor; simulated signals are deviations from it."""

    phi_bar: float = 0.0
    psi_bar: float = 0.0
    u_bar: float = 0.0


@dataclass(frozen=True)
class ContinuousTf:
    """Rational transfer function in s, coefficients in descending powers."""

    num: tuple[float, ...]
    den: tuple[float, ...]

    def __post_init__(self):
        num = tuple(float(c) for c in self.num)
        den = tuple(float(c) for c in self.den)
        if not den or den[0] == 0:
            raise ValueError("denominator must have a nonzero leading coefficient")
        if len(num) > len(den):
            raise ValueError("transfer function must be proper")
        # normalize leading denominator coefficient to 1
        lead = den[0]
        object.__setattr__(self, "num", tuple(c / lead for c in num))
        object.__setattr__(self, "den", tuple(c / lead for c in den))

    def dc_gain(self) -> float:
        return self.num[-1] / self.den[-1]

    def poles(self) -> np.ndarray:
        return np.roots(self.den)


class DiscreteTf:
    """Discrete-time filter with streaming state (direct form II transposed).

    ``b`` multiplies z^0..z^-n on the input, ``a`` on the output with
    a[0] = 1. One instance carries the state of one signal stream.
    """

    def __init__(self, b, a):
        b = [float(x) for x in b]
        a = [float(x) for x in a]
        if not a or a[0] == 0:
            raise ValueError("a[0] must be nonzero")
        if a[0] != 1.0:
            b = [x / a[0] for x in b]
            a = [x / a[0] for x in a]
        n = max(len(b), len(a)) - 1
        self.b = b + [0.0] * (n + 1 - len(b))
        self.a = a + [0.0] * (n + 1 - len(a))
        self._w = [0.0] * n

    @property
    def order(self) -> int:
        return len(self._w)

    def reset(self) -> None:
        self._w = [0.0] * self.order

    def copy(self) -> "DiscreteTf":
        dup = DiscreteTf(self.b, self.a)
        dup._w = list(self._w)
        return dup

    def poles(self) -> np.ndarray:
        return np.roots(self.a)

    def dc_gain(self) -> float:
        return sum(self.b) / sum(self.a)

    def step_one(self, u: float) -> float:
        """Advance one sample and return the output."""
        b, a, w = self.b, self.a, self._w
        n = len(w)
        if n == 0:
            return b[0] * u
        y = b[0] * u + w[0]
        for i in range(n - 1):
            w[i] = b[i + 1] * u + w[i + 1] - a[i + 1] * y
        w[n - 1] = b[n] * u - a[n] * y
        return y

    def simulate(self, u) -> np.ndarray:
        """Filter a whole input sequence, continuing from the current state."""
        return np.array([self.step_one(float(v)) for v in np.asarray(u, float)])


def linearized_pressure_tf(params: PlantParams, c1: float = 0.0) -> ContinuousTf:
    """Second-order vane-to-pressure-rise transfer function.

    Derived from the two-state small-signal model: duct momentum
    phi' = (a*phi + alpha*u - psi)/ell_c and plenum balance
    psi' = (phi - psi/k_T)/(4 B^2 ell_c). The numerator is constant
    under this derivation; an alternative first-order numerator term
    can be injected through ``c1``.
    """
    lc, B, kT, a, alpha = params.ell_c, params.B, params.k_T, params.a, params.alpha
    two_zeta_wn = (1.0 / lc) * (1.0 / (4.0 * B * B * kT) - a)
    wn_sq = (1.0 - a / kT) / (4.0 * B * B * lc * lc)
    c0 = alpha / (4.0 * B * B * lc * lc)
    if two_zeta_wn <= 0 or wn_sq <= 0:
        raise ValueError(
            "operating point is outside the healthy region: "
            f"denominator s^2 + {two_zeta_wn:g} s + {wn_sq:g} is not stable"
        )
    return ContinuousTf(num=(c1, c0), den=(1.0, two_zeta_wn, wn_sq))


def servo_tf(params: PlantParams) -> ContinuousTf:
    """First-order vane servo lag K_v / (1 + T_v s)."""
    return ContinuousTf(num=(params.K_v,), den=(params.T_v, 1.0))


def tustin_discretize(tf: ContinuousTf, T_s: float) -> DiscreteTf:
    """Bilinear-transform discretization, s <- (2/T_s)(1 - z^-1)/(1 + z^-1).

    DC gain is preserved exactly; a continuous pole at s = 2/T_s makes
    the substitution singular and is rejected.
    """
    if T_s <= 0:
        raise ValueError("sampling period must be positive")
    den = np.asarray(tf.den, float)
    c = 2.0 / T_s
    # a continuous pole at s = 2/T_s maps to |z| -> inf
    if np.polyval(den, c) == 0.0:
        raise ValueError("continuous pole at s = 2/T_s: Tustin map is singular")
    b, a = signal.bilinear(np.asarray(tf.num, float), den, fs=1.0 / T_s)
    if abs(a[0]) < 1e-12 * max(1.0, float(np.max(np.abs(a)))):
        raise ValueError("continuous pole at s = 2/T_s: Tustin map is singular")
    return DiscreteTf(b / a[0], a / a[0])


def simulate_lti(tf: DiscreteTf, u) -> np.ndarray:
    """Run an input sequence through a fresh copy of the filter."""
    f = tf.copy()
    return f.simulate(u)
