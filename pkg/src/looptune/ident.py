"""Synthetic historian generation and controller identification.

The historian holds closed-loop records from past controller settings.
Controller gains are not archived, so they are recovered from the
records by nonlinear least squares on the PID input/output relation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional

import numpy as np
from scipy.optimize import least_squares

from .control import (
    ControllerTheta,
    PidParams,
    SimConfig,
    StepResponseTrace,
    pid_response,
    simulate_closed_loop,
)
from .metrics import SpecThresholds, pass_fail, step_metrics
from .plant import DiscreteTf

# Search box for identification; gains are wide enough to cover the
# stabilizing region of the derived plant, the filter constant spans
# realistic derivative filters.
GAIN_LO, GAIN_HI = 0.0, 100.0
TF_LO, TF_HI = 1e-3, 1.0

KD_IDENTIFIABILITY_TOL = 1e-3


@dataclass
class HistorianBatch:
    """One archived closed-loop record: reference, controls, measurements."""

    batch_id: int
    r1: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    y1: np.ndarray
    y2: np.ndarray
    T_s: float

    MIN_SAMPLES = 200

    def __post_init__(self):
        n = len(self.r1)
        if n < self.MIN_SAMPLES:
            raise ValueError(f"batch needs at least {self.MIN_SAMPLES} samples")
        for name in ("u1", "u2", "y1", "y2"):
            sig = np.asarray(getattr(self, name), float)
            if len(sig) != n:
                raise ValueError("batch signals must have equal lengths")
            if not np.all(np.isfinite(sig)):
                raise ValueError(f"batch signal {name} contains non-finite values")

    @staticmethod
    def from_trace(batch_id: int, trace: StepResponseTrace) -> "HistorianBatch":
        return HistorianBatch(
            batch_id=batch_id,
            r1=trace.r1.copy(),
            u1=trace.u1.copy(),
            u2=trace.u2.copy(),
            y1=trace.y1.copy(),
            y2=trace.y2.copy(),
            T_s=trace.T_s,
        )


@dataclass
class LabeledDataset:
    """Controller parameter vectors with pass/fail labels and provenance."""

    thetas: np.ndarray          # (n, p)
    labels: np.ndarray          # (n,), values in {0, 1}
    provenance: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.thetas = np.atleast_2d(np.asarray(self.thetas, float))
        self.labels = np.asarray(self.labels, int)
        if self.thetas.shape[0] != len(self.labels):
            raise ValueError("thetas and labels must have the same length")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise ValueError("labels must be binary")
        if not self.provenance:
            self.provenance = ["historian"] * len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]

    def has_both_classes(self) -> bool:
        return 0 in self.labels and 1 in self.labels

    def append(self, theta: np.ndarray, label: int, provenance: str = "online") -> None:
        self.thetas = np.vstack([self.thetas, np.asarray(theta, float)])
        self.labels = np.append(self.labels, int(label))
        self.provenance.append(provenance)


@dataclass
class IdentResult:
    """Identified PID with fit diagnostics."""

    pid: PidParams
    objective: float
    stderr: np.ndarray
    tf_unidentifiable: bool


def prbs_reference(n: int, r_step: float, rng: np.random.Generator,
                   amplitude_frac: float = 0.05, chip_samples: int = 10) -> np.ndarray:
    """Step reference with a small pseudo-random binary perturbation on top."""
    n_chips = int(np.ceil(n / chip_samples))
    chips = rng.choice((-1.0, 1.0), size=n_chips)
    prbs = np.repeat(chips, chip_samples)[:n]
    return r_step * (1.0 + amplitude_frac * prbs)


def _loop_is_stable(trace: StepResponseTrace, r_step: float) -> bool:
    if trace.diverged:
        return False
    # a stabilizing loop keeps the output within a sane multiple of the step
    return bool(np.max(np.abs(trace.y1)) < 50.0 * abs(r_step))


def generate_historian(
    g1d: DiscreteTf,
    g2d: DiscreteTf,
    cfg: SimConfig,
    nominal: ControllerTheta,
    n_batches: int,
    seed: int,
    spread: float = 0.5,
    n_samples: int = 1000,
    max_retries: int = 200,
) -> tuple[list[HistorianBatch], list[ControllerTheta]]:
    """Simulate an archive of closed-loop records under random past tunings.

    Controllers are drawn from a box of +-``spread`` (relative) around the
    nominal tuning; destabilizing draws are rejected. The excitation is a
    step with a small PRBS perturbation so identification is well posed.
    Returns the batches together with the ground-truth controllers.
    """
    if n_batches < 1:
        raise ValueError("n_batches must be at least 1")
    rng = np.random.default_rng(seed)
    center = nominal.as_vector()
    lo = center * (1.0 - spread)
    hi = center * (1.0 + spread)
    # keep filter constants physical
    tf_idx = [3] if len(center) == 4 else [3, 7]
    lo[tf_idx] = np.maximum(lo[tf_idx], TF_LO)

    horizon = n_samples * cfg.T_s
    batches: list[HistorianBatch] = []
    thetas: list[ControllerTheta] = []
    attempts = 0
    while len(batches) < n_batches:
        if attempts >= max_retries + n_batches:
            raise RuntimeError("could not find enough stabilizing controllers")
        attempts += 1
        vec = rng.uniform(lo, hi)
        theta = ControllerTheta.from_vector(vec)
        ref = prbs_reference(n_samples, cfg.r_step, rng)
        batch_cfg = SimConfig(
            r_step=cfg.r_step,
            horizon=horizon,
            T_s=cfg.T_s,
            sigma2_outer=cfg.sigma2_outer,
            sigma2_inner=cfg.sigma2_inner,
            noise_free=cfg.noise_free,
            seed=int(rng.integers(2**31 - 1)),
        )
        trace = simulate_closed_loop(g1d, g2d, theta, batch_cfg, reference=ref)
        if not _loop_is_stable(trace, cfg.r_step):
            continue
        batch = HistorianBatch.from_trace(len(batches), trace)
        if not cfg.noise_free:
            # the archive stores actuator readbacks, which carry their own
            # acquisition noise on top of the commanded values
            n = len(batch.u1)
            batch.u1 += rng.normal(0.0, np.sqrt(cfg.sigma2_outer), n)
            batch.u2 += rng.normal(0.0, np.sqrt(cfg.sigma2_inner), n)
        batches.append(batch)
        thetas.append(theta)
    return batches, thetas


def identify_pid(
    batch: HistorianBatch,
    loop: Literal["outer", "inner"] = "outer",
    n_starts: int = 8,
    seed: int = 0,
    bounds: Optional[tuple[np.ndarray, np.ndarray]] = None,
) -> IdentResult:
    """Recover PID parameters from one batch by nonlinear least squares.

    The residual is u[k] - C(q, theta) e[k] where e is the loop error
    reconstructed from the records. Solved by multistart box-constrained
    least squares with finite-difference Jacobians; the best start wins.
    """
    if loop == "outer":
        e = batch.r1 - batch.y1
        u = batch.u1
    elif loop == "inner":
        e = batch.u1 - batch.y2
        u = batch.u2
    else:
        raise ValueError("loop must be 'outer' or 'inner'")

    if bounds is None:
        lo = np.array([GAIN_LO, GAIN_LO, GAIN_LO, TF_LO])
        hi = np.array([GAIN_HI, GAIN_HI, GAIN_HI, TF_HI])
    else:
        lo, hi = (np.asarray(b, float) for b in bounds)

    def residual(x):
        pid = PidParams(*x)
        return pid_response(pid, e, batch.T_s) - u

    rng = np.random.default_rng(seed)
    starts = [0.5 * (lo + hi)]
    starts += list(rng.uniform(lo, hi, size=(n_starts - 1, 4)))
    best = None
    for x0 in starts:
        try:
            sol = least_squares(
                residual, np.clip(x0, lo, hi), bounds=(lo, hi),
                method="trf", jac="2-point", xtol=1e-14, ftol=1e-14, gtol=1e-14,
            )
        except Exception:
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise RuntimeError("identification failed for all starts")

    x = best.x
    n, p = len(u), 4
    dof = max(n - p, 1)
    s2 = 2.0 * best.cost / dof
    jtj = best.jac.T @ best.jac
    try:
        cov = s2 * np.linalg.pinv(jtj)
        stderr = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except np.linalg.LinAlgError:
        stderr = np.full(p, np.nan)

    tf_flag = abs(x[2]) < KD_IDENTIFIABILITY_TOL
    return IdentResult(
        pid=PidParams(*x),
        objective=float(2.0 * best.cost),
        stderr=stderr,
        tf_unidentifiable=bool(tf_flag),
    )


def identify_controller(
    batch: HistorianBatch,
    cascade: bool,
    n_starts: int = 8,
    seed: int = 0,
) -> ControllerTheta:
    """Identify the outer (and, in cascade mode, inner) controller of a batch."""
    outer = identify_pid(batch, "outer", n_starts=n_starts, seed=seed).pid
    if not cascade:
        return ControllerTheta(outer=outer)
    inner = identify_pid(batch, "inner", n_starts=n_starts, seed=seed + 1).pid
    return ControllerTheta(outer=outer, inner=inner)


def label_step_test(
    g1d: DiscreteTf,
    g2d: DiscreteTf,
    theta: ControllerTheta,
    cfg: SimConfig,
    tau: SpecThresholds,
):
    """Run one step test and return (label, metrics, trace)."""
    trace = simulate_closed_loop(g1d, g2d, theta, cfg)
    m = step_metrics(trace, cfg, band=tau.band)
    return pass_fail(m, tau), m, trace


def label_controllers(
    thetas: list[ControllerTheta],
    g1d: DiscreteTf,
    g2d: DiscreteTf,
    cfg: SimConfig,
    tau: SpecThresholds,
    seed: int = 0,
) -> LabeledDataset:
    """Label each controller with a fresh seeded noisy step test."""
    vecs = []
    labels = []
    for i, theta in enumerate(thetas):
        test_cfg = SimConfig(
            r_step=cfg.r_step, horizon=cfg.horizon, T_s=cfg.T_s,
            sigma2_outer=cfg.sigma2_outer, sigma2_inner=cfg.sigma2_inner,
            noise_free=cfg.noise_free, seed=seed + i,
        )
        label, _, _ = label_step_test(g1d, g2d, theta, test_cfg, tau)
        vecs.append(theta.as_vector())
        labels.append(label)
    return LabeledDataset(np.array(vecs), np.array(labels))
