"""Gaussian-process classifier with a Laplace-approximated posterior.

Binary labels over controller-parameter space are modeled through a
latent function with a squared-exponential prior and logistic link.
Prediction returns the latent moments and a moment-matched class-1
probability sigma(mu / sqrt(1 + pi sigma^2 / 8)).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, cholesky, solve_triangular
from scipy.special import expit

from .ident import LabeledDataset

MAX_NEWTON_ITERS = 100
GRAD_TOL = 1e-8


@dataclass
class KernelSpec:
    """Squared-exponential kernel with per-dimension length scales."""

    variance: float = 1.0
    lengthscales: Optional[np.ndarray] = None
    jitter: float = 1e-8

    def __post_init__(self):
        if self.variance <= 0:
            raise ValueError("signal variance must be positive")
        if self.lengthscales is not None:
            self.lengthscales = np.asarray(self.lengthscales, float)
            if np.any(self.lengthscales <= 0):
                raise ValueError("length scales must be positive")


def _sq_exp(X1: np.ndarray, X2: np.ndarray, variance: float, ls: np.ndarray) -> np.ndarray:
    d = (X1[:, None, :] - X2[None, :, :]) / ls
    return variance * np.exp(-0.5 * np.sum(d * d, axis=-1))


def median_lengthscales(X: np.ndarray) -> np.ndarray:
    """Per-dimension median of nonzero pairwise coordinate distances."""
    n, p = X.shape
    ls = np.ones(p)
    iu = np.triu_indices(n, k=1)
    for j in range(p):
        dist = np.abs(X[:, j, None] - X[None, :, j])[iu]
        dist = dist[dist > 0]
        if dist.size:
            ls[j] = np.median(dist)
    return ls


class GpcFitError(RuntimeError):
    pass


@dataclass
class GpcPosterior:
    """Fitted Laplace posterior with everything needed for prediction."""

    X_raw: np.ndarray
    X: np.ndarray              # standardized inputs
    y: np.ndarray
    mean_: np.ndarray          # standardization shift
    std_: np.ndarray           # standardization scale
    kernel: KernelSpec
    f_hat: np.ndarray          # latent mode
    grad_vec: np.ndarray       # y - sigmoid(f_hat); equals K^-1 f_hat at the mode
    sqrt_w: np.ndarray
    L: np.ndarray              # chol(I + W^1/2 K W^1/2), lower
    grad_norm: float
    n_iter: int
    log_marginal: float

    def standardize(self, theta: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(np.asarray(theta, float)) - self.mean_) / self.std_


@dataclass(frozen=True)
class LatentPrediction:
    """Latent posterior moments and the class-1 probability at one point."""

    mu_a: float
    sigma2_a: float
    p: float

    def __post_init__(self):
        if self.sigma2_a < 0:
            raise ValueError("latent variance must be nonnegative")
        if not (0.0 < self.p < 1.0):
            raise ValueError("probability must lie strictly inside (0, 1)")


def corrected_probability(mu_a, sigma2_a):
    """sigma(mu (1 + pi sigma^2/8)^(-1/2)): logistic link under a Gaussian latent."""
    return expit(mu_a / np.sqrt(1.0 + np.pi * sigma2_a / 8.0))


def _laplace_objective(f, a, y):
    # negative unnormalized log posterior: 0.5 f^T K^-1 f - sum[y f - log(1+e^f)]
    # evaluated through the dual vector a = K^-1 f, maintained exactly by the
    # Newton iteration so no linear solve (and its roundoff) is needed here
    loglik = np.sum(y * f - np.logaddexp(0.0, f))
    return 0.5 * f @ a - loglik


def fit_laplace(
    data: LabeledDataset,
    kernel: Optional[KernelSpec] = None,
    optimize_hyperparams: bool = False,
) -> GpcPosterior:
    """Find the latent mode by damped Newton iteration.

    Inputs are standardized internally; length scales default to the
    median heuristic on the standardized inputs. Convergence requires
    the objective gradient norm to drop below 1e-8 within 100 steps.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if not data.has_both_classes():
        raise ValueError("dataset must contain both labels")

    X_raw = data.thetas
    y = data.labels.astype(float)
    mean_ = X_raw.mean(axis=0)
    std_ = X_raw.std(axis=0)
    std_ = np.where(std_ > 0, std_, 1.0)
    X = (X_raw - mean_) / std_

    if kernel is None:
        kernel = KernelSpec(variance=1.0, lengthscales=median_lengthscales(X))
    elif kernel.lengthscales is None:
        kernel = KernelSpec(variance=kernel.variance,
                            lengthscales=median_lengthscales(X), jitter=kernel.jitter)

    if optimize_hyperparams:
        kernel = _optimize_kernel(X, y, kernel)

    return _fit_with_kernel(X_raw, X, y, mean_, std_, kernel)


def _chol_with_jitter(K: np.ndarray, jitter: float):
    j = jitter
    while j <= 1e-4:
        try:
            return cho_factor(K + j * np.eye(len(K)), lower=True), j
        except np.linalg.LinAlgError:
            j *= 2.0
    raise GpcFitError("kernel matrix is not positive definite even after jitter escalation")


def _newton_mode(K, y):
    n = len(y)
    f = np.zeros(n)
    a_dual = np.zeros(n)
    obj = _laplace_objective(f, a_dual, y)
    n_iter = 0
    grad_norm = np.inf
    for n_iter in range(1, MAX_NEWTON_ITERS + 1):
        pi = expit(f)
        grad = (y - pi) - a_dual
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < GRAD_TOL:
            break
        W = pi * (1.0 - pi)
        sw = np.sqrt(W)
        B = np.eye(n) + sw[:, None] * K * sw[None, :]
        L = cholesky(B, lower=True)
        b = W * f + (y - pi)
        v = solve_triangular(L, sw * (K @ b), lower=True)
        a_new = b - sw * solve_triangular(L.T, v, lower=False)
        f_new = K @ a_new
        # damped step: halve until the objective decreases
        step = 1.0
        for _ in range(30):
            f_try = f + step * (f_new - f)
            a_try = a_dual + step * (a_new - a_dual)
            obj_try = _laplace_objective(f_try, a_try, y)
            if obj_try <= obj + 1e-12:
                f, a_dual, obj = f_try, a_try, obj_try
                break
            step *= 0.5
        else:
            raise GpcFitError("Newton iteration stalled before convergence")
    if grad_norm >= GRAD_TOL:
        raise GpcFitError(
            f"Laplace mode search did not converge: |grad| = {grad_norm:.3e}"
        )
    return f, n_iter, grad_norm


def _fit_with_kernel(X_raw, X, y, mean_, std_, kernel) -> GpcPosterior:
    n = len(y)
    K = _sq_exp(X, X, kernel.variance, kernel.lengthscales)
    K_chol, used_jitter = _chol_with_jitter(K, kernel.jitter)
    K = K + used_jitter * np.eye(n)

    f, n_iter, grad_norm = _newton_mode(K, y)

    pi = expit(f)
    W = pi * (1.0 - pi)
    sw = np.sqrt(W)
    B = np.eye(n) + sw[:, None] * K * sw[None, :]
    L = cholesky(B, lower=True)
    loglik = np.sum(y * f - np.logaddexp(0.0, f))
    alpha = cho_solve(K_chol, f)
    lml = loglik - 0.5 * f @ alpha - np.sum(np.log(np.diag(L)))

    return GpcPosterior(
        X_raw=X_raw, X=X, y=y, mean_=mean_, std_=std_,
        kernel=KernelSpec(kernel.variance, kernel.lengthscales, used_jitter),
        f_hat=f, grad_vec=y - pi, sqrt_w=sw, L=L,
        grad_norm=grad_norm, n_iter=n_iter, log_marginal=float(lml),
    )


def _optimize_kernel(X, y, kernel: KernelSpec) -> KernelSpec:
    """Maximize the Laplace marginal likelihood over log hyperparameters."""
    from scipy.optimize import minimize

    p = X.shape[1]

    def neg_lml(log_params):
        var = np.exp(log_params[0])
        ls = np.exp(log_params[1:])
        try:
            post = _fit_with_kernel(X, X, y, np.zeros(p), np.ones(p),
                                    KernelSpec(var, ls, kernel.jitter))
        except (GpcFitError, np.linalg.LinAlgError):
            return 1e6
        return -post.log_marginal

    x0 = np.concatenate([[np.log(kernel.variance)], np.log(kernel.lengthscales)])
    sol = minimize(neg_lml, x0, method="L-BFGS-B",
                   bounds=[(-3, 3)] + [(-3, 3)] * p, options={"maxiter": 50})
    best = sol.x if sol.fun < neg_lml(x0) else x0
    return KernelSpec(float(np.exp(best[0])), np.exp(best[1:]), kernel.jitter)


def predict_latent(post: GpcPosterior, thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Latent posterior mean and variance at query points (vectorized)."""
    Xq = post.standardize(thetas)
    k_star = _sq_exp(post.X, Xq, post.kernel.variance, post.kernel.lengthscales)
    mu = k_star.T @ post.grad_vec
    v = solve_triangular(post.L, post.sqrt_w[:, None] * k_star, lower=True)
    k_ss = post.kernel.variance + post.kernel.jitter
    sigma2 = np.maximum(k_ss - np.sum(v * v, axis=0), 0.0)
    return mu, sigma2


def predict(post: GpcPosterior, theta) -> LatentPrediction:
    """Predict latent moments and pass probability for one controller."""
    mu, sigma2 = predict_latent(post, np.atleast_2d(theta))
    p = float(corrected_probability(mu[0], sigma2[0]))
    p = min(max(p, 1e-15), 1.0 - 1e-15)
    return LatentPrediction(mu_a=float(mu[0]), sigma2_a=float(sigma2[0]), p=p)


def sample_latent(post: GpcPosterior, theta, n: int, seed: int) -> np.ndarray:
    """Seeded i.i.d. draws from the latent Gaussian at one query point."""
    if n < 1:
        raise ValueError("n must be at least 1")
    mu, sigma2 = predict_latent(post, np.atleast_2d(theta))
    rng = np.random.default_rng(seed)
    return mu[0] + np.sqrt(sigma2[0]) * rng.standard_normal(n)
