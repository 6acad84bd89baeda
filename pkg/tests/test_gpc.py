"""Laplace GP-classifier tests.

The moment-matched probability is checked against brute-force Monte Carlo
integration of the logistic link over the latent Gaussian, and the
latent-mode optimality conditions are verified directly.
"""

import numpy as np
import pytest
from scipy.special import expit

from looptune.gpc import (
    GRAD_TOL,
    GpcPosterior,
    KernelSpec,
    corrected_probability,
    fit_laplace,
    median_lengthscales,
    predict,
    predict_latent,
    sample_latent,
)
from looptune.ident import LabeledDataset


def make_dataset(n=30, p=4, seed=0):
    """Linearly separable-ish labels: pass iff sum of coords > 0, under noise."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p))
    z = X.sum(axis=1) + 0.5 * rng.standard_normal(n)
    y = (z > 0).astype(int)
    if y.min() == y.max():  # force both classes
        y[0] = 1 - y[0]
    return LabeledDataset(X, y)


class TestCorrectedProbability:
    def test_matches_monte_carlo_integral(self):
        # For Gaussian latent a ~ N(mu, s2), the class probability is
        # E[sigma(a)]; the closed form is the standard logit moment match.
        rng = np.random.default_rng(42)
        n_mc = 100_000
        for _ in range(50):
            mu = rng.uniform(-4.0, 4.0)
            s2 = rng.uniform(0.0, 9.0)
            samples = mu + np.sqrt(s2) * rng.standard_normal(n_mc)
            p_mc = float(np.mean(expit(samples)))
            p_cf = float(corrected_probability(mu, s2))
            assert abs(p_cf - p_mc) <= 0.02

    def test_antisymmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            mu = rng.uniform(-5, 5)
            s2 = rng.uniform(0, 10)
            total = corrected_probability(mu, s2) + corrected_probability(-mu, s2)
            assert total == pytest.approx(1.0, abs=1e-6)

    def test_zero_variance_reduces_to_logistic(self):
        for mu in (-2.0, 0.0, 3.5):
            assert corrected_probability(mu, 0.0) == pytest.approx(expit(mu))

    def test_variance_shrinks_toward_half(self):
        assert corrected_probability(2.0, 10.0) < corrected_probability(2.0, 0.0)
        assert corrected_probability(-2.0, 10.0) > corrected_probability(-2.0, 0.0)


class TestLaplaceFit:
    def test_converges_to_stated_tolerance(self):
        post = fit_laplace(make_dataset())
        assert post.grad_norm < GRAD_TOL

    def test_mode_satisfies_stationarity(self):
        # At the mode, K^-1 f = y - sigmoid(f). Verify with an explicit solve.
        from looptune.gpc import _sq_exp

        post = fit_laplace(make_dataset(seed=3))
        K = _sq_exp(post.X, post.X, post.kernel.variance, post.kernel.lengthscales)
        K += post.kernel.jitter * np.eye(len(post.y))
        resid = K @ (post.y - expit(post.f_hat)) - post.f_hat
        assert np.linalg.norm(resid) < 1e-6

    def test_training_points_classified_correctly(self):
        # On a cleanly separable dataset the fitted probabilities should
        # land on the right side of 0.5 at the training points.
        rng = np.random.default_rng(5)
        X = np.vstack([rng.normal(-2, 0.3, (15, 2)), rng.normal(2, 0.3, (15, 2))])
        y = np.array([0] * 15 + [1] * 15)
        post = fit_laplace(LabeledDataset(X, y))
        correct = 0
        for x, yi in zip(X, y):
            p = predict(post, x).p
            correct += int((p > 0.5) == bool(yi))
        assert correct >= 28

    def test_rejects_single_class(self):
        with pytest.raises(ValueError, match="both"):
            fit_laplace(LabeledDataset(np.random.default_rng(0).standard_normal((5, 2)),
                                       [1, 1, 1, 1, 1]))

    def test_constant_dimension_is_handled(self):
        # A coordinate with zero spread must not produce NaNs.
        ds = make_dataset(seed=2)
        ds.thetas[:, 1] = 0.1
        post = fit_laplace(ds)
        pred = predict(post, ds.thetas[0])
        assert np.isfinite(pred.p)

    def test_deterministic_fit(self):
        a = fit_laplace(make_dataset(seed=8))
        b = fit_laplace(make_dataset(seed=8))
        np.testing.assert_array_equal(a.f_hat, b.f_hat)
        assert a.log_marginal == b.log_marginal


class TestPrediction:
    def test_variance_grows_away_from_data(self):
        post = fit_laplace(make_dataset())
        near = predict(post, post.X_raw[0])
        far = predict(post, post.X_raw[0] + 50.0)
        assert far.sigma2_a > near.sigma2_a
        # far from data the latent reverts to the zero-mean prior
        assert abs(far.mu_a) < 0.1
        assert abs(far.p - 0.5) < 0.1

    def test_probability_strictly_inside_unit_interval(self):
        post = fit_laplace(make_dataset(seed=4))
        rng = np.random.default_rng(0)
        for _ in range(20):
            pred = predict(post, rng.uniform(-3, 3, size=4))
            assert 0.0 < pred.p < 1.0

    def test_predict_consistent_with_batched_latent(self):
        post = fit_laplace(make_dataset(seed=6))
        q = np.random.default_rng(2).standard_normal((7, 4))
        mu, s2 = predict_latent(post, q)
        for i in range(7):
            one = predict(post, q[i])
            assert one.mu_a == pytest.approx(mu[i])
            assert one.sigma2_a == pytest.approx(s2[i])


class TestSampleLatent:
    def test_moments_and_determinism(self):
        post = fit_laplace(make_dataset(seed=9))
        x = post.X_raw[3]
        mu, s2 = predict_latent(post, np.atleast_2d(x))
        draws = sample_latent(post, x, 200_000, seed=11)
        assert np.mean(draws) == pytest.approx(mu[0], abs=4 * np.sqrt(s2[0] / 200_000) + 1e-9)
        assert np.var(draws) == pytest.approx(s2[0], rel=0.05)
        np.testing.assert_array_equal(draws, sample_latent(post, x, 200_000, seed=11))
        with pytest.raises(ValueError):
            sample_latent(post, x, 0, seed=1)


class TestKernel:
    def test_median_lengthscales(self):
        X = np.array([[0.0, 1.0], [1.0, 1.0], [3.0, 1.0]])
        ls = median_lengthscales(X)
        assert ls[0] == pytest.approx(2.0)  # distances {1, 3, 2} -> median 2
        assert ls[1] == pytest.approx(1.0)  # all-zero distances -> default 1

    def test_kernel_validation(self):
        with pytest.raises(ValueError):
            KernelSpec(variance=0.0)
        with pytest.raises(ValueError):
            KernelSpec(lengthscales=[1.0, -1.0])
