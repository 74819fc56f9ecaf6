import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ihmm_stream.conjugate import (SufficientStats, conditional_loglik, integrated_loglik,
                                   posterior_batch, posterior_gamma, predictive_batch, update_stats)
from ihmm_stream.logit_mixture import TABLE


def absorb(points, d):
    s = SufficientStats.empty(d)
    for x, U, z in points:
        s = update_stats(s, x, U, z)
    return s


def random_points(rng, n, d):
    return [(rng.normal(size=d), float(rng.normal(0, 2)), int(rng.integers(10))) for _ in range(n)]


def batch_posterior(points, mu0, var0):
    """Weighted ridge regression written out directly."""
    X = np.array([p[0] for p in points]).reshape(len(points), -1)
    z = np.array([p[2] for p in points], dtype=int)
    r = np.array([p[1] for p in points]) - TABLE.mu[z]
    W = np.diag(1.0 / TABLE.var[z])
    P = np.diag(1.0 / np.asarray(var0)) + X.T @ W @ X
    cov = np.linalg.inv(P)
    return cov @ (np.asarray(mu0) / var0 + X.T @ W @ r), cov


class TestStats:
    def test_first_point(self):
        x = np.array([1.5, -2.0])
        s = absorb([(x, 0.3, 4)], 2)
        np.testing.assert_array_equal(s.xbar, x)
        np.testing.assert_allclose(s.Cxx, 0.0, atol=1e-15)
        assert s.n == 1

    def test_zero_covariate(self):
        s0 = absorb([(np.ones(2), 1.0, 3)], 2)
        s1 = update_stats(s0, np.zeros(2), 5.0, 7)
        np.testing.assert_array_equal(s1.Sxx, s0.Sxx)
        np.testing.assert_array_equal(s1.SxU, s0.SxU)
        assert s1.n == 2

    def test_mirror_matches_batch(self, rng):
        pts = random_points(rng, 50, 3)
        s = absorb(pts, 3)
        assert s.mirror_consistent([p[0] for p in pts], [p[1] for p in pts])
        X = np.array([p[0] for p in pts])
        np.testing.assert_allclose(s.xbar, X.mean(0), rtol=1e-10)
        np.testing.assert_allclose(s.Cxx, np.cov(X.T, bias=True), rtol=1e-10, atol=1e-12)

    def test_offset_subtracted(self):
        s = absorb([(np.array([1.0]), 2.0, 0)], 1)
        assert s.SxU[0] == pytest.approx((2.0 - TABLE.mu[0]) / TABLE.var[0])


class TestPosterior:
    def test_empty_is_prior(self):
        Lam = np.array([0.5, -1.0, np.log(2.0), np.log(3.0)])
        mean, cov = posterior_gamma(SufficientStats.empty(2), Lam)
        np.testing.assert_allclose(mean, [0.5, -1.0])
        np.testing.assert_allclose(cov, np.diag([2.0, 3.0]))

    def test_hand_example(self):
        # one point with x=1, U - mu_z = 2 and unit noise variance
        s = SufficientStats(1, np.array([[1.0]]), np.array([2.0]), np.zeros(1), 0.0,
                            np.zeros((1, 1)), np.zeros(1), 0.0)
        mean, cov = posterior_gamma(s, np.array([0.0, 0.0]))
        assert mean[0] == pytest.approx(1.0)
        assert cov[0, 0] == pytest.approx(0.5)

    def test_matches_batch_regression(self, rng):
        pts = random_points(rng, 20, 3)
        mu0, var0 = rng.normal(size=3), rng.uniform(0.5, 2, 3)
        mean, cov = posterior_gamma(absorb(pts, 3), np.r_[mu0, np.log(var0)])
        bm, bc = batch_posterior(pts, mu0, var0)
        np.testing.assert_allclose(mean, bm, rtol=1e-9)
        np.testing.assert_allclose(cov, bc, rtol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(2, 15))
    def test_covariance_shrinks(self, seed, d, n):
        rng = np.random.default_rng(seed)
        Lam = np.r_[np.zeros(d), np.zeros(d)]
        s = SufficientStats.empty(d)
        _, prev = posterior_gamma(s, Lam)
        for x, U, z in random_points(rng, n, d):
            s = update_stats(s, x, U, z)
            _, cov = posterior_gamma(s, Lam)
            assert np.linalg.eigvalsh(prev - cov).min() >= -1e-10
            prev = cov

    def test_batch_form_agrees(self, rng):
        pts = random_points(rng, 12, 2)
        s = absorb(pts, 2)
        Lam = np.array([0.2, -0.1, 0.3, -0.4])
        mean, cov = posterior_gamma(s, Lam)
        m2, f = posterior_batch(s.Sxx[None], s.SxU[None], Lam[None, :2], np.exp(Lam[None, 2:]))
        np.testing.assert_allclose(m2[0], mean, rtol=1e-12)
        np.testing.assert_allclose(f[0] @ f[0].T, cov, rtol=1e-10, atol=1e-14)


class TestIntegrated:
    def test_prior_only_zero_x(self):
        z = 5
        ll = integrated_loglik(SufficientStats.empty(1), np.zeros(2), np.zeros(1), TABLE.mu[z], z)
        assert ll == pytest.approx(-0.5 * np.log(2 * np.pi * TABLE.var[z]))

    def test_ratio_of_evidences(self, rng):
        d = 2
        pts = random_points(rng, 5, d)
        new = random_points(rng, 1, d)[0]
        mu0, var0 = np.array([0.3, -0.2]), np.array([1.5, 0.7])

        def evidence(ps):
            X = np.array([p[0] for p in ps])
            z = np.array([p[2] for p in ps])
            r = np.array([p[1] for p in ps]) - TABLE.mu[z]
            cov = X @ np.diag(var0) @ X.T + np.diag(TABLE.var[z])
            return stats.multivariate_normal(X @ mu0, cov).logpdf(r)

        direct = evidence(pts + [new]) - evidence(pts)
        ll = integrated_loglik(absorb(pts, d), np.r_[mu0, np.log(var0)], *new)
        assert ll == pytest.approx(direct, abs=1e-10)

    def test_exchangeable(self, rng):
        pts = random_points(rng, 6, 2)
        new = random_points(rng, 1, 2)[0]
        Lam = np.zeros(4)
        a = integrated_loglik(absorb(pts, 2), Lam, *new)
        b = integrated_loglik(absorb(pts[::-1], 2), Lam, *new)
        assert a == pytest.approx(b, abs=1e-12)

    def test_batch_predictive(self, rng):
        pts = random_points(rng, 4, 2)
        s = absorb(pts, 2)
        Lam = np.array([0.0, 0.5, 0.1, -0.2])
        x, U, z = random_points(rng, 1, 2)[0]
        want = integrated_loglik(s, Lam, x, U, z)
        got = predictive_batch(s.Sxx, s.SxU, Lam[:2], np.exp(Lam[2:]), x, U - TABLE.mu[z], TABLE.var[z])
        assert float(got) == pytest.approx(want, abs=1e-12)

    def test_conditional_density(self):
        z = 2
        g = np.array([0.5])
        ll = conditional_loglik(g, np.array([2.0]), 1.0 + TABLE.mu[z], z)
        assert ll == pytest.approx(stats.norm(0, TABLE.sigma[z]).logpdf(0.0))
