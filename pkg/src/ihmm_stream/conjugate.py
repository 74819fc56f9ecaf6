"""Conjugate linear-Gaussian machinery for the augmented emission model.

Given a mixture component z, the latent utility satisfies
``U - mu_z = Gamma . x + N(0, var_z)``, so each hidden state keeps the
precision-weighted cross products ``Sxx = sum x x' / var_z`` and
``SxU = sum x (U - mu_z) / var_z``.  The running means and central moments of
the raw (x, U) pairs are carried alongside as a mirror of the recursive
parameterization; they do not feed the posterior.
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import NumericalError
from .logit_mixture import TABLE


@dataclass(frozen=True)
class SufficientStats:
    n: int
    Sxx: np.ndarray
    SxU: np.ndarray
    xbar: np.ndarray
    Ubar: float
    Cxx: np.ndarray
    CxU: np.ndarray
    CUU: float

    @classmethod
    def empty(cls, d):
        return cls(0, np.zeros((d, d)), np.zeros(d), np.zeros(d), 0.0,
                   np.zeros((d, d)), np.zeros(d), 0.0)

    @property
    def d(self):
        return self.SxU.shape[0]

    def update(self, x, U, z, tab=TABLE):
        return update_stats(self, x, U, z, tab)

    def mirror_consistent(self, xs, Us, rtol=1e-10):
        """Check the mirror against batch moments of the absorbed points."""
        xs = np.asarray(xs, dtype=float).reshape(self.n, self.d)
        Us = np.asarray(Us, dtype=float).reshape(self.n)
        xb, ub = xs.mean(0), Us.mean()
        cxx = (xs - xb).T @ (xs - xb) / self.n
        cxu = (xs - xb).T @ (Us - ub) / self.n
        cuu = float(((Us - ub) ** 2).mean())
        scale = max(1.0, np.abs(xs).max() ** 2, np.abs(Us).max() ** 2)
        atol = rtol * scale
        return (np.allclose(self.xbar, xb, rtol=rtol, atol=atol)
                and np.isclose(self.Ubar, ub, rtol=rtol, atol=atol)
                and np.allclose(self.Cxx, cxx, rtol=rtol, atol=atol)
                and np.allclose(self.CxU, cxu, rtol=rtol, atol=atol)
                and np.isclose(self.CUU, cuu, rtol=rtol, atol=atol))


def update_stats(stats, x, U, z, tab=TABLE):
    x = np.asarray(x, dtype=float).reshape(-1)
    U = float(U)
    var, mu = tab.var[z], tab.mu[z]
    t = stats.n
    xbar = stats.xbar + (x - stats.xbar) / (t + 1)
    Ubar = stats.Ubar + (U - stats.Ubar) / (t + 1)
    f = t / (t + 1)
    Cxx = f * (stats.Cxx + np.outer(stats.xbar, stats.xbar)) + np.outer(x, x) / (t + 1) - np.outer(xbar, xbar)
    CxU = f * (stats.CxU + stats.xbar * stats.Ubar) + x * U / (t + 1) - xbar * Ubar
    CUU = f * (stats.CUU + stats.Ubar ** 2) + U * U / (t + 1) - Ubar ** 2
    return replace(stats, n=t + 1,
                   Sxx=stats.Sxx + np.outer(x, x) / var,
                   SxU=stats.SxU + x * (U - mu) / var,
                   xbar=xbar, Ubar=Ubar, Cxx=Cxx, CxU=CxU, CUU=CUU)


def prior_from_lambda(Lambda):
    """Split a length-2d Lambda into prior mean and prior variances."""
    Lambda = np.asarray(Lambda, dtype=float)
    d = Lambda.shape[-1] // 2
    return Lambda[..., :d], np.exp(Lambda[..., d:])


def posterior_gamma(stats, Lambda, state=None):
    """Gaussian posterior (mean, covariance) of Gamma for one state."""
    mu0, var0 = prior_from_lambda(Lambda)
    prec = np.diag(1.0 / var0) + stats.Sxx
    try:
        cf = cho_factor(prec)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"posterior precision is not positive definite (state {state})") from exc
    cov = cho_solve(cf, np.eye(len(mu0)))
    mean = cho_solve(cf, mu0 / var0 + stats.SxU)
    return mean, 0.5 * (cov + cov.T)


def integrated_loglik(stats, Lambda, x, U, z, tab=TABLE):
    """log density of a new (x, U, z) point with Gamma integrated out."""
    x = np.asarray(x, dtype=float)
    mean, cov = posterior_gamma(stats, Lambda)
    loc = x @ mean
    scale2 = x @ cov @ x + tab.var[z]
    r = U - tab.mu[z] - loc
    return -0.5 * (np.log(2 * np.pi * scale2) + r * r / scale2)


def conditional_loglik(gamma, x, U, z, tab=TABLE):
    """log density of U given a fixed Gamma and component z."""
    r = U - tab.mu[z] - np.asarray(x) @ np.asarray(gamma)
    return -0.5 * (np.log(2 * np.pi * tab.var[z]) + r * r / tab.var[z])


# --- batched forms used by the particle filter -------------------------------

def posterior_batch(Sxx, SxU, mu0, var0):
    """Posterior mean and Cholesky factor of the covariance, batched.

    Shapes: Sxx (..., d, d), SxU (..., d), mu0 and var0 (..., d).  Returns
    mean (..., d) and a lower factor ``Lc`` with ``cov = Lc Lc'``.
    """
    d = SxU.shape[-1]
    prec = Sxx + np.eye(d) * (1.0 / var0)[..., None, :]
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("posterior precision is not positive definite") from exc
    rhs = (mu0 / var0 + SxU)[..., None]
    mean = np.linalg.solve(prec, rhs)[..., 0]
    inv_chol = np.linalg.inv(chol)
    # cov = prec^{-1} = inv(chol)' inv(chol); factor is inv(chol)'
    return mean, np.swapaxes(inv_chol, -1, -2)


def predictive_batch(Sxx, SxU, mu0, var0, x, U_minus_mu, var_z):
    """Batched integrated log-likelihood of centred utilities."""
    mean, factor = posterior_batch(Sxx, SxU, mu0, var0)
    loc = mean @ x
    v = np.einsum("...ij,i->...j", factor, x)
    scale2 = (v * v).sum(-1) + var_z
    r = U_minus_mu - loc
    return -0.5 * (np.log(2 * np.pi * scale2) + r * r / scale2)
