"""Ten-component normal mixture for the type-1 extreme value error.

The printed table gives weights, means and *variances* of a normal mixture
approximating the density of ``-log E`` with ``E ~ Exp(1)``.  Weights are
printed to five digits and sum to 0.99957; ``table()`` renormalizes them.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import NumericalError

RAW_WEIGHTS = (0.00397, 0.0396, 0.168, 0.147, 0.125, 0.101, 0.104, 0.116, 0.107, 0.088)
RAW_MEANS = (5.09, 3.29, 1.82, 1.24, 0.764, 0.391, 0.0431, -0.306, -0.673, -1.06)
RAW_VARIANCES = (4.50, 2.02, 1.10, 0.422, 0.198, 0.107, 0.0778, 0.0766, 0.0947, 0.146)


@dataclass(frozen=True)
class MixtureTable:
    w: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    @property
    def sigma(self):
        return np.sqrt(self.var)

    @property
    def log_w(self):
        return np.log(self.w)

    def cdf(self, u):
        from scipy.stats import norm

        u = np.asarray(u, dtype=float)[..., None]
        return (self.w * norm.cdf((u - self.mu) / self.sigma)).sum(axis=-1)

    def permuted(self, perm):
        perm = np.asarray(perm)
        return MixtureTable(self.w[perm], self.mu[perm], self.var[perm])


def raw_table():
    """The printed triples, unnormalized."""
    return MixtureTable(np.array(RAW_WEIGHTS), np.array(RAW_MEANS), np.array(RAW_VARIANCES))


def table():
    raw = raw_table()
    return MixtureTable(raw.w / raw.w.sum(), raw.mu, raw.var)


TABLE = table()


def gumbel_cdf(u):
    """CDF of -log E, E ~ Exp(1)."""
    return np.exp(-np.exp(-np.asarray(u, dtype=float)))


def predictive_prob(eta):
    """Exact logistic probability of y = 1 given the linear index."""
    return expit(eta)


def log_bernoulli(y, eta):
    """log P(y | eta) under the logistic link, stable for any finite eta."""
    sign = 2.0 * np.asarray(y, dtype=float) - 1.0
    return log_expit(sign * np.asarray(eta, dtype=float))


def utility_from_uniforms(eta, y, d, e):
    """Latent utility given the uniforms d, e.

    U = -log(-log d / (1 + exp eta) - [y = 0] log e / exp eta), evaluated
    through log-sum-exp so large |eta| neither overflows nor returns NaN.
    """
    eta = np.asarray(eta, dtype=float)
    y = np.asarray(y)
    # log(-log d) - log(1 + e^eta)
    a = np.log(-np.log(d)) - np.logaddexp(0.0, eta)
    b = np.log(-np.log(e)) - eta
    both = np.logaddexp(a, b)
    return -np.where(y == 0, both, a)


def sample_utility(eta, y, rng):
    """Draw (U, d, e) for a single linear index or an array of them."""
    shape = np.shape(eta)
    d = rng.random(shape)
    e = rng.random(shape)
    # Uniform(0,1) draws of exactly 0 are possible in principle
    d = np.where(d == 0.0, np.finfo(float).tiny, d)
    e = np.where(e == 0.0, np.finfo(float).tiny, e)
    U = utility_from_uniforms(eta, y, d, e)
    if np.ndim(U) == 0:
        return float(U), float(d), float(e)
    return U, d, e


def component_logprobs(U, eta, tab=TABLE):
    """Normalized log P(z = j | U, eta) for j = 0..9 (last axis)."""
    r = np.asarray(U, dtype=float)[..., None] - np.asarray(eta, dtype=float)[..., None] - tab.mu
    logp = tab.log_w - 0.5 * np.log(tab.var) - 0.5 * r * r / tab.var
    top = logp.max(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore"):
        norm = top + np.log(np.exp(logp - top).sum(axis=-1, keepdims=True))
    if not np.all(np.isfinite(norm)):
        raise NumericalError("all mixture component log-weights are -inf")
    return logp - norm


def sample_component(U, eta, rng, tab=TABLE):
    """Draw the mixture component index (0-based) for each utility."""
    logp = component_logprobs(U, eta, tab)
    cdf = np.cumsum(np.exp(logp), axis=-1)
    u = rng.random(np.shape(logp)[:-1] + (1,)) * cdf[..., -1:]
    z = (cdf < u).sum(axis=-1)
    z = np.minimum(z, len(tab.w) - 1)
    return int(z) if np.ndim(z) == 0 else z
