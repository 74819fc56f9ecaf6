"""Cross-user coupling at barriers: the demographic shift Delta, the
clustering of per-(user, state) Lambda summaries, and the refresh of each
cloud's Lambda/c draws from the fitted mixture."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .particle_filter import LambdaPrior, gamma_from_lambda

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BarrierSchedule:
    """Barrier after every ``period`` global ticks; ``inf`` disables it."""

    period: float = 25

    def __post_init__(self):
        if not self.period > 0:
            raise ConfigError("barrier period must be positive")

    @property
    def enabled(self):
        return math.isfinite(self.period)

    def is_barrier(self, tick):
        return self.enabled and tick % int(self.period) == 0

    def count(self, T):
        return 0 if not self.enabled else T // int(self.period)


@dataclass
class DeltaPosterior:
    mean: np.ndarray      # (2d, d_D)
    cov: np.ndarray       # (2d, d_D, d_D)

    @classmethod
    def prior(cls, mu0, Sigma0):
        mu0 = np.asarray(mu0, float)
        return cls(mu0.copy(), np.broadcast_to(np.diag(np.asarray(Sigma0, float)),
                                               (mu0.shape[0],) + (mu0.shape[1],) * 2).copy())

    def draw(self, rng):
        P, q = self.mean.shape
        if q == 0:
            return self.mean.copy()
        vals, vecs = np.linalg.eigh(self.cov)
        root = vecs * np.sqrt(np.clip(vals, 0, None))[:, None, :]
        return self.mean + np.einsum("pij,pj->pi", root, rng.standard_normal((P, q)))

    def std(self):
        return np.sqrt(np.diagonal(self.cov, axis1=1, axis2=2))


def update_delta(residuals, demographics, row_var, mu0, Sigma0):
    """Per-coordinate conjugate regression of Lambda residuals on demographics.

    ``residuals`` (M, P), ``demographics`` (M, q), ``row_var`` (M, P) noise
    variances, prior mean ``mu0`` (P, q) and prior variances ``Sigma0`` (q,).
    Zero prior variance pins that coefficient at its prior mean.
    """
    mu0 = np.asarray(mu0, float)
    Sigma0 = np.asarray(Sigma0, float).reshape(-1)
    P, q = mu0.shape
    post = DeltaPosterior.prior(mu0, Sigma0)
    R = np.asarray(residuals, float).reshape(-1, P)
    if R.shape[0] == 0 or q == 0:
        return post
    Dm = np.asarray(demographics, float).reshape(-1, q)
    W = 1.0 / np.asarray(row_var, float).reshape(-1, P)
    free = Sigma0 > 0
    if not np.any(free):
        return post
    Df = Dm[:, free]
    pinned = Dm[:, ~free] @ mu0[:, ~free].T          # (M, P) contribution of pinned coefficients
    p0 = np.diag(1.0 / Sigma0[free])
    for j in range(P):
        prec = p0 + (Df.T * W[:, j]) @ Df
        rhs = mu0[j, free] / Sigma0[free] + Df.T @ (W[:, j] * (R[:, j] - pinned[:, j]))
        cov = np.linalg.inv(prec)
        cov = 0.5 * (cov + cov.T)
        post.mean[j, free] = cov @ rhs
        c = np.zeros((q, q))
        c[np.ix_(free, free)] = cov
        post.cov[j] = c
    return post


def lambda_summaries(cloud):
    """Particle-averaged posterior Lambda per state, for states below the modal L."""
    Lm = cloud.modal_L()
    rows = []
    for l in range(Lm):
        have = cloud.L > l
        rows.append(cloud.Lam_post[have, l].mean(0))
    return np.array(rows).reshape(Lm, -1)


def mixture_prior(vp, shift):
    """Prior for not-yet-born states: E[theta]-weighted clusters shifted by ``shift``."""
    return LambdaPrior(vp.expected_theta(), vp.m + shift, vp.cluster_covariances())


def refresh_particle_priors(vp, delta, D_user, cloud, phi_rows, rng):
    """Redraw (c, Lambda) of every instantiated state and of the prospective slot.

    ``phi_rows`` maps state index -> responsibility row of that (user, state)
    pair; states without a row draw c from the expected stick weights.
    """
    shift = delta @ D_user if delta.size else np.zeros(vp.m.shape[1])
    prior = mixture_prior(vp, shift)
    B = cloud.B
    Lmax = int(cloud.L.max())
    P = np.empty((Lmax + 1, vp.K))
    for l in range(Lmax + 1):
        P[l] = phi_rows.get(l, prior.weights)
    # slot index per (b, l) where l <= L_b; l == L_b is the prospective slot
    bb, ll = np.nonzero(np.arange(Lmax + 1)[None, :] <= cloud.L[:, None])
    probs = np.where((ll == cloud.L[bb])[:, None], prior.weights[None, :], P[ll])
    cdf = np.cumsum(probs, 1)
    u = rng.random(bb.size) * cdf[:, -1]
    c = np.minimum((cdf < u[:, None]).sum(1), vp.K - 1)
    Lam, _ = prior.sample(rng, bb.size, c=c)
    cloud.Lam[bb, ll] = Lam
    cloud.c[bb, ll] = c
    rows = np.arange(B)
    cloud.gamma[rows, cloud.L] = gamma_from_lambda(cloud.Lam[rows, cloud.L], rng)
    cloud.prior = prior
    return cloud
