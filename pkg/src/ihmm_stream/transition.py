"""HDP transition law with the rows integrated out, plus the auxiliary
variable samplers for the table counts m, the top-level concentration
``lam``, the row concentration ``alpha`` and the shared weights ``beta``.

State labels are 0-based; a vector ``beta`` of length ``L + 1`` carries the
weights of the ``L`` instantiated states followed by the unallocated tail.
"""

import logging
import threading
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ConfigError

log = logging.getLogger(__name__)

DIRICHLET_FLOOR = 1e-300


@dataclass
class TransitionState:
    n: np.ndarray
    beta: np.ndarray
    alpha: float
    lam: float

    @property
    def L(self):
        return self.n.shape[0]


def transition_probs(ts, frm):
    """Integrated transition probabilities out of state ``frm``.

    Entry j < L is (n[frm, j] + alpha beta_j) / (n[frm, .] + alpha); entry L
    is the new-state mass alpha beta_L / (n[frm, .] + alpha).
    """
    L = ts.L
    if not 0 <= frm < L:
        raise ConfigError(f"state {frm} is not instantiated (L = {L})")
    row = np.zeros(L + 1)
    row[:L] = ts.n[frm]
    p = row + ts.alpha * np.asarray(ts.beta, dtype=float)
    return p / (row.sum() + ts.alpha)


def grow_beta(beta, lam, rng=None, xi=None):
    """Split the tail mass when a new state is instantiated."""
    beta = np.asarray(beta, dtype=float)
    if xi is None:
        xi = rng.beta(1.0, lam)
    tail = beta[-1]
    return np.concatenate([beta[:-1], [xi * tail, (1.0 - xi) * tail]])


class StirlingCache:
    """Log unsigned Stirling numbers of the first kind, extended lazily."""

    def __init__(self, n_max=64):
        self._lock = threading.Lock()
        self._table = np.array([[0.0]])
        self.extend(n_max)

    @property
    def n_max(self):
        return self._table.shape[0] - 1

    def extend(self, n_max):
        with self._lock:
            old = self._table
            n0 = old.shape[0] - 1
            if n_max <= n0:
                return
            new = np.full((n_max + 1, n_max + 1), -np.inf)
            new[: n0 + 1, : n0 + 1] = old
            for n in range(n0, n_max):
                prev = new[n, : n + 1]
                nxt = np.full(n + 2, -np.inf)
                # S(n+1, m) = n S(n, m) + S(n, m-1)
                with np.errstate(divide="ignore"):
                    nxt[: n + 1] = np.log(n) + prev if n > 0 else -np.inf
                nxt[1:] = np.logaddexp(nxt[1:], prev)
                new[n + 1, : n + 2] = nxt
            self._table = new

    def row(self, n):
        if n > self.n_max:
            self.extend(max(n, 2 * self.n_max))
        return self._table[n, : n + 1]

    def log_s(self, n, m):
        if m > n:
            return -np.inf
        return self.row(n)[m]

    def check_recurrence(self, n_max=None, rtol=1e-10):
        """Verify S(n+1, m) = n S(n, m) + S(n, m-1) at every filled cell."""
        n_max = self.n_max if n_max is None else n_max
        self.row(n_max)
        T = self._table
        with np.errstate(divide="ignore"):
            for n in range(n_max):
                lhs = T[n + 1, 1:n + 2]
                grow = np.log(n) + T[n, 1:n + 2] if n > 0 else np.full(n + 1, -np.inf)
                rhs = np.logaddexp(T[n, :n + 1], grow)
                if not np.allclose(lhs, rhs, rtol=rtol, atol=rtol):
                    return False
        return T[0, 0] == 0.0 and np.all(np.isneginf(T[1:, 0]))


_DEFAULT_CACHE = StirlingCache()


def m_log_weights(n_ij, theta, cache=None):
    cache = cache or _DEFAULT_CACHE
    m = np.arange(n_ij + 1)
    return cache.row(n_ij) + m * np.log(theta)


def sample_m(n_ij, theta, rng, cache=None):
    """Number of tables for ``n_ij`` customers with concentration ``theta``."""
    n_ij = int(n_ij)
    if n_ij == 0:
        return 0
    lw = m_log_weights(n_ij, theta, cache)
    cdf = np.cumsum(np.exp(lw - lw.max()))
    return int(min(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"), n_ij))


def sample_m_batch(n, theta, rng):
    """Vectorized table counts with the same law as :func:`sample_m`.

    Seating customers one at a time, customer k + 1 opens a table with
    probability p_k = theta / (theta + k). For k >= 2 each such Bernoulli is
    drawn as 1{N_k >= 1} with N_k ~ Poisson(r_k), r_k = log1p(theta / k),
    by thinning a Poisson process on [2, n) with intensity theta / (x - 1),
    which dominates r_floor(x). The work per cell is about theta * log(n)
    draws rather than n.
    """
    n = np.asarray(n, dtype=np.int64)
    theta = np.asarray(theta, dtype=float)
    flat_n = n.ravel()
    flat_t = np.broadcast_to(theta, n.shape).ravel()
    # first customer always opens a table
    out = (flat_n > 0).astype(np.int64)
    live = np.flatnonzero(flat_n > 1)
    if live.size == 0:
        return out.reshape(n.shape)
    nn = flat_n[live]
    th = flat_t[live]
    # second customer
    extra = rng.random(live.size) * (th + 1.0) < th
    span = np.log(nn - 1.0)
    pts = rng.poisson(th * span)
    total = int(pts.sum())
    if total:
        cid = np.repeat(np.arange(live.size), pts)
        xm1 = np.exp(rng.random(total) * span[cid])
        k = np.minimum((1.0 + xm1).astype(np.int64), nn[cid] - 1)
        tc = th[cid]
        keep = rng.random(total) * tc < xm1 * np.log1p(tc / k)
        width = int(nn.max())
        occupied = np.unique(cid[keep] * width + k[keep])
        extra = extra + np.bincount(occupied // width, minlength=live.size)
    out[live] += extra
    return out.reshape(n.shape)


def dirichlet_rows(params, rng):
    """Row-wise Dirichlet draws via normalized gammas; zeros are floored."""
    params = np.asarray(params, dtype=float)
    if np.any(params <= 0):
        log.debug("Dirichlet concentration floored at %g", DIRICHLET_FLOOR)
        params = np.maximum(params, DIRICHLET_FLOOR)
    g = rng.standard_gamma(params)
    return g / g.sum(axis=-1, keepdims=True)


def sample_beta_given_m(m_col_sums, lam, rng):
    m = np.asarray(m_col_sums, dtype=float)
    return dirichlet_rows(np.concatenate([m, [lam]]), rng)


def lambda_mixture_odds(a_lambda, L, m_dotdot, rate):
    """epsilon / (1 - epsilon) for the two-gamma mixture."""
    return (a_lambda + L - 1.0) / (m_dotdot * rate)


def sample_lambda(L, m_dotdot, a_lambda, b_lambda, rng, lam_prev=None):
    """Refresh the top-level concentration given L states and m.. tables."""
    if m_dotdot <= 0:
        return float(rng.gamma(a_lambda, 1.0 / b_lambda))
    lam_prev = float(rng.gamma(a_lambda, 1.0 / b_lambda)) if lam_prev is None else lam_prev
    phi = rng.beta(lam_prev + 1.0, m_dotdot)
    rate = b_lambda - np.log(phi)
    odds = lambda_mixture_odds(a_lambda, L, m_dotdot, rate)
    eps = odds / (1.0 + odds)
    shape = a_lambda + L if rng.random() < eps else a_lambda + L - 1.0
    return float(rng.gamma(shape, 1.0 / rate))


def sample_alpha(counts, m_dotdot, a_alpha, b_alpha, rng, alpha_prev):
    """Refresh the row concentration from per-state outgoing counts."""
    counts = np.asarray(counts, dtype=float)
    g = np.ones_like(counts)
    h = np.zeros_like(counts)
    pos = counts > 0
    g[pos] = rng.beta(alpha_prev + 1.0, counts[pos])
    h[pos] = rng.random(pos.sum()) < counts[pos] / (alpha_prev + counts[pos])
    shape = a_alpha + m_dotdot - h.sum()
    rate = b_alpha - np.log(g).sum()
    return float(rng.gamma(shape, 1.0 / rate))


# --- batched refresh used by the filter ----------------------------------------

def sample_lambda_batch(L, m_dotdot, lam_prev, a_lambda, b_lambda, rng):
    m_dotdot = np.asarray(m_dotdot, dtype=float)
    phi = rng.beta(lam_prev + 1.0, np.maximum(m_dotdot, 1.0))
    rate = b_lambda - np.log(phi)
    odds = (a_lambda + L - 1.0) / (np.maximum(m_dotdot, 1.0) * rate)
    eps = odds / (1.0 + odds)
    shape = np.where(rng.random(L.shape) < eps, a_lambda + L, a_lambda + L - 1.0)
    lam = rng.gamma(shape) / rate
    prior = rng.gamma(a_lambda, 1.0 / b_lambda, size=L.shape)
    return np.where(m_dotdot > 0, lam, prior)


def sample_alpha_batch(counts, m_dotdot, alpha_prev, a_alpha, b_alpha, rng):
    """``counts`` is (B, R) outgoing counts per restaurant (row)."""
    counts = np.asarray(counts, dtype=float)
    pos = counts > 0
    a = np.broadcast_to(alpha_prev[:, None] + 1.0, counts.shape)
    g = np.ones_like(counts)
    g[pos] = rng.beta(a[pos], counts[pos])
    h = np.zeros_like(counts)
    ap = np.broadcast_to(alpha_prev[:, None], counts.shape)
    h[pos] = rng.random(pos.sum()) < counts[pos] / (ap[pos] + counts[pos])
    shape = a_alpha + m_dotdot - h.sum(1)
    rate = b_alpha - np.log(g).sum(1)
    return rng.gamma(shape) / rate
