"""Particle learning filter for one user's binary event stream.

The cloud is held as struct-of-arrays over B particles with a shared state
capacity ``C`` that doubles on demand.  Slot ``L[b]`` of every per-state
array that has ``C + 1`` columns is the prospective (not yet born) state: its
prior Lambda and Gamma are redrawn after every step, so the new-state branch
of the one-step-ahead weight always sees a fresh prior-level draw.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_expit, logsumexp

from .conjugate import SufficientStats, posterior_batch
from .errors import DataError, DegenerateCloudError, SequencingError
from .logit_mixture import TABLE, sample_component, sample_utility
from .transition import (dirichlet_rows, sample_alpha_batch, sample_lambda_batch,
                         sample_m_batch)
from .types import Particle

log = logging.getLogger(__name__)


class LambdaPrior:
    """Gaussian mixture over Lambda vectors used to seed new states.

    ``weights`` (K,), ``means`` (K, 2d) and ``covs`` (K, 2d, 2d).  Covariances
    may be singular; draws go through a symmetric square root.
    """

    def __init__(self, weights, means, covs):
        self.weights = np.asarray(weights, dtype=float)
        self.weights = self.weights / self.weights.sum()
        self.means = np.atleast_2d(np.asarray(means, dtype=float))
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        self.covs = covs
        vals, vecs = np.linalg.eigh(0.5 * (covs + np.swapaxes(covs, -1, -2)))
        self.roots = vecs * np.sqrt(np.clip(vals, 0.0, None))[..., None, :]

    @classmethod
    def base(cls, hp, shift=None):
        mean = hp.mu_Lambda0 if shift is None else hp.mu_Lambda0 + shift
        return cls(np.ones(1), mean[None], hp.Sigma_Lambda0[None])

    @property
    def K(self):
        return self.weights.shape[0]

    def sample(self, rng, size, c=None):
        """Draw ``size`` Lambda vectors; returns (Lambda, component)."""
        if c is None:
            if self.K == 1:
                c = np.zeros(size, dtype=np.int64)
            else:
                c = rng.choice(self.K, size=size, p=self.weights)
        eps = rng.standard_normal((size, self.means.shape[1]))
        lam = self.means[c] + np.einsum("nij,nj->ni", self.roots[c], eps)
        return lam, c

    def __eq__(self, other):
        return (isinstance(other, LambdaPrior) and np.array_equal(self.weights, other.weights)
                and np.array_equal(self.means, other.means) and np.array_equal(self.covs, other.covs))


def gamma_from_lambda(Lam, rng):
    d = Lam.shape[-1] // 2
    return Lam[..., :d] + np.exp(0.5 * Lam[..., d:]) * rng.standard_normal(Lam.shape[:-1] + (d,))


# (name, number of state axes, extra columns beyond C)
_STATE_FIELDS = {
    "n": (2, 0),
    "m_col": (1, 0),
    "beta": (1, 1),
    "gamma": (1, 1),
    "Lam": (1, 1),
    "Lam_post": (1, 0),
    "c": (1, 1),
    "visits": (1, 0),
    "Sxx": (1, 0),
    "SxU": (1, 0),
    "xbar": (1, 0),
    "Ubar": (1, 0),
    "Cxx": (1, 0),
    "CxU": (1, 0),
    "CUU": (1, 0),
}
_PARTICLE_FIELDS = ("s", "L", "alpha", "lam") + tuple(_STATE_FIELDS)


@dataclass
class ParticleCloud:
    user_id: str
    t: int
    d: int
    C: int
    s: np.ndarray
    L: np.ndarray
    alpha: np.ndarray
    lam: np.ndarray
    n: np.ndarray
    m_col: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    Lam: np.ndarray
    Lam_post: np.ndarray
    c: np.ndarray
    visits: np.ndarray
    Sxx: np.ndarray
    SxU: np.ndarray
    xbar: np.ndarray
    Ubar: np.ndarray
    Cxx: np.ndarray
    CxU: np.ndarray
    CUU: np.ndarray
    prior: LambdaPrior
    weights: np.ndarray
    aux: dict = field(default_factory=dict)
    snapshots: list = None
    init_log_predictive: float = 0.0

    @property
    def B(self):
        return self.s.shape[0]

    def copy(self):
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        kw["aux"] = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.aux.items()}
        kw["snapshots"] = None if self.snapshots is None else list(self.snapshots)
        return ParticleCloud(**kw)

    def take(self, idx):
        """Reorder/resample particles in place by an index vector."""
        for name in _PARTICLE_FIELDS:
            setattr(self, name, getattr(self, name)[idx])
        self.weights = np.full(self.B, 1.0 / self.B)

    def ensure_capacity(self, needed):
        if needed <= self.C:
            return
        newC = max(needed, 2 * self.C)
        for name, (axes, extra) in _STATE_FIELDS.items():
            arr = getattr(self, name)
            pad = [(0, 0)] * arr.ndim
            for ax in range(1, 1 + axes):
                pad[ax] = (0, newC - self.C)
            setattr(self, name, np.pad(arr, pad))
        self.C = newC

    def particle(self, b):
        """Plain-value view of particle ``b`` for inspection and checks."""
        L = int(self.L[b])
        stats = []
        for l in range(L):
            stats.append(SufficientStats(
                int(self.visits[b, l]), self.Sxx[b, l].copy(), self.SxU[b, l].copy(),
                self.xbar[b, l].copy(), float(self.Ubar[b, l]), self.Cxx[b, l].copy(),
                self.CxU[b, l].copy(), float(self.CUU[b, l])))
        aux = {k: (v[b] if isinstance(v, np.ndarray) and v.shape[:1] == (self.B,) else v)
               for k, v in self.aux.items()}
        return Particle(
            s=int(self.s[b]), L=L, n=self.n[b, :L, :L].copy(),
            beta=self.beta[b, :L + 1].copy(), alpha=float(self.alpha[b]), lam=float(self.lam[b]),
            gamma_by_state=self.gamma[b, :L].copy(), Lambda_by_state=self.Lam[b, :L].copy(),
            c_by_state=self.c[b, :L].copy(), suffstats_by_state=stats, aux=aux)

    def check(self):
        assert abs(self.weights.sum() - 1.0) <= 1e-10
        for b in range(self.B):
            self.particle(b).check(self.t)
        return True

    def modal_L(self):
        return int(np.bincount(self.L).argmax())

    def L_histogram(self):
        return np.bincount(self.L, minlength=self.L.max() + 1)


@dataclass
class Snapshot:
    """What the backward pass needs from one filtering step."""

    t: int
    s: np.ndarray
    L: np.ndarray
    n_row: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    gamma: np.ndarray = None


@dataclass
class FilterResult:
    cloud: ParticleCloud
    log_predictive: np.ndarray
    L_hist: list
    ess: np.ndarray
    snapshots: list = None


# --- helpers --------------------------------------------------------------------

def _fixed_beta(bf, L):
    """Shared weights for L instantiated states under a pinned beta."""
    out = np.zeros(L + 1)
    k = min(L, len(bf))
    out[:k] = bf[:k]
    out[L] = max(0.0, 1.0 - out[:L].sum())
    return out


def _resample(logw, rng, scheme):
    B = logw.shape[0]
    w = np.exp(logw - logw.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    if scheme == "systematic":
        u = (rng.random() + np.arange(B)) / B
    else:
        u = rng.random(B)
    return np.minimum(np.searchsorted(cdf, u, side="right"), B - 1)


def _check_weights(logg, t):
    if np.any(np.isnan(logg)) or not np.any(np.isfinite(logg)):
        raise DegenerateCloudError(
            f"t={t}: all particle weights vanished "
            f"(nan={int(np.isnan(logg).sum())}, -inf={int(np.isneginf(logg).sum())}, B={logg.size})")


def _refresh_prospective(cloud, rng):
    """Redraw Lambda and Gamma for slot L of every particle."""
    B = cloud.B
    rows = np.arange(B)
    Lam, c = cloud.prior.sample(rng, B)
    cloud.Lam[rows, cloud.L] = Lam
    cloud.c[rows, cloud.L] = c
    cloud.gamma[rows, cloud.L] = gamma_from_lambda(Lam, rng)


def _refresh_hyper(cloud, hp, rng):
    """m -> phi -> lambda -> (g, h) -> alpha -> beta, batched over particles."""
    B, C = cloud.B, cloud.C
    L = cloud.L
    if hp.beta_fixed is None or hp.alpha_fixed is None:
        theta = cloud.alpha[:, None, None] * cloud.beta[:, None, :C]
        m = sample_m_batch(cloud.n, np.maximum(theta, 1e-300), rng)
        m_col = m.sum(1)
        m_col[:, 0] += 1  # table opened by the initial state
        cloud.m_col = m_col
        m_dd = m_col.sum(1)
        cloud.aux["m_dotdot"] = m_dd
    else:
        m_dd = cloud.m_col.sum(1)
    if hp.beta_fixed is None:
        cloud.lam = sample_lambda_batch(L, m_dd, cloud.lam, hp.a_lambda, hp.b_lambda, rng)
    if hp.alpha_fixed is None:
        counts = np.concatenate([np.ones((B, 1)), cloud.n.sum(2)], axis=1)
        cloud.alpha = sample_alpha_batch(counts, m_dd, cloud.alpha, hp.a_alpha, hp.b_alpha, rng)
    if hp.beta_fixed is None:
        params = np.zeros((B, C + 1))
        cols = np.arange(C + 1)[None, :]
        active = cols < L[:, None]
        params[:, :C] = np.where(active[:, :C], np.maximum(cloud.m_col, 1e-300), 0.0)
        params[np.arange(B), L] = cloud.lam
        g = rng.standard_gamma(params)
        cloud.beta = g / g.sum(1, keepdims=True)


def _absorb(cloud, rows, states, x, y, rng, hp):
    """Augment, update the visited state's statistics and redraw its Gamma."""
    B, d = cloud.B, cloud.d
    g_old = cloud.gamma[rows, states]
    eta = g_old @ x
    U, de, ee = sample_utility(eta, np.full(B, y), rng)
    z = sample_component(U, eta, rng)
    var, mu = TABLE.var[z], TABLE.mu[z]

    t = cloud.visits[rows, states].astype(float)
    xb_old = cloud.xbar[rows, states]
    ub_old = cloud.Ubar[rows, states]
    xb = xb_old + (x - xb_old) / (t + 1)[:, None]
    ub = ub_old + (U - ub_old) / (t + 1)
    f = (t / (t + 1))
    xx = np.outer(x, x)
    cloud.Cxx[rows, states] = (f[:, None, None] * (cloud.Cxx[rows, states] + xb_old[:, :, None] * xb_old[:, None, :])
                               + xx / (t + 1)[:, None, None] - xb[:, :, None] * xb[:, None, :])
    cloud.CxU[rows, states] = (f[:, None] * (cloud.CxU[rows, states] + xb_old * ub_old[:, None])
                               + x * (U / (t + 1))[:, None] - xb * ub[:, None])
    cloud.CUU[rows, states] = f * (cloud.CUU[rows, states] + ub_old ** 2) + U * U / (t + 1) - ub ** 2
    cloud.xbar[rows, states] = xb
    cloud.Ubar[rows, states] = ub
    cloud.visits[rows, states] += 1

    Sxx = cloud.Sxx[rows, states] + xx / var[:, None, None]
    SxU = cloud.SxU[rows, states] + x * ((U - mu) / var)[:, None]
    cloud.Sxx[rows, states] = Sxx
    cloud.SxU[rows, states] = SxU
    Lam = cloud.Lam[rows, states]
    mean, factor = posterior_batch(Sxx, SxU, Lam[:, :d], np.exp(Lam[:, d:]))
    cloud.gamma[rows, states] = mean + np.einsum("bij,bj->bi", factor, rng.standard_normal((B, d)))
    postvar = (factor * factor).sum(-1)
    cloud.Lam_post[rows, states] = np.concatenate([mean, np.log(postvar)], axis=1)
    cloud.aux.update(U=U, z=z, d=de, e=ee)


# --- public API ----------------------------------------------------------------

def init_cloud(hp, first_obs, rng, prior=None, capacity=4, record=False):
    """Build a B-particle cloud from the user's first observation."""
    if int(first_obs.t) != 1:
        raise SequencingError(f"user {first_obs.user_id}: first record has t={first_obs.t}, expected 1")
    x = np.asarray(first_obs.x, dtype=float)
    d = x.shape[0]
    if d != hp.d:
        raise DataError(f"covariate length {d} does not match d={hp.d}")
    B, C = int(hp.B), max(2, int(capacity))
    prior = prior or LambdaPrior.base(hp)
    cloud = ParticleCloud(
        user_id=first_obs.user_id, t=1, d=d, C=C,
        s=np.zeros(B, dtype=np.int64), L=np.ones(B, dtype=np.int64),
        alpha=np.empty(B), lam=np.empty(B),
        n=np.zeros((B, C, C), dtype=np.int64), m_col=np.zeros((B, C), dtype=np.int64),
        beta=np.zeros((B, C + 1)), gamma=np.zeros((B, C + 1, d)), Lam=np.zeros((B, C + 1, 2 * d)),
        Lam_post=np.zeros((B, C, 2 * d)), c=np.zeros((B, C + 1), dtype=np.int64),
        visits=np.zeros((B, C), dtype=np.int64),
        Sxx=np.zeros((B, C, d, d)), SxU=np.zeros((B, C, d)),
        xbar=np.zeros((B, C, d)), Ubar=np.zeros((B, C)), Cxx=np.zeros((B, C, d, d)),
        CxU=np.zeros((B, C, d)), CUU=np.zeros((B, C)),
        prior=prior, weights=np.full(B, 1.0 / B), snapshots=[] if record else None)

    cloud.lam = rng.gamma(hp.a_lambda, 1.0 / hp.b_lambda, size=B)
    cloud.alpha = (np.full(B, float(hp.alpha_fixed)) if hp.alpha_fixed is not None
                   else rng.gamma(hp.a_alpha, 1.0 / hp.b_alpha, size=B))
    cloud.m_col[:, 0] = 1
    rows = np.arange(B)
    for slot in (0, 1):
        Lam, c = prior.sample(rng, B)
        cloud.Lam[:, slot] = Lam
        cloud.c[:, slot] = c
        cloud.gamma[:, slot] = gamma_from_lambda(Lam, rng)

    # weight by the first observation before absorbing it
    logg = log_expit((2.0 * first_obs.y - 1.0) * (cloud.gamma[:, 0] @ x))
    _check_weights(logg, 1)
    cloud.init_log_predictive = float(logsumexp(logg) - np.log(B))
    cloud.take(_resample(logg, rng, hp.resampling))

    if hp.beta_fixed is not None:
        cloud.beta[:, :2] = _fixed_beta(hp.beta_fixed, 1)
        if hp.alpha_fixed is None:
            _refresh_hyper(cloud, hp, rng)
    else:
        _refresh_hyper(cloud, hp, rng)
    _absorb(cloud, rows, cloud.s, x, first_obs.y, rng, hp)
    _refresh_prospective(cloud, rng)
    if record:
        cloud.snapshots.append(_snapshot(cloud))
    return cloud


def _snapshot(cloud):
    B = cloud.B
    rows = np.arange(B)
    width = int(cloud.L.max()) + 1
    n_row = cloud.n[rows, cloud.s, :width - 1]
    return Snapshot(t=cloud.t, s=cloud.s.copy(), L=cloud.L.copy(), n_row=n_row.copy(),
                    beta=cloud.beta[:, :width].copy(), alpha=cloud.alpha.copy(),
                    gamma=cloud.gamma[:, :width].copy())


def _candidate_logweights(cloud, x, y, rng, fidelity):
    """log q[b, l] for l = 0..C (slot L is the new state), -inf elsewhere."""
    B, C = cloud.B, cloud.C
    rows = np.arange(B)
    row = cloud.n[rows, cloud.s]                              # (B, C)
    tot = row.sum(1)
    num = np.zeros((B, C + 1))
    num[:, :C] = row
    num += cloud.alpha[:, None] * cloud.beta
    with np.errstate(divide="ignore"):
        log_tr = np.log(num) - np.log(tot + cloud.alpha)[:, None]
    eta = cloud.gamma @ x                                     # (B, C+1)
    if not fidelity:
        return log_tr + log_expit((2.0 * y - 1.0) * eta)
    # conditional-normal weighting: augment under each candidate and score the
    # utility by its predictive density under that state's statistics
    d = cloud.d
    U, _, _ = sample_utility(eta, np.full(eta.shape, y), rng)
    z = sample_component(U, eta, rng)
    Sxx = np.zeros((B, C + 1, d, d))
    SxU = np.zeros((B, C + 1, d))
    Sxx[:, :C], SxU[:, :C] = cloud.Sxx, cloud.SxU
    mean, factor = posterior_batch(Sxx, SxU, cloud.Lam[..., :d], np.exp(cloud.Lam[..., d:]))
    loc = mean @ x
    v = np.einsum("blij,i->blj", factor, x)
    s2 = (v * v).sum(-1) + TABLE.var[z]
    r = U - TABLE.mu[z] - loc
    return log_tr - 0.5 * (np.log(2 * np.pi * s2) + r * r / s2)


def step(cloud, obs, rng, hp):
    """Absorb one observation in place; returns the log one-step predictive."""
    if obs.user_id != cloud.user_id:
        raise DataError(f"record for {obs.user_id!r} sent to cloud of {cloud.user_id!r}")
    if int(obs.t) != cloud.t + 1:
        raise SequencingError(f"user {cloud.user_id}: got t={obs.t} after t={cloud.t}")
    x = np.asarray(obs.x, dtype=float)
    y = int(obs.y)
    B = cloud.B
    rows = np.arange(B)

    logq = _candidate_logweights(cloud, x, y, rng, hp.fidelity_weights)
    logg = logsumexp(logq, axis=1)
    _check_weights(logg, obs.t)
    log_pred = float(logsumexp(logg) - np.log(B))
    wn = np.exp(logg - logg.max())
    ess = float(wn.sum() ** 2 / (wn * wn).sum())

    idx = _resample(logg, rng, hp.resampling)
    cloud.take(idx)
    logq = logq[idx] - logg[idx, None]

    # propagate the state
    p = np.exp(logq)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(B) * cdf[:, -1]
    s_new = np.minimum((cdf < u[:, None]).sum(1), cloud.L)
    birth = s_new == cloud.L
    s_old = cloud.s
    if np.any(birth):
        cloud.ensure_capacity(int(cloud.L.max()) + 1)
        bb = np.flatnonzero(birth)
        Lb = cloud.L[bb]
        if hp.beta_fixed is None:
            xi = rng.beta(1.0, cloud.lam[bb])
            tail = cloud.beta[bb, Lb]
            cloud.beta[bb, Lb] = xi * tail
            cloud.beta[bb, Lb + 1] = (1.0 - xi) * tail
        else:
            for b, l in zip(bb, Lb):
                cloud.beta[b, :l + 2] = _fixed_beta(hp.beta_fixed, l + 1)
        cloud.L[bb] += 1
    cloud.n[rows, s_old, s_new] += 1
    cloud.s = s_new
    cloud.t = int(obs.t)

    _refresh_hyper(cloud, hp, rng)
    _absorb(cloud, rows, s_new, x, y, rng, hp)
    _refresh_prospective(cloud, rng)
    cloud.aux["ess"] = ess
    if cloud.snapshots is not None:
        cloud.snapshots.append(_snapshot(cloud))
    return log_pred


def filter_stream(obs_seq, hp, rng, prior=None, record=False, check_every=0):
    """Run the filter over one user's records (sorted by t)."""
    it = iter(obs_seq)
    try:
        first = next(it)
    except StopIteration:
        raise DataError("empty observation sequence") from None
    cloud = init_cloud(hp, first, rng, prior=prior, record=record)
    trace, hist, ess = [], [cloud.L_histogram()], []
    for obs in it:
        trace.append(step(cloud, obs, rng, hp))
        hist.append(cloud.L_histogram())
        ess.append(cloud.aux["ess"])
        if check_every and cloud.t % check_every == 0:
            cloud.check()
    return FilterResult(cloud, np.asarray(trace), hist, np.asarray(ess), cloud.snapshots)
