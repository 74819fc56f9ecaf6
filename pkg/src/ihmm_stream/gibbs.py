"""Desk-scale oracles: exact path posteriors by enumeration and a collapsed
Gibbs sampler over state sequences.

Two state-labelling conventions are supported.

``canonical``
    Labels are assigned in order of first appearance (s_1 = 0).  The k-th
    state to appear takes the pinned weight ``beta[k]``; a transition to a new
    state has mass ``alpha * (1 - sum(beta[:L])) / (n_s + alpha)``.  This is
    the law the particle filter runs when ``beta_fixed`` is set.

``labeled``
    K fixed labels with s_1 ~ beta and rows drawn from DP(alpha, beta)
    integrated out.  The collapsed Gibbs sampler targets this law.

Emissions are logistic with a Gaussian prior on each state's coefficient
vector, integrated numerically (d <= 2).
"""

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.special import expit, gammaln, log_expit, logsumexp

from .errors import ConfigError
from .logit_mixture import TABLE, sample_component, sample_utility

MAX_T = 8
MAX_K = 3


@dataclass(frozen=True)
class TinyInstance:
    y: tuple
    x: tuple                  # T rows of length d
    beta: tuple               # pinned shared weights, sum 1
    alpha: float
    prior_mean: tuple = (0.0,)
    prior_var: tuple = (4.0,)

    @property
    def T(self):
        return len(self.y)

    @property
    def K(self):
        return len(self.beta)

    @property
    def d(self):
        return len(self.prior_mean)

    def X(self):
        return np.asarray(self.x, dtype=float).reshape(self.T, self.d)

    def Lambda(self):
        return np.concatenate([np.asarray(self.prior_mean, float), np.log(np.asarray(self.prior_var, float))])


def bundled_instance():
    """T=3, K=2 instance shipped for the oracle comparison."""
    return TinyInstance(y=(1, 1, 0), x=((1.0,), (1.0,), (1.0,)), beta=(0.6, 0.4), alpha=1.0,
                        prior_mean=(0.0,), prior_var=(4.0,))


def _guard(inst):
    if inst.T > MAX_T or inst.K > MAX_K:
        raise ConfigError(f"instance too large for enumeration (T={inst.T}, K={inst.K})")
    if inst.d > 2:
        raise ConfigError("numerical emission integration supports d <= 2")
    b = np.asarray(inst.beta, dtype=float)
    if np.any(b < 0) or not np.isclose(b.sum(), 1.0):
        raise ConfigError("beta must be a probability vector")


# --- emission evidence ------------------------------------------------------------

class GHEvidence:
    """log of  int prod_t sigmoid((2y_t - 1) G.x_t) N(G; m, diag v) dG  by Gauss-Hermite."""

    def __init__(self, inst, n_nodes=80):
        z, w = np.polynomial.hermite_e.hermegauss(n_nodes)
        w = w / w.sum()
        m = np.asarray(inst.prior_mean, float)
        sd = np.sqrt(np.asarray(inst.prior_var, float))
        grids = [m[i] + sd[i] * z for i in range(inst.d)]
        pts = np.stack(np.meshgrid(*grids, indexing="ij"), -1).reshape(-1, inst.d)
        ws = np.prod(np.stack(np.meshgrid(*([w] * inst.d), indexing="ij"), -1).reshape(-1, inst.d), 1)
        sign = 2.0 * np.asarray(inst.y, float) - 1.0
        # (n_pts, T) log-likelihood of each observation at each node
        self._ll = log_expit(sign[None, :] * (pts @ inst.X().T))
        self._logw = np.log(ws)
        self._cache = {}

    def __call__(self, sites):
        key = tuple(sorted(sites))
        if key not in self._cache:
            if not key:
                self._cache[key] = 0.0
            else:
                self._cache[key] = float(logsumexp(self._logw + self._ll[:, list(key)].sum(1)))
        return self._cache[key]


class QuadEvidence:
    """Same integral by adaptive quadrature (independent second opinion, d <= 2)."""

    def __init__(self, inst):
        self.inst = inst

    def __call__(self, sites):
        if not sites:
            return 0.0
        inst = self.inst
        X = inst.X()
        sign = 2.0 * np.asarray(inst.y, float) - 1.0
        m = np.asarray(inst.prior_mean, float)
        v = np.asarray(inst.prior_var, float)
        sites = list(sites)

        def f(*g):
            g = np.asarray(g)
            lp = -0.5 * np.sum((g - m) ** 2 / v + np.log(2 * np.pi * v))
            ll = sum(np.log(expit(sign[t] * (X[t] @ g))) for t in sites)
            return np.exp(lp + ll)

        lim = [(m[i] - 12 * np.sqrt(v[i]), m[i] + 12 * np.sqrt(v[i])) for i in range(inst.d)]
        if inst.d == 1:
            val, _ = integrate.quad(f, *lim[0], epsabs=1e-13, epsrel=1e-11, limit=200)
        else:
            val, _ = integrate.dblquad(lambda b, a: f(a, b), *lim[0], *lim[1], epsabs=1e-12, epsrel=1e-10)
        return float(np.log(val))


# --- path priors -----------------------------------------------------------------

def canonical_paths(T, K):
    """All restricted-growth label sequences of length T using < K labels."""
    out = []

    def rec(prefix, L):
        if len(prefix) == T:
            out.append(tuple(prefix))
            return
        for v in range(min(L + 1, K)):
            rec(prefix + [v], max(L, v + 1))

    rec([0], 1)
    return out


def canonical_log_prior(path, beta, alpha):
    beta = np.asarray(beta, float)
    K = len(beta)
    n = np.zeros((K, K))
    L = 1
    lp = 0.0
    for a, b in zip(path[:-1], path[1:]):
        tot = n[a].sum() + alpha
        if b < L:
            p = (n[a, b] + alpha * beta[b]) / tot
        elif b == L:
            p = alpha * (1.0 - beta[:L].sum()) / tot
            L += 1
        else:
            return -np.inf
        if p <= 0:
            return -np.inf
        lp += np.log(p)
        n[a, b] += 1
    return lp


def labeled_log_prior(path, beta, alpha):
    beta = np.asarray(beta, float)
    K = len(beta)
    n = np.zeros((K, K))
    lp = np.log(beta[path[0]]) if beta[path[0]] > 0 else -np.inf
    for a, b in zip(path[:-1], path[1:]):
        p = (n[a, b] + alpha * beta[b]) / (n[a].sum() + alpha)
        lp += np.log(p) if p > 0 else -np.inf
        n[a, b] += 1
    return lp


def labeled_log_prior_closed(path, beta, alpha):
    """Per-row Dirichlet-multinomial form of :func:`labeled_log_prior`."""
    beta = np.asarray(beta, float)
    K = len(beta)
    n = np.zeros((K, K))
    for a, b in zip(path[:-1], path[1:]):
        n[a, b] += 1
    if beta[path[0]] <= 0:
        return -np.inf
    lp = np.log(beta[path[0]])
    ab = alpha * beta
    for r in range(K):
        if n[r].sum() == 0:
            continue
        if np.any((ab == 0) & (n[r] > 0)):
            return -np.inf
        pos = ab > 0
        lp += gammaln(alpha) - gammaln(alpha + n[r].sum())
        lp += np.sum(gammaln(ab[pos] + n[r, pos]) - gammaln(ab[pos]))
    return lp


def _paths(inst, labels):
    if labels == "canonical":
        return canonical_paths(inst.T, inst.K), canonical_log_prior
    if labels == "labeled":
        return list(itertools.product(range(inst.K), repeat=inst.T)), labeled_log_prior
    raise ConfigError(f"unknown labelling {labels!r}")


def _path_log_emission(path, evidence):
    total = 0.0
    for lab in set(path):
        total += evidence([t for t, s in enumerate(path) if s == lab])
    return total


def exact_posterior(inst, labels="canonical", evidence=None):
    """Exact posterior over state paths: dict path -> probability."""
    _guard(inst)
    evidence = evidence or GHEvidence(inst)
    paths, prior = _paths(inst, labels)
    lw = np.array([prior(p, inst.beta, inst.alpha) + _path_log_emission(p, evidence) for p in paths])
    lw -= logsumexp(lw)
    return dict(zip(paths, np.exp(lw)))


def exact_posterior_forward(inst, labels="canonical"):
    """Second enumerator: grows partial paths one site at a time, carrying
    counts and per-state site lists, with adaptive-quadrature emissions and
    (for labelled paths) the closed Dirichlet-multinomial prior."""
    _guard(inst)
    ev = QuadEvidence(inst)
    beta = np.asarray(inst.beta, float)
    if labels == "canonical":
        partial = {(0,): 0.0}
        for t in range(1, inst.T):
            nxt = {}
            for p, lp in partial.items():
                L = max(p) + 1
                n_out = sum(1 for a in p[:-1] if a == p[-1])
                for v in range(min(L + 1, inst.K)):
                    n_av = sum(1 for a, b in zip(p[:-1], p[1:]) if a == p[-1] and b == v)
                    mass = inst.alpha * (beta[v] if v < L else 1.0 - beta[:L].sum())
                    pr = ((n_av if v < L else 0) + mass) / (n_out + inst.alpha)
                    if pr > 0:
                        nxt[p + (v,)] = lp + np.log(pr)
            partial = nxt
        prior = partial
    elif labels == "labeled":
        prior = {p: labeled_log_prior_closed(p, beta, inst.alpha)
                 for p in itertools.product(range(inst.K), repeat=inst.T)}
    else:
        raise ConfigError(f"unknown labelling {labels!r}")
    paths = list(prior)
    lw = np.array([prior[p] + _path_log_emission(p, ev) for p in paths])
    keep = np.isfinite(lw)
    lw = lw - logsumexp(lw[keep])
    return {p: float(np.exp(w)) for p, w in zip(paths, lw) if np.isfinite(w)}


def site_marginals(post, T, K):
    out = np.zeros((T, K))
    for p, w in post.items():
        for t, s in enumerate(p):
            out[t, s] += w
    return out


def total_variation(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


def empirical_distribution(paths):
    paths = np.asarray(paths)
    uniq, counts = np.unique(paths, axis=0, return_counts=True)
    return {tuple(int(v) for v in u): c / paths.shape[0] for u, c in zip(uniq, counts)}


# --- collapsed Gibbs -------------------------------------------------------------

def excluded_counts(path, t, K):
    """Transition counts with the transitions into and out of site t removed."""
    n = np.zeros((K, K))
    for u in range(len(path) - 1):
        if u == t - 1 or u == t:
            continue
        n[path[u], path[u + 1]] += 1
    return n


def _branch(n, prev, nxt, k, is_new, beta, alpha):
    first = beta[k] if prev is None else n[prev, k] + alpha * beta[k]
    if nxt is None:
        return first
    if is_new:
        # alpha beta_k beta_{s_{t+1}}; at t = 0 the entry law beta_k replaces alpha beta_k
        return (beta[k] if prev is None else alpha * beta[k]) * beta[nxt]
    if prev is None or k != prev:
        return first * (n[k, nxt] + alpha * beta[nxt]) / (n[k].sum() + alpha)
    if k == nxt:
        return first * (n[k, nxt] + 1 + alpha * beta[nxt]) / (n[k].sum() + 1 + alpha)
    return first * (n[k, nxt] + alpha * beta[nxt]) / (n[k].sum() + 1 + alpha)


def transition_factors(path, t, beta, alpha, K):
    """Four-branch conditional p(s_t = k | s_{-t}, beta, alpha) for all k, unnormalized.

    ``k`` is "new" when it does not occur among the other sites.
    """
    beta = np.asarray(beta, float)
    T = len(path)
    n = excluded_counts(path, t, K)
    prev = path[t - 1] if t > 0 else None
    nxt = path[t + 1] if t < T - 1 else None
    others = set(path[:t]) | set(path[t + 1:])
    return np.array([_branch(n, prev, nxt, k, k not in others, beta, alpha) for k in range(K)])


def transition_factor(path, t, k, beta, alpha, K):
    return transition_factors(path, t, beta, alpha, K)[k]


def gibbs_conditional(path, t, inst, log_emission):
    """Normalized p(s_t = k | rest) for k = 0..K-1."""
    f = transition_factors(path, t, inst.beta, inst.alpha, inst.K)
    with np.errstate(divide="ignore"):
        lp = np.log(f) + np.array([log_emission(k) if f[k] > 0 else 0.0 for k in range(inst.K)])
    return np.exp(lp - logsumexp(lp))


def _aug_posterior(X, Uc, var, m0, v0):
    """Gaussian posterior of Gamma given centred utilities Uc with variances var."""
    if X.shape[1] == 1:
        prec = 1.0 / v0[0] + float(np.sum(X[:, 0] ** 2 / var))
        cov = 1.0 / prec
        return np.array([cov * (m0[0] / v0[0] + float(np.sum(X[:, 0] * Uc / var)))]), np.array([[cov]])
    prec = np.diag(1.0 / v0) + (X.T / var) @ X
    cov = np.linalg.inv(prec)
    mean = cov @ (m0 / v0 + (X.T / var) @ Uc)
    return mean, cov


@dataclass
class GibbsResult:
    paths: np.ndarray
    mode: str
    extra: dict = field(default_factory=dict)


def collapsed_gibbs(inst, sweeps, rng, mode="augmented", burn=100, init=None):
    """Collapsed Gibbs over labelled state paths.

    ``mode='logit'`` scores site t under state k by the ratio of numerically
    integrated evidences; ``mode='augmented'`` carries mixture-augmented utilities and
    component labels per site, scores by the Gaussian integrated likelihood
    and refreshes (U, z) after each sweep through a transient Gamma draw.
    """
    _guard(inst)
    T, K, d = inst.T, inst.K, inst.d
    X = inst.X()
    y = np.asarray(inst.y)
    m0 = np.asarray(inst.prior_mean, float)
    v0 = np.asarray(inst.prior_var, float)
    path = list(init) if init is not None else [int(rng.integers(K)) for _ in range(T)]
    if K == 1:
        return GibbsResult(np.zeros((sweeps, T), dtype=np.int64), mode)

    if mode == "logit":
        ev = GHEvidence(inst)

        def score(t, k):
            sites = [u for u in range(T) if u != t and path[u] == k]
            return ev(sites + [t]) - ev(sites)
    elif mode == "augmented":
        eta0 = X @ m0
        U, _, _ = sample_utility(eta0, y, rng)
        z = sample_component(U, eta0, rng)

        def score(t, k):
            sites = [u for u in range(T) if u != t and path[u] == k]
            mean, cov = _aug_posterior(X[sites], U[sites] - TABLE.mu[z[sites]], TABLE.var[z[sites]], m0, v0)
            s2 = X[t] @ cov @ X[t] + TABLE.var[z[t]]
            r = U[t] - TABLE.mu[z[t]] - X[t] @ mean
            return -0.5 * (np.log(2 * np.pi * s2) + r * r / s2)
    else:
        raise ConfigError(f"unknown Gibbs mode {mode!r}")

    beta = np.asarray(inst.beta, float)
    out = np.empty((sweeps, T), dtype=np.int64)
    for it in range(burn + sweeps):
        for t in range(T):
            f = transition_factors(path, t, beta, inst.alpha, K)
            lp = np.full(K, -np.inf)
            for k in range(K):
                if f[k] > 0:
                    lp[k] = np.log(f[k]) + score(t, k)
            p = np.exp(lp - lp.max())
            path[t] = min(int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right")), K - 1)
        if mode == "augmented":
            eta = np.empty(T)
            for k in set(path):
                sites = [u for u in range(T) if path[u] == k]
                zs = z[sites]
                mean, cov = _aug_posterior(X[sites], U[sites] - TABLE.mu[zs], TABLE.var[zs], m0, v0)
                g = mean + np.linalg.cholesky(cov) @ rng.standard_normal(d)
                eta[sites] = X[sites] @ g
            U, _, _ = sample_utility(eta, y, rng)
            z = sample_component(U, eta, rng)
        if it >= burn:
            out[it - burn] = path
    return GibbsResult(out, mode)
