"""Truncated stick-breaking Dirichlet-process Gaussian mixture fitted by
coordinate-ascent variational EM.

Model (D-dimensional data, truncation K)::

    alpha_v ~ Gam(a_v0, b_v0)                      (shape, rate)
    v_k | alpha_v ~ Beta(1, alpha_v),  k < K;      v_K = 1
    theta_k = v_k prod_{j<k} (1 - v_j)
    Lam_k ~ W(a0, B0^{-1}),  mu_k | Lam_k ~ N(m0, (beta0 Lam_k)^{-1})
    c_n ~ Cat(theta),  x_n | c_n = k ~ N(mu_k, Lam_k^{-1})

``B`` is the inverse scale of the Wishart over the precision, so
E[Lam] = a B^{-1}.  All four KL divergences are the standard closed forms.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import digamma, gammaln, multigammaln

from .errors import ConfigError, NumericalError

log = logging.getLogger(__name__)

LOG_2PI = np.log(2 * np.pi)


@dataclass(frozen=True)
class VBPrior:
    m0: np.ndarray
    beta0: float
    a0: float
    B0: np.ndarray
    a_v0: float = 1.0
    b_v0: float = 1.0

    def __post_init__(self):
        D = self.m0.shape[0]
        if not self.beta0 > 0 or not self.a_v0 > 0 or not self.b_v0 > 0:
            raise ConfigError("VB prior scale parameters must be positive")
        if not self.a0 > D - 1:
            raise ConfigError("Wishart degrees of freedom must exceed D - 1")
        if np.linalg.eigvalsh(self.B0).min() <= 0:
            raise ConfigError("B0 must be positive definite")

    @property
    def D(self):
        return self.m0.shape[0]

    @classmethod
    def from_hp(cls, hp):
        return cls(np.asarray(hp.mu_Lambda0, float), float(hp.kappa_Lambda0), float(hp.a_LambdaSigma0),
                   np.asarray(hp.B_LambdaSigma0, float), float(hp.a_v0), float(hp.b_v0))


@dataclass
class VariationalPosterior:
    """q(c) q(v) q(alpha_v) prod_k q(mu_k, Lam_k).

    ``gamma1``/``gamma2`` have length K; the last entry follows the same
    update but is inert because the truncation pins v_K = 1.
    """

    phi: np.ndarray
    gamma1: np.ndarray
    gamma2: np.ndarray
    m: np.ndarray
    beta: np.ndarray
    a: np.ndarray
    B: np.ndarray
    a_v: float
    b_v: float
    prior: VBPrior
    elbo_trace: list = field(default_factory=list)

    @property
    def K(self):
        return self.phi.shape[1]

    @property
    def N(self):
        return self.phi.shape[0]

    @property
    def Nk(self):
        return self.phi.sum(0)

    def expected_alpha(self):
        return self.a_v / self.b_v

    def expected_log_sticks(self):
        """(E log v_k, E log(1 - v_k)) for k < K."""
        g1, g2 = self.gamma1[:-1], self.gamma2[:-1]
        dg = digamma(g1 + g2)
        return digamma(g1) - dg, digamma(g2) - dg

    def expected_log_theta(self):
        elv, el1v = self.expected_log_sticks()
        out = np.zeros(self.K)
        out[:-1] = elv
        out[1:] += np.cumsum(el1v)
        return out

    def expected_theta(self):
        g1, g2 = self.gamma1[:-1], self.gamma2[:-1]
        ev = g1 / (g1 + g2)
        out = np.ones(self.K)
        out[:-1] = ev
        out[1:] *= np.cumprod(1 - ev)
        return out

    def expected_logdet(self):
        D = self.prior.D
        i = np.arange(1, D + 1)
        sign, logdet = np.linalg.slogdet(self.B)
        return digamma((self.a[:, None] + 1 - i) / 2).sum(1) + D * np.log(2) - logdet

    def cluster_covariances(self):
        """Point summary of each cluster's covariance, B_k / a_k."""
        return self.B / self.a[:, None, None]

    def n_effective(self, threshold=1.0):
        return int(np.sum(self.Nk > threshold))


# --- KL divergences ----------------------------------------------------------------

def kl_gamma(q, p):
    """KL(Gam(a_q, b_q) || Gam(a_p, b_p)) with (shape, rate)."""
    (aq, bq), (ap, bp) = q, p
    if min(aq, bq, ap, bp) <= 0:
        raise ConfigError("Gamma parameters must be positive")
    return ((aq - ap) * digamma(aq) - gammaln(aq) + gammaln(ap)
            + ap * (np.log(bq) - np.log(bp)) + aq * (bp - bq) / bq)


def kl_beta(q, p):
    """KL(Beta(a1, b1) || Beta(a2, b2)), elementwise over arrays."""
    a1, b1 = (np.asarray(v, float) for v in q)
    a2, b2 = (np.asarray(v, float) for v in p)
    if np.any(a1 <= 0) or np.any(b1 <= 0) or np.any(a2 <= 0) or np.any(b2 <= 0):
        raise ConfigError("Beta parameters must be positive")
    lbeta = lambda a, b: gammaln(a) + gammaln(b) - gammaln(a + b)
    return (lbeta(a2, b2) - lbeta(a1, b1) + (a1 - a2) * digamma(a1) + (b1 - b2) * digamma(b1)
            + (a2 - a1 + b2 - b1) * digamma(a1 + b1))


def _chol(M, what):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ConfigError(f"{what} is not symmetric positive definite") from None


def kl_wishart(q, p):
    """KL(W(a_q, B_q^{-1}) || W(a_p, B_p^{-1})) with B the inverse scale."""
    (aq, Bq), (ap, Bp) = q, p
    Bq, Bp = np.atleast_2d(Bq), np.atleast_2d(Bp)
    D = Bq.shape[0]
    if aq <= D - 1 or ap <= D - 1:
        raise ConfigError("Wishart degrees of freedom must exceed D - 1")
    Lq, Lp = _chol(Bq, "B_q"), _chol(Bp, "B_p")
    ldq = 2 * np.log(np.diag(Lq)).sum()
    ldp = 2 * np.log(np.diag(Lp)).sum()
    tr = np.trace(np.linalg.solve(Bq, Bp))
    psi = digamma((aq + 1 - np.arange(1, D + 1)) / 2).sum()
    return (0.5 * (aq - ap) * psi - multigammaln(aq / 2, D) + multigammaln(ap / 2, D)
            + 0.5 * ap * (ldq - ldp) + 0.5 * aq * (tr - D))


def kl_normal(q, p):
    """KL(N(m1, S1) || N(m2, S2))."""
    (m1, S1), (m2, S2) = q, p
    m1, m2 = np.atleast_1d(m1).astype(float), np.atleast_1d(m2).astype(float)
    S1, S2 = np.atleast_2d(S1), np.atleast_2d(S2)
    D = m1.shape[0]
    L1, L2 = _chol(S1, "S1"), _chol(S2, "S2")
    diff = m2 - m1
    return 0.5 * (np.trace(np.linalg.solve(S2, S1)) + diff @ np.linalg.solve(S2, diff) - D
                  + 2 * np.log(np.diag(L2)).sum() - 2 * np.log(np.diag(L1)).sum())


def kl_normal_wishart(vp, k):
    """KL of cluster k's Normal-Wishart factor from the prior."""
    pr = vp.prior
    D = pr.D
    kw = kl_wishart((vp.a[k], vp.B[k]), (pr.a0, pr.B0))
    dm = vp.m[k] - pr.m0
    quad = dm @ np.linalg.solve(vp.B[k], dm)
    kn = 0.5 * (D * pr.beta0 / vp.beta[k] - D + D * np.log(vp.beta[k] / pr.beta0)
                + pr.beta0 * vp.a[k] * quad)
    return kw + kn


# --- algorithm -------------------------------------------------------------------

def vb_init(data, prior, rng, K_trunc, phi=None):
    data = np.atleast_2d(np.asarray(data, float))
    N, D = data.shape
    if N < 1:
        raise ConfigError("VB needs at least one data vector")
    if D != prior.D:
        raise ConfigError(f"data dimension {D} does not match prior dimension {prior.D}")
    if phi is None:
        K = min(N, int(K_trunc))
        phi = rng.random((N, K)) if K > 1 else np.ones((N, 1))
    else:
        phi = np.array(phi, dtype=float)
        K = phi.shape[1]
        if phi.shape[0] != N or np.any(phi < 0):
            raise ConfigError("initial responsibilities must be a nonnegative (N, K) array")
    phi /= phi.sum(1, keepdims=True)
    ea = prior.a_v0 / prior.b_v0
    return VariationalPosterior(
        phi=phi, gamma1=np.ones(K), gamma2=np.full(K, ea),
        m=np.tile(prior.m0, (K, 1)), beta=np.full(K, prior.beta0), a=np.full(K, prior.a0),
        B=np.tile(prior.B0, (K, 1, 1)), a_v=prior.a_v0, b_v=prior.b_v0, prior=prior)


def expected_loglik(vp, data):
    """E_q[log N(x_n | mu_k, Lam_k^{-1})], shape (N, K)."""
    D = vp.prior.D
    out = np.empty((data.shape[0], vp.K))
    eld = vp.expected_logdet()
    for k in range(vp.K):
        try:
            Lc = np.linalg.cholesky(vp.B[k])
        except np.linalg.LinAlgError:
            raise NumericalError(f"cluster {k}: B is not positive definite") from None
        diff = data - vp.m[k]
        sol = np.linalg.solve(Lc, diff.T)
        maha = vp.a[k] * (sol * sol).sum(0)
        out[:, k] = 0.5 * eld[k] - 0.5 * D * LOG_2PI - 0.5 * (D / vp.beta[k] + maha)
    return out


def e_step(vp, data):
    data = np.atleast_2d(np.asarray(data, float))
    logphi = vp.expected_log_theta() + expected_loglik(vp, data)
    logphi -= logphi.max(1, keepdims=True)
    phi = np.exp(logphi)
    phi /= phi.sum(1, keepdims=True)
    vp = replace(vp, phi=phi)
    _, el1v = vp.expected_log_sticks()
    return replace(vp, a_v=vp.prior.a_v0 + vp.K - 1, b_v=vp.prior.b_v0 - el1v.sum())


def m_step(vp, data):
    data = np.atleast_2d(np.asarray(data, float))
    pr = vp.prior
    Nk = vp.Nk
    tail = np.concatenate([np.cumsum(Nk[::-1])[::-1][1:], [0.0]])
    gamma1 = 1.0 + Nk
    gamma2 = vp.expected_alpha() + tail
    K, D = vp.K, pr.D
    m = np.empty((K, D))
    B = np.empty((K, D, D))
    for k in range(K):
        nk = Nk[k]
        if nk <= 1e-300:
            m[k], B[k] = pr.m0, pr.B0
            continue
        xbar = vp.phi[:, k] @ data / nk
        diff = data - xbar
        S = (vp.phi[:, k, None] * diff).T @ diff / nk
        dm = xbar - pr.m0
        m[k] = (pr.beta0 * pr.m0 + nk * xbar) / (pr.beta0 + nk)
        Bk = pr.B0 + nk * S + (pr.beta0 * nk / (pr.beta0 + nk)) * np.outer(dm, dm)
        B[k] = 0.5 * (Bk + Bk.T)
    return replace(vp, gamma1=gamma1, gamma2=gamma2, m=m, beta=pr.beta0 + Nk, a=pr.a0 + Nk, B=B)


def elbo(vp, data):
    data = np.atleast_2d(np.asarray(data, float))
    pr = vp.prior
    ea = vp.expected_alpha()
    elog_a = digamma(vp.a_v) - np.log(vp.b_v)
    val = -kl_gamma((vp.a_v, vp.b_v), (pr.a_v0, pr.b_v0))
    if vp.K > 1:
        val -= np.sum(kl_beta((vp.gamma1[:-1], vp.gamma2[:-1]), (np.ones(vp.K - 1), np.full(vp.K - 1, ea))))
        val += (vp.K - 1) * (elog_a - np.log(ea))
    for k in range(vp.K):
        val -= kl_normal_wishart(vp, k)
    phi = vp.phi
    val += np.sum(phi * (vp.expected_log_theta() + expected_loglik(vp, data)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(phi > 0, phi * np.log(phi), 0.0)
    return float(val - ent.sum())


def permute_clusters(vp, order):
    order = np.asarray(order)
    return replace(vp, phi=vp.phi[:, order], m=vp.m[order], beta=vp.beta[order],
                   a=vp.a[order], B=vp.B[order])


def _sweep(vp, data):
    return m_step(e_step(vp, data), data)


def run_vem(data, prior, rng, K_trunc=20, max_iter=500, tol=1e-8, slack=1e-6, reorder=True, phi0=None):
    """Iterate E and M steps until the relative ELBO gain drops below ``tol``.

    The stick-breaking prior is not exchangeable in the cluster labels, so a
    converged fit can sit with large clusters behind small ones.  With
    ``reorder`` the clusters are then sorted by expected size and the move
    is kept only if it raises the ELBO, after which iteration resumes.
    """
    if max_iter < 1 or not tol > 0:
        raise ConfigError("max_iter must be >= 1 and tol > 0")
    data = np.atleast_2d(np.asarray(data, float))
    vp = m_step(vb_init(data, prior, rng, K_trunc, phi=phi0), data)
    trace = [elbo(vp, data)]
    it = 0
    while it < max_iter:
        vp = _sweep(vp, data)
        it += 1
        trace.append(elbo(vp, data))
        gain = trace[-1] - trace[-2]
        if gain < -slack:
            raise NumericalError(f"ELBO decreased by {-gain:.3g} at iteration {it}")
        if abs(gain) < tol * max(1.0, abs(trace[-1])):
            if not reorder:
                break
            order = np.argsort(-vp.Nk, kind="stable")
            if np.array_equal(order, np.arange(vp.K)):
                break
            cand = _sweep(m_step(permute_clusters(vp, order), data), data)
            val = elbo(cand, data)
            if val <= trace[-1] + tol * max(1.0, abs(trace[-1])):
                break
            vp = cand
            trace.append(val)
    vp.elbo_trace = trace
    return vp
