"""Backward simulation of joint state paths from stored filtering snapshots,
plus label-matched accuracy helpers."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataError, NumericalError


@dataclass
class SmoothResult:
    paths: np.ndarray        # (n_paths, T) state labels
    ancestors: np.ndarray    # (n_paths, T) particle index chosen at each t

    def marginals(self, n_states=None):
        """Per-site state frequencies, shape (T, n_states)."""
        k = int(self.paths.max()) + 1 if n_states is None else n_states
        T = self.paths.shape[1]
        out = np.zeros((T, k))
        for t in range(T):
            out[t] = np.bincount(self.paths[:, t], minlength=k)[:k]
        return out / self.paths.shape[0]

    def modal_path(self):
        return np.array([np.bincount(col).argmax() for col in self.paths.T])


def backward_weights(snap, v):
    """Unnormalized probability of moving into label ``v`` from each particle.

    Uses the particle's integrated transition law at time t: existing states
    get (n[s, v] + alpha beta_v) / (n[s, .] + alpha), the first unborn label
    gets the new-state mass, and anything beyond it gets zero.
    """
    B = snap.s.shape[0]
    L = snap.L
    tot = snap.n_row.sum(1) + snap.alpha
    w = np.zeros(B)
    width = snap.beta.shape[1]
    if v >= width:
        return w
    known = v < L
    if v < snap.n_row.shape[1]:
        w[known] = snap.n_row[known, v] + snap.alpha[known] * snap.beta[known, v]
    else:
        w[known] = snap.alpha[known] * snap.beta[known, v]
    born = v == L
    w[born] = snap.alpha[born] * snap.beta[born, v]
    return w / tot


def smooth(snapshots, rng, n_paths=None):
    """Draw joint state paths s_{1:T} by backward resampling.

    A terminal particle is chosen uniformly, then for t = T-1..1 each path's
    ancestor at t is drawn with weights proportional to the transition
    probability into the path's state at t+1.  Paths sharing the same next
    state share one weight vector, so each step costs O(B * distinct states).
    """
    if not snapshots:
        raise DataError("no snapshots to smooth")
    ts = [s.t for s in snapshots]
    if ts != list(range(1, len(ts) + 1)):
        raise DataError(f"incomplete snapshot trace: expected t=1..{len(ts)}, got {ts[:3]}...")
    T = len(snapshots)
    B = snapshots[-1].s.shape[0]
    P = B if n_paths is None else int(n_paths)
    paths = np.empty((P, T), dtype=np.int64)
    anc = np.empty((P, T), dtype=np.int64)
    idx = rng.integers(0, B, size=P)
    anc[:, -1] = idx
    paths[:, -1] = snapshots[-1].s[idx]
    for t in range(T - 2, -1, -1):
        snap = snapshots[t]
        nxt = paths[:, t + 1]
        u = rng.random(P)
        for v in np.unique(nxt):
            sel = np.flatnonzero(nxt == v)
            w = backward_weights(snap, int(v))
            cdf = np.cumsum(w)
            if not cdf[-1] > 0:
                raise NumericalError(f"t={snap.t}: no particle can reach state {v}")
            pick = np.searchsorted(cdf, u[sel] * cdf[-1], side="right")
            anc[sel, t] = np.minimum(pick, B - 1)
        paths[:, t] = snap.s[anc[:, t]]
    return SmoothResult(paths, anc)


def filtered_marginals(snapshots, n_states=None):
    k = n_states or int(max(s.s.max() for s in snapshots)) + 1
    return np.stack([np.bincount(s.s, minlength=k)[:k] / s.s.size for s in snapshots])


def filtered_modal_path(snapshots):
    return np.array([np.bincount(s.s).argmax() for s in snapshots])


def match_labels(est, truth):
    """Relabel ``est`` to minimize Hamming distance to ``truth``.

    Returns (relabelled sequence, mapping dict).  Estimated labels with no
    partner are mapped to fresh labels that never match.
    """
    est = np.asarray(est)
    truth = np.asarray(truth)
    ke, kt = int(est.max()) + 1, int(truth.max()) + 1
    conf = np.zeros((ke, kt))
    np.add.at(conf, (est, truth), 1)
    r, c = linear_sum_assignment(-conf)
    mapping = dict(zip(r.tolist(), c.tolist()))
    fresh = kt
    for lab in range(ke):
        if lab not in mapping:
            mapping[lab] = fresh
            fresh += 1
    return np.array([mapping[e] for e in est]), mapping


def matched_accuracy(est, truth):
    relab, _ = match_labels(est, truth)
    return float(np.mean(relab == np.asarray(truth)))
