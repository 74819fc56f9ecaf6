"""Synthetic data: finite-state Markov switching logit streams, a toy
gamification asset process for the named covariates, and user populations
whose emission priors come from a shifted Gaussian mixture."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import ConfigError
from .rng import stream
from .types import N_BADGE, CovariateLayout, ObservationRecord

WEEK = 7


def check_transition(P, K=None):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ConfigError(f"transition matrix must be square, got {P.shape}")
    if K is not None and P.shape[0] != K:
        raise ConfigError(f"transition matrix is {P.shape[0]}x{P.shape[0]}, expected K={K}")
    if np.any(P < 0) or not np.allclose(P.sum(1), 1.0, atol=1e-10):
        raise ConfigError("transition rows must lie on the probability simplex")
    return P


def sticky_matrix(K, stay):
    if K == 1:
        return np.ones((1, 1))
    P = np.full((K, K), (1.0 - stay) / (K - 1))
    np.fill_diagonal(P, stay)
    return P


# --- covariate process --------------------------------------------------------

@dataclass
class AssetConfig:
    """Knobs of the toy community: reputation per contribution, replies
    received, badge thresholds (cumulative points) and tag mix."""

    n_tags: int = 0
    rep_per_contribution: float = 2.0
    rcv_rate: float = 0.3
    badge_thresholds: tuple = (200.0, 50.0, 10.0)   # gold, silver, bronze
    tag_threshold: float = 20.0
    rank_scale: float = 100.0
    weekend_days: tuple = (5, 6)

    def __post_init__(self):
        if len(self.badge_thresholds) != N_BADGE or min(self.badge_thresholds) <= 0:
            raise ConfigError(f"need {N_BADGE} positive badge thresholds")


@dataclass
class AssetState:
    """Everything the covariates at the next tick depend on."""

    tick: int = 0
    cont: float = 0.0
    rcv: float = 0.0
    points: float = 0.0          # reputation so far, updated every tick
    week_points: float = 0.0     # accumulator of the running week
    crep: float = 0.0            # reputation up to the last finished week
    rep: float = 0.0             # reputation earned in the last finished week
    rnk: float = 1.0
    drnk: float = 0.0
    bdg: np.ndarray = field(default_factory=lambda: np.zeros(N_BADGE))
    cbdg: np.ndarray = field(default_factory=lambda: np.zeros(N_BADGE))
    tag_points: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tag: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ctag: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @classmethod
    def fresh(cls, n_tags=0):
        return cls(tag_points=np.zeros(n_tags), tag=np.zeros(n_tags), ctag=np.zeros(n_tags))

    def fields(self, cfg):
        """Raw named covariates describing this state."""
        dow = self.tick % WEEK
        return {
            "ind": 1.0, "day": 1.0 if dow in cfg.weekend_days else 0.0,
            "cont": self.cont, "rcv": self.rcv, "crep": self.crep, "rep": self.rep,
            "rnk": self.rnk, "drnk": self.drnk,
            "bdg": self.bdg.tolist(), "tag": self.tag.tolist(),
            "cbdg": self.cbdg.tolist(), "ctag": self.ctag.tolist(),
        }


def award(points, threshold):
    """Badges held after accumulating ``points``: one per full threshold."""
    return np.floor(np.asarray(points, dtype=float) / threshold)


def gen_covariates(assets, y_prev, rng, cfg=None):
    """Advance the asset state by one tick given last tick's choice.

    Returns ``(fields, new_state)`` where ``fields`` are the raw covariates
    seen at the new tick.  cont, rcv, crep, cbdg and ctag only ever grow;
    crep, rep, rnk and drnk change only when a week completes.
    """
    cfg = cfg or AssetConfig()
    a = AssetState(**{k: (v.copy() if isinstance(v, np.ndarray) else v)
                      for k, v in assets.__dict__.items()})
    earned = 0.0
    if y_prev:
        a.cont += 1.0
        earned = float(rng.poisson(cfg.rep_per_contribution))
    a.rcv += float(rng.poisson(cfg.rcv_rate * (1.0 + a.cont / 50.0)))
    before = award(a.points, np.asarray(cfg.badge_thresholds))
    a.points += earned
    a.week_points += earned
    a.cbdg = award(a.points, np.asarray(cfg.badge_thresholds))
    a.bdg = a.cbdg - before
    if cfg.n_tags:
        gained = np.zeros(cfg.n_tags)
        if earned:
            gained[rng.integers(cfg.n_tags)] = earned
        old = award(a.tag_points, cfg.tag_threshold)
        a.tag_points = a.tag_points + gained
        a.ctag = award(a.tag_points, cfg.tag_threshold)
        a.tag = a.ctag - old
    a.tick += 1
    if a.tick % WEEK == 0:
        a.crep = a.points
        a.rep = a.week_points
        a.week_points = 0.0
        new_rnk = float(np.exp(-a.crep / cfg.rank_scale))
        a.drnk = new_rnk - a.rnk
        a.rnk = new_rnk
    return a.fields(cfg), a


def replay_badges(point_series, threshold):
    """First tick index at which cumulative points reach ``threshold``, or -1."""
    cum = np.cumsum(point_series)
    hit = np.flatnonzero(cum >= threshold)
    return int(hit[0]) if hit.size else -1


def slot_envelope(layout, T, cfg=None):
    """Generous per-slot magnitude bounds of the packed covariates over T ticks."""
    cfg = cfg or AssetConfig(n_tags=layout.n_tags)
    pts = 2.0 * cfg.rep_per_contribution * T + 20.0
    rcv = 2.0 * cfg.rcv_rate * (1.0 + T / 50.0) * T + 20.0
    per_tick = 3.0 * cfg.rep_per_contribution + 5.0
    thr = np.asarray(cfg.badge_thresholds, dtype=float)
    env = [1.0, 1.0, (T + abs(layout.cont_mean)) / layout.scale, (rcv + abs(layout.rcv_mean)) / layout.scale,
           pts, 2.0 * cfg.rep_per_contribution * WEEK + 10.0, 1.0, 1.0]
    env += list(per_tick / thr + 1.0)
    env += [per_tick / cfg.tag_threshold + 1.0] * layout.n_tags
    env += list(pts / thr)
    env += [pts / cfg.tag_threshold] * layout.n_tags
    return np.array(env)


def bounded_gamma(effects, layout, T, cfg=None, cap=6.0):
    """Coefficients whose linear index stays within ``cap`` in magnitude.

    ``effects`` are the contributions each slot may make at its envelope;
    their absolute sum must not exceed ``cap``.
    """
    effects = np.atleast_2d(np.asarray(effects, dtype=float))
    if effects.shape[1] != layout.d:
        raise ConfigError(f"effects need {layout.d} columns")
    if np.abs(effects).sum(1).max() > cap + 1e-12:
        raise ConfigError(f"effects exceed the index cap {cap}")
    return effects / slot_envelope(layout, T, cfg)


# --- streams ------------------------------------------------------------------

@dataclass
class StreamSample:
    user_id: str
    records: list
    states: np.ndarray
    y: np.ndarray
    X: np.ndarray
    eta: np.ndarray
    fields: Optional[list] = None

    @property
    def max_abs_eta(self):
        return float(np.abs(self.eta).max()) if self.eta.size else 0.0


def gen_hmm_stream(K_true, gamma_true, P, T, layout=None, rng=None, user_id="u0",
                   init=None, asset_cfg=None, start_state=None):
    """Simulate one user's stream from a K-state Markov switching logit.

    ``layout`` is a CovariateLayout (named covariates from the asset process)
    or an int ``d`` for a plain design x = (1, u_2..u_d), u ~ U(-1, 1).
    """
    if rng is None:
        raise ConfigError("an explicit rng is required")
    P = check_transition(P, K_true)
    G = np.atleast_2d(np.asarray(gamma_true, dtype=float))
    if G.shape[0] != K_true or not np.all(np.isfinite(G)):
        raise ConfigError("gamma_true must be a finite (K, d) array")
    T = int(T)
    init = np.full(K_true, 1.0 / K_true) if init is None else check_transition(np.atleast_2d(init))[0]
    states = np.empty(T, dtype=np.int64)
    states[0] = rng.choice(K_true, p=init) if start_state is None else int(start_state)
    for t in range(1, T):
        states[t] = rng.choice(K_true, p=P[states[t - 1]])

    named = isinstance(layout, CovariateLayout)
    d = layout.d if named else int(layout if layout is not None else G.shape[1])
    if G.shape[1] != d:
        raise ConfigError(f"gamma_true has {G.shape[1]} columns, layout needs {d}")
    X = np.empty((T, d))
    y = np.empty(T, dtype=np.int64)
    eta = np.empty(T)
    raw = [] if named else None
    if named:
        cfg = asset_cfg or AssetConfig(n_tags=layout.n_tags)
        assets = AssetState.fresh(cfg.n_tags)
        fields = assets.fields(cfg)
        for t in range(T):
            if t:
                fields, assets = gen_covariates(assets, y[t - 1], rng, cfg)
            raw.append(fields)
            X[t] = layout.pack(fields)
            eta[t] = G[states[t]] @ X[t]
            y[t] = rng.random() < expit(eta[t])
    else:
        X[:, 0] = 1.0
        X[:, 1:] = rng.uniform(-1.0, 1.0, size=(T, d - 1))
        eta[:] = np.einsum("td,td->t", G[states], X)
        y[:] = rng.random(T) < expit(eta)
    records = [ObservationRecord(user_id, t + 1, int(y[t]), X[t]) for t in range(T)]
    return StreamSample(user_id, records, states, y, X, eta, raw)


# --- populations --------------------------------------------------------------

@dataclass
class SegmentSpec:
    """Mixture over the 2d-vector Lambda (coefficient means, log-variances)."""

    weights: np.ndarray
    means: np.ndarray      # (C, 2d)
    covs: np.ndarray       # (C, 2d, 2d)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).reshape(-1)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.covs = np.asarray(self.covs, dtype=float).reshape(
            self.means.shape + (self.means.shape[1],))
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0):
            raise ConfigError("segment proportions must lie on the simplex")
        if self.weights.shape[0] != self.means.shape[0]:
            raise ConfigError("one mean per segment required")


@dataclass
class DemographicsSpec:
    d_D: int = 0
    kind: str = "normal"      # "normal" or "binary"
    p: float = 0.5

    def draw(self, rng, size):
        if self.kind == "binary":
            return (rng.random((size, self.d_D)) < self.p).astype(float)
        if self.kind == "normal":
            return rng.standard_normal((size, self.d_D))
        raise ConfigError(f"unknown demographics kind {self.kind!r}")


@dataclass
class Dataset:
    records: list               # ObservationRecords ordered by (t, user_id)
    fields: dict                # user -> list of raw covariate dicts (named layout only)
    demographics: dict          # user -> D vector
    truth: dict                 # user -> {"segment", "states", "Lambda", "Gamma"}
    Delta: np.ndarray
    layout: object

    def users(self):
        return sorted(self.truth)

    def stream_of(self, user_id):
        return [r for r in self.records if r.user_id == user_id]


def gen_population(I, segments, demographics, rng_or_seed, Delta=None, K_states=2,
                   state_shift=None, T=100, layout=2, P=None, asset_cfg=None):
    """Simulate ``I`` users.

    Each user gets demographics D_i, a segment c_i and, per state l, a
    Lambda_il ~ N(Delta D_i + mu_c + shift_l, Sigma_c); the state's
    coefficients are Gamma_il ~ N(Lambda_il[:d], diag exp(Lambda_il[d:])).
    Per-user randomness comes from its own counter-based stream.
    """
    seed = rng_or_seed if isinstance(rng_or_seed, (int, np.integer)) else int(rng_or_seed.integers(2**63))
    P2 = segments.means.shape[1]
    d = P2 // 2
    Delta = np.zeros((P2, demographics.d_D)) if Delta is None else np.asarray(Delta, float).reshape(P2, demographics.d_D)
    shift = np.zeros((K_states, P2)) if state_shift is None else np.asarray(state_shift, float).reshape(K_states, P2)
    P = sticky_matrix(K_states, 0.95) if P is None else check_transition(P, K_states)
    pop = stream(seed, "__population__")
    D = demographics.draw(pop, I)
    seg = pop.choice(segments.weights.shape[0], size=I, p=segments.weights)
    records, fields, demo, truth = [], {}, {}, {}
    width = len(str(max(I - 1, 0)))
    for i in range(I):
        uid = f"u{i:0{width}d}"
        r = stream(seed, uid)
        c = int(seg[i])
        mean = Delta @ D[i] + segments.means[c] + shift
        Lam = np.array([r.multivariate_normal(mean[l], segments.covs[c]) for l in range(K_states)])
        Gam = Lam[:, :d] + np.exp(0.5 * Lam[:, d:]) * r.standard_normal((K_states, d))
        sample = gen_hmm_stream(K_states, Gam, P, T, layout=layout, rng=r, user_id=uid,
                                asset_cfg=asset_cfg)
        records.extend(sample.records)
        if sample.fields is not None:
            fields[uid] = sample.fields
        demo[uid] = D[i]
        truth[uid] = {"segment": c, "states": sample.states, "Lambda": Lam, "Gamma": Gam,
                      "max_abs_eta": sample.max_abs_eta}
    records.sort(key=lambda rec: (rec.t, rec.user_id))
    return Dataset(records, fields, demo, truth, Delta, layout)


def two_state_suite(seed, T=800, stay=0.98, offsets=(2.0, -2.0), slopes=(0.5, -0.5)):
    """The 2-state benchmark stream: x = (1, u), coefficients (+-2, +-0.5)."""
    G = np.column_stack([offsets, slopes])
    return gen_hmm_stream(2, G, sticky_matrix(2, stay), T, layout=2,
                          rng=stream(seed, "two-state"), user_id=f"s{seed}")
