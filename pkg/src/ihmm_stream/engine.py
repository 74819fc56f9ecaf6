"""Multi-user driver: one particle cloud per user, global ticks, and the
periodic cross-user step (Delta update, DP mixture fit, prior refresh)."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .dp_vb import VBPrior, run_vem
from .errors import DataError, SequencingError
from .hierarchy import (BarrierSchedule, DeltaPosterior, lambda_summaries, mixture_prior,
                        refresh_particle_priors, update_delta)
from .particle_filter import init_cloud, step
from .types import HyperParams

log = logging.getLogger(__name__)

BARRIER_STREAM = "__barrier__"


@dataclass
class UserTrace:
    log_predictive: list = field(default_factory=list)
    L_modal: list = field(default_factory=list)

    @property
    def total(self):
        return float(np.sum(self.log_predictive))


class Engine:
    """Feed ObservationRecords in global tick order.

    Each user draws from ``stream(seed, user_id)`` and the barrier from its own
    stream, so with the barrier disabled every user's output equals a solo
    run of :func:`filter_stream` with the same seed.
    """

    def __init__(self, hp, seed=None, barrier=None, demographics=None, record=False):
        self.hp = hp
        self.seed = int(hp.seed if seed is None else seed)
        self.barrier = barrier or BarrierSchedule(math.inf)
        self.demographics = {k: np.asarray(v, float) for k, v in (demographics or {}).items()}
        self.record = record
        self.clouds = {}
        self.rngs = {}
        self.traces = {}
        self.tick = 0
        self._closed = 0
        self.barrier_rng = rngmod.stream(self.seed, BARRIER_STREAM)
        self.vp = None
        self.delta = DeltaPosterior.prior(hp.mu_Delta0, hp.Sigma_Delta0)
        self.delta_draw = self.delta.mean.copy()
        self.barrier_log = []
        self._missing_warned = set()

    # -- per-user ------------------------------------------------------------------

    def D(self, user_id):
        if self.hp.d_D == 0:
            return np.zeros(0)
        D = self.demographics.get(user_id)
        if D is None:
            if user_id not in self._missing_warned:
                log.warning("no demographics for user %s; using zeros", user_id)
                self._missing_warned.add(user_id)
            return np.zeros(self.hp.d_D)
        if D.shape != (self.hp.d_D,):
            raise DataError(f"demographics of {user_id} have shape {D.shape}, expected ({self.hp.d_D},)")
        return D

    def prior_for(self, user_id):
        if self.vp is None:
            return None
        return mixture_prior(self.vp, self.delta.mean @ self.D(user_id) if self.hp.d_D else 0.0)

    def observe(self, rec):
        t = int(rec.t)
        if t < self.tick:
            raise SequencingError(f"record for {rec.user_id} at t={t} arrived after tick {self.tick}")
        if t > self.tick:
            self.close_tick()
            self.tick = t
        uid = rec.user_id
        if uid not in self.clouds:
            r = rngmod.stream(self.seed, uid)
            self.rngs[uid] = r
            cloud = init_cloud(self.hp, rec, r, prior=self.prior_for(uid), record=self.record)
            self.clouds[uid] = cloud
            tr = self.traces[uid] = UserTrace()
            tr.log_predictive.append(cloud.init_log_predictive)
        else:
            cloud = self.clouds[uid]
            tr = self.traces[uid]
            tr.log_predictive.append(step(cloud, rec, self.rngs[uid], self.hp))
        tr.L_modal.append(cloud.modal_L())

    def close_tick(self):
        """Run the barrier owed by the current tick, at most once."""
        if self.tick > self._closed:
            self._closed = self.tick
            if self.clouds and self.barrier.is_barrier(self.tick):
                self.run_barrier()

    def run(self, records):
        """Process records sorted by (t, user_id).

        The barrier of tick t runs when the first record of a later tick
        arrives or on :meth:`finish`, so splitting a stream into chunks
        never changes the results.
        """
        for rec in records:
            self.observe(rec)
        return self

    def finish(self):
        self.close_tick()
        return self

    # -- cross-user step -------------------------------------------------------------

    def collect(self):
        """Stack particle-averaged Lambda per (user, state)."""
        keys, rows = [], []
        for uid in sorted(self.clouds):
            summ = lambda_summaries(self.clouds[uid])
            for l, row in enumerate(summ):
                keys.append((uid, l))
                rows.append(row)
        return keys, np.array(rows).reshape(len(rows), 2 * self.hp.d)

    def run_barrier(self):
        hp = self.hp
        keys, Lam = self.collect()
        if not keys:
            return None
        Dm = np.array([self.D(u) for u, _ in keys]).reshape(len(keys), hp.d_D)
        # (a) Delta given the previous clustering
        if hp.d_D:
            if self.vp is None:
                centre = np.broadcast_to(hp.mu_Lambda0, Lam.shape)
                var = np.broadcast_to(np.diag(hp.Sigma_Lambda0), Lam.shape)
            else:
                prev = {k: i for i, k in enumerate(self._keys)}
                cov = self.vp.cluster_covariances()
                centre = np.empty_like(Lam)
                var = np.empty_like(Lam)
                for i, k in enumerate(keys):
                    j = prev.get(k)
                    c = int(np.argmax(self.vp.phi[j])) if j is not None else int(np.argmax(self.vp.expected_theta()))
                    centre[i] = self.vp.m[c]
                    var[i] = np.diag(cov[c])
            self.delta = update_delta(Lam - centre, Dm, var, hp.mu_Delta0, hp.Sigma_Delta0)
            self.delta_draw = self.delta.draw(self.barrier_rng)
            shifted = Lam - Dm @ self.delta.mean.T
        else:
            shifted = Lam
        # (b) DP mixture on the shifted summaries
        self.vp = run_vem(shifted, VBPrior.from_hp(hp), self.barrier_rng, K_trunc=hp.K_trunc)
        self._keys = keys
        # (c) refresh every cloud's (c, Lambda) and prospective Gamma
        index = {k: i for i, k in enumerate(keys)}
        for uid in sorted(self.clouds):
            cloud = self.clouds[uid]
            phi_rows = {l: self.vp.phi[index[(uid, l)]] for l in range(cloud.modal_L())}
            refresh_particle_priors(self.vp, self.delta_draw, self.D(uid), cloud, phi_rows,
                                    self.barrier_rng)
        entry = {"tick": self.tick, "pairs": len(keys), "elbo": float(self.vp.elbo_trace[-1]),
                 "clusters": self.vp.n_effective()}
        self.barrier_log.append(entry)
        log.info("barrier at tick %d: %d pairs, %d clusters, ELBO %.4f", self.tick,
                 entry["pairs"], entry["clusters"], entry["elbo"])
        return entry

    # -- reporting and persistence ---------------------------------------------------

    def report(self):
        users = {}
        for uid in sorted(self.clouds):
            cloud = self.clouds[uid]
            hist = cloud.L_histogram()
            users[uid] = {
                "t": int(cloud.t),
                "log_predictive_total": self.traces[uid].total,
                "modal_L": int(cloud.modal_L()),
                "L_histogram": {str(k): int(v) for k, v in enumerate(hist) if v},
            }
        out = {"seed": self.seed, "particles": int(self.hp.B), "tick": int(self.tick),
               "users": users, "barriers": list(self.barrier_log)}
        if self.hp.d_D:
            out["delta_mean"] = self.delta.mean.tolist()
            out["delta_std"] = self.delta.std().tolist()
        if self.vp is not None:
            out["clusters"] = self.vp.n_effective()
        return out

    def state_dict(self):
        return {
            "hp": self.hp.to_dict(), "seed": self.seed, "barrier_period": self.barrier.period,
            "demographics": self.demographics, "record": self.record,
            "clouds": self.clouds, "rngs": {u: rngmod.get_state(r) for u, r in self.rngs.items()},
            "traces": self.traces, "tick": self.tick, "closed": self._closed,
            "barrier_rng": rngmod.get_state(self.barrier_rng), "vp": self.vp,
            "keys": getattr(self, "_keys", None),
            "delta": self.delta, "delta_draw": self.delta_draw, "barrier_log": self.barrier_log,
        }

    @classmethod
    def from_state_dict(cls, st):
        eng = cls(HyperParams.from_dict(st["hp"]), seed=st["seed"],
                  barrier=BarrierSchedule(st["barrier_period"]),
                  demographics=st["demographics"], record=st["record"])
        eng.clouds = st["clouds"]
        eng.rngs = {u: rngmod.from_state(s) for u, s in st["rngs"].items()}
        eng.traces = st["traces"]
        eng.tick = st["tick"]
        eng._closed = st["closed"]
        eng.barrier_rng = rngmod.from_state(st["barrier_rng"])
        eng.vp = st["vp"]
        if st["keys"] is not None:
            eng._keys = st["keys"]
        eng.delta = st["delta"]
        eng.delta_draw = st["delta_draw"]
        eng.barrier_log = st["barrier_log"]
        return eng

