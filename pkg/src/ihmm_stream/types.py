"""Shared value types: covariate layout, observation records, hyperparameters
and the per-particle view used for inspection and invariant checks."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError

SCALAR_FIELDS = ("cont", "rcv", "crep", "rep", "rnk", "drnk")
N_BADGE = 3


@dataclass(frozen=True)
class CovariateLayout:
    """Fixed packing order of the covariate vector.

    Slots: ``ind`` (individual effect indicator), ``day`` (day effect value),
    cont, rcv, crep, rep, rnk, drnk, bdg[3], tag[n_tags], cbdg[3],
    ctag[n_tags].  ``cont`` and ``rcv`` are demeaned and divided by 100.
    """

    n_tags: int = 0
    cont_mean: float = 0.0
    rcv_mean: float = 0.0
    scale: float = 100.0

    def __post_init__(self):
        if self.n_tags < 0:
            raise ConfigError("n_tags must be >= 0")

    @property
    def d(self):
        return 2 + len(SCALAR_FIELDS) + N_BADGE + self.n_tags + N_BADGE + self.n_tags

    def vector_fields(self):
        return {"bdg": N_BADGE, "tag": self.n_tags, "cbdg": N_BADGE, "ctag": self.n_tags}

    def slot_names(self):
        names = ["ind", "day", *SCALAR_FIELDS]
        for key, size in self.vector_fields().items():
            names += [f"{key}[{i}]" for i in range(size)]
        return names

    def pack(self, fields):
        """Pack a mapping of raw Table-style fields into a length-d vector."""
        x = np.empty(self.d)
        x[0] = float(fields["ind"])
        x[1] = float(fields["day"])
        for i, name in enumerate(SCALAR_FIELDS):
            v = float(fields[name])
            if name == "cont":
                v = (v - self.cont_mean) / self.scale
            elif name == "rcv":
                v = (v - self.rcv_mean) / self.scale
            x[2 + i] = v
        pos = 2 + len(SCALAR_FIELDS)
        for key, size in self.vector_fields().items():
            vec = np.asarray(fields[key], dtype=float).reshape(-1)
            if vec.shape[0] != size:
                raise DataError(f"field {key!r} has length {vec.shape[0]}, expected {size}")
            x[pos:pos + size] = vec
            pos += size
        if not np.all(np.isfinite(x)):
            raise DataError("non-finite covariate value")
        return x

    def unpack(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.d,):
            raise DataError(f"covariate vector has shape {x.shape}, expected ({self.d},)")
        out = {"ind": float(x[0]), "day": float(x[1])}
        for i, name in enumerate(SCALAR_FIELDS):
            v = float(x[2 + i])
            if name == "cont":
                v = v * self.scale + self.cont_mean
            elif name == "rcv":
                v = v * self.scale + self.rcv_mean
            out[name] = v
        pos = 2 + len(SCALAR_FIELDS)
        for key, size in self.vector_fields().items():
            out[key] = [float(v) for v in x[pos:pos + size]]
            pos += size
        return out


def build_covariates(raw_fields, layout=None):
    layout = layout or CovariateLayout()
    return layout.pack(raw_fields)


@dataclass(frozen=True)
class ObservationRecord:
    user_id: str
    t: int
    y: int
    x: np.ndarray

    def __post_init__(self):
        if int(self.t) < 1:
            raise DataError(f"t must be >= 1, got {self.t}")
        if self.y not in (0, 1):
            raise DataError(f"y must be 0 or 1, got {self.y!r}")
        x = np.asarray(self.x, dtype=float).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise DataError("covariates must be finite")
        object.__setattr__(self, "x", x)

    def __eq__(self, other):
        if not isinstance(other, ObservationRecord):
            return NotImplemented
        return (self.user_id == other.user_id and self.t == other.t
                and self.y == other.y and np.array_equal(self.x, other.x))

    __hash__ = None


def _as_psd(mat, name, dim):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.shape != (dim, dim):
        raise ConfigError(f"{name} must be {dim}x{dim}, got {mat.shape}")
    if not np.allclose(mat, mat.T):
        raise ConfigError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat).min() < -1e-12:
        raise ConfigError(f"{name} must be positive semidefinite")
    return mat


@dataclass
class HyperParams:
    """Prior and run configuration.

    ``d`` is the covariate dimension; Lambda vectors have length ``2d``
    (per-coefficient prior mean then prior log-variance).  ``alpha_fixed``
    and ``beta_fixed`` pin the transition hyperparameters, which switches
    off their auxiliary-variable refresh (used by the exact oracles).
    """

    d: int
    d_D: int = 0
    a_lambda: float = 1.0
    b_lambda: float = 1.0
    a_alpha: float = 1.0
    b_alpha: float = 1.0
    a_v0: float = 1.0
    b_v0: float = 1.0
    mu_Lambda0: Optional[np.ndarray] = None
    Sigma_Lambda0: Optional[np.ndarray] = None
    kappa_Lambda0: float = 1.0
    a_LambdaSigma0: Optional[float] = None
    B_LambdaSigma0: Optional[np.ndarray] = None
    mu_Delta0: Optional[np.ndarray] = None
    Sigma_Delta0: Optional[np.ndarray] = None
    B: int = 500
    K_trunc: int = 20
    seed: int = 0
    alpha_fixed: Optional[float] = None
    beta_fixed: Optional[np.ndarray] = None
    resampling: str = "multinomial"
    fidelity_weights: bool = False

    def __post_init__(self):
        d, D2 = int(self.d), 2 * int(self.d)
        if d < 1:
            raise ConfigError("d must be >= 1")
        for name in ("a_lambda", "b_lambda", "a_alpha", "b_alpha", "a_v0", "b_v0", "kappa_Lambda0"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be > 0")
        if self.mu_Lambda0 is None:
            self.mu_Lambda0 = np.concatenate([np.zeros(d), np.zeros(d)])
        self.mu_Lambda0 = np.asarray(self.mu_Lambda0, dtype=float).reshape(-1)
        if self.mu_Lambda0.shape != (D2,):
            raise ConfigError(f"mu_Lambda0 must have length {D2}")
        if self.Sigma_Lambda0 is None:
            self.Sigma_Lambda0 = 0.25 * np.eye(D2)
        self.Sigma_Lambda0 = _as_psd(self.Sigma_Lambda0, "Sigma_Lambda0", D2)
        if self.a_LambdaSigma0 is None:
            self.a_LambdaSigma0 = float(D2 + 2)
        if not self.a_LambdaSigma0 > D2 - 1:
            raise ConfigError("a_LambdaSigma0 must exceed 2d - 1")
        if self.B_LambdaSigma0 is None:
            self.B_LambdaSigma0 = self.a_LambdaSigma0 * 0.25 * np.eye(D2)
        self.B_LambdaSigma0 = _as_psd(self.B_LambdaSigma0, "B_LambdaSigma0", D2)
        if np.linalg.eigvalsh(self.B_LambdaSigma0).min() <= 0:
            raise ConfigError("B_LambdaSigma0 must be positive definite")
        if self.mu_Delta0 is None:
            self.mu_Delta0 = np.zeros((D2, self.d_D))
        self.mu_Delta0 = np.asarray(self.mu_Delta0, dtype=float).reshape(D2, self.d_D)
        if self.Sigma_Delta0 is None:
            self.Sigma_Delta0 = np.ones(self.d_D)
        self.Sigma_Delta0 = np.broadcast_to(
            np.asarray(self.Sigma_Delta0, dtype=float), (self.d_D,)).copy()
        if np.any(self.Sigma_Delta0 <= 0):
            raise ConfigError("Sigma_Delta0 must be strictly positive")
        if int(self.B) < 1:
            raise ConfigError("B must be >= 1")
        if int(self.K_trunc) < 1:
            raise ConfigError("K_trunc must be >= 1")
        if self.alpha_fixed is not None and not self.alpha_fixed > 0:
            raise ConfigError("alpha_fixed must be > 0")
        if self.beta_fixed is not None:
            bf = np.asarray(self.beta_fixed, dtype=float).reshape(-1)
            if np.any(bf < 0) or not np.isclose(bf.sum(), 1.0, atol=1e-12):
                raise ConfigError("beta_fixed must be a probability vector")
            self.beta_fixed = bf
        if self.resampling not in ("multinomial", "systematic"):
            raise ConfigError(f"unknown resampling scheme {self.resampling!r}")

    def to_dict(self):
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data):
        return cls(**data)


@dataclass
class Particle:
    """Plain-value snapshot of one particle, extracted from a cloud.

    State labels are 0-based in order of first appearance.
    """

    s: int
    L: int
    n: np.ndarray
    beta: np.ndarray
    alpha: float
    lam: float
    gamma_by_state: np.ndarray
    Lambda_by_state: np.ndarray
    c_by_state: np.ndarray
    suffstats_by_state: list
    aux: dict = field(default_factory=dict)

    def check(self, t=None, tol=1e-12):
        assert 0 <= self.s < self.L, "current state out of range"
        assert self.n.shape == (self.L, self.L)
        assert np.all(self.n >= 0)
        assert self.beta.shape == (self.L + 1,)
        assert abs(self.beta.sum() - 1.0) <= tol * max(1, self.L), "beta not normalized"
        assert np.all(self.beta >= 0)
        assert self.alpha > 0 and self.lam > 0
        if t is not None:
            assert self.n.sum() == t - 1, "transition counts must total t-1"
        visits = np.array([st.n for st in self.suffstats_by_state])
        inflow = self.n.sum(axis=0).astype(float)
        inflow[0] += 1  # the initial visit has no incoming transition
        np.testing.assert_array_equal(visits, inflow)
        return True
