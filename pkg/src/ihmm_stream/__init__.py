"""Streaming inference for an infinite hidden Markov logit model of user
engagement: particle filtering and smoothing per user, a truncated DP
Gaussian mixture across users, and exact oracles for small instances."""

from .dp_vb import VBPrior, VariationalPosterior, run_vem
from .engine import Engine
from .errors import (CheckpointError, ConfigError, DataError, IHMMError, NumericalError,
                     SchemaError, SequencingError)
from .hierarchy import BarrierSchedule, update_delta
from .particle_filter import LambdaPrior, ParticleCloud, filter_stream, init_cloud, step
from .rng import stream
from .smoother import match_labels, matched_accuracy, smooth
from .types import CovariateLayout, HyperParams, ObservationRecord

__version__ = "0.1.0"
