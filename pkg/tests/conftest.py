import numpy as np
import pytest

from ihmm_stream.types import HyperParams


def two_state_hp(B=1000, **kw):
    """Hyperparameters used for the 2-state benchmark streams."""
    base = dict(d=2, B=B, a_alpha=1.0, b_alpha=1.0, a_lambda=1.0, b_lambda=8.0,
                mu_Lambda0=np.array([0.0, 0.0, np.log(4.0), 0.0]),
                Sigma_Lambda0=np.diag([1.0, 1.0, 0.25, 0.25]))
    base.update(kw)
    return HyperParams(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
