import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ihmm_stream.errors import ConfigError, DataError
from ihmm_stream.types import (SCALAR_FIELDS, CovariateLayout, HyperParams, ObservationRecord,
                               build_covariates)


def zero_fields(layout):
    f = {"ind": 0.0, "day": 0.0, **{k: 0.0 for k in SCALAR_FIELDS}}
    for key, size in layout.vector_fields().items():
        f[key] = [0.0] * size
    return f


finite = st.floats(-1e6, 1e6, allow_nan=False)


@st.composite
def raw_fields(draw, n_tags):
    lay = CovariateLayout(n_tags=n_tags)
    f = {"ind": draw(finite), "day": draw(finite)}
    for k in SCALAR_FIELDS:
        f[k] = draw(finite)
    for key, size in lay.vector_fields().items():
        f[key] = draw(st.lists(finite, min_size=size, max_size=size))
    return f


class TestCovariateLayout:
    def test_dimension(self):
        assert CovariateLayout().d == 14
        assert CovariateLayout(n_tags=3).d == 20
        assert len(CovariateLayout(n_tags=2).slot_names()) == 18

    def test_zero_fields_pack_to_zero(self):
        lay = CovariateLayout()
        np.testing.assert_array_equal(build_covariates(zero_fields(lay), lay), np.zeros(14))

    def test_cont_normalized_by_hundred(self):
        lay = CovariateLayout()
        f = zero_fields(lay)
        f["cont"] = 100.0
        x = lay.pack(f)
        assert x[lay.slot_names().index("cont")] == 1.0

    def test_demeaning(self):
        lay = CovariateLayout(cont_mean=50.0, rcv_mean=10.0)
        f = zero_fields(lay)
        f["cont"], f["rcv"] = 150.0, 10.0
        x = lay.pack(f)
        assert x[2] == 1.0 and x[3] == 0.0

    def test_wrong_badge_length_rejected(self):
        lay = CovariateLayout()
        f = zero_fields(lay)
        f["bdg"] = [1.0, 2.0]
        with pytest.raises(DataError, match="bdg"):
            lay.pack(f)

    def test_non_finite_rejected(self):
        lay = CovariateLayout()
        f = zero_fields(lay)
        f["rnk"] = np.inf
        with pytest.raises(DataError):
            lay.pack(f)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 3).flatmap(lambda k: st.tuples(st.just(k), raw_fields(k))))
    def test_pack_unpack_round_trip(self, case):
        n_tags, f = case
        lay = CovariateLayout(n_tags=n_tags)
        back = lay.unpack(lay.pack(f))
        for key in f:
            np.testing.assert_allclose(back[key], f[key], rtol=1e-12, atol=1e-9)


class TestObservationRecord:
    def test_valid(self):
        r = ObservationRecord("u", 3, 1, [1.0, 2.0])
        assert r.x.dtype == float and r.x.shape == (2,)

    @pytest.mark.parametrize("t, y, x", [(0, 1, [1.0]), (1, 2, [1.0]), (1, 0, [np.nan])])
    def test_invalid(self, t, y, x):
        with pytest.raises(DataError):
            ObservationRecord("u", t, y, x)

    def test_equality_compares_arrays(self):
        a = ObservationRecord("u", 1, 0, [1.0, 2.0])
        assert a == ObservationRecord("u", 1, 0, np.array([1.0, 2.0]))
        assert a != ObservationRecord("u", 1, 0, [1.0, 2.5])


class TestHyperParams:
    def test_defaults_have_right_shapes(self):
        hp = HyperParams(d=3, d_D=2)
        assert hp.mu_Lambda0.shape == (6,)
        assert hp.B_LambdaSigma0.shape == (6, 6)
        assert hp.mu_Delta0.shape == (6, 2)
        assert hp.a_LambdaSigma0 > 5

    @pytest.mark.parametrize("kw", [
        {"a_lambda": 0.0}, {"b_alpha": -1.0}, {"a_LambdaSigma0": 1.0}, {"B": 0},
        {"K_trunc": 0}, {"Sigma_Delta0": [0.0]}, {"resampling": "stratified"},
        {"Sigma_Lambda0": -np.eye(2)}, {"beta_fixed": [0.7, 0.7]},
    ])
    def test_rejects_invalid(self, kw):
        base = {"d": 1, "d_D": 1}
        base.update(kw)
        with pytest.raises(ConfigError):
            HyperParams(**base)

    def test_dict_round_trip(self):
        hp = HyperParams(d=2, d_D=1, B=77, beta_fixed=[0.5, 0.5])
        back = HyperParams.from_dict(hp.to_dict())
        assert back.B == 77
        np.testing.assert_array_equal(back.B_LambdaSigma0, hp.B_LambdaSigma0)
        np.testing.assert_array_equal(back.beta_fixed, hp.beta_fixed)
