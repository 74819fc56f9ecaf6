import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import two_state_hp
from ihmm_stream.errors import DataError
from ihmm_stream.particle_filter import filter_stream
from ihmm_stream.rng import stream
from ihmm_stream.simulate import gen_hmm_stream, two_state_suite
from ihmm_stream.smoother import (backward_weights, filtered_marginals, filtered_modal_path,
                                  match_labels, matched_accuracy, smooth)
from ihmm_stream.types import HyperParams


@pytest.fixture(scope="module")
def filtered():
    smp = two_state_suite(7, T=120, stay=0.9)
    res = filter_stream(smp.records, two_state_hp(B=200), stream(7, "f"), record=True)
    return smp, res


class TestBackwardWeights:
    def test_rows_sum_to_one(self, filtered):
        _, res = filtered
        for snap in res.snapshots[::17]:
            width = snap.beta.shape[1]
            tot = sum(backward_weights(snap, v) for v in range(width + 2))
            np.testing.assert_allclose(tot, 1.0, atol=1e-12)

    def test_unreachable_labels(self, filtered):
        _, res = filtered
        snap = res.snapshots[10]
        w = backward_weights(snap, int(snap.L.max()) + 1)
        assert np.all(w == 0)


class TestSmooth:
    def test_single_step(self):
        smp = two_state_suite(1, T=1)
        res = filter_stream(smp.records, two_state_hp(B=50), stream(1), record=True)
        sm = smooth(res.snapshots, stream(2), n_paths=400)
        assert sm.paths.shape == (400, 1)
        assert np.all(sm.paths == 0)
        # the terminal particle is uniform
        counts = np.bincount(sm.ancestors[:, 0], minlength=50)
        assert counts.max() < 30

    def test_one_state_paths_constant(self):
        hp = HyperParams(d=2, B=40, alpha_fixed=1e-9, beta_fixed=[1.0])
        smp = gen_hmm_stream(1, [[0.0, 1.0]], [[1.0]], 50, 2, stream(0, "one"))
        res = filter_stream(smp.records, hp, stream(0), record=True)
        sm = smooth(res.snapshots, stream(0, "b"), n_paths=30)
        assert np.all(sm.paths == 0)

    def test_terminal_marginal_is_filtered(self, filtered):
        _, res = filtered
        sm = smooth(res.snapshots, stream(3), n_paths=20_000)
        k = int(max(sm.paths.max(), res.cloud.s.max())) + 1
        np.testing.assert_allclose(sm.marginals(k)[-1], filtered_marginals(res.snapshots, k)[-1],
                                   atol=0.015)

    def test_paths_follow_particles(self, filtered):
        _, res = filtered
        sm = smooth(res.snapshots, stream(4), n_paths=50)
        for t in (0, 40, 119):
            np.testing.assert_array_equal(sm.paths[:, t], res.snapshots[t].s[sm.ancestors[:, t]])

    def test_reproducible(self, filtered):
        _, res = filtered
        a = smooth(res.snapshots, stream(5), n_paths=64)
        b = smooth(res.snapshots, stream(5), n_paths=64)
        np.testing.assert_array_equal(a.paths, b.paths)

    def test_incomplete_trace(self, filtered):
        _, res = filtered
        with pytest.raises(DataError):
            smooth(res.snapshots[:3] + res.snapshots[4:], stream(0))
        with pytest.raises(DataError):
            smooth([], stream(0))

    def test_marginals_are_distributions(self, filtered):
        _, res = filtered
        m = smooth(res.snapshots, stream(6), n_paths=100).marginals()
        np.testing.assert_allclose(m.sum(1), 1.0)


def brute_force_accuracy(est, truth):
    ke, kt = int(est.max()) + 1, int(truth.max()) + 1
    best = 0.0
    targets = list(range(max(ke, kt)))
    for perm in itertools.permutations(targets, ke):
        mapped = np.array([perm[e] for e in est])
        best = max(best, np.mean(mapped == truth))
    return best


class TestMatchLabels:
    def test_swapped(self):
        est = np.array([1, 1, 0, 0, 1])
        relab, mapping = match_labels(est, 1 - est)
        np.testing.assert_array_equal(relab, 1 - est)
        assert mapping == {0: 1, 1: 0}

    def test_extra_labels_never_match(self):
        relab, mapping = match_labels(np.array([0, 1, 2, 2]), np.array([0, 0, 0, 0]))
        assert mapping[2] == 0
        assert mapping[0] >= 1 and mapping[1] >= 1
        assert matched_accuracy(np.array([0, 1, 2, 2]), np.zeros(4, int)) == 0.5

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 2)), min_size=1, max_size=25))
    def test_against_brute_force(self, pairs):
        est = np.array([p[0] for p in pairs])
        truth = np.array([p[1] for p in pairs])
        assert matched_accuracy(est, truth) == pytest.approx(brute_force_accuracy(est, truth))

    def test_modal_path_shape(self, filtered):
        smp, res = filtered
        path = filtered_modal_path(res.snapshots)
        assert path.shape == smp.states.shape
        assert 0.0 <= matched_accuracy(path, smp.states) <= 1.0
