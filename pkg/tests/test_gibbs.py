import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ihmm_stream.errors import ConfigError
from ihmm_stream.gibbs import (GHEvidence, QuadEvidence, TinyInstance, bundled_instance,
                               canonical_log_prior, canonical_paths, collapsed_gibbs,
                               empirical_distribution, exact_posterior, exact_posterior_forward,
                               excluded_counts, labeled_log_prior, labeled_log_prior_closed,
                               site_marginals, total_variation, transition_factors)

CANONICAL = {(0, 0, 0): 0.415141541815, (0, 0, 1): 0.23890717334,
             (0, 1, 0): 0.207570770907, (0, 1, 1): 0.138380513938}
LABELED = {(0, 0, 0): 0.249084925089, (0, 0, 1): 0.143344304004, (0, 1, 0): 0.124542462544,
           (0, 1, 1): 0.083028308363, (1, 0, 0): 0.124542462544, (1, 0, 1): 0.083028308363,
           (1, 1, 0): 0.095562869336, (1, 1, 1): 0.096866359757}


class TestPathPriors:
    def test_canonical_path_counts(self):
        assert len(canonical_paths(3, 2)) == 4
        assert len(canonical_paths(4, 3)) == 14
        assert all(p[0] == 0 for p in canonical_paths(5, 3))

    @pytest.mark.parametrize("T,K", [(3, 2), (4, 3), (5, 3)])
    def test_priors_normalize(self, T, K):
        beta = np.random.default_rng(T * K).dirichlet(np.ones(K))
        can = [np.exp(canonical_log_prior(p, beta, 1.3)) for p in canonical_paths(T, K)]
        # canonical sequences stop at K labels, so they carry the mass of never needing more
        assert 0 < sum(can) <= 1 + 1e-12
        lab = [np.exp(labeled_log_prior(p, beta, 1.3)) for p in itertools.product(range(K), repeat=T)]
        assert sum(lab) == pytest.approx(1.0, abs=1e-12)

    def test_sequential_and_closed_forms_agree(self):
        beta = np.array([0.5, 0.3, 0.2])
        for p in itertools.product(range(3), repeat=5):
            assert labeled_log_prior(p, beta, 0.7) == pytest.approx(labeled_log_prior_closed(p, beta, 0.7), abs=1e-12)

    def test_canonical_new_state_mass(self):
        # s = (0, 1): p = alpha (1 - beta_0) / alpha
        assert np.exp(canonical_log_prior((0, 1), [0.6, 0.4], 2.0)) == pytest.approx(0.4)
        assert canonical_log_prior((0, 2), [0.6, 0.4], 2.0) == -np.inf


class TestConditional:
    @settings(max_examples=80, deadline=None)
    @given(st.lists(st.integers(0, 2), min_size=2, max_size=6), st.data(),
           st.floats(0.2, 5.0))
    def test_matches_joint_prior_ratio(self, path, data, alpha):
        beta = np.array([0.5, 0.3, 0.2])
        t = data.draw(st.integers(0, len(path) - 1))
        f = transition_factors(path, t, beta, alpha, 3)
        joint = np.array([np.exp(labeled_log_prior(path[:t] + [k] + path[t + 1:], beta, alpha))
                          for k in range(3)])
        np.testing.assert_allclose(f / f.sum(), joint / joint.sum(), rtol=1e-10, atol=1e-14)

    def test_excluded_counts(self):
        n = excluded_counts([0, 1, 1, 0, 1], 2, 2)
        np.testing.assert_array_equal(n, [[0, 2], [0, 0]])

    def test_last_site_branch(self):
        f = transition_factors([0, 0, 1], 2, [0.6, 0.4], 1.0, 2)
        # n[0] = {0->0: 1}; p(k | prev=0) = (n[0,k] + beta_k) / (1 + 1)
        np.testing.assert_allclose(f, [1.6, 0.4])


class TestExact:
    def test_frozen_values(self):
        inst = bundled_instance()
        for labels, expect in (("canonical", CANONICAL), ("labeled", LABELED)):
            post = exact_posterior(inst, labels)
            assert set(post) == set(expect)
            for p, v in expect.items():
                assert post[p] == pytest.approx(v, abs=1e-9)

    @pytest.mark.parametrize("labels", ["canonical", "labeled"])
    def test_two_enumerators_agree(self, labels):
        inst = TinyInstance(y=(1, 0, 1, 1), x=((0.5,), (-1.0,), (1.0,), (2.0,)),
                            beta=(0.5, 0.3, 0.2), alpha=0.8, prior_mean=(0.5,), prior_var=(2.0,))
        a = exact_posterior(inst, labels)
        b = exact_posterior_forward(inst, labels)
        assert sum(a.values()) == pytest.approx(1.0, abs=1e-12)
        assert total_variation(a, b) < 1e-7

    def test_evidence_backends_agree(self):
        inst = bundled_instance()
        gh, qd = GHEvidence(inst), QuadEvidence(inst)
        for sites in ([0], [0, 2], [0, 1, 2]):
            assert gh(sites) == pytest.approx(qd(sites), abs=1e-9)
        assert gh([]) == 0.0

    def test_two_dimensional_evidence(self):
        inst = TinyInstance(y=(1, 0), x=((1.0, 0.5), (1.0, -1.0)), beta=(1.0,), alpha=1.0,
                            prior_mean=(0.0, 0.5), prior_var=(2.0, 1.0))
        gh, qd = GHEvidence(inst), QuadEvidence(inst)
        assert gh([0, 1]) == pytest.approx(qd([0, 1]), abs=1e-8)

    def test_single_site(self):
        inst = TinyInstance(y=(1,), x=((1.0,),), beta=(0.7, 0.3), alpha=1.0)
        post = exact_posterior(inst, "labeled")
        assert post[(0,)] == pytest.approx(0.7)

    def test_flat_emissions_give_prior(self):
        inst = TinyInstance(y=(1, 0, 1), x=((1.0,),) * 3, beta=(0.6, 0.4), alpha=1.5,
                            prior_mean=(0.0,), prior_var=(1e-12,))
        post = exact_posterior(inst, "labeled")
        for p, v in post.items():
            assert v == pytest.approx(np.exp(labeled_log_prior(p, inst.beta, inst.alpha)), rel=1e-6)

    def test_size_guard(self):
        big = TinyInstance(y=(0,) * 9, x=((1.0,),) * 9, beta=(1.0,), alpha=1.0)
        with pytest.raises(ConfigError):
            exact_posterior(big)
        with pytest.raises(ConfigError):
            exact_posterior(TinyInstance(y=(1,), x=((1.0,),), beta=(0.6, 0.6), alpha=1.0))
        with pytest.raises(ConfigError):
            exact_posterior(bundled_instance(), "other")


class TestGibbs:
    @pytest.mark.parametrize("mode", ["logit", "augmented"])
    def test_site_marginals(self, mode):
        inst = bundled_instance()
        res = collapsed_gibbs(inst, 6000, np.random.default_rng(11), mode=mode)
        exact = site_marginals(exact_posterior(inst, "labeled"), 3, 2)
        emp = site_marginals(empirical_distribution(res.paths), 3, 2)
        np.testing.assert_allclose(emp, exact, atol=0.04)

    def test_single_state(self):
        inst = TinyInstance(y=(1, 0), x=((1.0,),) * 2, beta=(1.0,), alpha=1.0)
        res = collapsed_gibbs(inst, 10, np.random.default_rng(0))
        assert np.all(res.paths == 0)

    def test_unknown_mode(self):
        with pytest.raises(ConfigError):
            collapsed_gibbs(bundled_instance(), 10, np.random.default_rng(0), mode="bogus")

    def test_empirical_distribution(self):
        emp = empirical_distribution([[0, 1], [0, 1], [1, 1], [0, 0]])
        assert emp == {(0, 0): 0.25, (0, 1): 0.5, (1, 1): 0.25}
        assert total_variation(emp, {(0, 1): 1.0}) == pytest.approx(0.5)
