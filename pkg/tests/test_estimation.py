import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import probs_from_state, random_params, stats_from_params, well_conditioned_observables
from qfusion.estimation import (
    ObservableSet,
    SampleProbs,
    TrainingStats,
    compute_training_stats,
    estimate_observables,
    estimate_utterance_state,
    forward_probs,
    forward_stats,
    linear_utterance_solution,
    observable_residuals,
    utterance_residuals,
    utterance_system,
)
from qfusion.qmath import TWO_PI
from qfusion.solver import SolverConfig, grid_oracle


@dataclass
class Rec:
    label: int
    probs: SampleProbs


def recs(labels, *modal):
    return [Rec(y, SampleProbs(*ps)) for y, *ps in zip(labels, *modal)]


class TestSampleProbs:
    def test_range_checked(self):
        with pytest.raises(ValueError):
            SampleProbs(1.2, 0.5, 0.5)

    def test_clamp(self):
        c = SampleProbs(0.0, 1.0, 0.3).clamped()
        assert (c.p_l, c.p_v, c.p_a) == (1e-6, 1 - 1e-6, 0.3)

    def test_hard_threshold(self):
        assert SampleProbs(0.5, 0.51, 0.1).hard() == (-1, 1, -1)


class TestTrainingStats:
    def test_all_positive(self):
        s = compute_training_stats(recs([1, 1, 1], [0.9, 0.2, 0.7], [0.8, 0.1, 0.6], [0.3, 0.6, 0.9]))
        assert s.pos_rate == 1.0

    def test_identical_predictions_correlate(self):
        s = compute_training_stats(recs([1, -1, 1], [0.9, 0.2, 0.7], [0.8, 0.1, 0.6], [0.3, 0.6, 0.9]))
        assert s.corr("l", "v") == pytest.approx(1.0)

    def test_hand_computed_zero_correlation(self):
        # L = (+,+,-,-), V = (+,-,+,-): centred vectors are orthogonal
        s = compute_training_stats(
            recs([1, -1, 1, -1], [0.9, 0.8, 0.2, 0.1], [0.9, 0.1, 0.8, 0.2], [0.9, 0.9, 0.9, 0.1])
        )
        assert s.corr("l", "v") == pytest.approx(0.0, abs=1e-15)
        assert s.modality_pos_rate == (0.5, 0.5, 0.75)
        assert s.modality_accuracy == (0.5, 1.0, 0.75)

    def test_matches_numpy_pearson(self, rng):
        n = 300
        p = rng.uniform(size=(n, 3))
        y = np.where(rng.uniform(size=n) < 0.4, 1, -1)
        s = compute_training_stats(recs(y, p[:, 0], p[:, 1], p[:, 2]))
        h = np.where(p > 0.5, 1.0, -1.0)
        assert s.corr("v", "a") == pytest.approx(np.corrcoef(h[:, 1], h[:, 2])[0, 1], abs=1e-12)
        s_prob = compute_training_stats(recs(y, p[:, 0], p[:, 1], p[:, 2]), corr_on="prob")
        assert s_prob.corr("l", "a") == pytest.approx(np.corrcoef(p[:, 0], p[:, 2])[0, 1], abs=1e-12)

    def test_true_positive_interpretation(self):
        records = recs([1, -1, -1, 1], [0.9, 0.8, 0.2, 0.1], [0.9, 0.9, 0.9, 0.9], [0.1] * 4)
        assert compute_training_stats(records).modality_pos_rate[0] == 0.5
        assert compute_training_stats(records, mpos="true-pos").modality_pos_rate[0] == 0.25

    def test_constant_predictions_warn(self):
        s = compute_training_stats(recs([1, -1], [0.9, 0.2], [0.9, 0.9], [0.1, 0.8]))
        assert s.corr("l", "v") == 0.0 and s.corr("v", "a") == 0.0
        assert len(s.warnings) == 2

    def test_empty(self):
        with pytest.raises(ValueError):
            compute_training_stats([])

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            compute_training_stats(recs([1], [0.9], [0.9], [0.9]), mpos="other")

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
                    min_size=1, max_size=30))
    def test_ranges(self, rows):
        s = compute_training_stats([Rec(y, SampleProbs(a, b, c)) for y, a, b, c in rows])
        assert 0 <= s.pos_rate <= 1
        assert all(0 <= r <= 1 for r in s.modality_pos_rate)
        assert all(-1 <= c <= 1 for c in s.pairwise_corr)

    def test_dict_round_trip(self):
        s = compute_training_stats(recs([1, -1, 1], [0.9, 0.2, 0.7], [0.8, 0.1, 0.3], [0.3, 0.6, 0.9]))
        assert TrainingStats.from_dict(s.to_dict()) == s


class TestObservableResiduals:
    def test_balanced_positive_rate(self):
        stats = TrainingStats(0.5, (0.5,) * 3, (0.0,) * 3, 10)
        r = observable_residuals(np.array([math.pi / 2, 1, 2, 3, 0, 0, 0]), stats)
        assert r[0] == pytest.approx(0.0, abs=1e-15)

    def test_observable_aligned_with_dataset_state(self):
        tg = 1.1
        stats = TrainingStats(0.5, (1.0, 0.5, 0.5), (0.0,) * 3, 10)
        r = observable_residuals(np.array([tg, tg, 2, 3, 0.0, 0, 0]), stats)
        assert r[1] == pytest.approx(0.0, abs=1e-12)

    def test_self_correlation(self):
        stats = TrainingStats(0.5, (0.5,) * 3, (1.0, 0.0, 0.0), 10)
        r = observable_residuals(np.array([1.0, 0.7, 0.7, 3, 2.0, 2.0, 0]), stats)
        assert r[4] == pytest.approx(0.0, abs=1e-12)

    def test_zero_at_generating_params(self, rng):
        for _ in range(200):
            p = random_params(rng)
            np.testing.assert_allclose(observable_residuals(p, stats_from_params(p)), 0.0, atol=1e-12)

    def test_forward_stats_agrees_with_oracle(self, rng):
        p = random_params(rng)
        a, b = forward_stats(p), stats_from_params(p, n_samples=0)
        np.testing.assert_allclose(a.modality_pos_rate, b.modality_pos_rate, atol=1e-12)
        np.testing.assert_allclose(a.pairwise_corr, b.pairwise_corr, atol=1e-12)

    def test_batch_matches_single(self, rng):
        stats = stats_from_params(random_params(rng))
        batch = rng.uniform(0, TWO_PI, (5, 7))
        np.testing.assert_array_equal(
            observable_residuals(batch, stats), np.stack([observable_residuals(b, stats) for b in batch])
        )


class TestEstimateObservables:
    def test_recovers_forward_generated_stats(self, rng):
        for _ in range(3):
            obs = estimate_observables(stats_from_params(random_params(rng)))
            assert obs.fit_report.best_residual_ssq < 1e-10
            assert obs.g.phi == 0.0
            assert all(0 <= a < TWO_PI for a in obs.as_vector())

    def test_balanced_coincident_solution(self):
        stats = TrainingStats(0.5, (0.5,) * 3, (1.0,) * 3, 100)
        # analytic root: dataset state and three coincident observables on the equator
        root = np.array([math.pi / 2, 0.0, 0.0, 0.0, 1.3, 1.3, 1.3])
        assert np.sum(observable_residuals(root, stats) ** 2) < 1e-20
        obs = estimate_observables(stats)
        assert obs.fit_report.best_residual_ssq < 1e-10

    def test_infeasible_stats_flagged(self):
        # three modalities pairwise anti-correlated at -1 cannot exist
        stats = TrainingStats(0.5, (0.5,) * 3, (-1.0, -1.0, -1.0), 100)
        obs = estimate_observables(stats, SolverConfig(n_restarts=20))
        assert not obs.fit_report.converged
        assert obs.fit_report.best_residual_ssq > 1e-3


class TestUtteranceResiduals:
    def setup_method(self):
        self.obs = ObservableSet.from_vector([1.0, 0.4, 2.0, 2.8, 0.3, 1.9, 4.4])

    def test_fully_noisy(self):
        probs = SampleProbs(0.2, 0.7, 0.9)
        r = utterance_residuals(np.array([1.234, 5.0, 1.0]), probs, self.obs)
        np.testing.assert_allclose(r, 0.5 - probs.as_array(), atol=1e-15)

    def test_sharp_on_eigenstate(self):
        l = self.obs.obs_l
        r = utterance_residuals(np.array([l.theta, l.phi, 0.0]), SampleProbs(1.0, 0.5, 0.5), self.obs)
        assert r[0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_povm_matrices(self, rng):
        for _ in range(1000):
            obs = ObservableSet.from_vector(random_params(rng))
            t, f, eta = rng.uniform(0, TWO_PI), rng.uniform(0, TWO_PI), rng.uniform()
            target = SampleProbs(*rng.uniform(size=3))
            expected = probs_from_state(t, f, eta, obs).as_array() - target.as_array()
            np.testing.assert_allclose(utterance_residuals(np.array([t, f, eta]), target, obs), expected, atol=1e-12)

    def test_forward_probs_agrees_with_oracle(self, rng):
        obs = well_conditioned_observables(rng)
        a = forward_probs(0.7, 2.0, 0.3, obs)
        b = probs_from_state(0.7, 2.0, 0.3, obs)
        np.testing.assert_allclose(a.as_array(), b.as_array(), atol=1e-12)


class TestEstimateUtterance:
    def test_recovers_forward_generated_probs(self, rng):
        obs = well_conditioned_observables(rng)
        for _ in range(5):
            t, f, eta = rng.uniform(0, TWO_PI), rng.uniform(0, TWO_PI), rng.uniform(0.05, 0.95)
            state = estimate_utterance_state(probs_from_state(t, f, eta, obs), obs)
            assert state.solve_report.best_residual_ssq < 1e-12
            # the root is unique up to the (theta, phi) double cover
            assert state.eta == pytest.approx(eta, abs=1e-5)
            assert math.cos(state.angles.theta) == pytest.approx(math.cos(t), abs=1e-5)

    def test_all_half_is_noise_root(self, rng):
        obs = well_conditioned_observables(rng)
        state = estimate_utterance_state(SampleProbs(0.5, 0.5, 0.5), obs)
        assert state.solve_report.best_residual_ssq < 1e-12
        assert state.eta > 0.99

    def test_dominates_grid_oracle(self, rng):
        obs = well_conditioned_observables(rng)
        probs = probs_from_state(2.0, 4.0, 0.4, obs)
        state = estimate_utterance_state(probs, obs)
        _, oracle_ssq = grid_oracle(utterance_system(probs.clamped(), obs), 61)
        assert state.solve_report.best_residual_ssq <= oracle_ssq + 1e-9

    def test_inconsistent_probs_not_converged(self, rng):
        obs = well_conditioned_observables(rng)
        probs = SampleProbs(0.999, 0.001, 0.999)
        if linear_utterance_solution(probs, obs) is not None:
            pytest.skip("probabilities happen to be consistent for this draw")
        state = estimate_utterance_state(probs, obs, SolverConfig(n_restarts=20))
        assert not state.solve_report.converged
        assert 0.0 <= state.eta <= 1.0


class TestLinearSolution:
    def test_matches_generating_state(self, rng):
        obs = well_conditioned_observables(rng)
        for _ in range(50):
            t, f, eta = rng.uniform(0, TWO_PI), rng.uniform(0, TWO_PI), rng.uniform()
            sol = linear_utterance_solution(probs_from_state(t, f, eta, obs), obs)
            assert sol is not None
            assert sol.eta == pytest.approx(eta, abs=1e-9)
            assert sol.p_pos == pytest.approx(math.cos(t / 2) ** 2, abs=1e-9)

    def test_coplanar_observables(self):
        obs = ObservableSet.from_vector([1.0, 0.5, 1.0, 2.0, 0.0, 0.0, 0.0])  # all in the x-z plane
        assert linear_utterance_solution(SampleProbs(0.6, 0.6, 0.6), obs) is None
