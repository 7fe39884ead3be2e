import math
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import probs_from_state, random_params, stats_from_params, well_conditioned_observables
from qfusion.estimation import ObservableSet, SampleProbs, estimate_observables
from qfusion.fusion import (
    FitError,
    FusionModel,
    evaluate,
    fit,
    hard_vote,
    label_from_p_pos,
    predict,
    predict_many,
    soft_vote,
    weighted_vote,
)
from qfusion.solver import SolverConfig

probs_st = st.builds(SampleProbs, st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))


@dataclass
class Rec:
    label: int
    probs: SampleProbs


def model_for(obs: ObservableSet, config=SolverConfig()) -> FusionModel:
    return FusionModel(obs, stats_from_params(obs.as_vector()), config)


class TestVoting:
    @pytest.mark.parametrize("probs,expected", [
        ((0.9, 0.8, 0.1), 1), ((0.4, 0.3, 0.2), -1), ((0.6, 0.4, 0.4), -1),
    ])
    def test_hard(self, probs, expected):
        assert hard_vote(SampleProbs(*probs)) == expected

    def test_weighted(self):
        p = SampleProbs(0.9, 0.1, 0.1)
        assert weighted_vote(p, (1, 0, 0)) == 1
        assert weighted_vote(p, (3, 1, 1)) == 1
        assert weighted_vote(p, (1, 1, 1)) == -1

    def test_weighted_tie_is_negative(self):
        assert weighted_vote(SampleProbs(0.9, 0.1, 0.1), (2, 1, 1)) == -1

    def test_weighted_rejects_zero_weights(self):
        with pytest.raises(ValueError):
            weighted_vote(SampleProbs(0.9, 0.1, 0.1), (0, 0, 0))
        with pytest.raises(ValueError):
            weighted_vote(SampleProbs(0.9, 0.1, 0.1), (1, -1, 1))

    @pytest.mark.parametrize("probs,expected", [
        ((0.9, 0.9, 0.0), 1), ((0.6, 0.6, 0.2), -1), ((0.5, 0.5, 0.5), -1),
    ])
    def test_soft(self, probs, expected):
        assert soft_vote(SampleProbs(*probs)) == expected

    @given(probs_st, st.floats(0.01, 10))
    def test_equal_weights_equal_hard_vote(self, probs, w):
        assert weighted_vote(probs, (w, w, w)) == hard_vote(probs)


class TestEvaluate:
    def test_perfect(self):
        m = evaluate([1, -1, 1], [1, -1, 1])
        assert m.acc2 == 1.0 and m.f1_pos == 1.0 and m.f1_weighted == 1.0

    def test_worked_example(self):
        # TP=1, FP=1, FN=1, TN=1 -> precision = recall = 0.5
        m = evaluate([1, -1, 1, -1], [1, 1, -1, -1])
        assert m.acc2 == 0.5 and m.f1_pos == 0.5
        assert m.confusion == ((1, 1), (1, 1))

    def test_all_wrong(self):
        m = evaluate([-1, -1], [1, 1])
        assert m.acc2 == 0.0 and m.f1_pos == 0.0

    def test_weighted_f1_by_hand(self):
        # TP=2 FP=1 FN=0 TN=1: f1+ = 4/5, f1- = 2/3, supports 2 and 2
        m = evaluate([1, 1, 1, -1], [1, 1, -1, -1])
        assert m.f1_weighted == pytest.approx((0.8 * 2 + (2 / 3) * 2) / 4)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            evaluate([1], [1, -1])
        with pytest.raises(ValueError):
            evaluate([], [])

    @given(st.lists(st.tuples(st.sampled_from([-1, 1]), st.sampled_from([-1, 1])), min_size=1, max_size=40))
    def test_identities(self, pairs):
        pred, true = zip(*pairs)
        m = evaluate(pred, true)
        (tn, fp), (fn, tp) = m.confusion
        assert m.total == len(pairs)
        assert m.acc2 == pytest.approx((tp + tn) / len(pairs))
        denom = 2 * tp + fp + fn
        assert m.f1_pos == pytest.approx(2 * tp / denom if denom else 0.0)
        assert 0 <= m.f1_weighted <= 1


class TestFit:
    def _records(self, rng, n=200):
        out = []
        for _ in range(n):
            y = 1 if rng.uniform() < 0.6 else -1
            p = np.clip(0.5 + 0.3 * y * rng.uniform(-0.4, 1, 3), 0, 1)
            out.append(Rec(y, SampleProbs(*p)))
        return out

    def test_requires_both_labels(self):
        with pytest.raises(FitError):
            fit([Rec(1, SampleProbs(0.9, 0.8, 0.7)), Rec(1, SampleProbs(0.2, 0.8, 0.7))])

    def test_requires_two_records(self):
        with pytest.raises(FitError):
            fit([Rec(1, SampleProbs(0.9, 0.8, 0.7))])

    def test_deterministic(self, rng):
        records = self._records(rng)
        cfg = SolverConfig(n_restarts=40, rng_seed=11)
        a, b = fit(records, cfg), fit(records, cfg)
        assert a.observables.as_vector().tobytes() == b.observables.as_vector().tobytes()
        assert a == b

    def test_consistent_stats_fit(self, rng):
        stats = stats_from_params(random_params(rng))
        obs = estimate_observables(stats)
        assert obs.fit_report.best_residual_ssq < 1e-10


class TestPredict:
    def test_threshold_rule(self):
        assert label_from_p_pos(0.5) == -1
        assert label_from_p_pos(0.5 + 1e-12) == 1
        assert label_from_p_pos(0.2) == -1

    def test_forward_generated_state(self, rng):
        obs = well_conditioned_observables(rng)
        model = model_for(obs)
        probs = probs_from_state(math.pi / 6, 1.0, 0.3, obs)
        pred = predict(model, probs)
        assert pred.converged
        assert pred.label == 1
        assert pred.p_pos == pytest.approx(math.cos(math.pi / 12) ** 2, abs=1e-5)
        assert pred.p_pos + pred.p_neg == pytest.approx(1.0)

    def test_degenerate_half_probs(self, rng):
        model = model_for(well_conditioned_observables(rng))
        a = predict(model, SampleProbs(0.5, 0.5, 0.5))
        b = predict(model, SampleProbs(0.5, 0.5, 0.5))
        assert a == b
        assert a.converged and a.state.eta > 0.99
        assert a.label == label_from_p_pos(a.p_pos)

    def test_repeatable(self, rng):
        model = model_for(well_conditioned_observables(rng))
        p = SampleProbs(0.8, 0.3, 0.6)
        assert predict(model, p) == predict(model, p)

    def test_many_keeps_order_and_matches_parallel(self, rng):
        model = model_for(well_conditioned_observables(rng), SolverConfig(n_restarts=20))
        probs = [SampleProbs(*rng.uniform(size=3)) for _ in range(6)]
        serial = predict_many(model, probs)
        assert serial == [predict(model, p) for p in probs]
        assert predict_many(model, probs, workers=2) == serial
