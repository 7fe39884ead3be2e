"""Fused sentiment prediction, voting baselines and binary metrics."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .estimation import (
    CORR_MODES,
    MPOS_MODES,
    LabeledSample,
    ObservableSet,
    SampleProbs,
    TrainingStats,
    UtteranceState,
    compute_training_stats,
    estimate_observables,
    estimate_utterance_state,
)
from .solver import SolverConfig


class FitError(ValueError):
    """Training data cannot produce a model."""

    def __init__(self, message: str, best_residual_ssq: float | None = None):
        super().__init__(message)
        self.best_residual_ssq = best_residual_ssq


@dataclass(frozen=True)
class FusionModel:
    observables: ObservableSet
    training_stats: TrainingStats
    solver_config: SolverConfig = field(default_factory=SolverConfig)
    mpos: str = "pred-rate"
    corr_on: str = "hard"

    @property
    def converged(self) -> bool:
        report = self.observables.fit_report
        return report is not None and report.converged


@dataclass(frozen=True)
class Prediction:
    label: int
    p_pos: float
    state: UtteranceState
    converged: bool

    @property
    def p_neg(self) -> float:
        return 1.0 - self.p_pos


@dataclass(frozen=True)
class Metrics:
    acc2: float
    f1_pos: float
    f1_weighted: float
    confusion: tuple[tuple[int, int], tuple[int, int]]  # [[TN, FP], [FN, TP]]

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.confusion)

    def to_dict(self) -> dict:
        (tn, fp), (fn, tp) = self.confusion
        return {
            "acc2": self.acc2,
            "f1_pos": self.f1_pos,
            "f1_weighted": self.f1_weighted,
            "confusion": {"tn": tn, "fp": fp, "fn": fn, "tp": tp},
        }


def fit(
    records: Iterable[LabeledSample],
    config: SolverConfig | None = None,
    mpos: str = "pred-rate",
    corr_on: str = "hard",
) -> FusionModel:
    """Estimate the modality observables from labelled training records.

    A fit that does not reach the residual tolerance still returns a model;
    check ``model.converged``.

    Raises:
        FitError: fewer than two records or only one label present.
    """
    if mpos not in MPOS_MODES or corr_on not in CORR_MODES:
        raise ValueError("unknown statistic interpretation")
    records = list(records)
    if len(records) < 2:
        raise FitError("need at least two training records")
    if len({r.label for r in records}) < 2:
        raise FitError("training data must contain both labels")
    config = config or SolverConfig()
    stats = compute_training_stats(records, mpos=mpos, corr_on=corr_on)
    observables = estimate_observables(stats, config)
    return FusionModel(observables, stats, config, mpos, corr_on)


def label_from_p_pos(p_pos: float) -> int:
    # exactly 0.5 is negative
    return 1 if p_pos > 0.5 else -1


def predict(model: FusionModel, probs: SampleProbs, config: SolverConfig | None = None) -> Prediction:
    """Fit the utterance state and read it out with the final observable.

    ``p_pos = cos^2(theta_t / 2)``.  When the modality probabilities admit a
    family of roots (e.g. all equal to 0.5, solved by ``eta = 1`` at any
    angle) the state of the lowest-index restart with the minimal residual
    is used.
    """
    state = estimate_utterance_state(probs, model.observables, config or model.solver_config)
    p_pos = math.cos(0.5 * state.angles.theta) ** 2
    return Prediction(label_from_p_pos(p_pos), p_pos, state, state.solve_report.converged)


def _predict_one(args: tuple[FusionModel, SampleProbs, SolverConfig | None]) -> Prediction:
    return predict(*args)


def predict_many(
    model: FusionModel,
    probs: Sequence[SampleProbs],
    config: SolverConfig | None = None,
    workers: int = 1,
) -> list[Prediction]:
    """Predict a batch; output order always follows input order."""
    jobs = [(model, p, config) for p in probs]
    if workers <= 1 or len(jobs) < 2:
        return [_predict_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_predict_one, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def with_restarts(config: SolverConfig, restarts: int | None) -> SolverConfig:
    return config if restarts is None else replace(config, n_restarts=restarts)


# -- voting baselines -----------------------------------------------------


def hard_vote(probs: SampleProbs) -> int:
    return 1 if sum(probs.hard()) > 0 else -1


def weighted_vote(probs: SampleProbs, weights: Sequence[float]) -> int:
    w = [float(x) for x in weights]
    if len(w) != 3 or any(x < 0 or math.isnan(x) for x in w):
        raise ValueError("weights must be three non-negative numbers")
    total = sum(w)
    if total <= 0:
        raise ValueError("weights must not all be zero")
    score = sum(wi * h for wi, h in zip(w, probs.hard())) / total
    return 1 if score > 0 else -1


def soft_vote(probs: SampleProbs) -> int:
    return 1 if (probs.p_l + probs.p_v + probs.p_a) / 3.0 > 0.5 else -1


# -- metrics --------------------------------------------------------------


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def evaluate(predictions: Sequence[int], labels: Sequence[int]) -> Metrics:
    """Binary accuracy, positive-class F1, support-weighted F1 and confusion counts."""
    if len(predictions) != len(labels):
        raise ValueError(f"length mismatch: {len(predictions)} predictions vs {len(labels)} labels")
    if not len(labels):
        raise ValueError("cannot evaluate an empty prediction set")
    pred = np.asarray(predictions) > 0
    true = np.asarray(labels) > 0
    tp = int((pred & true).sum())
    tn = int((~pred & ~true).sum())
    fp = int((pred & ~true).sum())
    fn = int((~pred & true).sum())
    n = len(labels)
    f1_pos = _f1(tp, fp, fn)
    f1_neg = _f1(tn, fn, fp)
    n_pos = tp + fn
    return Metrics(
        acc2=(tp + tn) / n,
        f1_pos=f1_pos,
        f1_weighted=(n_pos * f1_pos + (n - n_pos) * f1_neg) / n,
        confusion=((tn, fp), (fn, tp)),
    )
