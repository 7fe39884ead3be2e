"""Observable estimation from training statistics and per-utterance state fits.

Parameter vectors use a fixed layout:

* observables: ``(theta_g, theta_l, theta_v, theta_a, phi_l, phi_v, phi_a)``;
  the phase of the dataset state ``|G>`` is pinned to 0 since every equation
  depends on phase differences only.
* utterance: ``(theta_t, phi_t, eta_t)``.

Residual functions broadcast over leading axes, so the same code evaluates a
single vector or a whole batch of restarts.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from .qmath import TWO_PI, BlochState, Observable
from .solver import ResidualSystem, SolveReport, SolverConfig, solve_multistart

log = logging.getLogger(__name__)

MODALITIES = ("l", "v", "a")
PAIRS = (("l", "v"), ("l", "a"), ("v", "a"))
_PAIR_INDEX = tuple((MODALITIES.index(m1), MODALITIES.index(m2)) for m1, m2 in PAIRS)

PROB_EPS = 1e-6
HARD_THRESHOLD = 0.5

MPOS_MODES = ("pred-rate", "true-pos")
CORR_MODES = ("hard", "prob")

OBSERVABLE_PARAMS = ("theta_g", "theta_l", "theta_v", "theta_a", "phi_l", "phi_v", "phi_a")


@dataclass(frozen=True)
class SampleProbs:
    """Per-modality probabilities of a positive judgment for one utterance."""

    p_l: float
    p_v: float
    p_a: float

    def __post_init__(self) -> None:
        for name in ("p_l", "p_v", "p_a"):
            value = float(getattr(self, name))
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value!r}")
            object.__setattr__(self, name, value)

    def as_array(self) -> np.ndarray:
        return np.array([self.p_l, self.p_v, self.p_a])

    def clamped(self, eps: float = PROB_EPS) -> SampleProbs:
        lo, hi = eps, 1.0 - eps
        return SampleProbs(*(min(max(p, lo), hi) for p in (self.p_l, self.p_v, self.p_a)))

    def hard(self) -> tuple[int, int, int]:
        """+1/-1 hard predictions at the 0.5 threshold."""
        return tuple(1 if p > HARD_THRESHOLD else -1 for p in (self.p_l, self.p_v, self.p_a))


class LabeledSample(Protocol):
    label: int
    probs: SampleProbs


@dataclass(frozen=True)
class TrainingStats:
    pos_rate: float
    modality_pos_rate: tuple[float, float, float]
    pairwise_corr: tuple[float, float, float]  # ordered as PAIRS
    n_samples: int
    modality_accuracy: tuple[float, float, float] = (0.5, 0.5, 0.5)
    warnings: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.pos_rate <= 1.0:
            raise ValueError("pos_rate must lie in [0, 1]")
        if any(not 0.0 <= r <= 1.0 for r in self.modality_pos_rate):
            raise ValueError("modality rates must lie in [0, 1]")
        if any(not -1.0 <= c <= 1.0 for c in self.pairwise_corr):
            raise ValueError("correlations must lie in [-1, 1]")

    def corr(self, m1: str, m2: str) -> float:
        key = (m1, m2) if (m1, m2) in PAIRS else (m2, m1)
        return self.pairwise_corr[PAIRS.index(key)]

    def to_dict(self) -> dict:
        return {
            "pos_rate": self.pos_rate,
            "modality_pos_rate": dict(zip(MODALITIES, self.modality_pos_rate)),
            "pairwise_corr": {f"{a}{b}": c for (a, b), c in zip(PAIRS, self.pairwise_corr)},
            "n_samples": self.n_samples,
            "modality_accuracy": dict(zip(MODALITIES, self.modality_accuracy)),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> TrainingStats:
        return cls(
            pos_rate=float(d["pos_rate"]),
            modality_pos_rate=tuple(float(d["modality_pos_rate"][m]) for m in MODALITIES),
            pairwise_corr=tuple(float(d["pairwise_corr"][a + b]) for a, b in PAIRS),
            n_samples=int(d["n_samples"]),
            modality_accuracy=tuple(float(d["modality_accuracy"][m]) for m in MODALITIES),
            warnings=tuple(d.get("warnings", ())),
        )


@dataclass(frozen=True)
class ObservableSet:
    g: BlochState
    obs_l: Observable
    obs_v: Observable
    obs_a: Observable
    fit_report: SolveReport | None = None

    def __post_init__(self) -> None:
        if self.g.phi != 0.0:
            raise ValueError("the dataset state phase phi_g is fixed at 0")

    @property
    def observables(self) -> tuple[Observable, Observable, Observable]:
        return self.obs_l, self.obs_v, self.obs_a

    def as_vector(self) -> np.ndarray:
        obs = self.observables
        return np.array([self.g.theta, *(o.theta for o in obs), *(o.phi for o in obs)])

    @classmethod
    def from_vector(cls, params: Sequence[float], report: SolveReport | None = None) -> ObservableSet:
        tg, tl, tv, ta, pl, pv, pa = (float(x) for x in params)
        return cls(
            g=BlochState(tg, 0.0),
            obs_l=Observable.from_angles(tl, pl),
            obs_v=Observable.from_angles(tv, pv),
            obs_a=Observable.from_angles(ta, pa),
            fit_report=report,
        )

    def bloch_matrix(self) -> np.ndarray:
        """Rows are the Bloch vectors of the L, V, A "+" eigenstates."""
        return np.array([o.angles.bloch_vector() for o in self.observables])


@dataclass(frozen=True)
class UtteranceState:
    angles: BlochState
    eta: float
    solve_report: SolveReport

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


def _pearson(x: np.ndarray, y: np.ndarray) -> float | None:
    xc, yc = x - x.mean(), y - y.mean()
    denom = math.sqrt(float(xc @ xc) * float(yc @ yc))
    if denom == 0.0:
        return None
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def compute_training_stats(
    records: Iterable[LabeledSample], mpos: str = "pred-rate", corr_on: str = "hard"
) -> TrainingStats:
    """Dataset statistics that the observables are fitted to.

    ``mpos="pred-rate"`` counts the samples each modality predicts positive;
    ``"true-pos"`` counts only those that are also labelled positive.
    ``corr_on`` selects whether Pearson correlations use the +1/-1 hard
    predictions or the raw probabilities.  A modality whose inputs are
    constant has no Pearson correlation; it is reported as 0 and listed in
    ``warnings``.
    """
    if mpos not in MPOS_MODES:
        raise ValueError(f"mpos must be one of {MPOS_MODES}")
    if corr_on not in CORR_MODES:
        raise ValueError(f"corr_on must be one of {CORR_MODES}")
    records = list(records)
    if not records:
        raise ValueError("cannot compute statistics of an empty training set")

    labels = np.array([r.label for r in records], dtype=float)
    probs = np.array([r.probs.as_array() for r in records])
    hard = np.where(probs > HARD_THRESHOLD, 1.0, -1.0)
    n = len(records)

    positive = hard > 0
    if mpos == "true-pos":
        positive &= (labels > 0)[:, None]
    rates = tuple(float(v) for v in positive.sum(axis=0) / n)
    accuracy = tuple(float(v) for v in (hard == labels[:, None]).sum(axis=0) / n)

    series = hard if corr_on == "hard" else probs
    corrs, warnings = [], []
    for (m1, m2), (i, j) in zip(PAIRS, _PAIR_INDEX):
        c = _pearson(series[:, i], series[:, j])
        if c is None:
            warnings.append(f"corr({m1},{m2}) undefined: constant predictions; set to 0")
            log.warning(warnings[-1])
            c = 0.0
        corrs.append(c)

    return TrainingStats(
        pos_rate=float((labels > 0).sum() / n),
        modality_pos_rate=rates,
        pairwise_corr=tuple(corrs),
        n_samples=n,
        modality_accuracy=accuracy,
        warnings=tuple(warnings),
    )


def _positive_prob(theta_m, phi_m, theta_s, phi_s):
    """|<M,+|S>|^2 for Bloch angles, broadcasting over arrays."""
    return (
        np.cos(0.5 * theta_m) ** 2 * np.cos(0.5 * theta_s) ** 2
        + np.sin(0.5 * theta_m) ** 2 * np.sin(0.5 * theta_s) ** 2
        + 0.5 * np.sin(theta_m) * np.sin(theta_s) * np.cos(phi_m - phi_s)
    )


def _trig_corr(t1, p1, t2, p2):
    return np.cos(t1) * np.cos(t2) + np.sin(t1) * np.sin(t2) * np.cos(p1 - p2)


def observable_residuals(params: np.ndarray, stats: TrainingStats) -> np.ndarray:
    """Seven residuals: positive rate, three modality rates, three correlations."""
    params = np.asarray(params, dtype=float)
    theta_g = params[..., 0]
    thetas = params[..., 1:4]
    phis = params[..., 4:7]
    out = np.empty(params.shape[:-1] + (7,))
    out[..., 0] = np.cos(0.5 * theta_g) ** 2 - stats.pos_rate
    for k in range(3):
        out[..., 1 + k] = (
            _positive_prob(thetas[..., k], phis[..., k], theta_g, 0.0) - stats.modality_pos_rate[k]
        )
    for k, (i, j) in enumerate(_PAIR_INDEX):
        out[..., 4 + k] = (
            _trig_corr(thetas[..., i], phis[..., i], thetas[..., j], phis[..., j])
            - stats.pairwise_corr[k]
        )
    return out


def observable_system(stats: TrainingStats) -> ResidualSystem:
    return ResidualSystem(
        evaluate_batch=lambda x: observable_residuals(x, stats),
        bounds=((0.0, TWO_PI),) * 7,
        residual_count=7,
        transforms=("periodic",) * 7,
    )


def estimate_observables(stats: TrainingStats, config: SolverConfig | None = None) -> ObservableSet:
    params, report = solve_multistart(observable_system(stats), config or SolverConfig())
    if not report.converged:
        log.warning("observable fit did not converge: best SSQ %.3e", report.best_residual_ssq)
    return ObservableSet.from_vector(params, report)


def forward_stats(params: Sequence[float], n_samples: int = 0) -> TrainingStats:
    """Statistics that the given observable parameters reproduce exactly."""
    r = observable_residuals(np.asarray(params, dtype=float), _ZERO_STATS)
    clip = lambda v, lo: float(min(max(v, lo), 1.0))  # noqa: E731
    return TrainingStats(
        pos_rate=clip(r[0], 0.0),
        modality_pos_rate=tuple(clip(v, 0.0) for v in r[1:4]),
        pairwise_corr=tuple(clip(v, -1.0) for v in r[4:7]),
        n_samples=n_samples,
    )


_ZERO_STATS = TrainingStats(0.0, (0.0, 0.0, 0.0), (0.0, 0.0, 0.0), 0)


def utterance_residuals(
    params: np.ndarray, probs: SampleProbs, observables: ObservableSet
) -> np.ndarray:
    """``<S|E_+^M|S> - p_M`` for M in (L, V, A) with ``E_+^M`` at noise ``eta``."""
    params = np.asarray(params, dtype=float)
    theta_t, phi_t, eta = params[..., 0], params[..., 1], params[..., 2]
    target = probs.as_array()
    out = np.empty(params.shape[:-1] + (3,))
    for k, obs in enumerate(observables.observables):
        sharp = _positive_prob(obs.theta, obs.phi, theta_t, phi_t)
        out[..., k] = 0.5 * eta + (1.0 - eta) * sharp - target[k]
    return out


def utterance_system(probs: SampleProbs, observables: ObservableSet) -> ResidualSystem:
    return ResidualSystem(
        evaluate_batch=lambda x: utterance_residuals(x, probs, observables),
        bounds=((0.0, TWO_PI), (0.0, TWO_PI), (0.0, 1.0)),
        residual_count=3,
        transforms=("periodic", "periodic", "logistic"),
    )


def forward_probs(theta_t: float, phi_t: float, eta: float, observables: ObservableSet) -> SampleProbs:
    """Modality probabilities produced by a known utterance state."""
    p = utterance_residuals(np.array([theta_t, phi_t, eta]), SampleProbs(0.0, 0.0, 0.0), observables)
    return SampleProbs(*(min(max(float(v), 0.0), 1.0) for v in p))


def estimate_utterance_state(
    probs: SampleProbs, observables: ObservableSet, config: SolverConfig | None = None
) -> UtteranceState:
    """Fit ``(theta_t, phi_t, eta_t)`` to one utterance's modality probabilities.

    Probabilities are clamped to ``[1e-6, 1 - 1e-6]`` first.  A fit that does
    not reach the tolerance still returns its best parameters, with
    ``solve_report.converged`` false.
    """
    system = utterance_system(probs.clamped(), observables)
    params, report = solve_multistart(system, config or SolverConfig())
    return UtteranceState(
        angles=BlochState(params[0], params[1]),
        eta=float(min(max(params[2], 0.0), 1.0)),
        solve_report=report,
    )


@dataclass(frozen=True)
class LinearSolution:
    """Closed-form utterance solution used to cross-check the iterative fit."""

    bloch: np.ndarray = field(repr=False)
    eta: float
    p_pos: float


def linear_utterance_solution(probs: SampleProbs, observables: ObservableSet) -> LinearSolution | None:
    """Solve the utterance equations exactly when they admit a root.

    With ``v = (1 - eta) * n_T`` the equations read ``n_M . v = 2 p_M - 1``,
    linear in ``v``.  Returns ``None`` when the observable Bloch vectors are
    (numerically) coplanar or the solution lies outside the unit ball.
    """
    basis = observables.bloch_matrix()
    if abs(np.linalg.det(basis)) < 1e-9:
        return None
    v = np.linalg.solve(basis, 2.0 * probs.as_array() - 1.0)
    length = float(np.linalg.norm(v))
    if length > 1.0 + 1e-12:
        return None
    if length == 0.0:
        return LinearSolution(v, 1.0, 0.5)
    return LinearSolution(v, 1.0 - min(length, 1.0), 0.5 * (1.0 + v[2] / length))
