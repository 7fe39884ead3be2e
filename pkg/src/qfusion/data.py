"""Dataset CSV I/O, the synthetic correlated-classifier generator, and model files.

Dataset CSV (UTF-8, header required)::

    id,split,label,p_l,p_v,p_a

``split`` is one of ``train``/``valid``/``test``, ``label`` is -1 or 1 (or a
raw sentiment score, binarized as ``score >= 0`` when ``raw_scores`` is set),
and each ``p_*`` is that modality's probability of positive sentiment.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .estimation import OBSERVABLE_PARAMS, PROB_EPS, ObservableSet, SampleProbs, TrainingStats
from .fusion import FusionModel, Prediction
from .solver import SolveReport, SolverConfig

log = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")
DATASET_COLUMNS = ("id", "split", "label", "p_l", "p_v", "p_a")
PREDICTION_COLUMNS = (
    "id", "label", "fused_label", "p_pos", "eta_t", "theta_t", "phi_t", "residual_ssq", "converged",
)
MODEL_FORMAT_VERSION = 1


class DataError(ValueError):
    """A dataset, prediction or model file failed validation."""


class ModelFileError(DataError):
    pass


@dataclass(frozen=True)
class Record:
    id: str
    split: str
    label: int
    probs: SampleProbs


# -- dataset CSV ----------------------------------------------------------


def _parse_prob(value: str, row: int, column: str) -> float:
    try:
        p = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}, column {column}: not a number: {value!r}") from None
    if not 0.0 <= p <= 1.0:
        raise DataError(f"row {row}, column {column}: probability {p!r} outside [0, 1]")
    return p


def _parse_label(value: str, row: int, raw_scores: bool) -> int:
    try:
        x = float(value)
    except (TypeError, ValueError):
        raise DataError(f"row {row}, column label: not a number: {value!r}") from None
    if raw_scores:
        if math.isnan(x):
            raise DataError(f"row {row}, column label: NaN score")
        return 1 if x >= 0 else -1
    if x not in (1.0, -1.0):
        raise DataError(f"row {row}, column label: expected -1 or 1, got {value!r}")
    return int(x)


def load_csv(path: str | os.PathLike, raw_scores: bool = False) -> list[Record]:
    """Read and validate a dataset file.

    Rows are numbered by file line (the header is row 1).  Probabilities are
    clamped to ``[1e-6, 1 - 1e-6]``; the number of clamped rows is logged.
    """
    records: list[Record] = []
    seen: set[str] = set()
    clamped_rows = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in DATASET_COLUMNS if c not in header]
        if missing:
            raise DataError(f"row 1: missing column(s) {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            rid = (row["id"] or "").strip()
            if not rid:
                raise DataError(f"row {row_no}, column id: empty id")
            if rid in seen:
                raise DataError(f"row {row_no}, column id: duplicate id {rid!r}")
            seen.add(rid)
            split = (row["split"] or "").strip()
            if split not in SPLITS:
                raise DataError(f"row {row_no}, column split: {split!r} not in {SPLITS}")
            label = _parse_label(row["label"], row_no, raw_scores)
            raw = SampleProbs(*(_parse_prob(row[c], row_no, c) for c in ("p_l", "p_v", "p_a")))
            probs = raw.clamped(PROB_EPS)
            clamped_rows += probs != raw
            records.append(Record(rid, split, label, probs))
    if clamped_rows:
        log.warning("%s: clamped probabilities on %d row(s)", path, clamped_rows)
    return records


def write_csv(records: Sequence[Record], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS)
        for r in records:
            w.writerow([r.id, r.split, r.label, repr(r.probs.p_l), repr(r.probs.p_v), repr(r.probs.p_a)])


def select_splits(records: Sequence[Record], splits: Sequence[str]) -> list[Record]:
    return [r for r in records if r.split in splits]


# -- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for :func:`generate_synthetic`.

    Defaults mimic the CMU-MOSI split sizes (1284/686/229).
    """

    n_train: int = 1284
    n_valid: int = 686
    n_test: int = 229
    pos_fraction: float = 0.5
    accuracy: tuple[float, float, float] = (0.77, 0.55, 0.56)
    agreement: float = 0.5
    concentration: float = 2.0
    seed: int = 42

    def __post_init__(self) -> None:
        for name in ("n_train", "n_valid", "n_test"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 < self.pos_fraction < 1.0:
            raise ValueError("pos_fraction must lie in (0, 1)")
        if len(self.accuracy) != 3 or any(not 0.5 <= a <= 1.0 for a in self.accuracy):
            raise ValueError("accuracy needs three values in [0.5, 1]")
        if not 0.0 <= self.agreement <= 1.0:
            raise ValueError("agreement must lie in [0, 1]")
        if not self.concentration > 0.0:
            raise ValueError("concentration must be > 0")
        object.__setattr__(self, "accuracy", tuple(float(a) for a in self.accuracy))

    @property
    def n_total(self) -> int:
        return self.n_train + self.n_valid + self.n_test


def generate_synthetic(config: SynthConfig) -> list[Record]:
    """Labelled records from three correlated synthetic classifiers.

    Each modality is correct when a uniform draw falls below its accuracy.
    With probability ``agreement`` a modality reuses a per-sample draw shared
    by all modalities instead of its own, which couples their errors without
    changing any marginal accuracy.  The confidence margin ``|p - 0.5|`` is
    ``Beta(concentration, 1) / 2`` on the side of the hard prediction.
    """
    rng = np.random.Generator(np.random.Philox(key=config.seed & 0xFFFFFFFFFFFFFFFF))
    n = config.n_total
    labels = np.where(rng.random(n) < config.pos_fraction, 1, -1)
    shared = rng.random(n)
    own = rng.random((n, 3))
    use_shared = rng.random((n, 3)) < config.agreement
    draw = np.where(use_shared, shared[:, None], own)
    correct = draw < np.asarray(config.accuracy)[None, :]
    hard = np.where(correct, labels[:, None], -labels[:, None])
    margin = np.clip(rng.beta(config.concentration, 1.0, size=(n, 3)), PROB_EPS, 1.0)
    probs = 0.5 + 0.5 * hard * margin

    splits = ["train"] * config.n_train + ["valid"] * config.n_valid + ["test"] * config.n_test
    counters = dict.fromkeys(SPLITS, 0)
    records = []
    for k in range(n):
        split = splits[k]
        rid = f"{split}-{counters[split]:05d}"
        counters[split] += 1
        records.append(Record(rid, split, int(labels[k]), SampleProbs(*(float(p) for p in probs[k]))))
    return records


def expected_accuracy(config: SynthConfig) -> tuple[float, float, float]:
    return config.accuracy


def expected_correlation(config: SynthConfig, i: int, j: int) -> float:
    """Population Pearson correlation of the +1/-1 hard predictions of modalities i, j."""
    ai, aj = config.accuracy[i], config.accuracy[j]
    both_shared = config.agreement**2
    both_right = both_shared * min(ai, aj) + (1 - both_shared) * ai * aj
    both_wrong = both_shared * (1 - max(ai, aj)) + (1 - both_shared) * (1 - ai) * (1 - aj)
    mean_label = 2 * config.pos_fraction - 1
    mi, mj = mean_label * (2 * ai - 1), mean_label * (2 * aj - 1)
    cov = (2 * (both_right + both_wrong) - 1) - mi * mj
    return cov / math.sqrt((1 - mi * mi) * (1 - mj * mj))


# -- model files ----------------------------------------------------------


def model_to_dict(model: FusionModel) -> dict:
    report = model.observables.fit_report
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "angles": dict(zip(OBSERVABLE_PARAMS, (float(x) for x in model.observables.as_vector()))),
        "stats": model.training_stats.to_dict(),
        "solver_config": model.solver_config.to_dict(),
        "interpretation": {"mpos": model.mpos, "corr_on": model.corr_on},
        "fit_report": report.to_dict() if report is not None else None,
    }


def model_from_dict(d: dict) -> FusionModel:
    try:
        version = d["format_version"]
    except (KeyError, TypeError):
        raise ModelFileError("model file has no format_version") from None
    if version != MODEL_FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format_version {version!r}")
    try:
        params = [float(d["angles"][k]) for k in OBSERVABLE_PARAMS]
        report = SolveReport.from_dict(d["fit_report"]) if d.get("fit_report") else None
        return FusionModel(
            observables=ObservableSet.from_vector(params, report),
            training_stats=TrainingStats.from_dict(d["stats"]),
            solver_config=SolverConfig.from_dict(d["solver_config"]),
            mpos=d["interpretation"]["mpos"],
            corr_on=d["interpretation"]["corr_on"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFileError(f"malformed model file: {exc}") from exc


def save_model(model: FusionModel, path: str | os.PathLike) -> None:
    text = json.dumps(model_to_dict(model), indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_model(path: str | os.PathLike) -> FusionModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"{path}: corrupt model file ({exc.msg})") from None
    return model_from_dict(payload)


# -- prediction files -----------------------------------------------------


@dataclass(frozen=True)
class PredictionRow:
    id: str
    label: int
    fused_label: int
    p_pos: float
    eta_t: float
    theta_t: float
    phi_t: float
    residual_ssq: float
    converged: bool


def save_predictions(
    predictions: Sequence[Prediction],
    records: Sequence[Record],
    path: str | os.PathLike,
    fused_labels: Sequence[int] | None = None,
) -> None:
    """Write one row per prediction.  ``fused_labels`` overrides the model's labels
    (used by the soft-vote fallback for non-converged samples)."""
    if len(predictions) != len(records):
        raise ValueError("predictions and records are not aligned")
    if fused_labels is None:
        fused_labels = [p.label for p in predictions]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTION_COLUMNS)
        for pred, rec, fused in zip(predictions, records, fused_labels):
            st = pred.state
            w.writerow([
                rec.id, rec.label, fused, repr(pred.p_pos), repr(st.eta), repr(st.angles.theta),
                repr(st.angles.phi), repr(st.solve_report.best_residual_ssq),
                "true" if pred.converged else "false",
            ])


def load_predictions(path: str | os.PathLike) -> list[PredictionRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in PREDICTION_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"row 1: missing column(s) {', '.join(missing)}")
        for row_no, row in enumerate(reader, start=2):
            try:
                rows.append(PredictionRow(
                    id=row["id"],
                    label=_parse_label(row["label"], row_no, False),
                    fused_label=_parse_label(row["fused_label"], row_no, False),
                    p_pos=float(row["p_pos"]),
                    eta_t=float(row["eta_t"]),
                    theta_t=float(row["theta_t"]),
                    phi_t=float(row["phi_t"]),
                    residual_ssq=float(row["residual_ssq"]),
                    converged=row["converged"] == "true",
                ))
            except ValueError as exc:
                raise DataError(f"row {row_no}: {exc}") from None
    return rows
