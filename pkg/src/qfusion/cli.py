"""Command-line interface: ``qfusion {synth,fit,predict,eval,oracle-check}``.

Exit codes: 0 success, 1 usage or data error, 2 finished but some fit did
not reach the residual tolerance.  The default seed is 42, or the value of
the ``QFUSION_SEED`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import data as ds
from .estimation import CORR_MODES, MPOS_MODES, estimate_utterance_state, utterance_system
from .fusion import (
    FitError,
    evaluate,
    fit,
    hard_vote,
    predict_many,
    soft_vote,
    weighted_vote,
)
from .solver import SolverConfig, SolverFailure, grid_oracle

log = logging.getLogger("qfusion")

EXIT_OK, EXIT_ERROR, EXIT_WARN = 0, 1, 2
ORACLE_SLACK = 1e-9
FIT_SPLITS = {"train+valid": ("train", "valid"), "train": ("train",)}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # argparse exits 2 by default
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _default_seed() -> int:
    raw = os.environ.get("QFUSION_SEED")
    if raw is None:
        return 42
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"QFUSION_SEED must be an integer, got {raw!r}") from None


def _floats3(text: str) -> tuple[float, float, float]:
    try:
        values = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    return values


def _emit(args: argparse.Namespace, report: dict, text: str) -> None:
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(text)


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


# -- subcommands ----------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        config = ds.SynthConfig(
            n_train=args.n_train,
            n_valid=args.n_valid,
            n_test=args.n_test,
            pos_fraction=args.pos_fraction,
            accuracy=args.accuracy,
            agreement=args.agreement,
            concentration=args.concentration,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    records = ds.generate_synthetic(config)
    ds.write_csv(records, args.out)
    report = {"out": str(args.out), "rows": len(records), "seed": config.seed,
              "splits": {s: getattr(config, f"n_{s}") for s in ds.SPLITS}}
    _emit(args, report, f"wrote {len(records)} rows to {args.out} "
          f"(train {config.n_train}, valid {config.n_valid}, test {config.n_test}; seed {config.seed})")
    return EXIT_OK


def cmd_fit(args: argparse.Namespace) -> int:
    records = ds.load_csv(_existing(args.data, "data file"), raw_scores=args.raw_scores)
    train = ds.select_splits(records, FIT_SPLITS[args.fit_on])
    if not any(r.split == "train" for r in train):
        raise UsageError(f"{args.data}: no train rows")
    config = SolverConfig(n_restarts=args.restarts, rng_seed=args.seed)
    model = fit(train, config, mpos=args.mpos, corr_on=args.corr_on)
    ds.save_model(model, args.model_out)
    stats, rep = model.training_stats, model.observables.fit_report
    report = {
        "model": str(args.model_out),
        "fit_rows": len(train),
        "stats": stats.to_dict(),
        "fit_report": rep.to_dict(),
        "angles": ds.model_to_dict(model)["angles"],
    }
    lines = [
        f"fitted on {len(train)} rows ({args.fit_on})",
        f"pos_rate {stats.pos_rate:.4f}",
        "modality pos rate  " + "  ".join(f"{m}={v:.4f}" for m, v in zip("lva", stats.modality_pos_rate)),
        "pairwise corr      " + "  ".join(
            f"{k}={v:.4f}" for k, v in report["stats"]["pairwise_corr"].items()),
        f"fit residual SSQ {rep.best_residual_ssq:.3e} ({'converged' if rep.converged else 'NOT converged'},"
        f" {rep.restarts_run} restarts)",
        *stats.warnings,
        f"model written to {args.model_out}",
    ]
    _emit(args, report, "\n".join(lines))
    return EXIT_OK if rep.converged else EXIT_WARN


def _load_model(path: str) -> ds.FusionModel:
    return ds.load_model(_existing(path, "model file"))


def _predict_config(model: ds.FusionModel, args: argparse.Namespace) -> SolverConfig:
    config = model.solver_config
    if args.restarts is not None:
        config = replace(config, n_restarts=args.restarts)
    if args.seed is not None:
        config = replace(config, rng_seed=args.seed)
    return config


def _test_rows(records: Sequence[ds.Record], split: str, path: str) -> list[ds.Record]:
    rows = ds.select_splits(records, (split,))
    if not rows:
        raise UsageError(f"{path}: no {split} rows")
    return rows


def _fused_labels(predictions, rows, fallback: str) -> list[int]:
    if fallback == "soft-vote":
        return [p.label if p.converged else soft_vote(r.probs) for p, r in zip(predictions, rows)]
    return [p.label for p in predictions]


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    rows = _test_rows(ds.load_csv(_existing(args.data, "data file"), args.raw_scores), args.split, args.data)
    config = _predict_config(model, args)
    predictions = predict_many(model, [r.probs for r in rows], config, workers=args.workers)
    fused = _fused_labels(predictions, rows, args.fallback)
    ds.save_predictions(predictions, rows, args.out, fused)
    unconverged = sum(not p.converged for p in predictions)
    report = {"out": str(args.out), "rows": len(rows), "non_converged": unconverged,
              "restarts": config.n_restarts, "fallback": args.fallback}
    _emit(args, report, f"predicted {len(rows)} rows ({unconverged} non-converged) -> {args.out}")
    return EXIT_WARN if unconverged else EXIT_OK


def _vote_weights(args, model, records) -> tuple[float, float, float]:
    if args.weights is not None:
        return args.weights
    if model is not None:
        return model.training_stats.modality_accuracy
    train = ds.select_splits(records, FIT_SPLITS["train+valid"])
    if not train:
        return (1.0, 1.0, 1.0)
    return tuple(
        sum(r.probs.hard()[k] == r.label for r in train) / len(train) for k in range(3)
    )


def cmd_eval(args: argparse.Namespace) -> int:
    if (args.predictions is None) == (args.model is None):
        raise UsageError("give exactly one of --predictions or --model")
    records = ds.load_csv(_existing(args.data, "data file"), args.raw_scores)
    rows = _test_rows(records, args.split, args.data)
    labels = [r.label for r in rows]
    model = None
    unconverged = 0
    if args.predictions is not None:
        by_id = {p.id: p for p in ds.load_predictions(_existing(args.predictions, "predictions file"))}
        missing = [r.id for r in rows if r.id not in by_id]
        if missing:
            raise UsageError(f"{len(missing)} {args.split} row(s) have no prediction, e.g. {missing[0]!r}")
        fused = [by_id[r.id].fused_label for r in rows]
        unconverged = sum(not by_id[r.id].converged for r in rows)
    else:
        model = _load_model(args.model)
        predictions = predict_many(model, [r.probs for r in rows], _predict_config(model, args), args.workers)
        fused = _fused_labels(predictions, rows, args.fallback)
        unconverged = sum(not p.converged for p in predictions)

    weights = _vote_weights(args, model, records)
    results = {
        "quantum-fusion": evaluate(fused, labels),
        "hard-vote": evaluate([hard_vote(r.probs) for r in rows], labels),
        "weighted-vote": evaluate([weighted_vote(r.probs, weights) for r in rows], labels),
        "soft-vote": evaluate([soft_vote(r.probs) for r in rows], labels),
    }
    report = {
        "rows": len(rows),
        "split": args.split,
        "non_converged": unconverged,
        "weights": dict(zip("lva", weights)),
        "metrics": {k: m.to_dict() for k, m in results.items()},
    }
    lines = [f"{len(rows)} {args.split} rows ({unconverged} non-converged fusion fits)",
             f"{'method':<16}{'Acc2':>7}{'F1':>7}{'F1w':>7}{'TN':>6}{'FP':>6}{'FN':>6}{'TP':>6}"]
    for name, m in results.items():
        (tn, fp), (fn, tp) = m.confusion
        lines.append(f"{name:<16}{m.acc2:>7.3f}{m.f1_pos:>7.3f}{m.f1_weighted:>7.3f}"
                     f"{tn:>6}{fp:>6}{fn:>6}{tp:>6}")
    lines.append("weighted-vote weights: " + ", ".join(f"{m}={w:.4f}" for m, w in zip("lva", weights)))
    _emit(args, report, "\n".join(lines))
    return EXIT_OK


def cmd_oracle_check(args: argparse.Namespace) -> int:
    if args.resolution < 2:
        raise UsageError("--resolution must be at least 2")
    if args.samples < 1:
        raise UsageError("--samples must be at least 1")
    model = _load_model(args.model)
    rows = _test_rows(ds.load_csv(_existing(args.data, "data file"), args.raw_scores), args.split, args.data)
    rows = rows[: args.samples]
    config = _predict_config(model, args)
    worst = float("-inf")
    checks = []
    for r in rows:
        state = estimate_utterance_state(r.probs, model.observables, config)
        _, oracle_ssq = grid_oracle(utterance_system(r.probs.clamped(), model.observables), args.resolution)
        solver_ssq = state.solve_report.best_residual_ssq
        violation = solver_ssq - oracle_ssq
        worst = max(worst, violation)
        checks.append({"id": r.id, "solver_ssq": solver_ssq, "oracle_ssq": oracle_ssq})
    ok = worst <= ORACLE_SLACK
    report = {"samples": len(rows), "resolution": args.resolution, "max_violation": worst,
              "passed": ok, "checks": checks}
    _emit(args, report, f"checked {len(rows)} samples at grid resolution {args.resolution}: "
          f"max(solver SSQ - oracle SSQ) = {worst:.3e} -> {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_ERROR


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qfusion", description="Quantum-cognition decision-level sentiment fusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True):
        p.add_argument("--json", action="store_true", help="machine-readable report on stdout")
        if data:
            p.add_argument("--raw-scores", action="store_true",
                           help="label column holds raw sentiment scores (>= 0 is positive)")

    def predicting(p):
        p.add_argument("--split", default="test", choices=ds.SPLITS)
        p.add_argument("--restarts", type=int, default=None, help="per-sample restarts (default: model's)")
        p.add_argument("--seed", type=int, default=None, help="solver seed (default: model's)")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    p.add_argument("out")
    p.add_argument("--n-train", type=int, default=1284)
    p.add_argument("--n-valid", type=int, default=686)
    p.add_argument("--n-test", type=int, default=229)
    p.add_argument("--pos-fraction", type=float, default=0.5)
    p.add_argument("--accuracy", type=_floats3, default=(0.77, 0.55, 0.56), help="L,V,A accuracies")
    p.add_argument("--agreement", type=float, default=0.5)
    p.add_argument("--concentration", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=None)
    common(p, data=False)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="estimate modality observables")
    p.add_argument("data")
    p.add_argument("model_out")
    p.add_argument("--fit-on", choices=tuple(FIT_SPLITS), default="train+valid")
    p.add_argument("--mpos", choices=MPOS_MODES, default="pred-rate")
    p.add_argument("--corr-on", choices=CORR_MODES, default="hard")
    p.add_argument("--restarts", type=int, default=200)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="fused predictions for one split")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("out")
    predicting(p)
    p.add_argument("--fallback", choices=("none", "soft-vote"), default="none")
    p.add_argument("--workers", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="metrics for the fusion model and voting baselines")
    p.add_argument("data")
    p.add_argument("--predictions")
    p.add_argument("--model")
    predicting(p)
    p.add_argument("--fallback", choices=("none", "soft-vote"), default="none")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--weights", type=_floats3, default=None, help="weighted-vote weights L,V,A")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="compare utterance fits against a grid search")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--resolution", type=int, default=61)
    p.add_argument("--samples", type=int, default=50)
    predicting(p)
    common(p)
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("synth", "fit") and args.seed is None:
            args.seed = _default_seed()
        if getattr(args, "restarts", None) is not None and args.restarts < 1:
            raise UsageError("--restarts must be at least 1")
        return args.func(args)
    except (UsageError, ds.DataError, FitError, SolverFailure, ValueError, OSError) as exc:
        print(f"qfusion {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
