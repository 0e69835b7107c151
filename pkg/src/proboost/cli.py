"""Command-line entry point: ``proboost <command> [flags]``.

Commands
--------
prepare-data  build the cached contaminated dataset described by ``--config``
train         run every missing (cell, repetition) and append result records
evaluate      score saved cascades (``train --save-models``) on the test split
report        summary, paired-comparison and ROI tables from the records
demo-iris     per-sample weight/uncertainty trace of a weighted cascade on Iris

Exit codes: 0 ok, 1 internal error, 2 missing input, 3 invalid config.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import experiment as exp
from .boosting import load_boosted
from .ensemble import combine, level_probabilities
from .errors import DataError, FormatError, InvalidParameter, ProBoostError, UnsupportedConfiguration
from .evaluation import evaluate_predictions
from .nn.training import TrainConfig
from .numerics import PrngStream

EXIT_OK, EXIT_INTERNAL, EXIT_MISSING, EXIT_CONFIG = 0, 1, 2, 3

logger = logging.getLogger("proboost")

_VARIANT_FLAGS = {"under": "undersampled", "over": "oversampled", "weighted": "weighted"}


class ConfigError(Exception):
    pass


def _levels(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be integers, got {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError("at least one level count is required")
    return values


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
    p.add_argument("--seed", type=int, help="base seed (u64)")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _cell_flags(p):
    p.add_argument("--reps", type=int, help="repetitions per cell")
    p.add_argument("--variant", choices=sorted(_VARIANT_FLAGS))
    p.add_argument("--levels", type=_levels, help="level count V, or a comma list such as 1,2,4")
    p.add_argument("--learner", choices=sorted(exp.LEARNER_FAMILIES))
    p.add_argument("--weights", choices=exp.WEIGHT_SCHEMES)


def build_parser():
    parser = argparse.ArgumentParser(prog="proboost", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-data", help="build the cached contaminated dataset")
    _common(p)

    p = sub.add_parser("train", help="train and evaluate all pending cells")
    _common(p)
    _cell_flags(p)
    p.add_argument("--save-models", action="store_true", help="keep per-level checkpoints for 'evaluate'")

    p = sub.add_parser("evaluate", help="score saved cascades on the test split")
    _common(p)
    _cell_flags(p)

    p = sub.add_parser("report", help="summary and comparison tables")
    _common(p)
    p.add_argument("--baseline", required=True, help="cell id or key=value[,key=value] selector")
    p.add_argument("--treatment", required=True, help="cell id or key=value[,key=value] selector")

    p = sub.add_parser("demo-iris", help="weight/uncertainty trace on two Iris features")
    _common(p)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--mc-samples", type=int, default=50)
    return parser


def load_config(args) -> exp.ExperimentConfig:
    try:
        cfg = exp.ExperimentConfig.from_file(args.config) if args.config else exp.ExperimentConfig()
    except FileNotFoundError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    overrides = {}
    for flag, key in (("seed", "seed"), ("reps", "repetitions"), ("learner", "learner"), ("weights", "weights")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "variant", None):
        overrides["variant"] = _VARIANT_FLAGS[args.variant]
    if getattr(args, "levels", None):
        overrides["levels"] = args.levels
    if getattr(args, "out", None):
        overrides["out_dir"] = str(args.out)
    try:
        return replace(cfg, **overrides)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_prepare_data(args):
    cfg = load_config(args)
    prepared = exp.prepare_data(cfg)
    print(json.dumps({"cache": str(exp.data_cache_dir(cfg)), **prepared.manifest}, indent=2, sort_keys=True))


def cmd_train(args):
    cfg = load_config(args)
    prepared = exp.prepare_data(cfg)
    records = exp.run_experiment(cfg, prepared, save_models=args.save_models)
    if not records:
        print("all cells complete; nothing to do")
    for r in records:
        print(f"{r.run_id}  acc={r.metrics['acc']:.4f}  sizes={r.sizes}")


def cmd_evaluate(args):
    cfg = load_config(args)
    prepared = exp.prepare_data(cfg)
    models = Path(cfg.out_dir) / "models"
    dirs = sorted(d for d in models.glob(f"{cfg.learner}-{cfg.variant}-V*-*") if (d / "manifest.json").exists())
    if not dirs:
        raise FileNotFoundError(f"no saved cascades under {models}; run 'train --save-models' first")
    test, train = prepared.test, prepared.train
    for d in dirs:
        boosted = load_boosted(d)
        stream = PrngStream(boosted.config.seed)
        unc = cfg.uncertainty()
        test_probs = level_probabilities(boosted, test.features, unc, stream.child("test"))
        train_probs = level_probabilities(boosted, train.features, unc, stream.child("vw"))
        for V in cfg.levels:
            if V > boosted.levels:
                continue
            weights = exp.choose_weights(cfg.weights, train_probs[:V], train.labels, test_probs[:V], test.labels,
                                         cfg.vwo_candidates, PrngStream(boosted.config.seed).child("vwo", V))
            labels, scores = combine(test_probs[:V], weights.psi)
            report = evaluate_predictions(test.labels, labels, scores / weights.psi.sum(), test_probs.shape[-1])
            metrics = " ".join(f"{k}={v:.4f}" for k, v in report.as_dict().items())
            print(f"{d.name}  V={V}  {cfg.weights}  {metrics}")


def cmd_report(args):
    out = args.out or (Path(load_config(args).out_dir) if args.config else None)
    if out is None or not (Path(out) / "records").is_dir():
        raise FileNotFoundError(f"no records directory under {out}")
    print(exp.report(out, args.baseline, args.treatment))


def cmd_demo_iris(args):
    seed = args.seed if args.seed is not None else 0
    train_cfg = TrainConfig(seed=seed)
    if args.config:
        raw = json.loads(Path(args.config).read_text())
        train_cfg = TrainConfig(**{k: v for k, v in raw.items() if k in TrainConfig.__dataclass_fields__})
    rows, boosted = exp.iris_trace(seed, args.levels, mc_samples=args.mc_samples, train_cfg=train_cfg)
    fields = list(rows[0])
    out = args.out
    if out:
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "iris_trace.csv", "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
    labels = np.array([r["class"] for r in rows])
    for v in range(1, args.levels + 1):
        w = np.array([r[f"weight_L{v}"] for r in rows])
        per_class = ", ".join(f"class {c}: {int((w[labels == c] > 1).sum())}" for c in range(3))
        print(f"level {v}: samples with weight > 1 -> {per_class}")
    if out:
        print(f"trace written to {out / 'iris_trace.csv'}")


COMMANDS = {
    "prepare-data": cmd_prepare_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
    "demo-iris": cmd_demo_iris,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, InvalidParameter, UnsupportedConfiguration, json.JSONDecodeError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING if isinstance(exc, FormatError) else EXIT_INTERNAL
    except ProBoostError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001 - last-resort mapping to the documented exit code
        logger.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
