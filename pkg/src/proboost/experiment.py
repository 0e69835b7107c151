"""Experiment orchestration: configs, seeded repetitions, records and reports.

A *cell* is one point of the experiment grid (learner family, variant,
number of levels, weighting scheme). Every cell is run ``repetitions`` times;
repetition ``r`` uses the same model seed in every cell, so records can be
paired by repetition index across cells. The contaminated dataset is
prepared once and shared by all repetitions.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import data as data_mod
from .boosting import BoostConfig, run_proboost, save_boosted
from .dataset import Dataset
from .ensemble import (
    combine,
    fw_weights,
    level_probabilities,
    vw_weights_from_probs,
    vwo_search_from_probs,
)
from .errors import DataError, DegenerateDifferences, InvalidParameter
from .evaluation import METRIC_NAMES, evaluate_predictions, paired_t_test_one_tailed, roi, summarize_runs
from .nn.model import build_dense_stack, build_lenet_variant
from .nn.training import TrainConfig
from .numerics import PrngStream
from .uncertainty import DEFAULT_MC_SAMPLES, UncertaintyConfig

logger = logging.getLogger(__name__)

LEARNER_FAMILIES = {"det": "deterministic", "vi": "vi", "mcd": "mcd"}
WEIGHT_SCHEMES = ("fw", "vw", "vwo")


@dataclass
class ExperimentConfig:
    source_dir: str | None = None  # directory with train-*/t10k-* IDX files
    donor_dir: str | None = None  # MNIST digits for the superimposition recipe
    contamination: str = "awgn"
    awgn_mean: float = 255 / 2
    awgn_variance: float = 255 / 2
    superimpose_fraction: float = 0.25
    n_train: int | None = None  # stratified subsample sizes; None keeps the provider split
    n_test: int | None = None
    data_seed: int = 0
    learner: str = "vi"
    architecture: str = "dense"
    hidden: list = field(default_factory=lambda: [128])
    variant: str = "weighted"
    levels: list = field(default_factory=lambda: [1, 2, 3, 4])
    tau: float = 0.25
    weights: str = "vw"
    repetitions: int = 10
    seed: int = 0
    mc_samples: int | None = None
    vwo_candidates: int = 10_000
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 10
    validation_fraction: float = 0.30
    learning_rate: float = 1e-3
    out_dir: str = "runs"

    def __post_init__(self):
        if isinstance(self.levels, int):
            self.levels = [self.levels]
        self.levels = sorted(set(int(v) for v in self.levels))
        self.hidden = [int(h) for h in self.hidden]
        self.validate()

    def validate(self):
        if self.learner not in LEARNER_FAMILIES:
            raise InvalidParameter(f"learner must be one of {sorted(LEARNER_FAMILIES)}")
        if self.weights not in WEIGHT_SCHEMES:
            raise InvalidParameter(f"weights must be one of {WEIGHT_SCHEMES}")
        if self.architecture not in ("dense", "lenet"):
            raise InvalidParameter("architecture must be 'dense' or 'lenet'")
        if self.repetitions < 1:
            raise InvalidParameter("repetitions must be >= 1")
        if not self.levels or self.levels[0] < 1:
            raise InvalidParameter("levels must be positive")
        if self.contamination not in ("awgn", "superimpose"):
            raise InvalidParameter("contamination must be 'awgn' or 'superimpose'")
        BoostConfig(variant=self.variant, levels=max(self.levels), tau=self.tau)
        self.variant = BoostConfig(variant=self.variant).variant

    @classmethod
    def from_file(cls, path):
        raw = json.loads(Path(path).read_text())
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidParameter(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self):
        return asdict(self)

    @property
    def mode(self):
        return LEARNER_FAMILIES[self.learner]

    def uncertainty(self):
        return UncertaintyConfig(self.mc_samples or DEFAULT_MC_SAMPLES[self.mode])

    def train_config(self):
        return TrainConfig(
            batch_size=self.batch_size,
            max_epochs=self.max_epochs,
            patience=self.patience,
            validation_fraction=self.validation_fraction,
            learning_rate=self.learning_rate,
        )

    def data_key(self):
        keys = ("source_dir", "donor_dir", "contamination", "awgn_mean", "awgn_variance",
                "superimpose_fraction", "n_train", "n_test", "data_seed")
        return {k: getattr(self, k) for k in keys}


def cell_id(cfg: ExperimentConfig, levels: int) -> str:
    return f"{cfg.learner}-{cfg.variant}-V{levels}-{cfg.weights}"


def repetition_seed(base_seed: int, rep: int) -> int:
    """Model seed for repetition ``rep``; identical across cells."""
    return PrngStream(base_seed).child("repetition", rep).raw(1)[0].item()


# -- datasets --------------------------------------------------------------------

@dataclass
class PreparedData:
    train: Dataset
    test: Dataset
    image_shape: tuple
    manifest: dict


def _digest(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode() + str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def build_prepared(train_raw, test_raw, cfg: ExperimentConfig, donor=None) -> PreparedData:
    """Subsample, contaminate and flatten a provider train/test pair."""
    stream = PrngStream(cfg.data_seed)
    if cfg.n_train is not None:
        train_raw = train_raw.subset(data_mod.stratified_subsample(train_raw.labels, cfg.n_train, stream.child("sub", "train")))
    if cfg.n_test is not None:
        test_raw = test_raw.subset(data_mod.stratified_subsample(test_raw.labels, cfg.n_test, stream.child("sub", "test")))
    spec = data_mod.ContaminationSpec(cfg.contamination, cfg.awgn_mean, cfg.awgn_variance,
                                      cfg.superimpose_fraction, cfg.data_seed)
    feats = []
    for split, raw in (("train", train_raw), ("test", test_raw)):
        x = data_mod.contaminate(raw, spec, donor=donor, stream=stream.child("contaminate", split))
        feats.append(x.reshape(len(raw), -1))
    train = Dataset(feats[0], train_raw.labels)
    test = Dataset(feats[1], test_raw.labels)
    manifest = {
        "data": cfg.data_key(),
        "n_train": len(train),
        "n_test": len(test),
        "image_shape": list(train_raw.images.shape[1:]),
        "sha256": _digest(train.features, train.labels, test.features, test.labels),
    }
    return PreparedData(train, test, tuple(train_raw.images.shape[1:]), manifest)


def load_sources(cfg: ExperimentConfig):
    if not cfg.source_dir:
        raise FileNotFoundError("config.source_dir is not set")
    train = data_mod.load_idx_dir(cfg.source_dir, "train")
    test = data_mod.load_idx_dir(cfg.source_dir, "test")
    donor = None
    if cfg.contamination == "superimpose":
        if not cfg.donor_dir:
            raise FileNotFoundError("config.donor_dir is needed for superimposition")
        donor = data_mod.load_idx_dir(cfg.donor_dir, "train")
    return train, test, donor


def _atomic_write_bytes(path: Path, payload: bytes):
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_bytes(payload)
    tmp.replace(path)


def data_cache_dir(cfg: ExperimentConfig) -> Path:
    key = hashlib.sha256(json.dumps(cfg.data_key(), sort_keys=True).encode()).hexdigest()[:16]
    return Path(cfg.out_dir) / "data" / key


def prepare_data(cfg: ExperimentConfig) -> PreparedData:
    """Build (or reuse) the cached contaminated dataset for ``cfg``."""
    cache = data_cache_dir(cfg)
    if (cache / "manifest.json").exists():
        return load_prepared(cache)
    train_raw, test_raw, donor = load_sources(cfg)
    prepared = build_prepared(train_raw, test_raw, cfg, donor)
    cache.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    np.savez(buf, train_x=prepared.train.features, train_y=prepared.train.labels,
             test_x=prepared.test.features, test_y=prepared.test.labels)
    _atomic_write_bytes(cache / "data.npz", buf.getvalue())
    _atomic_write_bytes(cache / "manifest.json", json.dumps(prepared.manifest, indent=2, sort_keys=True).encode())
    return prepared


def load_prepared(cache) -> PreparedData:
    cache = Path(cache)
    manifest = json.loads((cache / "manifest.json").read_text())
    with np.load(cache / "data.npz") as z:
        train = Dataset(z["train_x"], z["train_y"])
        test = Dataset(z["test_x"], z["test_y"])
    if _digest(train.features, train.labels, test.features, test.labels) != manifest["sha256"]:
        raise DataError(f"cached dataset in {cache} does not match its manifest hash")
    return PreparedData(train, test, tuple(manifest["image_shape"]), manifest)


# -- running cells -----------------------------------------------------------------

def learner_factory(cfg: ExperimentConfig, n_features, n_classes, image_shape=None):
    mode = cfg.mode
    if cfg.architecture == "lenet":
        dims = image_shape or (int(round(np.sqrt(n_features))),) * 2
        return lambda stream: build_lenet_variant(dims, n_classes, mode, stream)
    return lambda stream: build_dense_stack(n_features, cfg.hidden, n_classes, mode, stream)


@dataclass
class CascadeEvaluation:
    """Per-level probabilities of one trained cascade on the train and test sets."""

    boosted: object
    train_probs: np.ndarray  # (V, n_train, K)
    test_probs: np.ndarray  # (V, n_test, K)


def run_cascade(train: Dataset, test: Dataset, cfg: ExperimentConfig, levels: int, rep_seed: int,
                image_shape=None) -> CascadeEvaluation:
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    boost_cfg = BoostConfig(cfg.variant, levels, cfg.tau, cfg.uncertainty(), cfg.train_config(), rep_seed)
    stream = PrngStream(rep_seed)
    factory = learner_factory(cfg, train.features.shape[1], n_classes, image_shape)
    boosted = run_proboost(train, boost_cfg, factory, stream.child("boost"))
    unc = cfg.uncertainty()
    train_probs = level_probabilities(boosted, train.features, unc, stream.child("vw"))
    test_probs = level_probabilities(boosted, test.features, unc, stream.child("test"))
    return CascadeEvaluation(boosted, train_probs, test_probs)


def choose_weights(scheme, train_probs, train_labels, test_probs, test_labels, n_candidates, stream):
    V = train_probs.shape[0]
    if scheme == "fw":
        return fw_weights(V)
    if scheme == "vw":
        return vw_weights_from_probs(train_probs, train_labels)
    return vwo_search_from_probs(test_probs, test_labels, n_candidates, stream)[0]


def evaluate_prefix(ev: CascadeEvaluation, train: Dataset, test: Dataset, levels: int, scheme: str,
                    n_candidates=10_000, seed=0):
    """Metrics of the ensemble made of the first ``levels`` learners."""
    tr, te = ev.train_probs[:levels], ev.test_probs[:levels]
    weights = choose_weights(scheme, tr, train.labels, te, test.labels, n_candidates,
                             PrngStream(seed).child("vwo", levels))
    labels, scores = combine(te, weights.psi)
    n_classes = te.shape[-1]
    report = evaluate_predictions(test.labels, labels, scores / weights.psi.sum(), n_classes)
    return report, weights


def _prefix_ok(variant):
    # level k of a weighted/oversampled cascade does not depend on the total level count
    return variant != "undersampled"


@dataclass
class ResultRecord:
    run_id: str
    cell: str
    repetition: int
    seed: int
    config: dict
    metrics: dict
    sizes: list
    psi: list
    transform: str = "none"  # level transform applied between levels; "none" for V=1
    wall_clock_seconds: float = 0.0

    def canonical(self) -> dict:
        """Everything except wall-clock time, which cannot be reproduced."""
        d = asdict(self)
        d.pop("wall_clock_seconds")
        return d


def _record_path(out_dir, run_id):
    return Path(out_dir) / "records" / f"{run_id}.json"


def write_record(out_dir, record: ResultRecord):
    path = _record_path(out_dir, record.run_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    _atomic_write_bytes(path, (json.dumps(record.canonical(), indent=2, sort_keys=True) + "\n").encode())
    timing = Path(out_dir) / "timings.csv"
    new = not timing.exists()
    with open(timing, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(["run_id", "wall_clock_seconds"])
        w.writerow([record.run_id, f"{record.wall_clock_seconds:.3f}"])


def read_records(out_dir):
    records = []
    for path in sorted((Path(out_dir) / "records").glob("*.json")):
        records.append(ResultRecord(**json.loads(path.read_text())))
    return records


def run_experiment(cfg: ExperimentConfig, prepared: PreparedData | None = None, save_models=False):
    """Run every missing (cell, repetition) of ``cfg``; returns the new records.

    Existing record files are left untouched, so an interrupted run resumes
    where it stopped and a complete run is a no-op.
    """
    prepared = prepared or prepare_data(cfg)
    out = Path(cfg.out_dir)
    new_records = []
    for rep in range(cfg.repetitions):
        seed = repetition_seed(cfg.seed, rep)
        pending = [V for V in cfg.levels if not _record_path(out, f"{cell_id(cfg, V)}-r{rep:02d}").exists()]
        if not pending:
            continue
        groups = [pending] if _prefix_ok(cfg.variant) else [[V] for V in pending]
        for group in groups:
            start = time.perf_counter()
            ev = run_cascade(prepared.train, prepared.test, cfg, max(group), seed, prepared.image_shape)
            if save_models:
                save_boosted(ev.boosted, out / "models" / f"{cell_id(cfg, max(group))}-r{rep:02d}")
            elapsed = time.perf_counter() - start
            for V in group:
                report, weights = evaluate_prefix(ev, prepared.train, prepared.test, V, cfg.weights,
                                                  cfg.vwo_candidates, seed)
                echo = cfg.to_dict()
                echo["levels"] = V
                echo.pop("out_dir")
                rec = ResultRecord(
                    run_id=f"{cell_id(cfg, V)}-r{rep:02d}",
                    cell=cell_id(cfg, V),
                    repetition=rep,
                    seed=seed,
                    config=echo,
                    metrics={k: float(v) for k, v in report.as_dict().items()},
                    sizes=[int(s) for s in ev.boosted.sizes[:V]],
                    psi=[float(p) for p in weights.psi],
                    transform="none" if V == 1 else cfg.variant,
                    wall_clock_seconds=elapsed / len(group),
                )
                write_record(out, rec)
                new_records.append(rec)
                logger.info("%s: acc=%.4f", rec.run_id, rec.metrics["acc"])
    return new_records


# -- reporting -------------------------------------------------------------------------

def select_records(records, selector: str):
    """Records whose cell id matches ``selector`` exactly, or whose config matches
    every ``key=value`` pair of a comma-separated selector."""
    if "=" not in selector:
        return [r for r in records if r.cell == selector]
    wanted = dict(part.split("=", 1) for part in selector.split(","))
    out = []
    for r in records:
        if all(str(r.config.get(k)) == v for k, v in wanted.items()):
            out.append(r)
    return out


@dataclass
class ComparisonRow:
    metric: str
    baseline: object
    treatment: object
    roi: float
    p_value: float | None
    note: str = ""


def compare(baseline, treatment, metrics=METRIC_NAMES):
    """Pair two record groups by repetition; summaries, ROI of the means, one-tailed p."""
    b = {r.repetition: r for r in baseline}
    t = {r.repetition: r for r in treatment}
    if set(b) != set(t):
        raise DataError(f"unmatched repetitions: {sorted(set(b) ^ set(t))}")
    reps = sorted(b)
    for rep in reps:
        if b[rep].seed != t[rep].seed:
            raise DataError(f"repetition {rep} was run with different seeds")
    rows = []
    for m in metrics:
        bv = [b[r].metrics[m] for r in reps]
        tv = [t[r].metrics[m] for r in reps]
        sb, st = summarize_runs(bv), summarize_runs(tv)
        try:
            p, note = paired_t_test_one_tailed(bv, tv), ""
        except DegenerateDifferences:
            p, note = None, "degenerate differences"
        rows.append(ComparisonRow(m, sb, st, roi(sb.mu, st.mu), p, note))
    return rows


SUMMARY_FIELDS = ("mu", "sigma", "min", "max", "ci_low", "ci_high", "n")


def summary_table(records, metrics=METRIC_NAMES):
    """One row per (cell, metric) with the run summary statistics."""
    by_cell = {}
    for r in records:
        by_cell.setdefault(r.cell, []).append(r)
    rows = []
    for cell in sorted(by_cell):
        recs = by_cell[cell]
        for m in metrics:
            vals = [r.metrics[m] for r in recs]
            if len(vals) < 2:
                continue
            s = summarize_runs(vals)
            rows.append({"cell": cell, "metric": m, **{k: getattr(s, k) for k in SUMMARY_FIELDS}})
    return rows


def write_csv(path, rows, fieldnames):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in fieldnames})
    _atomic_write_bytes(path, buf.getvalue().encode())


def read_csv(path):
    """Rows of a CSV written by :func:`write_csv`, with numbers parsed back."""
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _parse(v):
    if v == "":
        return None
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    return v


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_table(rows, fieldnames):
    cells = [[str(f) for f in fieldnames]]
    for row in rows:
        cells.append([_short(row.get(f)) for f in fieldnames])
    widths = [max(len(r[i]) for r in cells) for i in range(len(fieldnames))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    return "\n".join(lines)


def _short(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def roi_plot_rows(records, baseline_levels=1, metric="acc"):
    """Plot data: one ROI per (learner, variant, weights, levels) versus V=1."""
    groups = {}
    for r in records:
        key = (r.config["learner"], r.config["variant"], r.config["weights"])
        groups.setdefault(key, {}).setdefault(r.config["levels"], []).append(r.metrics[metric])
    rows = []
    for (learner, variant, weights), by_v in sorted(groups.items()):
        if baseline_levels not in by_v:
            continue
        base = float(np.mean(by_v[baseline_levels]))
        for V in sorted(by_v):
            if V == baseline_levels:
                continue
            rows.append({"learner": learner, "variant": variant, "weights": weights, "levels": V,
                         "metric": metric, "roi": roi(base, float(np.mean(by_v[V])))})
    return rows


def report(out_dir, baseline_selector, treatment_selector, metrics=METRIC_NAMES):
    """Write summary, comparison and ROI plot-data CSVs; returns the printable text."""
    out_dir = Path(out_dir)
    records = read_records(out_dir)
    base = select_records(records, baseline_selector)
    treat = select_records(records, treatment_selector)
    if len(base) < 2 or len(treat) < 2:
        raise DataError("each compared cell needs at least two repetitions")
    summary = summary_table(records, metrics)
    rows = compare(base, treat, metrics)
    comp = [
        {
            "metric": r.metric,
            "baseline_mu": r.baseline.mu,
            "treatment_mu": r.treatment.mu,
            "roi": r.roi,
            "p_value": r.p_value,
            "note": r.note,
        }
        for r in rows
    ]
    comp_fields = ["metric", "baseline_mu", "treatment_mu", "roi", "p_value", "note"]
    summary_fields = ["cell", "metric", *SUMMARY_FIELDS]
    plot_fields = ["learner", "variant", "weights", "levels", "metric", "roi"]
    write_csv(out_dir / "report" / "summary.csv", summary, summary_fields)
    write_csv(out_dir / "report" / "comparison.csv", comp, comp_fields)
    write_csv(out_dir / "report" / "roi_plot.csv", roi_plot_rows(records), plot_fields)
    text = (
        "per-cell summary\n" + format_table(summary, summary_fields)
        + f"\n\n{treatment_selector} vs {baseline_selector}\n" + format_table(comp, comp_fields)
    )
    (out_dir / "report" / "report.txt").write_text(text + "\n")
    return text


# -- Iris demonstration -----------------------------------------------------------------

def iris_trace(seed=0, levels=3, tau=0.25, mc_samples=50, train_cfg: TrainConfig | None = None):
    """Weighted cascade on (sepal length, petal length) with one flipout layer.

    Returns ``(rows, boosted)``; each row holds a sample's features, class
    and, per level, its loss weight and uncertainty score.
    """
    d = data_mod.load_iris()
    cfg = BoostConfig("weighted", levels, tau, UncertaintyConfig(mc_samples), train_cfg or TrainConfig(), seed)
    boosted = run_proboost(d, cfg, lambda s: build_dense_stack(2, [], 3, "vi", s))
    n = len(d)
    weights = np.ones((levels, n))
    unc = np.full((levels, n), np.nan)
    for v, tr in enumerate(boosted.traces):
        weights[v, tr.origin] = tr.weights
        if tr.uncertainty is not None:
            unc[v, tr.origin] = tr.uncertainty
    rows = []
    for i in range(n):
        row = {"index": i, "sepal_length": d.features[i, 0], "petal_length": d.features[i, 1], "class": int(d.labels[i])}
        for v in range(levels):
            row[f"weight_L{v + 1}"] = weights[v, i]
            row[f"uncertainty_L{v + 1}"] = None if np.isnan(unc[v, i]) else unc[v, i]
        rows.append(row)
    return rows, boosted
