"""The ProBoost cascade: train, score epistemic uncertainty, reshape the data.

Each level trains a fresh learner on the current training set, scores every
training sample by its MC variance and hands a transformed set to the next
level. The three transforms are

* ``undersampled`` - drop the least uncertain samples so the final level
  keeps roughly ``tau`` of the data;
* ``oversampled`` - duplicate the most uncertain ``tau`` fraction;
* ``weighted`` - add one to the loss weight of the most uncertain ``tau``
  fraction.

All selections use a stable ascending sort of the scores, and ``int(...)``
positions are floors.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset
from .errors import DataError, FormatError, InvalidParameter
from .nn.model import load_learner, save_learner
from .nn.training import TrainConfig, train
from .numerics import PrngStream, permutation, stable_argsort_ascending
from .uncertainty import UncertaintyConfig, epistemic_variance, mc_predict

logger = logging.getLogger(__name__)

VARIANTS = ("undersampled", "oversampled", "weighted")
_VARIANT_ALIASES = {"under": "undersampled", "over": "oversampled", "weight": "weighted"}


@dataclass(frozen=True)
class BoostConfig:
    variant: str = "weighted"
    levels: int = 4
    tau: float = 0.25
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        variant = _VARIANT_ALIASES.get(self.variant, self.variant)
        if variant not in VARIANTS:
            raise InvalidParameter(f"unknown variant {self.variant!r}")
        object.__setattr__(self, "variant", variant)
        if self.levels < 1:
            raise InvalidParameter("levels must be >= 1")
        if not 0.0 < self.tau < 1.0:
            raise InvalidParameter("tau must be in (0, 1)")


@dataclass
class LevelTrace:
    """What one level saw: original-sample ids, weights and (if scored) uncertainty."""

    size: int
    origin: np.ndarray
    weights: np.ndarray
    uncertainty: np.ndarray | None = None
    selected: np.ndarray | None = None  # origin ids promoted/kept by this level's transform


@dataclass
class BoostedModel:
    learners: list
    sizes: list
    config: BoostConfig
    traces: list = field(default_factory=list)

    @property
    def levels(self):
        return len(self.learners)


def reduction_factor(tau, levels):
    """Per-level retention ``tau ** (1 / (levels - 1))``."""
    if levels < 2:
        raise InvalidParameter("the reduction factor needs at least two levels")
    if not 0.0 < tau < 1.0:
        raise InvalidParameter("tau must be in (0, 1)")
    return tau ** (1.0 / (levels - 1))


def div_value(tau, levels):
    return 1.0 / (1.0 - reduction_factor(tau, levels))


def _check_scores(d, u):
    u = np.asarray(getattr(u, "u", u), dtype=np.float64)
    if u.shape != (len(d),):
        raise InvalidParameter(f"{u.size} scores for {len(d)} samples")
    return u


def _top_start(n, tau):
    return int(math.floor(n * (1.0 - tau)))


def undersample_indices(u, divisor, stream):
    n = len(u)
    if not divisor > 1:
        raise InvalidParameter("divValue must be > 1")
    order = stable_argsort_ascending(u)
    cut = 0 if math.isinf(divisor) else int(math.floor(n / divisor))
    keep = order[cut:]
    if keep.size == 0:
        raise DataError("undersampling left no samples")
    return keep[permutation(stream, keep.size)]


def oversample_indices(u, tau, stream):
    """Shuffled indices of the grown set, and the duplicated segment."""
    n = len(u)
    order = stable_argsort_ascending(u)
    segment = order[_top_start(n, tau):]
    combined = np.concatenate([np.arange(n, dtype=np.int64), segment])
    return combined[permutation(stream, combined.size)], segment


def weight_increment(u, weights, tau):
    order = stable_argsort_ascending(u)
    top = order[_top_start(len(u), tau):]
    w = np.array(weights, dtype=np.float64)
    w[top] += 1.0
    return w, top


def undersample_step(d: Dataset, u, divisor, stream: PrngStream) -> Dataset:
    """Drop the ``floor(len / divisor)`` least uncertain samples and shuffle the rest."""
    return d.subset(undersample_indices(_check_scores(d, u), divisor, stream))


def oversample_step(d: Dataset, u, tau, stream: PrngStream) -> Dataset:
    """Append copies of the samples from sorted position ``floor(len*(1-tau))`` on, then shuffle."""
    if not 0.0 < tau < 1.0:
        raise InvalidParameter("tau must be in (0, 1)")
    return d.subset(oversample_indices(_check_scores(d, u), tau, stream)[0])


def weight_step(d: Dataset, u, tau, stream: PrngStream) -> Dataset:
    """Add one to the weights of the most uncertain samples; co-shuffle samples and weights."""
    if not 0.0 < tau < 1.0:
        raise InvalidParameter("tau must be in (0, 1)")
    w, _ = weight_increment(_check_scores(d, u), d.weights, tau)
    perm = permutation(stream, len(d))
    return Dataset(d.features[perm], d.labels[perm], w[perm])


def run_proboost(d: Dataset, cfg: BoostConfig, learner_factory, stream: PrngStream | None = None) -> BoostedModel:
    """Train the full cascade of ``cfg.levels`` learners.

    ``learner_factory(stream)`` must return a freshly initialised learner,
    drawing its initial parameters from ``stream``.
    """
    if len(d) == 0:
        raise DataError("training set is empty")
    stream = stream or PrngStream(cfg.seed)
    V = cfg.levels
    divisor = div_value(cfg.tau, V) if cfg.variant == "undersampled" and V > 1 else None
    origin = np.arange(len(d), dtype=np.int64)
    learners, sizes, traces = [], [], []
    for level in range(1, V + 1):
        ls = stream.child("level", level)
        sizes.append(len(d))
        trace = LevelTrace(len(d), origin.copy(), d.weights.copy())
        try:
            learner = learner_factory(ls.child("init"))
            learner, _ = train(learner, d, cfg.train, ls.child("train"))
        except DataError as exc:
            raise DataError(f"level {level}: {exc}") from exc
        learners.append(learner)
        traces.append(trace)
        logger.info("level %d/%d trained on %d samples", level, V, len(d))
        if level == V:
            break
        dist = mc_predict(learner, d.features, cfg.uncertainty, ls.child("mc"))
        u = epistemic_variance(dist).u
        trace.uncertainty = u
        shuffle = ls.child("shuffle")
        if cfg.variant == "undersampled":
            try:
                idx = undersample_indices(u, divisor, shuffle)
            except DataError as exc:
                raise DataError(f"level {level}: {exc}") from exc
            trace.selected = origin[np.sort(idx)]
            d, origin = d.subset(idx), origin[idx]
        elif cfg.variant == "oversampled":
            idx, segment = oversample_indices(u, cfg.tau, shuffle)
            trace.selected = origin[np.sort(segment)]
            d, origin = d.subset(idx), origin[idx]
        else:
            w, top = weight_increment(u, d.weights, cfg.tau)
            trace.selected = origin[np.sort(top)]
            perm = permutation(shuffle, len(d))
            d = Dataset(d.features[perm], d.labels[perm], w[perm])
            origin = origin[perm]
    return BoostedModel(learners, sizes, cfg, traces)


def save_boosted(model: BoostedModel, directory) -> Path:
    """Directory of per-level learner checkpoints plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for v, learner in enumerate(model.learners, start=1):
        name = f"level_{v:02d}.npz"
        save_learner(learner, directory / name)
        files.append(name)
    cfg = model.config
    manifest = {
        "format": "proboost-boosted",
        "version": 1,
        "variant": cfg.variant,
        "tau": cfg.tau,
        "levels": cfg.levels,
        "seed": cfg.seed,
        "sizes": list(model.sizes),
        "uncertainty": asdict(cfg.uncertainty),
        "train": asdict(cfg.train),
        "learners": files,
    }
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    tmp.replace(directory / "manifest.json")
    return directory


def load_boosted(directory) -> BoostedModel:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read boosted-model manifest in {directory}: {exc}") from exc
    if manifest.get("format") != "proboost-boosted":
        raise FormatError(f"{directory} is not a boosted-model checkpoint")
    cfg = BoostConfig(
        variant=manifest["variant"],
        levels=manifest["levels"],
        tau=manifest["tau"],
        uncertainty=UncertaintyConfig(**manifest["uncertainty"]),
        train=TrainConfig(**manifest["train"]),
        seed=manifest["seed"],
    )
    learners = [load_learner(directory / f) for f in manifest["learners"]]
    return BoostedModel(learners, manifest["sizes"], cfg)
