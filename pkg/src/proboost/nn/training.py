"""Mini-batch ADAM training with a stratified validation split and early stopping."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from ..dataset import Dataset
from ..errors import DataError, InvalidParameter
from ..numerics import PrngStream, permutation
from .losses import elbo_loss, weighted_nll_from_logits
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    max_epochs: int = 300
    patience: int = 10
    validation_fraction: float = 0.30
    learning_rate: float = 1e-3
    mc_samples: int = 1  # posterior draws per ELBO evaluation (vi only)
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise InvalidParameter("batch_size must be >= 1")
        if self.max_epochs < 1:
            raise InvalidParameter("max_epochs must be >= 1")
        if self.patience < 1:
            raise InvalidParameter("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise InvalidParameter("validation_fraction must be in (0, 1)")
        if not self.learning_rate > 0:
            raise InvalidParameter("learning_rate must be positive")
        if self.mc_samples < 1:
            raise InvalidParameter("mc_samples must be >= 1")


@dataclass
class TrainHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0


class EarlyStopping:
    """Tracks the best validation loss; signals a stop after ``patience`` misses."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.best_state = None
        self.misses = 0

    def update(self, epoch, loss, state_fn) -> bool:
        if loss < self.best:
            self.best, self.best_epoch, self.misses = loss, epoch, 0
            self.best_state = state_fn()
            return False
        self.misses += 1
        return self.misses >= self.patience


def stratified_split(labels, fraction, stream: PrngStream):
    """Per-class random split; returns sorted (train_idx, val_idx)."""
    labels = np.asarray(labels, dtype=np.int64)
    train, val = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[permutation(stream.child("split", int(c)), idx.size)]
        n_val = int(round(fraction * idx.size))
        if n_val == idx.size:
            raise DataError(f"class {c} has no training samples left after the validation split")
        val.append(idx[:n_val])
        train.append(idx[n_val:])
    train = np.sort(np.concatenate(train)) if train else np.zeros(0, dtype=np.int64)
    val = np.sort(np.concatenate(val)) if val else np.zeros(0, dtype=np.int64)
    if train.size == 0 or val.size == 0:
        raise DataError(f"split produced {train.size} training and {val.size} validation samples")
    return train, val


def validation_loss(learner, data: Dataset):
    logits = learner.logits(data.features)
    loss, _ = weighted_nll_from_logits(logits, data.labels, data.weights)
    return loss


def train(learner, dataset: Dataset, cfg: TrainConfig = TrainConfig(), stream: PrngStream | None = None):
    """Fit ``learner`` in place; returns ``(learner, history)``.

    The parameters from the epoch with the lowest validation loss are
    restored before returning.
    """
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    stream = stream or PrngStream(cfg.seed)
    tr_idx, va_idx = stratified_split(dataset.labels, cfg.validation_fraction, stream)
    tr, va = dataset.subset(tr_idx), dataset.subset(va_idx)
    n_batches = -(-len(tr) // cfg.batch_size)
    params = {key: value for key, value in learner.parameters()}
    opt = AdamState()
    stopper = EarlyStopping(cfg.patience)
    history = TrainHistory()

    for epoch in range(1, cfg.max_epochs + 1):
        order = permutation(stream.child("epoch", epoch), len(tr))
        running = 0.0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            xb, yb, wb = tr.features[idx], tr.labels[idx], tr.weights[idx]
            step_stream = stream.child("step", epoch, b)
            if learner.mode == "vi":
                loss, grads = elbo_loss(learner, xb, yb, wb, cfg.mc_samples, step_stream, kl_scale=1.0 / n_batches)
            else:
                noise = learner.sample_noise(len(idx), step_stream) if learner.is_stochastic else None
                loss, g = weighted_nll_from_logits(learner.logits(xb, noise), yb, wb)
                learner.backward(g)
                grads = learner.gradients()
            adam_step(opt, params, grads, cfg.learning_rate)
            running += loss
        history.train_loss.append(running / n_batches)
        vloss = validation_loss(learner, va)
        history.val_loss.append(vloss)
        history.stopped_epoch = epoch
        if stopper.update(epoch, vloss, learner.get_state):
            break
    learner.set_state(stopper.best_state)
    history.best_epoch = stopper.best_epoch
    logger.debug("trained %s: best epoch %d of %d", learner.mode, history.best_epoch, history.stopped_epoch)
    return learner, history
