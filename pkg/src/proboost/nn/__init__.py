"""Weak learners with hand-written backpropagation."""

from .layers import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    FlipoutDense,
    MaxPool2D,
    ReLU,
    Softmax,
    flipout_perturb,
    softplus,
    softplus_inv,
)
from .losses import elbo_loss, weighted_cross_entropy, weighted_nll_from_logits
from .model import WeakLearner, build_dense_stack, build_lenet_variant, load_learner, save_learner
from .optim import AdamState, adam_step
from .training import EarlyStopping, TrainConfig, TrainHistory, stratified_split, train

__all__ = [
    "AdamState",
    "Conv2D",
    "Dense",
    "Dropout",
    "EarlyStopping",
    "Flatten",
    "FlipoutDense",
    "MaxPool2D",
    "ReLU",
    "Softmax",
    "TrainConfig",
    "TrainHistory",
    "WeakLearner",
    "adam_step",
    "build_dense_stack",
    "build_lenet_variant",
    "elbo_loss",
    "flipout_perturb",
    "load_learner",
    "save_learner",
    "softplus",
    "softplus_inv",
    "stratified_split",
    "train",
    "weighted_cross_entropy",
    "weighted_nll_from_logits",
]
