"""Weighted-sum combination of the level learners.

``scores[x, y] = sum_v psi[v] * P_v(y | x)`` with ``P_v`` the MC-mean
probabilities of level ``v``; the predicted label is the arg max (lowest
class index on ties). Three ways of choosing ``psi``:

* ``FW``  - fixed: 1 for the first level, 0.5 for every later one;
* ``VW``  - each learner's accuracy on the full original training set;
* ``VWO`` - the best of many uniform random vectors, scored on the *test*
  set. It peeks at the test labels, so it is a reference ceiling only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter
from .numerics import PrngStream
from .uncertainty import UncertaintyConfig, mc_predict

SCHEMES = ("FW", "VW", "VWO")


@dataclass(frozen=True)
class EnsembleWeights:
    psi: np.ndarray
    scheme: str = "FW"

    def __post_init__(self):
        psi = np.asarray(self.psi, dtype=np.float64)
        if psi.ndim != 1 or psi.size == 0:
            raise InvalidParameter("psi must be a non-empty vector")
        if (psi < 0).any() or not (psi > 0).any():
            raise InvalidParameter("psi must be non-negative with at least one positive entry")
        if self.scheme not in SCHEMES:
            raise InvalidParameter(f"unknown weighting scheme {self.scheme!r}")
        object.__setattr__(self, "psi", psi)


@dataclass
class EnsembleModel:
    boosted: object
    weights: EnsembleWeights
    uncertainty: UncertaintyConfig
    seed: int = 0

    def __post_init__(self):
        if self.weights.psi.size != self.boosted.levels:
            raise InvalidParameter("one weight per level is required")

    def level_probabilities(self, X):
        return level_probabilities(self.boosted, X, self.uncertainty, PrngStream(self.seed))


def fw_weights(levels) -> EnsembleWeights:
    if levels < 1:
        raise InvalidParameter("levels must be >= 1")
    return EnsembleWeights(np.array([1.0] + [0.5] * (levels - 1)), "FW")


def level_probabilities(boosted, X, cfg: UncertaintyConfig, stream: PrngStream):
    """MC-mean class probabilities of every level, stacked as (V, n, K)."""
    cfg = UncertaintyConfig(cfg.mc_samples, keep_samples=False)
    return np.stack([
        mc_predict(learner, X, cfg, stream.child("level", v)).mean_probs
        for v, learner in enumerate(boosted.learners, start=1)
    ])


def argmax_lowest(scores):
    # np.argmax already returns the first maximal index
    return np.argmax(scores, axis=-1)


def combine(level_probs, psi):
    """Weighted sum of level probabilities; returns (labels, scores)."""
    level_probs = np.asarray(level_probs, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    scores = np.zeros(level_probs.shape[1:])
    for v in range(level_probs.shape[0]):  # fixed summation order
        scores += psi[v] * level_probs[v]
    return argmax_lowest(scores), scores


def accuracy(labels_pred, labels_true):
    return float(np.mean(np.asarray(labels_pred) == np.asarray(labels_true)))


def vw_weights_from_probs(level_probs, labels) -> EnsembleWeights:
    acc = [accuracy(argmax_lowest(p), labels) for p in level_probs]
    return EnsembleWeights(np.array(acc), "VW")


def vw_weights(boosted, full_train, cfg: UncertaintyConfig, stream: PrngStream) -> EnsembleWeights:
    """Each learner's accuracy (MC-mean arg max) on the whole original training set."""
    probs = level_probabilities(boosted, full_train.features, cfg, stream)
    return vw_weights_from_probs(probs, full_train.labels)


def candidate_weights(levels, n_candidates, stream: PrngStream):
    return stream.uniform((n_candidates, levels))


def candidate_accuracies(level_probs, labels, candidates, chunk=256):
    level_probs = np.asarray(level_probs, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.empty(len(candidates))
    for start in range(0, len(candidates), chunk):
        c = candidates[start : start + chunk]
        scores = np.einsum("cv,vnk->cnk", c, level_probs)
        out[start : start + chunk] = np.mean(np.argmax(scores, axis=-1) == labels, axis=1)
    return out


def vwo_search_from_probs(level_probs, labels, n_candidates=10_000, stream=None):
    """Best of ``n_candidates`` uniform [0, 1]^V weight vectors by accuracy.

    Returns ``(weights, best_accuracy, all_accuracies, candidates)``; ties go
    to the earliest candidate.
    """
    if len(labels) == 0:
        raise InvalidParameter("VWO search needs a non-empty test set")
    stream = stream or PrngStream(0)
    V = np.asarray(level_probs).shape[0]
    cands = candidate_weights(V, n_candidates, stream)
    acc = candidate_accuracies(level_probs, labels, cands)
    best = int(np.argmax(acc))
    psi = cands[best]
    if not (psi > 0).any():  # all-zero draw has probability ~0; keep the type valid
        psi = np.full(V, 1.0)
    return EnsembleWeights(psi, "VWO"), float(acc[best]), acc, cands


def vwo_search(boosted, test, cfg: UncertaintyConfig, n_candidates=10_000, stream=None) -> EnsembleWeights:
    stream = stream or PrngStream(0)
    probs = level_probabilities(boosted, test.features, cfg, stream.child("predict"))
    return vwo_search_from_probs(probs, test.labels, n_candidates, stream.child("candidates"))[0]


def ensemble_predict(model: EnsembleModel, X):
    """Labels and score matrix of the weighted-sum ensemble."""
    return combine(model.level_probabilities(X), model.weights.psi)
