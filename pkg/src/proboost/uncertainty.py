"""Monte Carlo predictive distributions and per-sample epistemic variance."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameter, MissingSamples
from .numerics import PrngStream

DEFAULT_MC_SAMPLES = {"vi": 50, "mcd": 200, "deterministic": 1}


@dataclass(frozen=True)
class UncertaintyConfig:
    mc_samples: int = 50
    keep_samples: bool = True

    def __post_init__(self):
        if self.mc_samples < 1:
            raise InvalidParameter("mc_samples must be >= 1")

    @classmethod
    def for_mode(cls, mode, **kwargs):
        return cls(mc_samples=DEFAULT_MC_SAMPLES[mode], **kwargs)


@dataclass(frozen=True)
class PredictiveDistribution:
    mean_probs: np.ndarray  # (batch, K)
    raw_samples: np.ndarray | None = None  # (T, batch, K)


@dataclass(frozen=True)
class UncertaintyScores:
    u: np.ndarray

    def __len__(self):
        return len(self.u)


def mc_predict(learner, X, cfg: UncertaintyConfig, stream: PrngStream) -> PredictiveDistribution:
    """Average ``cfg.mc_samples`` stochastic forward passes.

    Pass ``t`` draws from the sub-stream ``stream.child("mc", t)``, so the
    result does not depend on the order the passes are run in.
    """
    T = cfg.mc_samples
    if not learner.is_stochastic:
        if T > 1:
            warnings.warn("deterministic learner: all MC samples are identical", RuntimeWarning, stacklevel=2)
        p = learner.forward(X)
        samples = np.broadcast_to(p, (T,) + p.shape) if cfg.keep_samples else None
        return PredictiveDistribution(p, samples)
    first = learner.forward(X, True, stream.child("mc", 0))
    total = first.copy()
    samples = None
    if cfg.keep_samples:
        samples = np.empty((T,) + first.shape)
        samples[0] = first
    for t in range(1, T):
        p = learner.forward(X, True, stream.child("mc", t))
        total += p
        if samples is not None:
            samples[t] = p
    return PredictiveDistribution(total / T, samples)


def epistemic_variance(dist: PredictiveDistribution) -> UncertaintyScores:
    """Class-summed MC variance of the sampled probabilities (1/T normalisation)."""
    if dist.raw_samples is None:
        raise MissingSamples("epistemic variance needs the raw MC samples")
    s = np.asarray(dist.raw_samples, dtype=np.float64)
    mean = s.mean(axis=0)
    u = np.mean((s - mean) ** 2, axis=0).sum(axis=-1)
    # rounding in the mean must not turn identical draws into tiny positive scores
    u[np.all(s == s[:1], axis=(0, 2))] = 0.0
    return UncertaintyScores(u)
