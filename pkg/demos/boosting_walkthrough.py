"""The three level transforms on a toy problem.

Three overlapping Gaussian blobs are fitted by a small MC-dropout network.
We run each variant for three levels and compare how the training set
changes and how the ensemble scores on held-out data.

Run with ``python demos/boosting_walkthrough.py`` (a few seconds).
"""

import numpy as np

from proboost.boosting import BoostConfig, reduction_factor, run_proboost
from proboost.dataset import Dataset
from proboost.ensemble import combine, fw_weights, level_probabilities, vw_weights_from_probs
from proboost.evaluation import macro_metrics
from proboost.nn import TrainConfig, build_dense_stack
from proboost.numerics import PrngStream
from proboost.uncertainty import UncertaintyConfig

s = PrngStream(0)
centers = np.array([[0.0, 0.0], [1.5, 0.5], [0.5, 1.5]])


def blobs(n, stream):
    y = np.arange(n) % 3
    return Dataset(centers[y] + 0.7 * stream.standard_normal((n, 2)), y)


train, test = blobs(600, s.child("train")), blobs(300, s.child("test"))

# %% the undersampled variant keeps tau of the data after V levels
print(f"retention per level for tau=0.25, V=3: {reduction_factor(0.25, 3):.3f}")

unc = UncertaintyConfig(mc_samples=30)
cfg_train = TrainConfig(max_epochs=40)
factory = lambda st: build_dense_stack(2, [16], 3, "mcd", st)  # noqa: E731

for variant in ("undersampled", "oversampled", "weighted"):
    cfg = BoostConfig(variant, levels=3, tau=0.25, uncertainty=unc, train=cfg_train)
    model = run_proboost(train, cfg, factory, PrngStream(1))
    tr = level_probabilities(model, train.features, unc, PrngStream(2))
    te = level_probabilities(model, test.features, unc, PrngStream(3))
    for name, psi in (("FW", fw_weights(3).psi), ("VW", vw_weights_from_probs(tr, train.labels).psi)):
        single = macro_metrics(test.labels, te[0].argmax(1), 3).acc
        ens = macro_metrics(test.labels, combine(te, psi)[0], 3).acc
        print(f"{variant:>12} sizes={model.sizes} {name}: single {single:.4f} -> ensemble {ens:.4f}")
