"""Small randomized networks (<= 100 parameters) for gradient checking."""

import numpy as np

from gradcheck import numeric_grad, rel_error
from proboost.nn import (
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    FlipoutDense,
    MaxPool2D,
    ReLU,
    Softmax,
    WeakLearner,
    elbo_loss,
    weighted_cross_entropy,
    weighted_nll_from_logits,
)
from proboost.numerics import PrngStream

KINDS = ("dense", "conv", "dropout", "flipout")


def _randomize(learner, stream):
    for (i, name), value in learner.parameters():
        value[...] = 0.5 * stream.standard_normal(value.shape)
        if name.startswith("rho"):
            value[...] = -1.0 + 0.3 * stream.standard_normal(value.shape)


def make_case(kind, seed):
    """Returns (learner, X, labels, weights, noise_list_or_None)."""
    s = PrngStream(seed, 77)
    if kind == "dense":
        layers = [Dense(3, 4), ReLU(), Dense(4, 3), Softmax()]
        learner = WeakLearner(layers, (3,), 3, "deterministic")
        X = s.standard_normal((5, 3))
    elif kind == "conv":
        layers = [Conv2D(1, 2, 3), ReLU(), MaxPool2D(2, 2), Conv2D(2, 2, 3), Flatten(), Dense(18, 2), Softmax()]
        learner = WeakLearner(layers, (5, 5, 1), 2, "deterministic")
        X = s.standard_normal((3, 5, 5, 1))
    elif kind == "dropout":
        layers = [Dense(4, 5), ReLU(), Dropout(0.4), Dense(5, 3), Softmax()]
        learner = WeakLearner(layers, (4,), 3, "mcd")
        X = s.standard_normal((6, 4))
    elif kind == "flipout":
        layers = [FlipoutDense(3, 4), ReLU(), FlipoutDense(4, 2), Softmax()]
        learner = WeakLearner(layers, (3,), 2, "vi")
        X = s.standard_normal((4, 3))
    else:
        raise ValueError(kind)
    assert learner.n_params <= 100
    _randomize(learner, s.child("params"))
    n, K = X.shape[0], learner.n_classes
    labels = np.floor(s.uniform(n) * K).astype(int)
    weights = 1.0 + np.floor(s.uniform(n) * 3)
    noise = learner.sample_noise(n, s.child("noise")) if learner.is_stochastic else None
    return learner, X, labels, weights, noise


def check_cross_entropy(learner, X, labels, weights, noise):
    """Weighted CE through the explicit softmax layer; returns worst relative error."""
    head = learner.layers[-1]

    def loss():
        return weighted_cross_entropy(head.forward(learner.logits(X, noise)), labels, weights)[0]

    logits = learner.logits(X, noise)
    _, g_probs = weighted_cross_entropy(head.forward(logits), labels, weights)
    g_explicit = head.backward(g_probs)
    learner.backward(g_explicit)
    analytic = learner.gradients()
    # fused logits path must agree with the explicit one
    _, g_fused = weighted_nll_from_logits(logits, labels, weights)
    worst = rel_error(g_fused, g_explicit)
    for key, value in learner.parameters():
        worst = max(worst, rel_error(analytic[key], numeric_grad(loss, value)))
    return worst


def check_elbo(learner, X, labels, weights, noises, kl_scale=0.25):
    def loss():
        return elbo_loss(learner, X, labels, weights, noises=noises, kl_scale=kl_scale)[0]

    _, analytic = elbo_loss(learner, X, labels, weights, noises=noises, kl_scale=kl_scale)
    worst = 0.0
    for key, value in learner.parameters():
        worst = max(worst, rel_error(analytic[key], numeric_grad(loss, value)))
    return worst


def run_case(index):
    """Case ``index`` of the seeded gradient suite; returns (label, worst error)."""
    kind = KINDS[index % len(KINDS)]
    learner, X, labels, weights, noise = make_case(kind, index)
    if kind == "flipout":
        s = PrngStream(index, 78)
        noises = [learner.sample_noise(len(X), s.child(k)) for k in range(2)]
        err = max(check_elbo(learner, X, labels, weights, noises), check_cross_entropy(learner, X, labels, weights, noise))
        return f"{kind}/elbo+ce", err
    return f"{kind}/ce", check_cross_entropy(learner, X, labels, weights, noise)
