"""Training objectives: weighted cross-entropy and the sampled ELBO."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidParameter


def _check_weights(labels, sample_weights, n):
    labels = np.asarray(labels, dtype=np.int64)
    w = np.ones(n) if sample_weights is None else np.asarray(sample_weights, dtype=np.float64)
    if labels.shape != (n,) or w.shape != (n,):
        raise InvalidParameter("labels and weights must align with the batch")
    total = w.sum()
    if not total > 0:
        raise InvalidParameter("total sample weight must be positive")
    return labels, w, total


def weighted_cross_entropy(probs, labels, sample_weights=None):
    """``sum_i w_i * -log p[i, y_i] / sum_i w_i`` and its gradient w.r.t. ``probs``."""
    probs = np.asarray(probs, dtype=np.float64)
    labels, w, total = _check_weights(labels, sample_weights, probs.shape[0])
    rows = np.arange(probs.shape[0])
    p_true = probs[rows, labels]
    loss = float(np.sum(w * -np.log(p_true)) / total)
    grad = np.zeros_like(probs)
    grad[rows, labels] = -(w / total) / p_true
    return loss, grad


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def weighted_nll_from_logits(logits, labels, sample_weights=None, normalize=True):
    """Weighted negative log-likelihood computed stably from logits.

    Returns the loss and its gradient w.r.t. the logits (the softmax backward
    fused in). ``normalize=False`` returns the weighted sum instead of the mean.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels, w, total = _check_weights(labels, sample_weights, logits.shape[0])
    rows = np.arange(logits.shape[0])
    logp = _log_softmax(logits)
    scale = w / total if normalize else w
    loss = float(-np.sum(scale * logp[rows, labels]))
    grad = np.exp(logp)
    grad[rows, labels] -= 1.0
    grad *= scale[:, None]
    return loss, grad


def elbo_loss(learner, X, labels, sample_weights=None, n_mc=1, stream=None, kl_scale=1.0,
              noises=None):
    """Negated sampled ELBO for a variational learner, with gradients.

    For each of ``n_mc`` posterior draws W_i the objective is
    ``kl_scale * (log q(W_i) - log P(W_i)) - sum_s w_s log P(y_s | x_s, W_i)``;
    the loss is the mean over draws. ``kl_scale`` is ``1 / batches_per_epoch``
    so that one epoch of mini-batches sums to the full-data bound.

    ``noises`` may supply the draws explicitly (one noise list per draw),
    which fixes the perturbation for gradient checking.
    """
    if learner.mode != "vi":
        raise InvalidParameter("elbo_loss needs a learner in vi mode")
    if noises is None:
        if n_mc < 1:
            raise InvalidParameter("n_mc must be >= 1")
        if stream is None:
            raise InvalidParameter("elbo_loss needs a PrngStream to draw weights")
        n = len(X)
        noises = [learner.sample_noise(n, stream.child("elbo", i)) for i in range(n_mc)]
    n_mc = len(noises)
    total = 0.0
    grads = {}
    for noise in noises:
        logits = learner.logits(X, noise)
        nll, g_logits = weighted_nll_from_logits(logits, labels, sample_weights, normalize=False)
        learner.backward(g_logits)
        kl, kl_grads = learner.kl_sample(noise)
        total += nll + kl_scale * kl
        for key, g in learner.gradients().items():
            g = g + kl_scale * kl_grads[key] if key in kl_grads else g
            grads[key] = grads[key] + g if key in grads else g.copy()
    for key in grads:
        grads[key] /= n_mc
    return total / n_mc, grads
