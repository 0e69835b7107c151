"""The weak learner: an ordered layer stack ending in a softmax head."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidParameter, ShapeError, UnsupportedConfiguration
from ..numerics import PrngStream
from .layers import (
    LAYER_TYPES,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    FlipoutDense,
    MaxPool2D,
    ReLU,
    Softmax,
)

MODES = ("deterministic", "mcd", "vi")
CHECKPOINT_VERSION = 1
DEFAULT_DROPOUT = 0.3


class WeakLearner:
    """A probabilistic classifier with stochastic forward passes.

    Parameters
    ----------
    layers : list of Layer
        Must end with a :class:`Softmax` layer.
    input_shape : tuple
        Per-sample input shape, e.g. ``(784,)`` or ``(28, 28, 1)``. Inputs may
        also be passed flattened to ``(batch, prod(input_shape))``.
    mode : {'deterministic', 'mcd', 'vi'}
    """

    def __init__(self, layers, input_shape, n_classes, mode="deterministic"):
        if mode not in MODES:
            raise InvalidParameter(f"unknown mode {mode!r}")
        if not layers or not isinstance(layers[-1], Softmax):
            raise InvalidParameter("layer stack must end with a softmax head")
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.n_classes = int(n_classes)
        self.mode = mode
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (self.n_classes,):
            raise ShapeError(f"network emits {shape}, expected ({self.n_classes},)")

    def __repr__(self):
        body = ", ".join(repr(l) for l in self.layers)
        return f"WeakLearner(mode={self.mode!r}, input_shape={self.input_shape}, layers=[{body}])"

    @property
    def is_stochastic(self):
        return any(l.stochastic for l in self.layers)

    def parameters(self):
        for i, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield (i, name), value

    def gradients(self):
        return {(i, name): g for i, l in enumerate(self.layers) for name, g in l.grads.items()}

    @property
    def n_params(self):
        return sum(v.size for _, v in self.parameters())

    def get_state(self):
        return {key: value.copy() for key, value in self.parameters()}

    def set_state(self, state):
        for (i, name), value in state.items():
            self.layers[i].params[name] = value.copy()

    def _prepare(self, X):
        X = np.asarray(X, dtype=np.float64)
        per_sample = int(np.prod(self.input_shape))
        if X.ndim == 2 and len(self.input_shape) > 1 and X.shape[1] == per_sample:
            X = X.reshape((X.shape[0],) + self.input_shape)
        if X.shape[1:] != self.input_shape:
            raise ShapeError(f"input batch {X.shape} does not match {self.input_shape}")
        return X

    def sample_noise(self, batch, stream: PrngStream, chunk=0):
        """Noise for one stochastic pass; weight draws depend only on ``stream``."""
        return [
            layer.sample_noise(batch, stream.child(i, "rows", chunk), shared=stream.child(i, "shared"))
            for i, layer in enumerate(self.layers)
        ]

    def logits(self, X, noise=None):
        """Forward pass up to (excluding) the softmax head."""
        h = self._prepare(X)
        noise = noise or [None] * len(self.layers)
        for layer, nz in zip(self.layers[:-1], noise):
            h = layer.forward(h, nz)
        return h

    def backward(self, grad_logits):
        g = grad_logits
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return g

    def forward(self, X, stochastic=False, stream=None, chunk_size=4096):
        """Class probabilities, one row per sample.

        With ``stochastic=False`` dropout is disabled and flipout layers use
        their posterior means, so the result is a pure function of ``X``.
        """
        X = self._prepare(X)
        if stochastic and self.is_stochastic and stream is None:
            raise InvalidParameter("a stochastic forward pass needs a PrngStream")
        out = []
        for c, start in enumerate(range(0, X.shape[0], chunk_size)):
            xb = X[start : start + chunk_size]
            noise = self.sample_noise(xb.shape[0], stream, c) if stochastic and self.is_stochastic else None
            out.append(self.layers[-1].forward(self.logits(xb, noise)))
        if not out:
            return np.zeros((0, self.n_classes))
        return np.concatenate(out, axis=0)

    def kl_sample(self, noise):
        """Sum of per-layer single-draw ``log q - log P`` with its gradients."""
        total = 0.0
        grads = {}
        for i, (layer, nz) in enumerate(zip(self.layers, noise)):
            if isinstance(layer, FlipoutDense) and nz is not None:
                value, g = layer.kl_sample(nz)
                total += value
                grads.update({(i, k): v for k, v in g.items()})
        return total, grads


def build_dense_stack(input_len, hidden_sizes, n_classes, mode="deterministic", stream=None,
                      dropout_rate=DEFAULT_DROPOUT, prior_std=1.0):
    """Fully connected learner: hidden ReLU layers and a softmax head.

    In ``vi`` mode every weighted layer is a flipout layer; in ``mcd`` mode
    each hidden layer is followed by dropout. ``hidden_sizes=[]`` with
    ``mode='vi'`` is the single flipout layer used for the Iris demo.
    """
    if mode not in MODES:
        raise InvalidParameter(f"unknown mode {mode!r}")
    if input_len < 1:
        raise InvalidParameter("input_len must be >= 1")
    stream = stream or PrngStream(0)
    sizes = [int(input_len)] + [int(h) for h in hidden_sizes] + [int(n_classes)]
    layers = []
    for k, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        init = stream.child("init", k)
        if mode == "vi":
            layers.append(FlipoutDense(n_in, n_out, init, prior_std=prior_std))
        else:
            layers.append(Dense(n_in, n_out, init))
        if k < len(sizes) - 2:
            layers.append(ReLU())
            if mode == "mcd":
                layers.append(Dropout(dropout_rate))
    layers.append(Softmax())
    return WeakLearner(layers, (int(input_len),), n_classes, mode)


def build_lenet_variant(input_dims, n_classes, mode="deterministic", stream=None,
                        dropout_rate=DEFAULT_DROPOUT):
    """LeNet-5 variant: three 5x5 'same' conv stages (6, 16, 120 kernels)
    with 2x2 pooling after the first two, then dense(84) and the softmax head.
    """
    if mode == "vi":
        raise UnsupportedConfiguration("variational posteriors are only supported on dense stacks")
    if mode not in MODES:
        raise InvalidParameter(f"unknown mode {mode!r}")
    dims = tuple(int(d) for d in input_dims)
    if len(dims) == 2:
        dims = dims + (1,)
    if len(dims) != 3:
        raise ShapeError(f"input_dims must be (H, W) or (H, W, C), got {input_dims}")
    h, w, c = dims
    if h < 5 or w < 5:
        raise ShapeError(f"input {h}x{w} is smaller than the 5x5 receptive field")
    stream = stream or PrngStream(0)
    drop = mode == "mcd"
    layers = []
    for k, (c_in, c_out) in enumerate(((c, 6), (6, 16), (16, 120))):
        layers += [Conv2D(c_in, c_out, 5, 1, stream.child("init", k)), ReLU()]
        if drop:
            layers.append(Dropout(dropout_rate))
        if k < 2:
            layers.append(MaxPool2D(2, 2))
    layers.append(Flatten())
    shape = dims
    for layer in layers:
        shape = layer.output_shape(shape)
    layers += [Dense(shape[0], 84, stream.child("init", 3)), ReLU()]
    if drop:
        layers.append(Dropout(dropout_rate))
    layers += [Dense(84, n_classes, stream.child("init", 4)), Softmax()]
    return WeakLearner(layers, dims, n_classes, mode)


def save_learner(learner: WeakLearner, path):
    """Write a self-describing ``.npz`` checkpoint (exact float64 round trip)."""
    meta = {
        "format": "proboost-learner",
        "version": CHECKPOINT_VERSION,
        "mode": learner.mode,
        "input_shape": list(learner.input_shape),
        "n_classes": learner.n_classes,
        "layers": [{"kind": l.kind, "config": l.config()} for l in learner.layers],
    }
    arrays = {f"L{i}.{name}": v for (i, name), v in learner.parameters()}
    path = Path(path)
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_learner(path) -> WeakLearner:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["__meta__"]))
            arrays = {k: data[k].copy() for k in data.files if k != "__meta__"}
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"cannot read learner checkpoint {path}: {exc}") from exc
    if meta.get("format") != "proboost-learner" or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint header in {path}")
    layers = []
    for spec in meta["layers"]:
        cls = LAYER_TYPES[spec["kind"]]
        layers.append(cls(**spec["config"]))
    learner = WeakLearner(layers, meta["input_shape"], meta["n_classes"], meta["mode"])
    for key, value in arrays.items():
        i, name = key[1:].split(".", 1)
        learner.layers[int(i)].params[name] = value
    return learner
