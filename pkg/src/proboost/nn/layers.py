"""Layer kernels with hand-written backward passes.

Every layer follows the same protocol:

* ``sample_noise(batch, stream, shared=None)`` draws whatever randomness a stochastic
  forward pass needs (dropout masks, flipout perturbations) and returns it,
  or ``None`` for deterministic layers.
* ``forward(x, noise)`` is a pure function of ``x``, the parameters and
  ``noise``; ``noise=None`` selects the deterministic path (no dropout,
  posterior means). It caches what ``backward`` needs.
* ``backward(grad_out)`` returns the gradient w.r.t. the input and stores
  parameter gradients in ``self.grads``.

Images use NHWC layout.
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import InvalidParameter, ShapeError
from ..numerics import PrngStream


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    return y + np.log(-np.expm1(-y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def glorot_uniform(stream: PrngStream, fan_in, fan_out, shape):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return (2.0 * stream.uniform(shape) - 1.0) * limit


def _same_padding(size, k, stride):
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    return out, total // 2, total - total // 2


class Layer:
    kind = "layer"
    stochastic = False

    def __init__(self):
        self.params = {}
        self.grads = {}

    def config(self) -> dict:
        return {}

    def output_shape(self, input_shape):
        return input_shape

    def sample_noise(self, batch, stream, shared=None):
        return None

    def forward(self, x, noise=None):
        raise NotImplementedError

    def backward(self, grad_out):
        raise NotImplementedError

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{type(self).__name__}({cfg})"


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in, n_out, stream=None):
        super().__init__()
        self.n_in, self.n_out = int(n_in), int(n_out)
        if stream is None:
            w = np.zeros((self.n_in, self.n_out))
        else:
            w = glorot_uniform(stream, self.n_in, self.n_out, (self.n_in, self.n_out))
        self.params = {"w": w, "b": np.zeros(self.n_out)}

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.n_in,):
            raise ShapeError(f"dense layer expects ({self.n_in},), got {tuple(input_shape)}")
        return (self.n_out,)

    def forward(self, x, noise=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense layer expects (batch, {self.n_in}), got {x.shape}")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, grad_out):
        self.grads = {"w": self._x.T @ grad_out, "b": grad_out.sum(axis=0)}
        return grad_out @ self.params["w"].T


def flipout_perturb(delta_hat, a, b):
    """Per-sample flipout perturbation ``delta_hat * outer(a, b)``.

    ``a`` signs the rows of ``delta_hat`` and ``b`` its columns; both must
    contain only -1 and +1.
    """
    delta_hat = np.asarray(delta_hat, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for name, v in (("a", a), ("b", b)):
        if not np.all(np.abs(v) == 1.0):
            raise InvalidParameter(f"sign vector {name} must contain only -1/+1")
    if delta_hat.shape != (a.size, b.size):
        raise ShapeError(f"sign vectors {a.size}x{b.size} do not conform to {delta_hat.shape}")
    return delta_hat * np.outer(a, b)


class FlipoutDense(Layer):
    """Dense layer with a mean-field Gaussian posterior over weights and biases.

    A stochastic pass draws one base perturbation ``eps * softplus(rho)``
    shared by the batch and decorrelates samples with random row/column sign
    flips (``sign_in`` over inputs, ``sign_out`` over outputs).
    """

    kind = "flipout_dense"
    stochastic = True

    def __init__(self, n_in, n_out, stream=None, prior_std=1.0, init_std=0.05):
        super().__init__()
        self.n_in, self.n_out = int(n_in), int(n_out)
        self.prior_std = float(prior_std)
        if stream is None:
            mu = np.zeros((self.n_in, self.n_out))
        else:
            mu = glorot_uniform(stream, self.n_in, self.n_out, (self.n_in, self.n_out))
        rho0 = softplus_inv(init_std)
        self.params = {
            "mu_w": mu,
            "rho_w": np.full((self.n_in, self.n_out), rho0),
            "mu_b": np.zeros(self.n_out),
            "rho_b": np.full(self.n_out, rho0),
        }

    def config(self):
        return {"n_in": self.n_in, "n_out": self.n_out, "prior_std": self.prior_std}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.n_in,):
            raise ShapeError(f"flipout layer expects ({self.n_in},), got {tuple(input_shape)}")
        return (self.n_out,)

    def sample_noise(self, batch, stream, shared=None):
        # weight draw is shared by every row; pass ``shared`` to keep it fixed across chunks
        shared = stream if shared is None else shared
        return {
            "eps_w": shared.standard_normal((self.n_in, self.n_out)),
            "eps_b": shared.standard_normal(self.n_out),
            "sign_in": stream.signs((batch, self.n_in)),
            "sign_out": stream.signs((batch, self.n_out)),
        }

    def forward(self, x, noise=None):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"flipout layer expects (batch, {self.n_in}), got {x.shape}")
        p = self.params
        self._x, self._noise = x, noise
        out = x @ p["mu_w"]
        if noise is None:
            return out + p["mu_b"]
        delta = softplus(p["rho_w"]) * noise["eps_w"]
        bias = p["mu_b"] + softplus(p["rho_b"]) * noise["eps_b"]
        self._delta = delta
        out += ((x * noise["sign_in"]) @ delta) * noise["sign_out"] + bias
        return out

    def backward(self, grad_out):
        p, x, noise = self.params, self._x, self._noise
        g = {"mu_w": x.T @ grad_out, "mu_b": grad_out.sum(axis=0)}
        grad_in = grad_out @ p["mu_w"].T
        if noise is None:
            g["rho_w"] = np.zeros_like(p["rho_w"])
            g["rho_b"] = np.zeros_like(p["rho_b"])
        else:
            ga = grad_out * noise["sign_out"]
            g_delta = (x * noise["sign_in"]).T @ ga
            g["rho_w"] = g_delta * noise["eps_w"] * sigmoid(p["rho_w"])
            g["rho_b"] = g["mu_b"] * noise["eps_b"] * sigmoid(p["rho_b"])
            grad_in = grad_in + (ga @ self._delta.T) * noise["sign_in"]
        self.grads = g
        return grad_in

    def kl_sample(self, noise):
        """Single-sample ``log q(W) - log P(W)`` and its gradient w.r.t. mu/rho.

        ``W = mu + softplus(rho) * eps`` is the draw encoded by ``noise``; the
        prior is N(0, prior_std**2) on every weight and bias.
        """
        value = 0.0
        grads = {}
        var_p = self.prior_std ** 2
        for suffix, eps in (("w", noise["eps_w"]), ("b", noise["eps_b"])):
            mu, rho = self.params["mu_" + suffix], self.params["rho_" + suffix]
            sigma = softplus(rho)
            w = mu + sigma * eps
            log_q = -np.log(sigma) - 0.5 * eps ** 2
            log_p = -math.log(self.prior_std) - 0.5 * w ** 2 / var_p
            value += float(np.sum(log_q - log_p))
            grads["mu_" + suffix] = w / var_p
            grads["rho_" + suffix] = (-1.0 / sigma + w * eps / var_p) * sigmoid(rho)
        return value, grads


class Conv2D(Layer):
    """2-D convolution with TF-style 'same' zero padding."""

    kind = "conv2d"

    def __init__(self, in_channels, filters, kernel_size=5, stride=1, stream=None):
        super().__init__()
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        k = self.kernel_size
        shape = (k, k, self.in_channels, self.filters)
        if stream is None:
            w = np.zeros(shape)
        else:
            w = glorot_uniform(stream, k * k * self.in_channels, k * k * self.filters, shape)
        self.params = {"w": w, "b": np.zeros(self.filters)}

    def config(self):
        return {
            "in_channels": self.in_channels,
            "filters": self.filters,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
        }

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[2] != self.in_channels:
            raise ShapeError(f"conv2d expects (H, W, {self.in_channels}), got {tuple(input_shape)}")
        h, w, _ = input_shape
        ho = _same_padding(h, self.kernel_size, self.stride)[0]
        wo = _same_padding(w, self.kernel_size, self.stride)[0]
        return (ho, wo, self.filters)

    def forward(self, x, noise=None):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeError(f"conv2d expects (batch, H, W, {self.in_channels}), got {x.shape}")
        n, h, w, c = x.shape
        k, s = self.kernel_size, self.stride
        ho, pt, pb = _same_padding(h, k, s)
        wo, pl, pr = _same_padding(w, k, s)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]  # (n, ho, wo, c, k, k)
        cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, k * k * c)
        self._cols, self._xp_shape, self._pads = cols, xp.shape, (pt, pl, ho, wo)
        self._in_hw = (h, w)
        out = cols @ self.params["w"].reshape(k * k * c, self.filters) + self.params["b"]
        return out.reshape(n, ho, wo, self.filters)

    def backward(self, grad_out):
        k, s, c = self.kernel_size, self.stride, self.in_channels
        pt, pl, ho, wo = self._pads
        n = grad_out.shape[0]
        g2 = grad_out.reshape(-1, self.filters)
        wmat = self.params["w"].reshape(k * k * c, self.filters)
        self.grads = {"w": (self._cols.T @ g2).reshape(self.params["w"].shape), "b": g2.sum(axis=0)}
        dcols = (g2 @ wmat.T).reshape(n, ho, wo, k, k, c)
        dxp = np.zeros(self._xp_shape)
        for i in range(k):
            for j in range(k):
                dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[:, :, :, i, j, :]
        h, w = self._in_hw
        return dxp[:, pt : pt + h, pl : pl + w, :]


class MaxPool2D(Layer):
    """Max pooling with TF-style 'same' padding (padded cells never win)."""

    kind = "maxpool2d"

    def __init__(self, pool_size=2, stride=2):
        super().__init__()
        self.pool_size = int(pool_size)
        self.stride = int(stride)

    def config(self):
        return {"pool_size": self.pool_size, "stride": self.stride}

    def output_shape(self, input_shape):
        h, w, c = input_shape
        return (
            _same_padding(h, self.pool_size, self.stride)[0],
            _same_padding(w, self.pool_size, self.stride)[0],
            c,
        )

    def forward(self, x, noise=None):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d expects (batch, H, W, C), got {x.shape}")
        n, h, w, c = x.shape
        k, s = self.pool_size, self.stride
        ho, pt, pb = _same_padding(h, k, s)
        wo, pl, pr = _same_padding(w, k, s)
        xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)), constant_values=-np.inf)
        win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
        win = win[:, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
        flat = win.reshape(n, ho, wo, c, k * k)
        arg = flat.argmax(axis=-1)
        self._cache = (arg, xp.shape, (pt, pl, ho, wo), (h, w))
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad_out):
        arg, xp_shape, (pt, pl, ho, wo), (h, w) = self._cache
        k, s = self.pool_size, self.stride
        dxp = np.zeros(xp_shape)
        di, dj = np.divmod(arg, k)
        for i in range(k):
            for j in range(k):
                sel = (di == i) & (dj == j)
                dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += np.where(sel, grad_out, 0.0)
        return dxp[:, pt : pt + h, pl : pl + w, :]


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, noise=None):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, noise=None):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad_out):
        return np.where(self._mask, grad_out, 0.0)


class Dropout(Layer):
    """Inverted dropout: kept units are scaled by ``1 / (1 - rate)``."""

    kind = "dropout"
    stochastic = True

    def __init__(self, rate=0.3, shape=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise InvalidParameter(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = float(rate)
        self._shape = None if shape is None else tuple(shape)

    def config(self):
        return {"rate": self.rate, "shape": list(self._shape) if self._shape else None}

    def output_shape(self, input_shape):
        self._shape = tuple(input_shape)
        return input_shape

    def sample_noise(self, batch, stream, shared=None):
        keep = 1.0 - self.rate
        u = stream.uniform((batch,) + self._shape)
        return {"mask": (u < keep) / keep}

    def forward(self, x, noise=None):
        self._mask = None if noise is None else noise["mask"]
        return x if self._mask is None else x * self._mask

    def backward(self, grad_out):
        return grad_out if self._mask is None else grad_out * self._mask


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, noise=None):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._p = e / e.sum(axis=1, keepdims=True)
        return self._p

    def backward(self, grad_out):
        p = self._p
        return p * (grad_out - np.sum(grad_out * p, axis=1, keepdims=True))


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Dense, FlipoutDense, Conv2D, MaxPool2D, Flatten, ReLU, Dropout, Softmax)
}
