"""Layer kernels (forward + reverse mode) and the stateful layer wrapper.

Activations are NHWC float64 arrays. Convolutions are valid cross-correlations
with stride 1; pooling is 2x2 / stride 2 with odd extents floored.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ShapeError
from .tensor import Rng

KINDS = ("conv2d", "relu", "maxpool2d", "batchnorm", "dropout", "globalavgpool", "dense", "softmax")
ACTIVATIONS = (None, "relu", "softmax")

BN_EPSILON = 1e-5
BN_MOMENTUM = 0.9


# -- kernels ---------------------------------------------------------------

def conv2d_forward(x, kernel, bias):
    """Valid cross-correlation. ``kernel`` is ``[kh, kw, cin, cout]``."""
    kh, kw, cin, cout = kernel.shape
    if x.ndim != 4:
        raise ShapeError(f"conv2d expects NHWC input, got shape {x.shape}")
    if x.shape[3] != cin:
        raise ShapeError(f"conv2d expects {cin} input channels, got {x.shape[3]}")
    if x.shape[1] < kh or x.shape[2] < kw:
        raise ShapeError(f"spatial extent {x.shape[1:3]} smaller than kernel {(kh, kw)}")
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))  # N,Ho,Wo,C,kh,kw
    out = np.tensordot(windows, kernel, axes=([3, 4, 5], [2, 0, 1])) + bias
    return out, (x, kernel)


def conv2d_backward(dout, cache):
    if cache is None:
        raise RuntimeError("conv2d backward called without a forward cache")
    x, kernel = cache
    kh, kw, _, _ = kernel.shape
    windows = sliding_window_view(x, (kh, kw), axis=(1, 2))
    dkernel = np.tensordot(windows, dout, axes=([0, 1, 2], [0, 1, 2]))  # C,kh,kw,Cout
    dkernel = dkernel.transpose(1, 2, 0, 3)
    dbias = dout.sum(axis=(0, 1, 2))
    padded = np.pad(dout, ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
    pwin = sliding_window_view(padded, (kh, kw), axis=(1, 2))  # N,H,W,Cout,kh,kw
    dx = np.tensordot(pwin, kernel[::-1, ::-1], axes=([3, 4, 5], [3, 0, 1]))
    return dx, {"kernel": dkernel, "bias": dbias}


def relu_forward(x):
    return np.maximum(x, 0.0), x


def relu_backward(dout, cache):
    return dout * (cache > 0)


def maxpool2d_forward(x):
    n, h, w, c = x.shape
    if h < 2 or w < 2:
        raise ShapeError(f"maxpool2d needs spatial extents >= 2, got {(h, w)}")
    ho, wo = h // 2, w // 2
    blocks = x[:, : 2 * ho, : 2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2d_backward(dout, cache):
    shape, arg = cache
    n, h, w, c = shape
    ho, wo = h // 2, w // 2
    routed = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(routed, arg[..., None], dout[..., None], axis=-1)
    routed = routed.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    dx = np.zeros(shape)
    dx[:, : 2 * ho, : 2 * wo, :] = routed.reshape(n, 2 * ho, 2 * wo, c)
    return dx


def batchnorm_forward(x, gamma, beta, moving_mean, moving_variance, training,
                      momentum=BN_MOMENTUM, eps=BN_EPSILON):
    """Per-channel batch norm over all but the last axis.

    In training mode the moving statistics are updated in place.
    """
    axes = tuple(range(x.ndim - 1))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batchnorm in train mode needs a batch of at least 2")
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        moving_mean *= momentum
        moving_mean += (1.0 - momentum) * mean
        moving_variance *= momentum
        moving_variance += (1.0 - momentum) * var
    else:
        mean, var = moving_mean, moving_variance
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma, training)


def batchnorm_backward(dout, cache):
    xhat, inv_std, gamma, training = cache
    axes = tuple(range(dout.ndim - 1))
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * gamma
    if training:
        m = dout.size // dout.shape[-1]
        dx = inv_std / m * (m * dxhat - dxhat.sum(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes))
    else:
        dx = dxhat * inv_std
    return dx, {"gamma": dgamma, "beta": dbeta}


def dropout_forward(x, p, rng: Optional[Rng], training):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(dout, cache):
    return dout if cache is None else dout * cache


def globalavgpool_forward(x):
    if x.ndim != 4:
        raise ShapeError(f"global average pooling expects rank-4 input, got {x.shape}")
    return x.mean(axis=(1, 2)), x.shape


def globalavgpool_backward(dout, cache):
    n, h, w, c = cache
    return np.broadcast_to(dout[:, None, None, :] / (h * w), cache).copy()


def dense_forward(x, kernel, bias):
    if x.ndim != 2 or x.shape[1] != kernel.shape[0]:
        raise ShapeError(f"dense expects [N, {kernel.shape[0]}] input, got {x.shape}")
    return x @ kernel + bias, (x, kernel)


def dense_backward(dout, cache):
    x, kernel = cache
    return dout @ kernel.T, {"kernel": x.T @ dout, "bias": dout.sum(axis=0)}


def softmax_forward(x):
    if not np.all(np.isfinite(x)):
        raise ValueError("softmax input contains non-finite values")
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    return out, out


def softmax_backward(dout, cache):
    p = cache
    return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


# -- declarative spec --------------------------------------------------------

@dataclass(frozen=True)
class LayerSpec:
    """One row of a sequential network.

    ``activation`` fuses a trailing relu/softmax into conv2d or dense rows, the
    way layer tables list "Convolutional + ReLU" as a single row.
    """

    kind: str
    name: str
    kernel_size: Optional[tuple] = None
    filters: Optional[int] = None
    units: Optional[int] = None
    rate: float = 0.0
    activation: Optional[str] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kind == "conv2d":
            if self.kernel_size is None or self.filters is None:
                raise ValueError(f"{self.name}: conv2d needs kernel_size and filters")
            ks = self.kernel_size
            ks = (ks, ks) if isinstance(ks, (int, np.integer)) else tuple(int(k) for k in ks)
            if len(ks) != 2:
                raise ValueError(f"{self.name}: kernel_size must be an int or (kh, kw)")
            object.__setattr__(self, "kernel_size", ks)
            if min(self.kernel_size) < 1 or self.filters < 1:
                raise ValueError(f"{self.name}: kernel extents and filters must be >= 1")
        if self.kind == "dense" and (self.units is None or self.units < 1):
            raise ValueError(f"{self.name}: dense needs units >= 1")
        if self.kind == "dropout" and not 0.0 <= self.rate < 1.0:
            raise ValueError(f"{self.name}: dropout rate must be in [0, 1)")

    def to_dict(self) -> dict:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        if "kernel_size" in d:
            d["kernel_size"] = list(d["kernel_size"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(**d)

    def op_kinds(self) -> list:
        """Primitive kinds this row expands to, activation included."""
        return [self.kind] + ([self.activation] if self.activation else [])

    def output_shape(self, in_shape: tuple) -> tuple:
        """Per-sample output shape (no batch axis)."""
        if self.kind == "conv2d":
            if len(in_shape) != 3:
                raise ShapeError(f"{self.name}: conv2d needs HWC input, got {in_shape}")
            h, w, _ = in_shape
            kh, kw = self.kernel_size
            if h < kh or w < kw:
                raise ShapeError(f"{self.name}: input {in_shape} smaller than kernel {self.kernel_size}")
            return (h - kh + 1, w - kw + 1, self.filters)
        if self.kind == "maxpool2d":
            h, w, c = in_shape
            if h < 2 or w < 2:
                raise ShapeError(f"{self.name}: cannot pool spatial extent {(h, w)}")
            return (h // 2, w // 2, c)
        if self.kind == "globalavgpool":
            if len(in_shape) != 3:
                raise ShapeError(f"{self.name}: global pooling needs HWC input")
            return (in_shape[-1],)
        if self.kind == "dense":
            if len(in_shape) != 1:
                raise ShapeError(f"{self.name}: dense needs flat input, got {in_shape}")
            return (self.units,)
        return tuple(in_shape)

    def parameter_shapes(self, in_shape: tuple) -> dict:
        if self.kind == "conv2d":
            kh, kw = self.kernel_size
            return {"kernel": (kh, kw, in_shape[-1], self.filters), "bias": (self.filters,)}
        if self.kind == "dense":
            return {"kernel": (in_shape[-1], self.units), "bias": (self.units,)}
        if self.kind == "batchnorm":
            c = (in_shape[-1],)
            return {"gamma": c, "beta": c, "moving_mean": c, "moving_variance": c}
        return {}

    def parameter_count(self, in_shape: tuple) -> int:
        return sum(math.prod(s) for s in self.parameter_shapes(in_shape).values())


TRAINABLE = {"kernel", "bias", "gamma", "beta"}


def init_parameters(spec: LayerSpec, in_shape: tuple, rng: Rng) -> dict:
    """He-normal weights, zero biases, unit gamma, zero beta, unit moving variance."""
    params = {}
    for name, shape in spec.parameter_shapes(in_shape).items():
        if name == "kernel":
            fan_in = math.prod(shape[:-1])
            params[name] = rng.normal(0.0, math.sqrt(2.0 / fan_in), shape)
        elif name in ("gamma", "moving_variance"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


class Layer:
    """A LayerSpec bound to its parameters and the cache of the last forward pass."""

    def __init__(self, spec: LayerSpec, params: dict, rng: Optional[Rng] = None):
        self.spec = spec
        self.params = params
        self.grads = {}
        self.rng = rng
        self._cache = None
        self._act_cache = None

    def forward(self, x, training=False, *, apply_activation=True):
        kind = self.spec.kind
        p = self.params
        if kind == "conv2d":
            out, cache = conv2d_forward(x, p["kernel"], p["bias"])
        elif kind == "dense":
            out, cache = dense_forward(x, p["kernel"], p["bias"])
        elif kind == "relu":
            out, cache = relu_forward(x)
        elif kind == "softmax":
            out, cache = softmax_forward(x)
        elif kind == "maxpool2d":
            out, cache = maxpool2d_forward(x)
        elif kind == "batchnorm":
            out, cache = batchnorm_forward(
                x, p["gamma"], p["beta"], p["moving_mean"], p["moving_variance"], training
            )
        elif kind == "dropout":
            out, cache = dropout_forward(x, self.spec.rate, self.rng, training)
        else:
            out, cache = globalavgpool_forward(x)
        self._cache = cache
        self._act_cache = None
        act = self.spec.activation
        if act == "relu":
            out, self._act_cache = relu_forward(out)
        elif act == "softmax" and apply_activation:
            out, self._act_cache = softmax_forward(out)
        return out

    def backward(self, dout, *, skip_activation=False):
        """Gradient w.r.t. the layer input; parameter gradients land in ``self.grads``.

        ``skip_activation`` treats ``dout`` as the gradient w.r.t. the
        pre-softmax logits (fused loss path).
        """
        if self._cache is None and self.spec.kind not in ("dropout",):
            raise RuntimeError(f"{self.spec.name}: backward called before forward")
        act = self.spec.activation
        if act == "relu":
            dout = relu_backward(dout, self._act_cache)
        elif act == "softmax" and not skip_activation:
            dout = softmax_backward(dout, self._act_cache)
        kind = self.spec.kind
        grads = {}
        if kind == "conv2d":
            dx, grads = conv2d_backward(dout, self._cache)
        elif kind == "dense":
            dx, grads = dense_backward(dout, self._cache)
        elif kind == "relu":
            dx = relu_backward(dout, self._cache)
        elif kind == "softmax":
            dx = softmax_backward(dout, self._cache)
        elif kind == "maxpool2d":
            dx = maxpool2d_backward(dout, self._cache)
        elif kind == "batchnorm":
            dx, grads = batchnorm_backward(dout, self._cache)
        elif kind == "dropout":
            dx = dropout_backward(dout, self._cache)
        else:
            dx = globalavgpool_backward(dout, self._cache)
        self.grads = grads
        return dx
