"""Layers with hand-derived forward and backward passes.

Every layer works on plain numpy arrays.  Convolution, batch norm and pooling
use the NCHW layout; the LSTM consumes time-major sequences ``[T, N, D]``.
A layer caches whatever its backward pass needs during ``forward`` and
accumulates nothing: each ``backward`` call overwrites ``self.grads``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when an input does not fit a layer's declared geometry."""


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer.

    ``kind`` selects the layer class; ``hyper`` holds its hyperparameters
    (kernel sizes, feature maps, hidden units, pool sizes).
    """

    kind: str
    hyper: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        for key, value in self.hyper.items():
            values = value if isinstance(value, (list, tuple)) else [value]
            for v in values:
                if isinstance(v, (int, float)) and not isinstance(v, bool) and v <= 0:
                    raise ValueError(f"{self.kind}.{key} must be positive, got {value!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, **{k: list(v) if isinstance(v, tuple) else v
                                      for k, v in self.hyper.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        d = dict(d)
        kind = d.pop("kind")
        return cls(kind, {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.needs_input_grad = True

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator, dtype) -> tuple[int, ...]:
        """Allocate parameters for a per-sample ``in_shape``; return the per-sample output shape."""
        return self.output_shape(in_shape)

    def output_shape(self, in_shape):
        return in_shape

    def forward(self, x, train=True):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def spec(self) -> LayerSpec:
        raise NotImplementedError

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def __repr__(self):
        return f"{type(self).__name__}({self.spec().hyper})"


def _pair(v):
    if isinstance(v, int):
        return (v, v)
    return tuple(int(a) for a in v)


def _kaiming_uniform(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2D(Layer):
    """Valid (unpadded) 2-D convolution, stride 1x1, via im2col + GEMM."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel=(1, 5), stride=(1, 1), bias: bool = True):
        super().__init__()
        self.filters = int(filters)
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        if self.stride != (1, 1):
            raise ValueError("only 1x1 stride is supported")
        self.bias = bias

    def spec(self):
        return LayerSpec(self.kind, {"filters": self.filters, "kernel": self.kernel,
                                     "stride": self.stride})

    def output_shape(self, in_shape):
        c, h, w = in_shape
        kh, kw = self.kernel
        if kh > h or kw > w:
            raise ShapeError(f"conv2d kernel {kh}x{kw} larger than input {h}x{w}")
        return (self.filters, h - kh + 1, w - kw + 1)

    def build(self, in_shape, rng, dtype):
        out = self.output_shape(in_shape)
        c = in_shape[0]
        kh, kw = self.kernel
        self.params["W"] = _kaiming_uniform(rng, (self.filters, c, kh, kw), c * kh * kw, dtype)
        if self.bias:
            self.params["b"] = np.zeros(self.filters, dtype=dtype)
        return out

    def forward(self, x, train=True):
        n, c, h, w = x.shape
        f, c_w, kh, kw = self.params["W"].shape
        if c != c_w or kh > h or kw > w:
            raise ShapeError(f"conv2d expects [N, {c_w}, >={kh}, >={kw}], got {list(x.shape)}")
        ho, wo = h - kh + 1, w - kw + 1
        win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # N C Ho Wo kh kw
        cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
        out = self.params["W"].reshape(f, -1) @ cols
        if self.bias:
            out += self.params["b"][:, None]
        self._cache = (cols, x.shape)
        return out.reshape(f, n, ho, wo).transpose(1, 0, 2, 3)

    def backward(self, dout):
        cols, (n, c, h, w) = self._cache
        W = self.params["W"]
        f, _, kh, kw = W.shape
        ho, wo = h - kh + 1, w - kw + 1
        dm = dout.transpose(1, 0, 2, 3).reshape(f, -1)
        self.grads["W"] = (dm @ cols.T).reshape(W.shape)
        if self.bias:
            self.grads["b"] = dm.sum(axis=1)
        if not self.needs_input_grad:
            return None
        dcols = (W.reshape(f, -1).T @ dm).reshape(c, kh, kw, n, ho, wo)
        dx = np.zeros((c, n, h, w), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dx[:, :, i:i + ho, j:j + wo] += dcols[:, i, j]
        return dx.transpose(1, 0, 2, 3)


class BatchNorm(Layer):
    """Batch normalization over axis 1 (feature maps for 4-D input, features for 2-D)."""

    kind = "batchnorm"

    def __init__(self, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps

    def spec(self):
        return LayerSpec(self.kind, {"momentum": self.momentum, "eps": self.eps})

    def build(self, in_shape, rng, dtype):
        f = in_shape[0]
        self.params["gamma"] = np.ones(f, dtype=dtype)
        self.params["beta"] = np.zeros(f, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(f, dtype=dtype)
        self.buffers["running_var"] = np.ones(f, dtype=dtype)
        return in_shape

    def _axes(self, x):
        return (0,) + tuple(range(2, x.ndim))

    def _bshape(self, x):
        return (1, -1) + (1,) * (x.ndim - 2)

    def forward(self, x, train=True):
        axes, bs = self._axes(x), self._bshape(x)
        gamma = self.params["gamma"].reshape(bs)
        beta = self.params["beta"].reshape(bs)
        if train:
            m = x.size // x.shape[1]
            if x.shape[0] < 2:
                raise ShapeError("batchnorm in training mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            xc = x - mean.reshape(bs)
            var = (xc * xc).mean(axis=axes)
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xhat = xc * inv_std.reshape(bs)
            mom = self.momentum
            self.buffers["running_mean"] = (1 - mom) * self.buffers["running_mean"] + mom * mean
            unbiased = var * m / max(m - 1, 1)
            self.buffers["running_var"] = (1 - mom) * self.buffers["running_var"] + mom * unbiased
            self._cache = (xhat, inv_std)
        else:
            mean = self.buffers["running_mean"].reshape(bs)
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"].reshape(bs) + self.eps)
            xhat = (x - mean) * inv_std
            self._cache = None
        return xhat * gamma + beta

    def backward(self, dout):
        if self._cache is None:
            raise RuntimeError("batchnorm backward requires a training-mode forward pass")
        xhat, inv_std = self._cache
        axes, bs = self._axes(dout), self._bshape(dout)
        m = dout.size // dout.shape[1]
        self.grads["gamma"] = (dout * xhat).sum(axis=axes)
        self.grads["beta"] = dout.sum(axis=axes)
        dxhat = dout * self.params["gamma"].reshape(bs)
        s1 = dxhat.sum(axis=axes).reshape(bs)
        s2 = (dxhat * xhat).sum(axis=axes).reshape(bs)
        return (inv_std.reshape(bs) / m) * (m * dxhat - s1 - xhat * s2)


class ELU(Layer):
    kind = "elu"

    def __init__(self, alpha: float = 1.0):
        super().__init__()
        self.alpha = alpha

    def spec(self):
        return LayerSpec(self.kind, {"alpha": self.alpha})

    def forward(self, x, train=True):
        neg = np.expm1(np.minimum(x, 0))
        if self.alpha != 1.0:
            neg *= self.alpha
            y = np.where(x > 0, x, neg)
        else:
            # e^x - 1 >= x for x <= 0, so the max picks the right branch
            y = np.maximum(x, neg, out=neg)
        self._cache = (x, y)
        return y

    def backward(self, dout):
        x, y = self._cache
        if self.alpha != 1.0:
            return dout * np.where(x > 0, 1.0, y + self.alpha).astype(dout.dtype, copy=False)
        # derivative is exp(min(x, 0)) = min(y + 1, 1)
        d = y + 1.0
        np.minimum(d, 1.0, out=d)
        d *= dout
        return d


class _Pool2D(Layer):
    """Non-overlapping pooling; trailing rows/columns that do not fill a window are dropped."""

    def __init__(self, size=(1, 2)):
        super().__init__()
        self.size = _pair(size)

    def spec(self):
        return LayerSpec(self.kind, {"size": self.size})

    def output_shape(self, in_shape):
        c, h, w = in_shape
        ph, pw = self.size
        if ph > h or pw > w:
            raise ShapeError(f"{self.kind} size {ph}x{pw} larger than input {h}x{w}")
        return (c, h // ph, w // pw)

    def _windows(self, x):
        """View ``x`` as ``[N, C, H2, W2, ph*pw]`` windows (copy only when ph > 1)."""
        n, c, h, w = x.shape
        ph, pw = self.size
        if ph > h or pw > w:
            raise ShapeError(f"{self.kind} size {ph}x{pw} larger than input {h}x{w}")
        h2, w2 = h // ph, w // pw
        if ph == 1:
            return x[:, :, :, :w2 * pw].reshape(n, c, h2, w2, pw)
        xs = x[:, :, :h2 * ph, :w2 * pw].reshape(n, c, h2, ph, w2, pw)
        return xs.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, ph * pw)

    def _unwindows(self, in_shape, dtype):
        """Zero gradient buffer plus a window view of it, as in :meth:`_windows`."""
        n, c, h, w = in_shape
        ph, pw = self.size
        h2, w2 = h // ph, w // pw
        dx = np.zeros(in_shape, dtype=dtype)
        if ph == 1:
            return dx, dx[:, :, :, :w2 * pw].reshape(n, c, h2, w2, pw)
        return dx, None

    def _scatter(self, parts, in_shape, dtype):
        """Gradient from per-window-slot arrays ``parts[j]`` of shape ``[N, C, H2, W2]``."""
        dx, view = self._unwindows(in_shape, dtype)
        if view is not None:
            for j, part in enumerate(parts):
                view[..., j] = part
            return dx
        n, c, h, w = in_shape
        ph, pw = self.size
        h2, w2 = h // ph, w // pw
        d = np.stack(parts, axis=-1)
        dx[:, :, :h2 * ph, :w2 * pw] = (d.reshape(n, c, h2, w2, ph, pw)
                                        .transpose(0, 1, 2, 4, 3, 5)
                                        .reshape(n, c, h2 * ph, w2 * pw))
        return dx


class MaxPool(_Pool2D):
    """Max pooling; ties route the gradient to the first index in the window."""

    kind = "maxpool"

    def forward(self, x, train=True):
        win = self._windows(x)
        # a running max over the few window slots beats argmax along a tiny axis
        out = win[..., 0].copy()
        idx = np.zeros(out.shape, dtype=np.int8)
        for j in range(1, win.shape[-1]):
            better = win[..., j] > out
            np.copyto(out, win[..., j], where=better)
            idx[better] = j
        self._cache = (idx, x.shape, win.shape[-1])
        return out

    def backward(self, dout):
        idx, in_shape, k = self._cache
        parts = [np.where(idx == j, dout, 0).astype(dout.dtype, copy=False) for j in range(k)]
        return self._scatter(parts, in_shape, dout.dtype)


class AvgPool(_Pool2D):
    kind = "avgpool"

    def forward(self, x, train=True):
        win = self._windows(x)
        k = win.shape[-1]
        out = win[..., 0].copy()
        for j in range(1, k):
            out += win[..., j]
        out *= 1.0 / k
        self._cache = (x.shape, k)
        return out

    def backward(self, dout):
        in_shape, k = self._cache
        d = dout * (1.0 / k)
        return self._scatter([d] * k, in_shape, dout.dtype)


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


class LSTM(Layer):
    """Single LSTM layer over a time-major sequence, zero initial state.

    Gate order in the packed weights is input, forget, cell candidate, output:
    ``W`` is ``[D, 4H]`` (input weights), ``U`` is ``[H, 4H]`` (recurrent
    weights) and ``b`` is ``[4H]``.  Output is the full hidden sequence
    ``[T, N, H]``.
    """

    kind = "lstm"

    def __init__(self, units: int):
        super().__init__()
        self.units = int(units)

    def spec(self):
        return LayerSpec(self.kind, {"units": self.units})

    def output_shape(self, in_shape):
        t, d = in_shape
        return (t, self.units)

    def build(self, in_shape, rng, dtype):
        t, d = in_shape
        h = self.units
        bound = 1.0 / np.sqrt(h)
        self.params["W"] = rng.uniform(-bound, bound, size=(d, 4 * h)).astype(dtype)
        u = np.empty((h, 4 * h))
        for g in range(4):
            q, r = np.linalg.qr(rng.standard_normal((h, h)))
            u[:, g * h:(g + 1) * h] = q * np.sign(np.diag(r))
        self.params["U"] = u.astype(dtype)
        b = np.zeros(4 * h, dtype=dtype)
        b[h:2 * h] = 1.0  # forget gate open at start
        self.params["b"] = b
        return (t, h)

    def forward(self, x, train=True):
        t_len, n, d = x.shape
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        if W.shape[0] != d:
            raise ShapeError(f"lstm expects input features {W.shape[0]}, got {d}")
        hu = self.units
        xw = (x.reshape(t_len * n, d) @ W).reshape(t_len, n, 4 * hu) + b
        hs = np.zeros((t_len + 1, n, hu), dtype=xw.dtype)
        cs = np.zeros((t_len + 1, n, hu), dtype=xw.dtype)
        gates = np.empty((t_len, n, 4 * hu), dtype=xw.dtype)
        for t in range(t_len):
            z = xw[t] + hs[t] @ U
            g = gates[t]
            g[:, :2 * hu] = _sigmoid(z[:, :2 * hu])
            g[:, 2 * hu:3 * hu] = np.tanh(z[:, 2 * hu:3 * hu])
            g[:, 3 * hu:] = _sigmoid(z[:, 3 * hu:])
            cs[t + 1] = g[:, hu:2 * hu] * cs[t] + g[:, :hu] * g[:, 2 * hu:3 * hu]
            hs[t + 1] = g[:, 3 * hu:] * np.tanh(cs[t + 1])
        self._cache = (x, hs, cs, gates)
        return hs[1:]

    def backward(self, dout):
        x, hs, cs, gates = self._cache
        t_len, n, d = x.shape
        hu = self.units
        U = self.params["U"]
        dz_all = np.empty_like(gates)
        dh_next = np.zeros((n, hu), dtype=dout.dtype)
        dc_next = np.zeros((n, hu), dtype=dout.dtype)
        for t in reversed(range(t_len)):
            g = gates[t]
            i, f, gg, o = g[:, :hu], g[:, hu:2 * hu], g[:, 2 * hu:3 * hu], g[:, 3 * hu:]
            tc = np.tanh(cs[t + 1])
            dh = dout[t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            dz = dz_all[t]
            dz[:, :hu] = dc * gg * i * (1 - i)
            dz[:, hu:2 * hu] = dc * cs[t] * f * (1 - f)
            dz[:, 2 * hu:3 * hu] = dc * i * (1 - gg * gg)
            dz[:, 3 * hu:] = dh * tc * o * (1 - o)
            dh_next = dz @ U.T
            dc_next = dc * f
        dz_flat = dz_all.reshape(t_len * n, 4 * hu)
        self.grads["W"] = x.reshape(t_len * n, d).T @ dz_flat
        self.grads["U"] = hs[:-1].reshape(t_len * n, hu).T @ dz_flat
        self.grads["b"] = dz_flat.sum(axis=0)
        if not self.needs_input_grad:
            return None
        return (dz_flat @ self.params["W"].T).reshape(t_len, n, d)


class Linear(Layer):
    kind = "linear"

    def __init__(self, units: int):
        super().__init__()
        self.units = int(units)

    def spec(self):
        return LayerSpec(self.kind, {"units": self.units})

    def output_shape(self, in_shape):
        return (self.units,)

    def build(self, in_shape, rng, dtype):
        (d,) = in_shape
        self.params["W"] = _kaiming_uniform(rng, (d, self.units), d, dtype)
        self.params["b"] = np.zeros(self.units, dtype=dtype)
        return (self.units,)

    def forward(self, x, train=True):
        if x.ndim != 2 or x.shape[1] != self.params["W"].shape[0]:
            raise ShapeError(f"linear expects [N, {self.params['W'].shape[0]}], got {list(x.shape)}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._cache
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


class Softmax(Layer):
    kind = "softmax"

    def spec(self):
        return LayerSpec(self.kind, {})

    def forward(self, x, train=True):
        y = softmax(x)
        self._cache = y
        return y

    def backward(self, dout):
        y = self._cache
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))


class ToSequence(Layer):
    """Bridge a feature map ``[N, F, H, W]`` to a time-major sequence ``[W, N, F*H]``."""

    kind = "sequence"

    def spec(self):
        return LayerSpec(self.kind, {})

    def output_shape(self, in_shape):
        f, h, w = in_shape
        return (w, f * h)

    def forward(self, x, train=True):
        n, f, h, w = x.shape
        self._cache = x.shape
        return x.transpose(3, 0, 1, 2).reshape(w, n, f * h)

    def backward(self, dout):
        n, f, h, w = self._cache
        return dout.reshape(w, n, f, h).transpose(1, 2, 3, 0)


class LastStep(Layer):
    """Select the final time step of a sequence ``[T, N, H] -> [N, H]``."""

    kind = "last_step"

    def spec(self):
        return LayerSpec(self.kind, {})

    def output_shape(self, in_shape):
        return (in_shape[1],)

    def forward(self, x, train=True):
        self._cache = x.shape
        return x[-1]

    def backward(self, dout):
        dx = np.zeros(self._cache, dtype=dout.dtype)
        dx[-1] = dout
        return dx


LAYER_CLASSES = {cls.kind: cls for cls in (Conv2D, BatchNorm, ELU, MaxPool, AvgPool, LSTM,
                                            Linear, Softmax, ToSequence, LastStep)}
LAYER_KINDS = frozenset(LAYER_CLASSES)


def layer_from_spec(spec: LayerSpec) -> Layer:
    return LAYER_CLASSES[spec.kind](**spec.hyper)
