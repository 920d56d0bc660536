"""Sequential container with shape tracing and numerical hygiene checks."""
from __future__ import annotations

from typing import Iterable, Iterator

import numpy as np

from .layers import Layer, LayerSpec, ShapeError, Softmax, layer_from_spec


class NumericalError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


def _check_finite(arr, idx, layer, stage):
    # a finite sum implies finite entries; only re-scan when it is not
    if arr is not None and not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise NumericalError(f"non-finite values in {stage} pass at layer {idx} ({layer.kind})")


class Network:
    """Ordered stack of layers built for a fixed per-sample input shape.

    ``forward`` runs every layer (a trailing softmax included) while
    ``logits`` stops before a trailing softmax; training pairs the logits
    with :func:`pilotfatigue.nn.losses.softmax_xent`.
    """

    def __init__(self, specs: Iterable[LayerSpec], input_shape, seed: int = 0,
                 dtype=np.float32, check_finite: bool = True):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.check_finite = check_finite
        self.layers: list[Layer] = [layer_from_spec(s) for s in self.specs]
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        self.trace: list[tuple[str, tuple[int, ...]]] = [("input", shape)]
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
            self.trace.append((layer.kind, shape))
        if self.layers:
            self.layers[0].needs_input_grad = False
        self.output_shape = shape

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    @property
    def _body(self):
        if self.layers and isinstance(self.layers[-1], Softmax):
            return self.layers[:-1]
        return self.layers

    def _run(self, layers, x, train):
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(self.describe_mismatch(x.shape))
        x = np.asarray(x, dtype=self.dtype)
        for i, layer in enumerate(layers):
            x = layer.forward(x, train=train)
            if self.check_finite:
                _check_finite(x, i, layer, "forward")
        return x

    def describe_mismatch(self, got) -> str:
        lines = [f"expected input [N, {', '.join(map(str, self.input_shape))}], "
                 f"got {list(got)}; layer trace:"]
        lines += [f"  {kind:<10} {list(shape)}" for kind, shape in self.trace]
        return "\n".join(lines)

    def logits(self, x, train=False):
        return self._run(self._body, x, train)

    def forward(self, x, train=False):
        return self._run(self.layers, x, train)

    def backward(self, dlogits):
        """Backpropagate a gradient w.r.t. the logits; fills each layer's ``grads``."""
        d = dlogits
        body = self._body
        for i in reversed(range(len(body))):
            d = body[i].backward(d)
            if self.check_finite:
                _check_finite(d, i, body[i], "backward")
                for g in body[i].grads.values():
                    _check_finite(g, i, body[i], "backward")
        return d

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        """``(name, array)`` pairs in declaration order."""
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in layer.params.items():
                out.append((f"{i}.{layer.kind}.{name}", p))
        return out

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        """Parameters followed by non-trainable buffers (batch-norm running stats)."""
        out = self.parameters()
        for i, layer in enumerate(self.layers):
            for name, b in layer.buffers.items():
                out.append((f"{i}.{layer.kind}.{name}", b))
        return out

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[name] for layer in self.layers for name in layer.params]

    def n_params(self) -> int:
        return sum(layer.n_params() for layer in self.layers)

    def format_trace(self) -> str:
        """One line per layer: kind, geometry hyperparameters and output shape."""
        rows = [("input", "", self.trace[0][1])]
        for layer, (kind, shape) in zip(self.layers, self.trace[1:]):
            rows.append((kind, _geometry(layer), shape))
        return "\n".join(f"{k:<10} {g:<20} {'x'.join(map(str, s))}".rstrip()
                         for k, g, s in rows)


_GEOMETRY_KEYS = {"filters": "maps", "kernel": "kernel", "size": "size", "units": "units"}


def _geometry(layer: Layer) -> str:
    try:
        hyper = layer.spec().hyper
    except NotImplementedError:
        return ""
    parts = []
    for key, label in _GEOMETRY_KEYS.items():
        if key in hyper:
            v = hyper[key]
            parts.append(f"{label}={'x'.join(map(str, v)) if isinstance(v, tuple) else v}")
    return " ".join(parts)
