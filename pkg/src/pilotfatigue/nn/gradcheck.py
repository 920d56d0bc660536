"""Central finite-difference gradient checking for single layers."""
from __future__ import annotations

import numpy as np

from .layers import Layer


def rel_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a| + |n|, floor)``; returns the maximum."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)))


def numeric_grad(f, x, eps=1e-5):
    """Central differences of scalar ``f()`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        grad[i] = (fp - fm) / (2 * eps)
    return grad


def check_layer(layer: Layer, x, seed=0, eps=1e-5, train=True):
    """Compare a layer's backward pass with central differences of ``sum(out * R)``.

    ``layer`` must already be built with float64 parameters.  Returns a dict
    mapping ``"input"`` and each parameter name to its max relative error.
    """
    rng = np.random.default_rng(seed)
    x = np.array(x, dtype=np.float64)
    layer.needs_input_grad = True
    out = layer.forward(x, train=train)
    proj = rng.standard_normal(out.shape)

    def loss():
        return float(np.sum(layer.forward(x, train=train) * proj))

    layer.forward(x, train=train)
    dx = layer.backward(proj)
    analytic = {"input": dx}
    analytic.update({k: v.copy() for k, v in layer.grads.items()})
    errors = {"input": rel_error(dx, numeric_grad(loss, x, eps))}
    for name, p in layer.params.items():
        errors[name] = rel_error(analytic[name], numeric_grad(loss, p, eps))
    return errors
