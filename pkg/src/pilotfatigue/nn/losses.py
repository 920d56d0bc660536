from __future__ import annotations

import numpy as np

from .layers import softmax


def softmax_xent(logits, labels):
    """Mean softmax cross-entropy.

    Parameters
    ----------
    logits : array [N, K]
    labels : int array [N] of class indices, or one-hot array [N, K]

    Returns
    -------
    loss : float
        Mean negative log-likelihood.
    probs : array [N, K]
    dlogits : array [N, K]
        ``(probs - onehot) / N``.
    """
    logits = np.asarray(logits)
    n, k = logits.shape
    labels = np.asarray(labels)
    if labels.ndim == 2:
        onehot = labels.astype(logits.dtype)
    else:
        if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
            raise ValueError(f"label index out of range [0, {k})")
        onehot = np.zeros_like(logits)
        onehot[np.arange(n), labels.astype(int)] = 1
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    probs = np.exp(logp)
    loss = float(-(onehot * logp).sum() / n)
    return loss, probs, (probs - onehot) / n


__all__ = ["softmax", "softmax_xent"]
