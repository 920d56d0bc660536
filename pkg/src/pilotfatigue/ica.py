"""FastICA decomposition and EOG-guided component rejection.

Ocular artifacts are removed by unmixing the EEG channels, zeroing every
component whose absolute Pearson correlation with any EOG channel reaches a
threshold, and projecting the remaining components back to channel space.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class RankWarning(UserWarning):
    pass


class RejectionCapWarning(UserWarning):
    pass


def _sym_decorrelate(w):
    """``(W W^T)^(-1/2) W``: rows become orthonormal."""
    s, u = np.linalg.eigh(w @ w.T)
    s = np.clip(s, np.finfo(w.dtype).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ w


def whiten(X, rtol: float = 1e-10):
    """PCA-whiten ``X`` [n_ch, n_samples] after removing each channel's mean.

    Returns ``(K, Z)`` with ``Z = K (X - mean)`` and ``cov(Z) = I`` (biased
    covariance).  Directions with eigenvalue below ``rtol * max`` are dropped,
    so ``K`` is ``[k, n_ch]`` with ``k`` the numerical rank.
    """
    X = np.asarray(X, dtype=np.float64)
    n_ch, n = X.shape
    if n <= n_ch:
        raise ValueError(f"need more samples than channels ({n} <= {n_ch})")
    Xc = X - X.mean(axis=1, keepdims=True)
    const = np.flatnonzero(np.ptp(X, axis=1) == 0)
    if const.size:
        warnings.warn(f"constant channels {const.tolist()} reduce the rank", RankWarning,
                      stacklevel=2)
    cov = Xc @ Xc.T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    keep = evals > rtol * max(evals[0], np.finfo(float).tiny)
    k = int(keep.sum())
    if k < n_ch:
        warnings.warn(f"data rank {k} < {n_ch} channels; keeping {k} components", RankWarning,
                      stacklevel=2)
    K = (evecs[:, :k] / np.sqrt(evals[:k])).T
    Z = K @ Xc
    # one symmetric re-whitening pass removes residual round-off in cov(Z)
    c = Z @ Z.T / n
    s, u = np.linalg.eigh(c)
    fix = (u / np.sqrt(s)) @ u.T
    return fix @ K, fix @ Z


@dataclass(eq=False)
class Decomposition:
    whitening: np.ndarray      # [k, n_ch]
    unmixing: np.ndarray       # [k, k], orthonormal rows
    mixing: np.ndarray         # [n_ch, k]
    sources: np.ndarray        # [k, n_samples]
    mean: np.ndarray           # [n_ch]
    n_iter: list[int] = field(default_factory=list)
    final_change: float = float("nan")
    converged: bool = False

    @property
    def n_components(self) -> int:
        return self.unmixing.shape[0]

    def transform(self, X) -> np.ndarray:
        """Sources for new channel data."""
        return self.unmixing @ self.whitening @ (np.asarray(X) - self.mean[:, None])

    def reconstruct(self, keep=None) -> np.ndarray:
        """Channel-space data rebuilt from the components flagged in ``keep``."""
        if keep is None:
            keep = np.ones(self.n_components, dtype=bool)
        keep = np.asarray(keep, dtype=bool)
        return self.mixing[:, keep] @ self.sources[keep] + self.mean[:, None]

    def dump(self, directory):
        """Write CSV matrices plus a JSON sidecar with convergence metadata."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("whitening", "unmixing", "mixing", "sources", "mean"):
            arr = np.atleast_2d(getattr(self, name))
            np.savetxt(d / f"{name}.csv", arr, delimiter=",", fmt="%.17g")
        meta = {"n_components": self.n_components, "n_iter": self.n_iter,
                "final_change": self.final_change, "converged": self.converged}
        (d / "convergence.json").write_text(json.dumps(meta, indent=2))


def fastica(Z, k: int | None = None, seed: int = 0, max_iter: int = 500, tol: float = 1e-6,
            whitening=None, mean=None) -> Decomposition:
    """Symmetric FastICA with the tanh (log-cosh) contrast on whitened data ``Z``.

    Converges when ``max_i |1 - |<w_i_new, w_i_old>|| < tol``; otherwise stops
    after ``max_iter`` iterations with ``converged=False``.  ``whitening`` and
    ``mean`` (from :func:`whiten`) let the result map back to channel space;
    without them the mixing is expressed in whitened coordinates.
    """
    Z = np.asarray(Z, dtype=np.float64)
    k = Z.shape[0] if k is None else int(k)
    if not 1 <= k <= Z.shape[0]:
        raise ValueError(f"k must lie in [1, {Z.shape[0]}]")
    Zk = Z[:k]
    n = Zk.shape[1]
    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.standard_normal((k, k)))
    change, it, converged = np.inf, 0, False
    for it in range(1, max_iter + 1):
        gwx = np.tanh(W @ Zk)
        g_prime = (1.0 - gwx * gwx).mean(axis=1)
        W_new = _sym_decorrelate(gwx @ Zk.T / n - g_prime[:, None] * W)
        change = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0)))
        W = W_new
        if change < tol:
            converged = True
            break
    if whitening is None:
        whitening = np.eye(Z.shape[0])
        mean = np.zeros(Z.shape[0])
    K = np.asarray(whitening)[:k]
    sources = W @ Zk
    mixing = np.linalg.pinv(W @ K)
    return Decomposition(K, W, mixing, sources, np.asarray(mean, dtype=np.float64),
                         n_iter=[it] * k, final_change=change, converged=converged)


def fit_ica(X, seed: int = 0, max_iter: int = 500, tol: float = 1e-6,
            max_fit_samples: int | None = None) -> Decomposition:
    """Whiten + FastICA on channel data ``X`` [n_ch, n_samples].

    With ``max_fit_samples`` the unmixing is learned on an evenly strided
    subset; sources are then computed for every sample.
    """
    X = np.asarray(X, dtype=np.float64)
    stride = 1
    if max_fit_samples and X.shape[1] > max_fit_samples:
        stride = int(np.ceil(X.shape[1] / max_fit_samples))
    Xfit = X[:, ::stride]
    mean = Xfit.mean(axis=1)
    K, Z = whiten(Xfit)
    dec = fastica(Z, seed=seed, max_iter=max_iter, tol=tol, whitening=K, mean=mean)
    if stride > 1:
        dec.sources = dec.transform(X)
    return dec


@dataclass(eq=False)
class EogRejection:
    data: np.ndarray           # cleaned channel data
    rejected: list[int]
    scores: np.ndarray         # max |corr| with any EOG channel, per component


def _abs_corr(a, b):
    a = a - a.mean(axis=1, keepdims=True)
    b = b - b.mean(axis=1, keepdims=True)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    c = np.divide(a @ b.T, denom, out=np.zeros((a.shape[0], b.shape[0])), where=denom > 0)
    return np.abs(c)


def reject_eog_components(dec: Decomposition, eog, threshold: float = 0.6) -> EogRejection:
    """Zero every component whose max |Pearson r| with an EOG channel is >= ``threshold``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    eog = np.atleast_2d(np.asarray(eog, dtype=np.float64))
    if eog.shape[1] != dec.sources.shape[1]:
        raise ValueError("EOG and sources are not time-aligned")
    scores = _abs_corr(dec.sources, eog).max(axis=1)
    reject = scores >= threshold
    if reject.all():
        warnings.warn("threshold would remove every component; keeping the least EOG-like one",
                      RejectionCapWarning, stacklevel=2)
        reject[np.argmin(scores)] = False
    return EogRejection(dec.reconstruct(~reject), np.flatnonzero(reject).tolist(), scores)
