"""Spectral features: Welch PSD, band power, PSD-SVM feature vectors, per-channel band statistics."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import signal as _sig
from scipy import stats as _stats

from .core import BANDS, EPOCH_FS, BandDef, Epoch, EpochSet, FatigueClass

LOG_FLOOR = 1e-12
SIGNIFICANCE = 0.05


class InsufficientClassesError(ValueError):
    pass


def welch_psd(x, fs: float = EPOCH_FS, seg_len: int = 100, overlap: float = 0.5):
    """One-sided Welch PSD with a Hann window along the last axis.

    Returns ``(freqs, psd)``; ``psd`` integrates over frequency to the signal
    variance.
    """
    x = np.asarray(x, dtype=np.float64)
    if seg_len > x.shape[-1]:
        raise ValueError(f"seg_len {seg_len} exceeds signal length {x.shape[-1]}")
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    return _sig.welch(x, fs=fs, window="hann", nperseg=seg_len,
                      noverlap=int(round(overlap * seg_len)), axis=-1)


def band_weights(freqs, band: BandDef) -> np.ndarray:
    """Weights ``w`` with ``w @ psd`` equal to the integral of the linearly
    interpolated PSD over ``[band.lo, band.hi]``.

    Because the interpolant is continuous, integrals over adjacent bands add
    up exactly to the integral over their union.
    """
    f = np.asarray(freqs, dtype=np.float64)
    if band.lo < f[0] or band.hi > f[-1]:
        raise ValueError(f"band {band.name} [{band.lo}, {band.hi}] outside PSD range "
                         f"[{f[0]}, {f[-1]}]")
    w = np.zeros_like(f)
    for i in range(len(f) - 1):
        f0, f1 = f[i], f[i + 1]
        a, b = max(f0, band.lo), min(f1, band.hi)
        if b <= a:
            continue
        h = f1 - f0
        # integral of the two hat functions over [a, b]
        t0, t1 = (a - f0) / h, (b - f0) / h
        w[i] += h * ((t1 - t1 * t1 / 2) - (t0 - t0 * t0 / 2))
        w[i + 1] += h * (t1 * t1 - t0 * t0) / 2
    return w


def band_power(freqs, psd, band: BandDef) -> float | np.ndarray:
    """Integrated power of ``psd`` (last axis) inside ``band``."""
    return np.asarray(psd) @ band_weights(freqs, band)


def total_power(freqs, psd):
    return np.trapezoid(psd, freqs, axis=-1)


def band_power_table(freqs, psd, bands: Sequence[BandDef] = BANDS) -> np.ndarray:
    """Band powers for every band: ``[..., n_bands]``."""
    W = np.stack([band_weights(freqs, b) for b in bands], axis=1)
    return np.asarray(psd) @ W


@dataclass(frozen=True, eq=False)
class FeatureVector:
    """120 band powers, channel-major (``ch0_delta, ch0_theta, ..., ch29_beta``)."""

    values: np.ndarray
    log_scaled: bool = True

    def __post_init__(self):
        if not np.isfinite(self.values).all():
            raise ValueError("feature vector contains non-finite values")


def feature_names(channel_names: Sequence[str], bands: Sequence[BandDef] = BANDS) -> list[str]:
    return [f"{ch}_{b.name}" for ch in channel_names for b in bands]


def epoch_band_powers(data, fs: float = EPOCH_FS, seg_len: int = 100, overlap: float = 0.5):
    """Linear band powers ``[..., n_channels, 4]`` for epoch arrays ``[..., n_channels, n_samples]``."""
    freqs, psd = welch_psd(data, fs, seg_len, overlap)
    return band_power_table(freqs, psd)


def feature_matrix(data, log_scaled: bool = True, **welch_kw) -> np.ndarray:
    """Feature rows ``[n, 120]`` for epoch arrays ``[n, 30, 100]``."""
    bp = epoch_band_powers(np.asarray(data), **welch_kw)
    flat = bp.reshape(bp.shape[0], -1)
    return np.log10(flat + LOG_FLOOR) if log_scaled else flat


def epoch_features(ep: Epoch | np.ndarray, log_scaled: bool = True, **welch_kw) -> FeatureVector:
    data = ep.data if isinstance(ep, Epoch) else np.asarray(ep)
    return FeatureVector(feature_matrix(data[None], log_scaled, **welch_kw)[0], log_scaled)


@dataclass(frozen=True)
class TopoStat:
    channel: str
    band: BandDef
    statistic: float
    p_value: float

    def __post_init__(self):
        if not 0.0 <= self.p_value <= 1.0:
            raise ValueError(f"p-value {self.p_value} outside [0, 1]")

    @property
    def significant(self) -> bool:
        return self.p_value < SIGNIFICANCE


def kruskal_wallis(*groups) -> tuple[float, float]:
    """Tie-corrected Kruskal-Wallis H and its chi-square p-value; constant data gives (0, 1)."""
    allv = np.concatenate(groups)
    if np.ptp(allv) == 0:
        return 0.0, 1.0
    res = _stats.kruskal(*groups)
    return float(res.statistic), float(min(max(res.pvalue, 0.0), 1.0))


def topo_scan(epochs: EpochSet, band: BandDef, **welch_kw) -> list[TopoStat]:
    """Per-channel Kruskal-Wallis test of band power across NS / LF / HF.

    No multiple-comparison correction is applied.
    """
    counts = epochs.class_counts()
    missing = [c.name for c, n in counts.items() if n < 2]
    if missing:
        raise InsufficientClassesError(f"classes {missing} have fewer than 2 epochs")
    bp = _single_band(epochs.data, band, **welch_kw)     # [n_epochs, n_channels]
    out = []
    for ch_idx, ch in enumerate(epochs.channel_names):
        groups = [bp[epochs.labels == int(c), ch_idx] for c in FatigueClass]
        h, p = kruskal_wallis(*groups)
        out.append(TopoStat(ch, band, h, p))
    return out


def _single_band(data, band, **welch_kw):
    freqs, psd = welch_psd(data, **welch_kw)
    return band_power(freqs, psd, band)


def class_mean_band_power(epochs: EpochSet, band: BandDef, **welch_kw) -> dict[FatigueClass, np.ndarray]:
    """Mean linear band power per channel for each class present."""
    bp = _single_band(epochs.data, band, **welch_kw)
    return {c: bp[epochs.labels == int(c)].mean(axis=0)
            for c in FatigueClass if (epochs.labels == int(c)).any()}
