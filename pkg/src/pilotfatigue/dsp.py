"""Preprocessing primitives: IIR design, zero-phase filtering, decimation, epoching.

Filters are cascades of biquads stored as second-order sections
``[b0, b1, b2, 1, a1, a2]`` so that numerically fragile high-order
polynomials are never formed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import signal as _sig

from .core import EPOCH_FS, EPOCH_SAMPLES, EpochSet, FatigueClass, RawRecording, Role


class FilterDesignError(ValueError):
    pass


class SignalLengthError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FilterSpec:
    sos: np.ndarray
    design_kind: str          # "bandpass" | "notch"
    fs: float
    f_lo: Optional[float] = None
    f_hi: Optional[float] = None
    f_center: Optional[float] = None
    q: Optional[float] = None
    order: Optional[int] = None

    def __post_init__(self):
        sos = np.array(self.sos, dtype=np.float64)
        if sos.ndim != 2 or sos.shape[1] != 6:
            raise FilterDesignError("sos must be [n_stages, 6]")
        if not np.isfinite(sos).all():
            raise FilterDesignError("non-finite filter coefficients")
        if not np.allclose(sos[:, 3], 1.0):
            raise FilterDesignError("a0 of every stage must be 1")
        radii = self.pole_radii(sos)
        if radii.max() >= 1.0:
            raise FilterDesignError(f"unstable filter: pole radius {radii.max():.6f} >= 1")
        sos.setflags(write=False)
        object.__setattr__(self, "sos", sos)

    @staticmethod
    def pole_radii(sos) -> np.ndarray:
        return np.concatenate([np.abs(np.roots(s[3:])) for s in sos])

    @property
    def stages(self) -> list[tuple[float, float, float, float, float]]:
        """Per-stage ``(b0, b1, b2, a1, a2)``."""
        return [(s[0], s[1], s[2], s[4], s[5]) for s in self.sos]

    def response(self, freqs) -> np.ndarray:
        """Complex single-pass frequency response at ``freqs`` (Hz)."""
        z1 = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / self.fs)
        h = np.ones_like(z1)
        for b0, b1, b2, _, a1, a2 in self.sos:
            h *= (b0 + b1 * z1 + b2 * z1 * z1) / (1.0 + a1 * z1 + a2 * z1 * z1)
        return h

    def group_delay_estimate(self) -> float:
        """Largest group delay (samples) over the passband, |H| >= 1/sqrt(2)."""
        f = np.linspace(0, self.fs / 2, 4097)[1:-1]
        h = self.response(f)
        phase = np.unwrap(np.angle(h))
        gd = -np.gradient(phase, 2 * np.pi * f / self.fs)
        passband = np.abs(h) >= 1 / math.sqrt(2)
        return float(max(gd[passband].max(initial=0.0), 0.0))


def _check_band(fs, *freqs):
    if fs <= 0:
        raise FilterDesignError("fs must be positive")
    for f in freqs:
        if not 0 < f < fs / 2:
            raise FilterDesignError(f"frequency {f} Hz outside (0, Nyquist={fs / 2} Hz)")


def design_bandpass(lo: float, hi: float, order: int = 2, fs: float = 1000.0) -> FilterSpec:
    """Butterworth band-pass from an ``order``-pole analog low-pass prototype.

    The prototype is mapped to a band-pass around the prewarped edges and
    then through the bilinear transform, giving ``order`` biquads (2*order
    poles).  Edges sit exactly at -3 dB.
    """
    _check_band(fs, lo, hi)
    if not lo < hi:
        raise FilterDesignError("lo must be < hi")
    if order < 1:
        raise FilterDesignError("order must be >= 1")
    k2 = 2.0 * fs
    w1 = k2 * math.tan(math.pi * lo / fs)
    w2 = k2 * math.tan(math.pi * hi / fs)
    bw, w0sq = w2 - w1, w1 * w2
    proto = [np.exp(1j * math.pi * (2 * k + order - 1) / (2 * order)) for k in range(1, order + 1)]
    s_poles = []
    for p in proto:
        disc = np.sqrt((p * bw) ** 2 - 4 * w0sq + 0j)
        s_poles += [(p * bw + disc) / 2, (p * bw - disc) / 2]
    z_poles = [(k2 + s) / (k2 - s) for s in s_poles]
    upper = sorted((z for z in z_poles if z.imag > 1e-12), key=lambda z: (abs(z), z.real))
    real = sorted(z.real for z in z_poles if abs(z.imag) <= 1e-12)
    pairs = [(z, z.conjugate()) for z in upper]
    pairs += [(complex(real[i]), complex(real[i + 1])) for i in range(0, len(real) - 1, 2)]
    if len(pairs) != order:
        raise FilterDesignError("pole pairing failed")
    sos = np.zeros((order, 6))
    for i, (za, zb) in enumerate(pairs):
        sos[i] = [1.0, 0.0, -1.0, 1.0, -(za + zb).real, (za * zb).real]
    # unit gain at the digital image of the analog center frequency
    f0 = fs / math.pi * math.atan(math.sqrt(w0sq) / k2)
    zc = np.exp(-2j * math.pi * f0 / fs)
    stage_gain = [abs((1 - zc * zc) / (1 + a1 * zc + a2 * zc * zc)) for *_, a1, a2 in sos]
    sos[:, :3] /= np.array(stage_gain)[:, None]
    return FilterSpec(sos, "bandpass", fs, f_lo=lo, f_hi=hi, order=order)


def design_notch(f_center: float = 60.0, q: float = 30.0, fs: float = 1000.0) -> FilterSpec:
    """Second-order IIR notch with -3 dB bandwidth ``f_center / q``."""
    _check_band(fs, f_center)
    if q <= 0:
        raise FilterDesignError("Q must be positive")
    w0 = 2 * math.pi * f_center / fs
    beta = math.tan(w0 / q / 2)
    g = 1.0 / (1.0 + beta)
    c = math.cos(w0)
    sos = np.array([[g, -2 * g * c, g, 1.0, -2 * g * c, 2 * g - 1.0]])
    return FilterSpec(sos, "notch", fs, f_center=f_center, q=q, order=2)


def min_signal_length(spec: FilterSpec) -> int:
    return 3 * 2 * len(spec.sos)


def filtfilt(spec: FilterSpec, x, axis: int = -1) -> np.ndarray:
    """Forward-backward filtering (zero phase, magnitude squared).

    Edges are extended by odd reflection over ``3 x`` the passband group
    delay (capped at ``len(x) - 1``) and each pass starts from the
    steady-state section state, which suppresses start-up transients.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[axis]
    if n <= min_signal_length(spec):
        raise SignalLengthError(f"signal of length {n} is too short for filtfilt "
                                f"(needs > {min_signal_length(spec)} samples)")
    padlen = max(min_signal_length(spec), int(math.ceil(3 * spec.group_delay_estimate())))
    padlen = min(padlen, n - 1)
    x = np.moveaxis(x, axis, -1)
    left = 2 * x[..., :1] - x[..., padlen:0:-1]
    right = 2 * x[..., -1:] - x[..., -2:-padlen - 2:-1]
    ext = np.concatenate([left, x, right], axis=-1)
    sos = np.array(spec.sos)  # scipy's kernel wants a writable buffer
    zi = _sig.sosfilt_zi(sos)                           # [n_stages, 2]
    zi_shape = (len(spec.sos),) + (1,) * (ext.ndim - 1) + (2,)
    zi = zi.reshape(zi_shape)
    x0 = ext[..., :1][None, ...]
    y, _ = _sig.sosfilt(sos, ext, axis=-1, zi=zi * x0)
    y = y[..., ::-1]
    y0 = y[..., :1][None, ...]
    y, _ = _sig.sosfilt(sos, y, axis=-1, zi=zi * y0)
    y = y[..., ::-1][..., padlen:padlen + n]
    return np.ascontiguousarray(np.moveaxis(y, -1, axis))


def decimate(x, factor: int = 10, axis: int = -1) -> np.ndarray:
    """Keep every ``factor``-th sample; the trailing partial block is dropped.

    The caller must band-limit first (the 1-50 Hz band-pass acts as the
    anti-alias filter).
    """
    if int(factor) != factor or factor <= 0:
        raise ValueError(f"decimation factor must be a positive integer, got {factor}")
    x = np.asarray(x)
    n = x.shape[axis] // factor * factor
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, n, factor)
    return x[tuple(sl)].copy()


def epochize(rec: RawRecording, labels: Sequence[FatigueClass | int], subject_id: str = "S1",
             epoch_len: int = EPOCH_SAMPLES) -> EpochSet:
    """Split a 100 Hz recording into non-overlapping 1-s EEG epochs.

    ``labels`` holds one class per minute; every epoch inherits the label of
    the minute that contains it.  A trailing partial second is dropped.
    """
    if rec.sample_rate != EPOCH_FS:
        raise ValueError(f"epochize expects {EPOCH_FS} Hz input, got {rec.sample_rate}")
    if rec.n_samples == 0:
        raise SignalLengthError("empty recording")
    n_ep = rec.n_samples // epoch_len
    if n_ep == 0:
        raise SignalLengthError("recording shorter than one epoch")
    per_min = int(60 * EPOCH_FS // epoch_len)
    minutes = np.arange(n_ep) // per_min
    if len(labels) < minutes[-1] + 1:
        raise ValueError(f"{len(labels)} minute labels for {minutes[-1] + 1} minutes of data")
    eeg = rec.pick(Role.EEG)[:, :n_ep * epoch_len]
    data = eeg.reshape(eeg.shape[0], n_ep, epoch_len).transpose(1, 0, 2)
    lab = np.array([int(FatigueClass(labels[m])) for m in minutes])
    return EpochSet(data, lab, [subject_id] * n_ep, minutes, rec.montage.eeg_names)
