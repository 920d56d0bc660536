"""Full preprocessing chain for one recording.

notch (line noise) -> zero-phase 1-50 Hz band-pass -> decimate to 100 Hz
-> FastICA with EOG-correlated component rejection -> 1-s epochs.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import dsp
from .core import EPOCH_FS, EpochSet, FatigueClass, RawRecording, Role
from .ica import fit_ica, reject_eog_components

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: float = 60.0
    notch_q: float = 30.0
    band_lo: float = 1.0
    band_hi: float = 50.0
    band_order: int = 2
    target_fs: float = float(EPOCH_FS)
    ica: bool = True
    ica_threshold: float = 0.6
    ica_seed: int = 0
    ica_max_iter: int = 500
    ica_tol: float = 1e-6
    ica_max_fit_samples: int = 60000

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class PreprocessReport:
    rejected_components: list
    component_scores: list
    ica_converged: bool
    ica_iterations: int


def filter_recording(rec: RawRecording, cfg: PreprocessConfig = PreprocessConfig()) -> RawRecording:
    """Notch + band-pass + decimation, one channel at a time to bound memory."""
    fs = rec.sample_rate
    factor = fs / cfg.target_fs
    if factor != int(factor):
        raise ValueError(f"sample rate {fs} is not an integer multiple of {cfg.target_fs}")
    factor = int(factor)
    notch = dsp.design_notch(cfg.notch_hz, cfg.notch_q, fs) if cfg.notch_hz < fs / 2 else None
    bp = dsp.design_bandpass(cfg.band_lo, cfg.band_hi, cfg.band_order, fs)
    out = np.empty((rec.data.shape[0], rec.n_samples // factor))
    for i, x in enumerate(rec.data):
        y = x.astype(np.float64)
        if notch is not None:
            y = dsp.filtfilt(notch, y)
        y = dsp.filtfilt(bp, y)
        out[i] = dsp.decimate(y, factor)
    return RawRecording(cfg.target_fs, out, rec.montage)


def ica_clean(rec: RawRecording, cfg: PreprocessConfig = PreprocessConfig()):
    """Remove EOG-correlated independent components from the EEG channels."""
    eeg_idx = rec.montage.picks(Role.EEG)
    dec = fit_ica(rec.data[eeg_idx], seed=cfg.ica_seed, max_iter=cfg.ica_max_iter,
                  tol=cfg.ica_tol, max_fit_samples=cfg.ica_max_fit_samples)
    res = reject_eog_components(dec, rec.pick(Role.EOG), cfg.ica_threshold)
    data = np.array(rec.data, dtype=np.float64)
    data[eeg_idx] = res.data
    report = PreprocessReport(res.rejected, res.scores.tolist(), dec.converged, dec.n_iter[0])
    log.info("ICA rejected components %s (converged=%s)", res.rejected, dec.converged)
    return RawRecording(rec.sample_rate, data, rec.montage), report


def preprocess(rec: RawRecording, classes: Sequence[FatigueClass | int], subject_id: str,
               cfg: PreprocessConfig = PreprocessConfig()):
    """Raw recording + per-minute classes -> ``(EpochSet, PreprocessReport | None)``."""
    filtered = filter_recording(rec, cfg)
    report = None
    if cfg.ica:
        filtered, report = ica_clean(filtered, cfg)
    return dsp.epochize(filtered, classes, subject_id), report


def preprocess_session(session, cfg: PreprocessConfig = PreprocessConfig()):
    return preprocess(session.recording, session.classes, session.subject_id, cfg)


def cohort_epochs(sessions, cfg: PreprocessConfig = PreprocessConfig()) -> EpochSet:
    return EpochSet.concat(preprocess_session(s, cfg)[0] for s in sessions)
