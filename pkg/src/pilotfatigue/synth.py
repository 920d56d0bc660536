"""Synthetic EEG sessions with a planted occipital theta/alpha fatigue signature.

A session is a 30 EEG + 4 EOG recording.  Every EEG channel carries 1/f
background noise plus, for each of the four bands, a dominant sinusoid and
two weaker ones (one per third of the band, jittered).  Their relative phases drift as a
Brownian motion, so band power fluctuates from second to second without any
slow deterministic beat.  On O1/Oz/O2 the theta and alpha amplitudes are multiplied by a
class-dependent gain (NS 1, LF 1 + g/2, HF 1 + g).  Blinks are injected as
shared low-frequency transients on VEOG and, attenuated, on frontal EEG.

Nothing here aims at physiological realism; the generator exists to give the
pipeline a signal of known strength.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (BANDS, EPOCH_FS, EPOCH_SAMPLES, OCCIPITAL, EpochSet, FatigueClass, KssLabel,
                   Montage, RawRecording, Role, fill_missing_kss, map_kss_to_class)

SIGNATURE_BANDS = ("theta", "alpha")
N_SINES = 3


@dataclass(frozen=True)
class SubjectProfile:
    subject_id: str = "S1"
    aperiodic_exponent: float = 1.0
    background_rms: float = 3.0                     # uV, 1/f component
    band_amplitudes: dict = field(default_factory=lambda: {
        "delta": 2.0, "theta": 6.0, "alpha": 8.0, "beta": 1.5})   # uV, dominant sinusoid
    sine_weights: tuple = (1.0, 0.4, 0.4)           # relative amplitudes within a band
    phase_diffusion: float = 2.0                    # rad^2 / s
    kss_start: float = 2.0
    kss_end: float = 8.0
    kss_jitter: int = 1
    missed_response_rate: float = 0.0
    blink_rate: float = 12.0                        # events per minute
    blink_amplitude: float = 150.0                  # uV on VEOG
    signature_gain: float = 1.0
    signature_channels: tuple = OCCIPITAL

    def __post_init__(self):
        if self.background_rms <= 0 or any(a <= 0 for a in self.band_amplitudes.values()):
            raise ValueError("amplitudes must be positive")
        if len(self.sine_weights) != N_SINES or min(self.sine_weights) < 0:
            raise ValueError(f"sine_weights needs {N_SINES} non-negative entries")
        if not 1 <= self.kss_start <= 9 or not 1 <= self.kss_end <= 9:
            raise ValueError("trajectory levels must lie in [1, 9]")

    def class_gain(self, cls: FatigueClass) -> float:
        return 1.0 + self.signature_gain * int(cls) / 2.0


@dataclass(frozen=True)
class SessionSpec:
    duration_min: int = 60
    sample_rate: float = 1000.0
    seed: int = 0

    def __post_init__(self):
        if self.duration_min < 1:
            raise ValueError("duration must be at least one minute")
        if self.sample_rate % EPOCH_FS:
            raise ValueError(f"sample rate must be a multiple of {EPOCH_FS} Hz")


PRESETS = {
    "full": SessionSpec(duration_min=60, sample_rate=1000.0),
    "desk": SessionSpec(duration_min=10, sample_rate=200.0),
}


@dataclass(eq=False)
class Session:
    subject_id: str
    recording: RawRecording
    responses: list[Optional[KssLabel]]     # as "entered"; None = missed
    schedule: list[KssLabel]                # after the missed-response fallback
    classes: list[FatigueClass]
    blink: np.ndarray                       # planted blink waveform (uV on VEOG scale)
    profile: SubjectProfile
    spec: SessionSpec


def kss_trajectory(profile: SubjectProfile, n_minutes: int, rng) -> list[Optional[KssLabel]]:
    """Linear drift from ``kss_start`` to ``kss_end`` with integer jitter.

    The first, middle and last minutes are pinned into NS, LF and HF so that
    every session contains all three classes.
    """
    base = np.linspace(profile.kss_start, profile.kss_end, n_minutes)
    jitter = rng.integers(-profile.kss_jitter, profile.kss_jitter + 1, size=n_minutes)
    levels = np.clip(np.rint(base) + jitter, 1, 9).astype(int)
    if n_minutes >= 3:
        levels[0] = min(levels[0], 3)
        levels[n_minutes // 2] = min(max(levels[n_minutes // 2], 4), 6)
        levels[-1] = max(levels[-1], 7)
    missed = rng.random(n_minutes) < profile.missed_response_rate
    return [None if missed[m] else KssLabel(int(levels[m]), m) for m in range(n_minutes)]


def pink_noise(n: int, exponent: float, rng, fs: float = 1.0) -> np.ndarray:
    """Unit-variance Gaussian noise with power spectrum ~ 1/f**exponent (DC removed)."""
    spec = rng.standard_normal(n // 2 + 1) + 1j * rng.standard_normal(n // 2 + 1)
    f = np.fft.rfftfreq(n, 1.0 / fs)
    scale = np.zeros_like(f)
    scale[1:] = f[1:] ** (-exponent / 2.0)
    x = np.fft.irfft(spec * scale, n)
    return x / x.std()


def _blink_train(n: int, fs: float, rate_per_min: float, amplitude: float, rng) -> np.ndarray:
    dur = n / fs
    n_ev = rng.poisson(rate_per_min * dur / 60.0)
    width = int(round(0.4 * fs))
    shape = 0.5 * (1 - np.cos(2 * np.pi * np.arange(width) / width))
    out = np.zeros(n)
    for onset in np.sort(rng.integers(0, max(n - width, 1), size=n_ev)):
        out[onset:onset + width] += amplitude * rng.uniform(0.8, 1.2) * shape[:n - onset]
    return out


def blink_weight(ch_y: float) -> float:
    """Attenuation of the VEOG blink at a scalp site (nose at y = 1)."""
    return 0.6 * max((ch_y + 0.3) / 1.3, 0.0) ** 2


def _oscillator_params(profile: SubjectProfile, n_eeg: int, rng):
    """Per (channel, band): frequencies [3] and initial phases [3]."""
    freqs = np.empty((n_eeg, len(BANDS), N_SINES))
    phases = rng.uniform(0, 2 * np.pi, size=(n_eeg, len(BANDS), N_SINES))
    for b, band in enumerate(BANDS):
        # one sinusoid per third of the band keeps beat periods short
        lo, hi = band.lo + 0.5, band.hi - 0.5
        w = (hi - lo) / N_SINES
        centers = lo + w * (np.arange(N_SINES) + 0.5)
        freqs[:, b] = centers + rng.uniform(-w / 4, w / 4, size=(n_eeg, N_SINES))
    return freqs, phases


# each sinusoid follows the shared drift with its own sign, so pairwise phase
# differences diffuse as well
_DRIFT_COEF = np.array([-1.0, 0.0, 1.0])


def _phase_drift(n: int, fs: float, diffusion: float, rng) -> np.ndarray:
    return np.cumsum(rng.standard_normal(n)) * math.sqrt(diffusion / fs)


def _gain_matrix(profile: SubjectProfile, montage: Montage):
    """[n_eeg, n_bands, 3 classes] amplitude multipliers."""
    names = montage.eeg_names
    g = np.ones((len(names), len(BANDS), 3))
    sig_bands = [i for i, b in enumerate(BANDS) if b.name in SIGNATURE_BANDS]
    for ch in profile.signature_channels:
        c = names.index(ch)
        for b in sig_bands:
            g[c, b] = [profile.class_gain(k) for k in FatigueClass]
    return g


def generate_session(profile: SubjectProfile, spec: SessionSpec = PRESETS["full"],
                     montage: Montage | None = None) -> Session:
    """Render one session; deterministic given ``spec.seed``."""
    montage = montage or Montage.default()
    rng = np.random.default_rng(spec.seed)
    fs = spec.sample_rate
    n_min = spec.duration_min
    n = int(round(n_min * 60 * fs))
    responses = kss_trajectory(profile, n_min, rng)
    schedule = fill_missing_kss(responses)
    classes = [map_kss_to_class(k) for k in schedule]
    eeg_idx = montage.picks(Role.EEG)
    n_eeg = len(eeg_idx)
    freqs, phases = _oscillator_params(profile, n_eeg, rng)
    gains = _gain_matrix(profile, montage)
    amps = np.array([profile.band_amplitudes[b.name] for b in BANDS])
    # per-sample class index (minute blocks)
    per_min = int(round(60 * fs))
    cls_idx = np.repeat(np.array([int(c) for c in classes], dtype=np.int8), per_min)[:n]
    t = np.arange(n) / fs
    blink = _blink_train(n, fs, profile.blink_rate, profile.blink_amplitude, rng)
    data = np.empty((len(montage), n), dtype=np.float32)
    buf = np.empty(n)
    for ci, ch in enumerate(eeg_idx):
        x = profile.background_rms * pink_noise(n, profile.aperiodic_exponent, rng, fs)
        for b in range(len(BANDS)):
            drift = _phase_drift(n, fs, profile.phase_diffusion, rng)
            osc = np.zeros(n)
            for j in range(N_SINES):
                # in place: sin(2 pi f t + phase + coef * drift) * weight
                np.multiply(t, 2 * np.pi * freqs[ci, b, j], out=buf)
                buf += phases[ci, b, j]
                if _DRIFT_COEF[j] > 0:
                    buf += drift
                elif _DRIFT_COEF[j] < 0:
                    buf -= drift
                np.sin(buf, out=buf)
                buf *= profile.sine_weights[j]
                osc += buf
            if np.all(gains[ci, b] == 1.0):
                x += amps[b] * osc
            else:
                x += amps[b] * gains[ci, b][cls_idx] * osc
        x += blink_weight(montage.channels[ch].y) * blink
        data[ch] = x
    eog_idx = montage.picks(Role.EOG)
    eog_gain = {"VEOG-up": 1.0, "VEOG-down": -0.8, "HEOG-left": 0.15, "HEOG-right": -0.15}
    for ch in eog_idx:
        name = montage.channels[ch].name
        saccades = 20.0 * pink_noise(n, 2.0, rng, fs)
        hor = saccades if name.startswith("HEOG") else 0.0
        data[ch] = (eog_gain.get(name, 0.0) * blink + hor
                    + 3.0 * pink_noise(n, 1.0, rng, fs))
    rec = RawRecording(fs, data, montage)
    return Session(profile.subject_id, rec, responses, schedule, classes, blink, profile, spec)


def jittered_profile(subject_id: str, rng, base: SubjectProfile | None = None) -> SubjectProfile:
    base = base or SubjectProfile()
    j = lambda v, rel: float(v * rng.uniform(1 - rel, 1 + rel))  # noqa: E731
    return replace(
        base,
        subject_id=subject_id,
        aperiodic_exponent=j(base.aperiodic_exponent, 0.15),
        background_rms=j(base.background_rms, 0.15),
        band_amplitudes={k: j(v, 0.15) for k, v in base.band_amplitudes.items()},
        blink_rate=j(base.blink_rate, 0.3),
        blink_amplitude=j(base.blink_amplitude, 0.2),
    )


def subject_seed(base_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([base_seed, index]).generate_state(1)[0])


def cohort_profiles(n_subjects: int = 10, base_seed: int = 0,
                    base: SubjectProfile | None = None) -> list[tuple[SubjectProfile, int]]:
    """Jittered profiles and independent per-subject seeds."""
    if n_subjects < 1:
        raise ValueError("need at least one subject")
    out = []
    for i in range(n_subjects):
        seed = subject_seed(base_seed, i)
        rng = np.random.default_rng([seed, 1])
        out.append((jittered_profile(f"S{i + 1}", rng, base), seed))
    return out


def generate_cohort(n_subjects: int = 10, base_seed: int = 0, preset: str | SessionSpec = "full",
                    base: SubjectProfile | None = None, montage: Montage | None = None):
    """Yield one :class:`Session` per subject (lazily, to bound memory)."""
    spec0 = PRESETS[preset] if isinstance(preset, str) else preset
    for profile, seed in cohort_profiles(n_subjects, base_seed, base):
        yield generate_session(profile, replace(spec0, seed=seed), montage)


def generate_epochs(profile: SubjectProfile, n_per_class: int, seed: int = 0,
                    montage: Montage | None = None) -> EpochSet:
    """Independent 1-s epochs at 100 Hz drawn from the same signal model.

    Skips the raw-rate session and the preprocessing chain; intended for
    statistical checks that need many cheap replicates.
    """
    montage = montage or Montage.default()
    rng = np.random.default_rng(seed)
    n_eeg = len(montage.picks(Role.EEG))
    freqs, _ = _oscillator_params(profile, n_eeg, rng)
    gains = _gain_matrix(profile, montage)
    amps = np.array([profile.band_amplitudes[b.name] for b in BANDS])
    t = np.arange(EPOCH_SAMPLES) / EPOCH_FS
    labels = np.repeat(np.arange(3), n_per_class)
    n_ep = labels.size
    data = np.empty((n_ep, n_eeg, EPOCH_SAMPLES))
    for e in range(n_ep):
        x = profile.background_rms * np.stack(
            [pink_noise(4 * EPOCH_SAMPLES, profile.aperiodic_exponent, rng, EPOCH_FS)
             [EPOCH_SAMPLES:2 * EPOCH_SAMPLES] for _ in range(n_eeg)])
        ph = rng.uniform(0, 2 * np.pi, size=(n_eeg, len(BANDS), N_SINES))
        drift = (np.cumsum(rng.standard_normal((n_eeg, len(BANDS), 1, EPOCH_SAMPLES)), axis=-1)
                 * math.sqrt(profile.phase_diffusion / EPOCH_FS))
        amp = amps[None, :] * gains[:, :, labels[e]]
        arg = 2 * np.pi * freqs[..., None] * t + ph[..., None] + _DRIFT_COEF[:, None] * drift
        osc = (np.sin(arg) * np.asarray(profile.sine_weights)[:, None]).sum(axis=2)
        data[e] = x + np.einsum("cb,cbt->ct", amp, osc)
    return EpochSet(data, labels, [profile.subject_id] * n_ep, np.zeros(n_ep, dtype=int),
                    montage.eeg_names)
