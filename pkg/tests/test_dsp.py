import math

import numpy as np
import pytest
from scipy import signal

from pilotfatigue import dsp
from pilotfatigue.core import FatigueClass, RawRecording


def analytic_bandpass_mag(f, lo, hi, order, fs):
    """|H| of a bilinear Butterworth band-pass with prewarped edges."""
    w = np.tan(np.pi * np.asarray(f) / fs)
    w1, w2 = math.tan(math.pi * lo / fs), math.tan(math.pi * hi / fs)
    x = (w * w - w1 * w2) / (w * (w2 - w1))
    return 1.0 / np.sqrt(1.0 + x ** (2 * order))


PROBES = np.geomspace(0.2, 450.0, 20)


@pytest.mark.parametrize("lo,hi,order,fs", [(1, 50, 2, 1000.0), (1, 50, 2, 200.0), (4, 8, 3, 100.0)])
def test_bandpass_matches_analytic_butterworth(lo, hi, order, fs):
    spec = dsp.design_bandpass(lo, hi, order, fs)
    probes = PROBES[PROBES < 0.99 * fs / 2]
    got = np.abs(spec.response(probes))
    want = analytic_bandpass_mag(probes, lo, hi, order, fs)
    np.testing.assert_allclose(got, want, rtol=0.01)
    # -3 dB exactly at the edges
    np.testing.assert_allclose(np.abs(spec.response([lo, hi])), 1 / math.sqrt(2), rtol=1e-9)


def test_bandpass_agrees_with_scipy_butter():
    spec = dsp.design_bandpass(1, 50, 2, 1000.0)
    ref = signal.butter(2, [1, 50], btype="bandpass", fs=1000.0, output="sos")
    _, h_ref = signal.sosfreqz(ref, worN=PROBES, fs=1000.0)
    np.testing.assert_allclose(np.abs(spec.response(PROBES)), np.abs(h_ref), rtol=1e-6, atol=1e-12)


def test_bandpass_is_stable_biquad_cascade():
    spec = dsp.design_bandpass(1, 50, 2, 1000.0)
    assert spec.sos.shape == (2, 6)
    assert spec.pole_radii(spec.sos).max() < 1
    assert spec.design_kind == "bandpass" and spec.order == 2


@pytest.mark.parametrize("args", [(50, 1), (0, 50), (1, 600), (1, 50, 0)])
def test_bandpass_rejects_bad_design(args):
    with pytest.raises(dsp.FilterDesignError):
        dsp.design_bandpass(*args, fs=1000.0) if len(args) == 2 else \
            dsp.design_bandpass(args[0], args[1], args[2], 1000.0)


def test_unstable_sos_rejected():
    with pytest.raises(dsp.FilterDesignError):
        dsp.FilterSpec(np.array([[1, 0, 0, 1, -2.5, 1.5]]), "bandpass", 1000.0)


def test_notch_depth_and_bandwidth():
    spec = dsp.design_notch(60.0, 30.0, 1000.0)
    depth_db = 20 * np.log10(max(abs(spec.response([60.0])[0]), 1e-300))
    assert depth_db <= -40
    # -3 dB points are f0 / Q apart
    f = np.linspace(55, 65, 200001)
    mag = np.abs(spec.response(f))
    band = f[mag < 1 / math.sqrt(2)]
    assert band[-1] - band[0] == pytest.approx(2.0, rel=1e-3)
    assert abs(spec.response([10.0])[0]) == pytest.approx(1.0, abs=1e-3)


def test_notch_removes_line_noise_in_time_domain():
    fs = 1000.0
    t = np.arange(20000) / fs
    x = np.sin(2 * np.pi * 60 * t) + np.sin(2 * np.pi * 10 * t)
    y = dsp.filtfilt(dsp.design_notch(60.0, 30.0, fs), x)
    mid = slice(5000, 15000)
    resid60 = y[mid] - np.sin(2 * np.pi * 10 * t[mid])
    assert 20 * np.log10(resid60.std() / (1 / math.sqrt(2))) <= -40


@pytest.mark.parametrize("f0", [5.0, 10.0, 20.0])
def test_filtfilt_zero_lag(f0):
    fs = 1000.0
    t = np.arange(10000) / fs
    x = np.sin(2 * np.pi * f0 * t)
    y = dsp.filtfilt(dsp.design_bandpass(1, 50, 2, fs), x)
    lags = np.arange(-20, 21)
    mid = slice(2000, 8000)
    xc = [np.dot(x[mid], np.roll(y, -k)[mid]) for k in lags]
    assert lags[int(np.argmax(xc))] == 0
    # single-pass would delay; forward-backward must not
    assert np.max(np.abs(y[mid] - x[mid] * abs(dsp.design_bandpass(1, 50, 2, fs).response([f0])[0]) ** 2)) < 1e-3


def test_filtfilt_interior_matches_scipy():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(40000)
    spec = dsp.design_bandpass(1, 50, 2, 1000.0)
    ours = dsp.filtfilt(spec, x)
    ref = signal.sosfiltfilt(np.array(spec.sos), x, padlen=3000)
    # edge handling differs; the 1 Hz pole needs seconds to forget it
    np.testing.assert_allclose(ours[15000:-15000], ref[15000:-15000], atol=1e-8)


def test_filtfilt_axis_and_length_checks():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2000))
    spec = dsp.design_bandpass(1, 50, 2, 1000.0)
    a = dsp.filtfilt(spec, x, axis=-1)
    b = dsp.filtfilt(spec, x.T, axis=0).T
    np.testing.assert_allclose(a, b)
    with pytest.raises(dsp.SignalLengthError):
        dsp.filtfilt(spec, np.ones(dsp.min_signal_length(spec)))


def test_decimate_keeps_every_kth_sample():
    x = np.arange(1005.0)
    y = dsp.decimate(x, 10)
    assert y.shape == (100,)
    np.testing.assert_array_equal(y, np.arange(0, 1000, 10))
    with pytest.raises(ValueError):
        dsp.decimate(x, 2.5)


def test_epochize_counts_and_labels(montage):
    minutes = 3
    rec = RawRecording(100.0, np.zeros((len(montage), minutes * 6000 + 57)), montage)
    classes = [FatigueClass.NS, FatigueClass.HF, FatigueClass.LF]
    ep = dsp.epochize(rec, classes, "S7")
    assert len(ep) == minutes * 60
    assert ep.data.shape == (180, 30, 100)
    np.testing.assert_array_equal(ep.labels, np.repeat([0, 2, 1], 60))
    np.testing.assert_array_equal(ep.minutes, np.repeat([0, 1, 2], 60))
    assert set(ep.subjects) == {"S7"}


def test_epochize_preserves_samples(montage):
    data = np.arange(len(montage) * 6000, dtype=float).reshape(len(montage), 6000)
    ep = dsp.epochize(RawRecording(100.0, data, montage), [0])
    eeg = data[montage.picks(dsp.Role.EEG)]
    np.testing.assert_array_equal(ep.data[7], eeg[:, 700:800])


def test_epochize_errors(montage):
    rec = RawRecording(200.0, np.zeros((len(montage), 400)), montage)
    with pytest.raises(ValueError):
        dsp.epochize(rec, [0])
    short = RawRecording(100.0, np.zeros((len(montage), 50)), montage)
    with pytest.raises(dsp.SignalLengthError):
        dsp.epochize(short, [0])
    long = RawRecording(100.0, np.zeros((len(montage), 12000)), montage)
    with pytest.raises(ValueError):
        dsp.epochize(long, [0])


def test_bandpass_unity_at_geometric_centre():
    spec = dsp.design_bandpass(1, 50, 2, 1000.0)
    centre = math.sqrt(1 * 50)
    assert analytic_bandpass_mag(centre, 1, 50, 2, 1000.0) == pytest.approx(1.0, abs=0.01)
    assert abs(spec.response([centre])[0]) == pytest.approx(1.0, abs=0.01)


def test_bandpass_above_nyquist_fails():
    with pytest.raises(dsp.FilterDesignError):
        dsp.design_bandpass(1, 600, 2, 1000)


def lsq_amplitude(y, f, fs):
    t = np.arange(len(y)) / fs
    A = np.column_stack([np.sin(2 * np.pi * f * t), np.cos(2 * np.pi * f * t), np.ones_like(t)])
    c = np.linalg.lstsq(A, y, rcond=None)[0]
    return math.hypot(c[0], c[1])


@pytest.mark.parametrize("f0,lo,hi", [(60.0, 0.0, 0.01), (10.0, 0.99, 1.01)])
def test_notch_sinusoid_amplitudes(f0, lo, hi):
    fs = 1000.0
    x = np.sin(2 * np.pi * f0 * np.arange(20000) / fs)
    y = dsp.filtfilt(dsp.design_notch(60.0, 30.0, fs), x)
    assert lo <= lsq_amplitude(y[5000:15000], f0, fs) < hi


def test_filters_map_zero_to_zero():
    z = np.zeros(5000)
    for spec in (dsp.design_notch(60.0, 30.0, 1000.0), dsp.design_bandpass(1, 50, 2, 1000.0)):
        np.testing.assert_array_equal(dsp.filtfilt(spec, z), 0)
    np.testing.assert_array_equal(dsp.decimate(z, 10), np.zeros(500))


def test_bandpass_removes_dc():
    y = dsp.filtfilt(dsp.design_bandpass(1, 50, 2, 1000.0), np.full(30000, 0.5))
    assert np.abs(y[10000:20000]).max() < 1e-3


def test_forward_backward_gain_is_squared_at_cutoff():
    fs = 1000.0
    x = np.sin(2 * np.pi * 1.0 * np.arange(60000) / fs)
    y = dsp.filtfilt(dsp.design_bandpass(1, 50, 2, fs), x)
    assert lsq_amplitude(y[20000:40000], 1.0, fs) == pytest.approx(0.5, abs=0.03)


def test_decimate_sinusoid_keeps_amplitude():
    x = np.sin(2 * np.pi * 10 * np.arange(60000) / 1000.0)
    y = dsp.decimate(x, 10)
    assert y.shape == (6000,)
    assert lsq_amplitude(y, 10.0, 100.0) == pytest.approx(1.0, abs=0.02)


def test_epochize_drops_partial_second(montage):
    rec = RawRecording(100.0, np.zeros((len(montage), 5950)), montage)
    assert len(dsp.epochize(rec, [FatigueClass.NS])) == 59


def test_epochize_minute_label_inherited(montage):
    rec = RawRecording(100.0, np.zeros((len(montage), 6000)), montage)
    ep = dsp.epochize(rec, [FatigueClass.HF])
    assert len(ep) == 60 and (ep.labels == int(FatigueClass.HF)).all()
