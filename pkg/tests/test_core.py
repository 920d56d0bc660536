import numpy as np
import pytest

from pilotfatigue.core import (BANDS, EPOCH_SAMPLES, N_EEG, N_EOG, OCCIPITAL, EpochSet,
                               FatigueClass, KssLabel, Montage, RawRecording, Role, fill_missing_kss,
                               get_band, map_kss_to_class)


@pytest.mark.parametrize("level,expected", [
    (1, FatigueClass.NS), (2, FatigueClass.NS), (3, FatigueClass.NS),
    (4, FatigueClass.LF), (5, FatigueClass.LF), (6, FatigueClass.LF),
    (7, FatigueClass.HF), (8, FatigueClass.HF), (9, FatigueClass.HF),
])
def test_kss_mapping_table(level, expected):
    assert map_kss_to_class(level) is expected
    assert map_kss_to_class(KssLabel(level, 0)) is expected


@pytest.mark.parametrize("bad", [0, 10, -3])
def test_kss_out_of_range(bad):
    with pytest.raises(ValueError):
        map_kss_to_class(bad)
    with pytest.raises(ValueError):
        KssLabel(bad, 0)


def test_missed_response_becomes_level_nine():
    filled = fill_missing_kss([2, None, KssLabel(5, 2), None])
    assert [k.level for k in filled] == [2, 9, 5, 9]
    assert [k.minute_index for k in filled] == [0, 1, 2, 3]
    assert map_kss_to_class(filled[1]) is FatigueClass.HF


def test_class_ordering():
    assert FatigueClass.NS < FatigueClass.LF < FatigueClass.HF
    assert [int(c) for c in FatigueClass] == [0, 1, 2]


def test_default_montage(montage):
    assert len(montage.picks(Role.EEG)) == N_EEG
    assert len(montage.picks(Role.EOG)) == N_EOG
    for name in OCCIPITAL:
        assert name in montage.eeg_names
    for ch in montage.eeg:
        assert ch.x ** 2 + ch.y ** 2 <= 1.0 + 1e-12
    # occipital sites sit at the back of the head (nose at +y)
    assert all(montage.channels[montage.index(n)].y < -0.5 for n in OCCIPITAL)


def test_montage_csv_roundtrip(montage, tmp_path):
    path = tmp_path / "m.csv"
    montage.save(path)
    assert Montage.load(path) == montage


def test_montage_rejects_duplicates_and_bad_header():
    with pytest.raises(ValueError):
        Montage.from_csv("name,role,x,y\nA,EEG,0,0\nA,EEG,0.1,0\n")
    with pytest.raises(ValueError):
        Montage.from_csv("label,role,x,y\nA,EEG,0,0\n")
    with pytest.raises(ValueError):
        Montage.from_csv("name,role,x,y\nA,ECG,0,0\n")


def test_bands():
    assert [(b.name, b.lo, b.hi) for b in BANDS] == [
        ("delta", 1.0, 4.0), ("theta", 4.0, 8.0), ("alpha", 8.0, 13.0), ("beta", 13.0, 30.0)]
    assert get_band("θ") is get_band("theta")
    with pytest.raises(KeyError):
        get_band("gamma")


def test_raw_recording_validation(montage):
    with pytest.raises(ValueError):
        RawRecording(100.0, np.zeros((3, 10)), montage)
    bad = np.zeros((len(montage), 10))
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        RawRecording(100.0, bad, montage)
    rec = RawRecording(250.0, np.zeros((len(montage), 500)), montage)
    assert rec.duration == 2.0
    assert not rec.data.flags.writeable


def _epochs(n, labels=None, subject="S1"):
    data = np.random.default_rng(n).standard_normal((n, N_EEG, EPOCH_SAMPLES))
    labels = np.arange(n) % 3 if labels is None else labels
    return EpochSet(data, labels, [subject] * n, np.arange(n) // 60, [f"c{i}" for i in range(N_EEG)])


def test_epochset_basics():
    ep = _epochs(9)
    assert len(ep) == 9
    assert ep.class_counts() == {FatigueClass.NS: 3, FatigueClass.LF: 3, FatigueClass.HF: 3}
    e = ep[4]
    assert e.label is FatigueClass.LF and e.subject_id == "S1"
    sub = ep.subset([0, 3, 6])
    assert set(sub.labels) == {0}
    both = EpochSet.concat([ep, _epochs(3, subject="S2")])
    assert both.subject_ids == ["S1", "S2"]
    assert len(both.for_subject("S2")) == 3


def test_epochset_validation():
    with pytest.raises(ValueError):
        EpochSet(np.zeros((2, 29, 100)), [0, 1], ["a", "a"], [0, 0], ["c"] * 30)
    with pytest.raises(ValueError):
        EpochSet(np.zeros((2, 30, 100)), [0, 3], ["a", "a"], [0, 0], ["c"] * 30)
    with pytest.raises(ValueError):
        EpochSet(np.zeros((2, 30, 100)), [0], ["a", "a"], [0, 0], ["c"] * 30)
    with pytest.raises(ValueError):
        EpochSet.concat([])
