"""Domain types shared across the pipeline: montage, recordings, labels, epochs, bands."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from enum import Enum, IntEnum
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

N_EEG = 30
N_EOG = 4
EPOCH_FS = 100
EPOCH_SAMPLES = 100


class Role(str, Enum):
    EEG = "EEG"
    EOG = "EOG"


class FatigueClass(IntEnum):
    """Target classes, ordered NS < LF < HF."""

    NS = 0
    LF = 1
    HF = 2


@dataclass(frozen=True)
class Channel:
    name: str
    role: Role
    x: float
    y: float


@dataclass(frozen=True)
class Montage:
    """Ordered channel list with 2-D scalp coordinates on the unit disk."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise ValueError("montage channel names must be unique")
        for c in self.channels:
            if c.role is Role.EEG and c.x * c.x + c.y * c.y > 1.0 + 1e-12:
                raise ValueError(f"EEG channel {c.name} lies outside the unit disk")

    def __len__(self):
        return len(self.channels)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.channels]

    def picks(self, role: Role) -> list[int]:
        return [i for i, c in enumerate(self.channels) if c.role is role]

    @property
    def eeg(self) -> list[Channel]:
        return [c for c in self.channels if c.role is Role.EEG]

    @property
    def eeg_names(self) -> list[str]:
        return [c.name for c in self.eeg]

    @property
    def eog_names(self) -> list[str]:
        return [c.name for c in self.channels if c.role is Role.EOG]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("name,role,x,y\n")
        for c in self.channels:
            buf.write(f"{c.name},{c.role.value},{c.x!r},{c.y!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "Montage":
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames != ["name", "role", "x", "y"]:
            raise ValueError(f"montage header must be name,role,x,y; got {reader.fieldnames}")
        chans = []
        for row in reader:
            try:
                role = Role(row["role"])
            except ValueError:
                raise ValueError(f"bad role {row['role']!r} for channel {row['name']}") from None
            chans.append(Channel(row["name"], role, float(row["x"]), float(row["y"])))
        return cls(tuple(chans))

    def save(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Montage":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def default(cls) -> "Montage":
        """30 EEG channels of the extended 10/20 system plus 4 EOG channels.

        The exact channel set of the original recordings is not published;
        this montage is a stand-in that includes the occipital O1/Oz/O2 sites.
        """
        text = resources.files("pilotfatigue.data").joinpath("montage_default.csv").read_text("utf-8")
        m = cls.from_csv(text)
        assert len(m.picks(Role.EEG)) == N_EEG and len(m.picks(Role.EOG)) == N_EOG
        return m


OCCIPITAL = ("O1", "Oz", "O2")
FRONTAL = ("Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8")


@dataclass(frozen=True)
class KssLabel:
    level: int
    minute_index: int

    def __post_init__(self):
        if not 1 <= int(self.level) <= 9:
            raise ValueError(f"KSS level must lie in [1, 9], got {self.level}")
        if self.minute_index < 0:
            raise ValueError("minute_index must be >= 0")


def map_kss_to_class(label: KssLabel | int) -> FatigueClass:
    """KSS 1-3 -> NS, 4-6 -> LF, 7-9 -> HF."""
    level = label.level if isinstance(label, KssLabel) else int(label)
    if not 1 <= level <= 9:
        raise ValueError(f"KSS level must lie in [1, 9], got {level}")
    return FatigueClass((level - 1) // 3)


MISSED_KSS_LEVEL = 9


def fill_missing_kss(schedule: Sequence[Optional[KssLabel | int]]) -> list[KssLabel]:
    """One slot per minute; a missing response counts as level 9."""
    out = []
    for minute, entry in enumerate(schedule):
        if entry is None:
            out.append(KssLabel(MISSED_KSS_LEVEL, minute))
        elif isinstance(entry, KssLabel):
            out.append(entry)
        else:
            out.append(KssLabel(int(entry), minute))
    return out


@dataclass(frozen=True)
class BandDef:
    name: str
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"band {self.name}: lo must be < hi")


BANDS = (
    BandDef("delta", 1.0, 4.0),
    BandDef("theta", 4.0, 8.0),
    BandDef("alpha", 8.0, 13.0),
    BandDef("beta", 13.0, 30.0),
)
BAND_BY_NAME = {b.name: b for b in BANDS}
BAND_ALIASES = {"δ": "delta", "θ": "theta", "α": "alpha", "β": "beta"}


def get_band(name: str) -> BandDef:
    return BAND_BY_NAME[BAND_ALIASES.get(name, name)]


def _frozen(a, dtype=None):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RawRecording:
    """Multi-channel recording in microvolts, ``data`` is ``[n_channels, n_samples]``."""

    sample_rate: float
    data: np.ndarray
    montage: Montage

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        data = self.data
        if data.ndim != 2 or data.shape[0] != len(self.montage):
            raise ValueError(f"data has {data.shape[0] if data.ndim == 2 else '?'} channels, "
                             f"montage has {len(self.montage)}")
        if not np.isfinite(data).all():
            raise ValueError("recording contains non-finite samples")
        if data.flags.writeable:
            object.__setattr__(self, "data", _frozen(data))

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate

    def pick(self, role: Role) -> np.ndarray:
        return self.data[self.montage.picks(role)]


@dataclass(frozen=True, eq=False)
class Epoch:
    data: np.ndarray        # [30, 100]
    label: FatigueClass
    subject_id: str
    minute_index: int

    def __post_init__(self):
        if self.data.shape != (N_EEG, EPOCH_SAMPLES):
            raise ValueError(f"epoch must be {N_EEG}x{EPOCH_SAMPLES}, got {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValueError("epoch contains non-finite values")


class EpochSet:
    """Array-backed collection of epochs.

    ``data`` is ``[n, 30, 100]``; ``labels`` holds :class:`FatigueClass`
    values as ints; ``subjects`` and ``minutes`` are per-epoch.
    """

    def __init__(self, data, labels, subjects, minutes, channel_names: Sequence[str]):
        data = np.asarray(data)
        n = data.shape[0]
        if data.ndim != 3 or data.shape[1:] != (N_EEG, EPOCH_SAMPLES):
            raise ValueError(f"epoch data must be [n, {N_EEG}, {EPOCH_SAMPLES}], got {data.shape}")
        if not (len(labels) == len(subjects) == len(minutes) == n):
            raise ValueError("labels, subjects and minutes must match the epoch count")
        if not np.isfinite(data).all():
            raise ValueError("epoch data contains non-finite values")
        self.data = _frozen(data)
        self.labels = _frozen(labels, dtype=np.int64)
        self.subjects = _frozen(subjects, dtype=str)
        self.minutes = _frozen(minutes, dtype=np.int64)
        self.channel_names = tuple(channel_names)
        if len(self.channel_names) != N_EEG:
            raise ValueError("channel_names must list the 30 EEG channels")
        if n and (self.labels.min() < 0 or self.labels.max() > 2):
            raise ValueError("labels must be FatigueClass values 0..2")

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, i) -> Epoch:
        return Epoch(self.data[i], FatigueClass(int(self.labels[i])), str(self.subjects[i]),
                     int(self.minutes[i]))

    def subset(self, idx) -> "EpochSet":
        idx = np.asarray(idx)
        return EpochSet(self.data[idx], self.labels[idx], self.subjects[idx], self.minutes[idx],
                        self.channel_names)

    def for_subject(self, subject_id: str) -> "EpochSet":
        return self.subset(np.flatnonzero(self.subjects == subject_id))

    @property
    def subject_ids(self) -> list[str]:
        return list(dict.fromkeys(self.subjects.tolist()))

    def by_class(self) -> dict[FatigueClass, np.ndarray]:
        return {c: self.data[self.labels == int(c)] for c in FatigueClass}

    def class_counts(self) -> dict[FatigueClass, int]:
        return {c: int((self.labels == int(c)).sum()) for c in FatigueClass}

    @classmethod
    def concat(cls, sets: Iterable["EpochSet"]) -> "EpochSet":
        sets = list(sets)
        if not sets:
            raise ValueError("nothing to concatenate")
        return cls(np.concatenate([s.data for s in sets]),
                   np.concatenate([s.labels for s in sets]),
                   np.concatenate([s.subjects for s in sets]),
                   np.concatenate([s.minutes for s in sets]),
                   sets[0].channel_names)
