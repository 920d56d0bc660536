"""On-disk formats for recordings, epoch datasets, schedules, features and band statistics.

Binary files are little-endian.  A recording (``.eegr``) is::

    "EEGR" | u32 version | u32 n_channels | u32 n_samples | f64 sample_rate
    | u32 len + montage CSV (UTF-8) | f32 samples, row-major [n_channels, n_samples]
    | optional trailer: "META" | u32 len + JSON provenance

An epoch dataset (``.epch``) is::

    "EPCH" | u32 version | u32 len + JSON header | f32 data [n, n_channels, n_samples]

The JSON header holds channel names, labels, subjects, minutes and provenance.
"""
from __future__ import annotations

import csv
import io
import json
import struct
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BANDS, EpochSet, FatigueClass, KssLabel, Montage, RawRecording, map_kss_to_class

REC_MAGIC = b"EEGR"
REC_VERSION = 1
EPOCH_MAGIC = b"EPCH"
EPOCH_VERSION = 1
META_MAGIC = b"META"


class FormatError(ValueError):
    """A file is truncated, has the wrong magic or an unsupported version."""


def _read_exact(f, n: int, path, what: str) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise FormatError(f"{path}: truncated while reading {what}")
    return b


def _check_magic(f, magic: bytes, version: int, path):
    got = f.read(4)
    if got != magic:
        raise FormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    (ver,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
    if ver != version:
        raise FormatError(f"{path}: unsupported version {ver} (expected {version})")


def _write_block(f, payload: bytes):
    f.write(struct.pack("<I", len(payload)))
    f.write(payload)


def _read_block(f, path, what) -> bytes:
    (n,) = struct.unpack("<I", _read_exact(f, 4, path, f"{what} length"))
    return _read_exact(f, n, path, what)


# --------------------------------------------------------------------------- recordings

def write_recording(path, rec: RawRecording, provenance: Optional[dict] = None):
    data = np.ascontiguousarray(rec.data, dtype="<f4")
    with open(path, "wb") as f:
        f.write(REC_MAGIC)
        f.write(struct.pack("<IIId", REC_VERSION, data.shape[0], data.shape[1], rec.sample_rate))
        _write_block(f, rec.montage.to_csv().encode("utf-8"))
        f.write(data.tobytes())
        if provenance is not None:
            f.write(META_MAGIC)
            _write_block(f, json.dumps(provenance, sort_keys=True).encode("utf-8"))


def read_recording(path, with_provenance: bool = False):
    with open(path, "rb") as f:
        _check_magic(f, REC_MAGIC, REC_VERSION, path)
        n_ch, n_s, fs = struct.unpack("<IId", _read_exact(f, 16, path, "header"))
        try:
            montage = Montage.from_csv(_read_block(f, path, "montage").decode("utf-8"))
        except (UnicodeDecodeError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt montage block ({exc})") from exc
        if len(montage) != n_ch:
            raise FormatError(f"{path}: montage has {len(montage)} channels, header says {n_ch}")
        raw = _read_exact(f, 4 * n_ch * n_s, path, "samples")
        data = np.frombuffer(raw, dtype="<f4").reshape(n_ch, n_s)
        prov = None
        tail = f.read(4)
        if tail == META_MAGIC:
            prov = json.loads(_read_block(f, path, "provenance"))
        elif tail:
            raise FormatError(f"{path}: unexpected trailing bytes")
    rec = RawRecording(fs, data.astype(np.float32), montage)
    return (rec, prov) if with_provenance else rec


def import_csv_recording(path, montage: Montage | None = None) -> RawRecording:
    """Read ``time,ch1..chN`` text; the sample rate comes from the time column."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 3:
        raise FormatError(f"{path}: need a header and at least two samples")
    header, body = rows[0], rows[1:]
    if header[0].strip().lower() != "time":
        raise FormatError(f"{path}: first column must be 'time'")
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from exc
    t = arr[:, 0]
    dt = np.diff(t)
    if np.any(dt <= 0) or not np.allclose(dt, dt[0], rtol=1e-6, atol=1e-9):
        raise FormatError(f"{path}: time column must be uniformly increasing")
    names = [h.strip() for h in header[1:]]
    montage = montage or Montage.default()
    if names != montage.names:
        raise FormatError(f"{path}: channel columns do not match the montage")
    return RawRecording(round(1.0 / dt[0], 9), arr[:, 1:].T.copy(), montage)


# --------------------------------------------------------------------------- epochs

def write_epochs(path, epochs: EpochSet, provenance: Optional[dict] = None):
    header = {"channel_names": list(epochs.channel_names), "shape": list(epochs.data.shape),
              "labels": epochs.labels.tolist(), "subjects": list(epochs.subjects),
              "minutes": epochs.minutes.tolist(), "provenance": provenance}
    with open(path, "wb") as f:
        f.write(EPOCH_MAGIC)
        f.write(struct.pack("<I", EPOCH_VERSION))
        _write_block(f, json.dumps(header, sort_keys=True).encode("utf-8"))
        f.write(np.ascontiguousarray(epochs.data, dtype="<f4").tobytes())


def read_epochs(path, with_provenance: bool = False):
    with open(path, "rb") as f:
        _check_magic(f, EPOCH_MAGIC, EPOCH_VERSION, path)
        try:
            header = json.loads(_read_block(f, path, "header"))
            shape = tuple(header["shape"])
        except (json.JSONDecodeError, KeyError) as exc:
            raise FormatError(f"{path}: corrupt header ({exc})") from exc
        raw = _read_exact(f, 4 * int(np.prod(shape)), path, "epoch data")
        if f.read(1):
            raise FormatError(f"{path}: unexpected trailing bytes")
    data = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    ep = EpochSet(data, header["labels"], header["subjects"], header["minutes"],
                  header["channel_names"])
    return (ep, header.get("provenance")) if with_provenance else ep


# --------------------------------------------------------------------------- text tables

def _comment(provenance: Optional[dict]) -> str:
    if not provenance:
        return ""
    return "# " + json.dumps(provenance, sort_keys=True) + "\n"


def _data_lines(path) -> list[str]:
    return [ln for ln in Path(path).read_text().splitlines()
            if ln.strip() and not ln.startswith("#")]


def write_schedule(path, schedule: Sequence[KssLabel], provenance: Optional[dict] = None):
    buf = io.StringIO()
    buf.write(_comment(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["minute", "kss", "class"])
    for k in schedule:
        w.writerow([k.minute_index, k.level, map_kss_to_class(k).name])
    Path(path).write_text(buf.getvalue())


def read_schedule(path) -> list[KssLabel]:
    rows = list(csv.reader(_data_lines(path)))
    if not rows or rows[0] != ["minute", "kss", "class"]:
        raise FormatError(f"{path}: expected header minute,kss,class")
    out = []
    for r in rows[1:]:
        try:
            k = KssLabel(int(r[1]), int(r[0]))
        except (ValueError, IndexError) as exc:
            raise FormatError(f"{path}: bad schedule row {r} ({exc})") from exc
        if map_kss_to_class(k).name != r[2]:
            raise FormatError(f"{path}: class {r[2]} inconsistent with KSS {k.level}")
        out.append(k)
    return out


def write_features(path, epochs: EpochSet, X: np.ndarray, provenance: Optional[dict] = None):
    from .features import feature_names
    buf = io.StringIO()
    buf.write(_comment(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["subject", "minute", "class", *feature_names(epochs.channel_names, BANDS)])
    for s, m, c, row in zip(epochs.subjects, epochs.minutes, epochs.labels, X):
        w.writerow([s, int(m), FatigueClass(int(c)).name, *(repr(float(v)) for v in row)])
    Path(path).write_text(buf.getvalue())


def read_features(path):
    """Return ``(subjects, minutes, labels, names, X)``."""
    rows = list(csv.reader(_data_lines(path)))
    header = rows[0]
    if header[:3] != ["subject", "minute", "class"]:
        raise FormatError(f"{path}: expected header subject,minute,class,...")
    body = rows[1:]
    X = np.array([[float(v) for v in r[3:]] for r in body])
    labels = np.array([int(FatigueClass[r[2]]) for r in body])
    return [r[0] for r in body], np.array([int(r[1]) for r in body]), labels, header[3:], X


def write_topostats(path, stats, provenance: Optional[dict] = None):
    buf = io.StringIO()
    buf.write(_comment(provenance))
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["channel", "band", "statistic", "p", "significant"])
    for s in stats:
        w.writerow([s.channel, s.band.name, repr(s.statistic), repr(s.p_value),
                    int(s.significant)])
    Path(path).write_text(buf.getvalue())


def read_topostats(path):
    from .core import get_band
    from .features import TopoStat
    rows = list(csv.reader(_data_lines(path)))
    if rows[0] != ["channel", "band", "statistic", "p", "significant"]:
        raise FormatError(f"{path}: unexpected header {rows[0]}")
    return [TopoStat(r[0], get_band(r[1]), float(r[2]), float(r[3])) for r in rows[1:]]
