"""Binary model checkpoints.

Layout (little-endian)::

    b"FATN" | u32 version | u32 header_len | header JSON (utf-8)
    then, for every parameter and buffer in declaration order:
    u32 ndim | u32 dims[ndim] | f32 data

The header carries the input shape and the ``LayerSpec`` list.  A JSON
sidecar ``<path>.json`` stores the training config and metrics history.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import LayerSpec
from .network import Network

MAGIC = b"FATN"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(net: Network, path, train_config: dict | None = None,
                    history: dict | list | None = None, extra: dict | None = None):
    path = Path(path)
    header = {
        "input_shape": list(net.input_shape),
        "layers": [s.to_dict() for s in net.specs],
        "arrays": [name for name, _ in net.state_arrays()],
        "extra": extra or {},
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(hbytes)))
        fh.write(hbytes)
        for _, arr in net.state_arrays():
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    sidecar = {"train_config": train_config or {}, "history": history or []}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True))


def load_checkpoint(path, dtype=np.float32) -> tuple[Network, dict]:
    """Rebuild the network from a checkpoint; returns ``(net, header_extra)``."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a FATN checkpoint")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    off = 12
    header = json.loads(raw[off:off + hlen].decode("utf-8"))
    off += hlen
    specs = [LayerSpec.from_dict(d) for d in header["layers"]]
    net = Network(specs, header["input_shape"], dtype=dtype)
    targets = net.state_arrays()
    if [n for n, _ in targets] != header["arrays"]:
        raise CheckpointError(f"{path}: parameter layout does not match layer specs")
    for name, arr in targets:
        (ndim,) = struct.unpack_from("<I", raw, off)
        off += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, off)
        off += 4 * ndim
        if tuple(shape) != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {shape}, expected {arr.shape}")
        count = int(np.prod(shape))
        data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        off += 4 * count
        arr[...] = data.reshape(shape)
    if off != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - off} trailing bytes")
    return net, header.get("extra", {})
