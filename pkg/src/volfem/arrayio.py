"""Binary array files and named-array containers.

Single-array format (magic ``VOLF``), all integers little-endian:
magic 4s, version u32, dtype tag u32 (1 = float64), ndim u32, shape ndim*u64,
then the raw row-major float64 payload. Round trips are bit exact.

Container format (magic ``VOLC``): version u32, metadata count u32, entry
count u32; each metadata item is (u16 key length, key utf-8, u32 value
length, value utf-8); each entry is (u16 name length, name utf-8, u64 blob
length, embedded single-array file).
"""

from __future__ import annotations

import struct
from io import BytesIO
from pathlib import Path

import numpy as np

__all__ = [
    "write_array",
    "read_array",
    "write_container",
    "read_container",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC_ARRAY = b"VOLF"
MAGIC_CONTAINER = b"VOLC"
FORMAT_VERSION = 1
DTYPE_F64 = 1


def _pack_array(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    head = struct.pack("<4sIII", MAGIC_ARRAY, FORMAT_VERSION, DTYPE_F64, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
    return head + arr.tobytes()


def _unpack_array(buf: bytes) -> np.ndarray:
    magic, version, dtag, ndim = struct.unpack_from("<4sIII", buf, 0)
    if magic != MAGIC_ARRAY:
        raise ValueError(f"bad magic {magic!r}, not an array file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported format version {version}")
    if dtag != DTYPE_F64:
        raise ValueError(f"unsupported dtype tag {dtag}")
    off = 16
    shape = struct.unpack_from(f"<{ndim}Q", buf, off) if ndim else ()
    off += 8 * ndim
    n = int(np.prod(shape)) if shape else 1
    if len(buf) - off != 8 * n:
        raise ValueError(f"payload has {len(buf) - off} bytes, expected {8 * n}")
    return np.frombuffer(buf[off:], dtype="<f8").reshape(shape).copy()


def write_array(path, arr: np.ndarray):
    Path(path).write_bytes(_pack_array(arr))


def read_array(path) -> np.ndarray:
    return _unpack_array(Path(path).read_bytes())


def write_container(path, arrays: dict, meta: dict | None = None):
    meta = meta or {}
    out = BytesIO()
    out.write(struct.pack("<4sIII", MAGIC_CONTAINER, FORMAT_VERSION, len(meta), len(arrays)))
    for key, value in meta.items():
        kb = str(key).encode("utf-8")
        vb = str(value).encode("utf-8")
        out.write(struct.pack("<H", len(kb)) + kb)
        out.write(struct.pack("<I", len(vb)) + vb)
    for name, arr in arrays.items():
        nb = str(name).encode("utf-8")
        blob = _pack_array(arr)
        out.write(struct.pack("<H", len(nb)) + nb)
        out.write(struct.pack("<Q", len(blob)) + blob)
    Path(path).write_bytes(out.getvalue())


def read_container(path):
    buf = Path(path).read_bytes()
    magic, version, n_meta, n_entries = struct.unpack_from("<4sIII", buf, 0)
    if magic != MAGIC_CONTAINER:
        raise ValueError(f"bad magic {magic!r}, not a container file")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    off = 16
    meta = {}
    for _ in range(n_meta):
        (klen,) = struct.unpack_from("<H", buf, off)
        off += 2
        key = buf[off : off + klen].decode("utf-8")
        off += klen
        (vlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        meta[key] = buf[off : off + vlen].decode("utf-8")
        off += vlen
    arrays = {}
    for _ in range(n_entries):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off : off + nlen].decode("utf-8")
        off += nlen
        (blen,) = struct.unpack_from("<Q", buf, off)
        off += 8
        arrays[name] = _unpack_array(buf[off : off + blen])
        off += blen
    return arrays, meta


def save_checkpoint(path, params, model_cfg):
    """Persist model parameters as named container slices with the model
    configuration echoed in the metadata."""
    meta = {
        "model_format_version": "1",
        "in_channels": model_cfg.in_channels,
        "hidden_channels": model_cfg.hidden_channels,
        "out_channels": model_cfg.out_channels,
        "n_layers": model_cfg.n_layers,
        "kernel_extent": model_cfg.kernel_extent,
        "use_alignment": int(model_cfg.use_alignment),
        "activation": model_cfg.activation,
        "seed": model_cfg.seed,
    }
    write_container(path, params.arrays, meta)


def load_checkpoint(path):
    """Load (params, model_cfg) written by save_checkpoint."""
    from .model import ModelConfig, ModelParams

    arrays, meta = read_container(path)
    if meta.get("model_format_version") != "1":
        raise ValueError(f"unsupported checkpoint version {meta.get('model_format_version')!r}")
    cfg = ModelConfig(
        in_channels=int(meta["in_channels"]),
        hidden_channels=int(meta["hidden_channels"]),
        out_channels=int(meta["out_channels"]),
        n_layers=int(meta["n_layers"]),
        kernel_extent=int(meta["kernel_extent"]),
        use_alignment=bool(int(meta["use_alignment"])),
        activation=meta["activation"],
        seed=int(meta["seed"]),
    )
    expected = set(cfg.slice_shapes())
    if set(arrays) != expected:
        raise ValueError("checkpoint slices do not match the echoed configuration")
    return ModelParams(arrays), cfg
