"""Binary file formats: embedding matrices and model checkpoints.

Embedding file ("RTEB"):
    magic "RTEB" | u32 version=1 | u32 rows | u32 dim | rows*dim float32 LE

The row order is bound to a sidecar JSON file (``<path>.ids.json``) holding
the example ids as a flat array. Both files are byte-exact on round trip.

Checkpoint file ("RTCK"):
    magic "RTCK" | u32 version=1 | u64 header_len | header JSON (utf-8) |
    concatenated float32 LE tensor data in header order

The header is ``{"config": {...}, "tensors": [{"name", "shape"}, ...]}``,
so the file is self-describing.
"""

import json
import struct
from pathlib import Path

import numpy as np

EMBEDDING_MAGIC = b"RTEB"
CHECKPOINT_MAGIC = b"RTCK"
FORMAT_VERSION = 1


class FileFormatError(ValueError):
    """Raised when a binary artifact fails validation on read or write."""


def ids_sidecar_path(path):
    return Path(str(path) + ".ids.json")


def write_embedding_file(path, matrix, ids):
    """Write a row-major float32 embedding matrix plus its id sidecar."""
    matrix = np.ascontiguousarray(matrix, dtype="<f4")
    if matrix.ndim != 2:
        raise FileFormatError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
    ids = list(ids)
    if len(ids) != matrix.shape[0]:
        raise FileFormatError(
            f"id count {len(ids)} does not match row count {matrix.shape[0]}"
        )
    path = Path(path)
    with open(path, "wb") as f:
        f.write(EMBEDDING_MAGIC)
        f.write(struct.pack("<III", FORMAT_VERSION, matrix.shape[0], matrix.shape[1]))
        f.write(matrix.tobytes())
    with open(ids_sidecar_path(path), "w") as f:
        json.dump(ids, f)
    return path


def read_embedding_file(path):
    """Read an embedding file; returns (float32 matrix, list of ids)."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != EMBEDDING_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
        version, rows, dim = struct.unpack("<III", f.read(12))
        if version != FORMAT_VERSION:
            raise FileFormatError(f"{path}: unsupported version {version}")
        data = f.read(rows * dim * 4)
        if len(data) != rows * dim * 4:
            raise FileFormatError(
                f"{path}: truncated data, expected {rows * dim * 4} bytes, found {len(data)}"
            )
    matrix = np.frombuffer(data, dtype="<f4").reshape(rows, dim)
    sidecar = ids_sidecar_path(path)
    if not sidecar.exists():
        raise FileFormatError(f"missing id sidecar {sidecar}")
    with open(sidecar) as f:
        ids = json.load(f)
    if len(ids) != rows:
        raise FileFormatError(f"{sidecar}: {len(ids)} ids for {rows} rows")
    return matrix.copy(), ids


def save_checkpoint(path, tensors, config):
    """Write named tensors plus a JSON-serializable config to one file."""
    path = Path(path)
    names = list(tensors)
    header = {
        "config": config,
        "tensors": [{"name": n, "shape": list(np.shape(tensors[n]))} for n in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for n in names:
            f.write(np.ascontiguousarray(tensors[n], dtype="<f4").tobytes())
    return path


def load_checkpoint(path, expected_shapes=None):
    """Read a checkpoint; returns (dict of float32 tensors, config dict).

    ``expected_shapes`` maps tensor name -> shape tuple; any mismatch with the
    stored header is an error.
    """
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise FileFormatError(f"{path}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
        version, header_len = struct.unpack("<IQ", f.read(12))
        if version != FORMAT_VERSION:
            raise FileFormatError(f"{path}: unsupported version {version}")
        header = json.loads(f.read(header_len).decode("utf-8"))
        tensors = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(count * 4)
            if len(raw) != count * 4:
                raise FileFormatError(f"{path}: truncated tensor {entry['name']}")
            tensors[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if expected_shapes is not None:
        for name, shape in expected_shapes.items():
            if name not in tensors:
                raise FileFormatError(f"{path}: missing tensor {name}")
            if tuple(tensors[name].shape) != tuple(shape):
                raise FileFormatError(
                    f"{path}: tensor {name} has shape {tensors[name].shape}, "
                    f"expected {tuple(shape)}"
                )
    return tensors, header["config"]
