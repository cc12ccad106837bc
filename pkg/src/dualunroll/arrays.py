"""Deterministic array container I/O and content hashing.

`numpy.savez` embeds zip timestamps, so identical arrays produce different
bytes on each call. Datasets and checkpoints here must be byte-identical
under a fixed seed, so we write the zip members ourselves with a pinned
timestamp. The files stay readable by `numpy.load`.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile
from pathlib import Path

import numpy as np

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_arrays(path, arrays: dict) -> None:
    """Write a dict of arrays to `path` as a deterministic .npz file."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name in sorted(arrays):
            buf = io.BytesIO()
            # note: ascontiguousarray would silently promote 0-d arrays to 1-d
            np.lib.format.write_array(buf, np.asarray(arrays[name], order="C"))
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            zf.writestr(info, buf.getvalue())


def load_arrays(path) -> dict:
    out = {}
    with np.load(path, allow_pickle=False) as data:
        for name in data.files:
            out[name] = data[name]
    return out


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj) -> str:
    """JSON with sorted keys and no float repr surprises; used for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def json_sha256(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
