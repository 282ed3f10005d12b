"""Raw tensor blob I/O: little-endian float32 files with JSON-able metadata.

Both the preprocessing cache and checkpoints store tensors in this format so
that artifacts are self-describing and diffable byte-for-byte.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import IntegrityError


def write_blob(path: Path, array: np.ndarray) -> dict:
    """Write `array` as raw little-endian float32 bytes.

    Returns the metadata dict (shape, byte length, sha256) that the caller
    stores in its manifest and that `read_blob` later verifies against.
    """
    data = np.ascontiguousarray(array, dtype="<f4").tobytes()
    path = Path(path)
    path.write_bytes(data)
    return {
        "file": path.name,
        "shape": list(np.asarray(array).shape),
        "n_bytes": len(data),
        "sha256": hashlib.sha256(data).hexdigest(),
    }


def read_blob(path: Path, meta: dict, name: str = "") -> np.ndarray:
    """Read a blob back, verifying length and content hash from `meta`.

    `name` identifies the entry in error messages.
    """
    label = name or Path(path).name
    path = Path(path)
    if not path.exists():
        raise IntegrityError(f"missing tensor blob for entry '{label}': {path}")
    data = path.read_bytes()
    if len(data) != meta["n_bytes"]:
        raise IntegrityError(
            f"tensor blob for entry '{label}' has {len(data)} bytes, "
            f"manifest says {meta['n_bytes']}"
        )
    digest = hashlib.sha256(data).hexdigest()
    if digest != meta["sha256"]:
        raise IntegrityError(f"tensor blob for entry '{label}' fails its content hash")
    return np.frombuffer(data, dtype="<f4").reshape(meta["shape"]).copy()
