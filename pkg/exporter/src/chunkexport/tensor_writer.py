"""Writers for the stitcher's tensor container and chunk manifests.

Implemented from the format description rather than imported from the
consumer package, so the exporter stands alone: magic ``CSTENSR\\0``,
little-endian u32 version / rank / dtype code (1 = float32, 2 = float64,
3 = uint8), rank u64 dims, row-major little-endian payload.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CSTENSR\0"
VERSION = 1
MAX_RANK = 8

_CODES = {("f", 4): 1, ("f", 8): 2, ("u", 1): 3}
_OUT_DTYPES = {1: "<f4", 2: "<f8", 3: "|u1"}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _CODES.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise ValueError(f"unsupported dtype {array.dtype}")
    if array.ndim > MAX_RANK:
        raise ValueError(f"rank {array.ndim} exceeds {MAX_RANK}")
    header = MAGIC + struct.pack("<III", VERSION, array.ndim, code)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_OUT_DTYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def write_chunk_manifest(directory: str | Path, chunk_id: int, frame_ids: list[int],
                         tensors: dict[str, np.ndarray], kind: str = "temporal") -> Path:
    """One manifest plus depth/confidence/intrinsics/extrinsics/tokens tensors."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = "loop" if kind == "loop" else "chunk"
    stem = f"{prefix}_{chunk_id:04d}"
    lines = [f"chunk_id = {chunk_id}", f"kind = {kind}",
             "frame_ids = " + " ".join(str(f) for f in frame_ids)]
    for key in ("depth", "confidence", "intrinsics", "extrinsics", "tokens"):
        fname = f"{stem}_{key}.tsr"
        write_tensor(directory / fname, tensors[key])
        lines.append(f"{key} = {fname}")
    manifest = directory / f"{stem}.manifest"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest
