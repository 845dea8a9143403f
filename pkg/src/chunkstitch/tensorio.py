"""Bit-exact file formats: tensor container, chunk manifests, trajectories, PLY.

The tensor container is deliberately tiny: an 8-byte magic, little-endian
header, and a row-major little-endian payload, so any language can read and
write it exactly.  All text output uses 17 significant digits, enough to
round-trip IEEE doubles.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import BadMagic, DimOverflow, MissingFile, TruncatedPayload
from .evaluation import TrajectoryEstimate
from .geometry import ChunkArtifact, DepthMap, Intrinsics
from .sim3 import Sim3

MAGIC = b"CSTENSR\0"
VERSION = 1
MAX_RANK = 8

_DTYPE_CODES = {1: np.dtype("<f4"), 2: np.dtype("<f8"), 3: np.dtype("|u1")}
_CODE_FOR_KIND = {("f", 4): 1, ("f", 8): 2, ("u", 1): 3}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _CODE_FOR_KIND.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise ValueError(f"unsupported dtype {array.dtype} (use float32/float64/uint8)")
    if array.ndim > MAX_RANK:
        raise DimOverflow(f"{path}: rank {array.ndim} exceeds {MAX_RANK}")
    header = MAGIC + struct.pack("<III", VERSION, array.ndim, code)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPE_CODES[code]).tobytes()
    Path(path).write_bytes(header + payload)


def read_tensor(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path}: no such tensor file")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise BadMagic(f"{path}: bad or missing magic bytes")
    version, rank, code = struct.unpack_from("<III", data, len(MAGIC))
    if version != VERSION:
        raise BadMagic(f"{path}: unsupported version {version}")
    if rank > MAX_RANK:
        raise DimOverflow(f"{path}: rank {rank} exceeds {MAX_RANK}")
    offset = len(MAGIC) + 12
    if len(data) < offset + 8 * rank:
        raise TruncatedPayload(f"{path}: header truncated")
    dims = struct.unpack_from(f"<{rank}Q", data, offset)
    offset += 8 * rank
    dtype = _DTYPE_CODES.get(code)
    if dtype is None:
        raise BadMagic(f"{path}: unknown dtype code {code}")
    count = int(np.prod(dims, dtype=np.uint64)) if rank else 1
    nbytes = count * dtype.itemsize
    if len(data) - offset < nbytes:
        raise TruncatedPayload(
            f"{path}: payload has {len(data) - offset} bytes, header declares {nbytes}"
        )
    return np.frombuffer(data[offset:offset + nbytes], dtype=dtype).reshape(dims).copy()


# --- chunk manifests ---

_TENSOR_KEYS = ("depth", "confidence", "intrinsics", "extrinsics", "tokens")


def write_chunk(directory: str | Path, chunk: ChunkArtifact, stem: str | None = None) -> Path:
    """One manifest plus five tensor files; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    prefix = "loop" if chunk.kind == "loop" else "chunk"
    stem = stem or f"{prefix}_{chunk.chunk_id:04d}"

    n = len(chunk)
    depth = np.stack([d.values for d in chunk.depths])
    conf = np.stack([d.confidence for d in chunk.depths])
    intr = np.array(
        [[k.fx, k.fy, k.cx, k.cy, k.width, k.height] for k in chunk.intrinsics], dtype=float
    )
    extr = np.empty((n, 3, 4))
    for i, pose in enumerate(chunk.poses):
        extr[i, :, :3] = pose.scale * pose.rotation
        extr[i, :, 3] = pose.translation
    tokens = np.stack(chunk.tokens) if chunk.tokens else np.zeros((n, 1, 1))

    arrays = {"depth": depth, "confidence": conf, "intrinsics": intr,
              "extrinsics": extr, "tokens": tokens}
    lines = [f"chunk_id = {chunk.chunk_id}", f"kind = {chunk.kind}",
             "frame_ids = " + " ".join(str(f) for f in chunk.frame_ids)]
    for key in _TENSOR_KEYS:
        fname = f"{stem}_{key}.tsr"
        write_tensor(directory / fname, arrays[key])
        lines.append(f"{key} = {fname}")
    manifest = directory / f"{stem}.manifest"
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


def read_chunk(manifest_path: str | Path) -> ChunkArtifact:
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise MissingFile(f"{manifest_path}: no such manifest")
    fields: dict[str, str] = {}
    for line in manifest_path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()

    missing = [k for k in ("chunk_id", "frame_ids", *_TENSOR_KEYS) if k not in fields]
    if missing:
        raise MissingFile(f"{manifest_path}: manifest lacks keys {missing}")
    frame_ids = [int(tok) for tok in fields["frame_ids"].split()]
    arrays = {}
    for key in _TENSOR_KEYS:
        arrays[key] = read_tensor(manifest_path.parent / fields[key])

    n = len(frame_ids)
    for key in _TENSOR_KEYS:
        if arrays[key].shape[0] != n:
            raise MissingFile(
                f"{manifest_path}: {key} tensor has {arrays[key].shape[0]} frames, expected {n}"
            )

    intrinsics = [
        Intrinsics(row[0], row[1], row[2], row[3], int(row[4]), int(row[5]))
        for row in arrays["intrinsics"]
    ]
    poses = []
    for mat in arrays["extrinsics"]:
        sr = np.asarray(mat[:, :3], dtype=float)
        scale = float(np.cbrt(np.linalg.det(sr)))
        poses.append(Sim3(scale, sr / scale, mat[:, 3]))
    depths = [
        DepthMap(np.asarray(v, dtype=float), np.asarray(c, dtype=float))
        for v, c in zip(arrays["depth"], arrays["confidence"])
    ]
    tokens = [np.asarray(t, dtype=float) for t in arrays["tokens"]]
    return ChunkArtifact(
        int(fields["chunk_id"]), frame_ids, intrinsics, poses, depths, tokens,
        kind=fields.get("kind", "temporal"),
    )


def read_manifest_dir(directory: str | Path) -> tuple[list[ChunkArtifact], list[ChunkArtifact]]:
    """All chunks under a directory, split into (temporal, loop) lists."""
    directory = Path(directory)
    manifests = sorted(directory.glob("*.manifest"))
    if not manifests:
        raise MissingFile(f"{directory}: no *.manifest files")
    temporal, loop = [], []
    for m in manifests:
        chunk = read_chunk(m)
        (loop if chunk.kind == "loop" else temporal).append(chunk)
    temporal.sort(key=lambda c: c.chunk_id)
    return temporal, loop


# --- trajectory text formats ---

def _rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) via the Shepperd branch rules."""
    t = np.trace(r)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (r[2, 1] - r[1, 2]) / s
        y = (r[0, 2] - r[2, 0]) / s
        z = (r[1, 0] - r[0, 1]) / s
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        w = (r[2, 1] - r[1, 2]) / s
        x = 0.25 * s
        y = (r[0, 1] + r[1, 0]) / s
        z = (r[0, 2] + r[2, 0]) / s
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        w = (r[0, 2] - r[2, 0]) / s
        x = (r[0, 1] + r[1, 0]) / s
        y = 0.25 * s
        z = (r[1, 2] + r[2, 1]) / s
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        w = (r[1, 0] - r[0, 1]) / s
        x = (r[0, 2] + r[2, 0]) / s
        y = (r[1, 2] + r[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    return q / np.linalg.norm(q)


def _quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_trajectory(traj: TrajectoryEstimate, path: str | Path, fmt: str = "kitti") -> None:
    """KITTI (12 reals per line, row-major [R|t]) or TUM (id tx ty tz qx qy qz qw)."""
    lines = []
    for k, fid in enumerate(traj.frame_ids):
        r = traj.rotations[k]
        t = traj.positions[k]
        if fmt == "kitti":
            vals = [r[0, 0], r[0, 1], r[0, 2], t[0],
                    r[1, 0], r[1, 1], r[1, 2], t[1],
                    r[2, 0], r[2, 1], r[2, 2], t[2]]
            lines.append(" ".join(_fmt(v) for v in vals))
        elif fmt == "tum":
            q = _rotation_to_quaternion(r)
            vals = [t[0], t[1], t[2], q[0], q[1], q[2], q[3]]
            lines.append(str(fid) + " " + " ".join(_fmt(v) for v in vals))
        else:
            raise ValueError(f"unknown trajectory format {fmt!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_trajectory(path: str | Path, fmt: str | None = None) -> TrajectoryEstimate:
    """Parse either trajectory format; sniffs by column count when fmt is None."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path}: no such trajectory file")
    rows = [line.split() for line in path.read_text().splitlines() if line.strip()]
    if fmt is None:
        fmt = "kitti" if rows and len(rows[0]) == 12 else "tum"
    frame_ids, positions, rotations = [], [], []
    for lineno, row in enumerate(rows):
        vals = [float(v) for v in row]
        if fmt == "kitti":
            m = np.array(vals).reshape(3, 4)
            frame_ids.append(lineno)
            positions.append(m[:, 3])
            rotations.append(m[:, :3])
        else:
            frame_ids.append(int(round(vals[0])))
            positions.append(np.array(vals[1:4]))
            rotations.append(_quaternion_to_rotation(np.array(vals[4:8])))
    return TrajectoryEstimate(frame_ids, np.array(positions), np.array(rotations))


# --- binary PLY ---

def export_ply(points: np.ndarray, path: str | Path, colors: np.ndarray | None = None) -> None:
    """Binary little-endian PLY with float32 xyz and optional uint8 rgb."""
    from .errors import EmptyCloud

    points = np.asarray(points, dtype="<f4").reshape(-1, 3)
    if len(points) == 0:
        raise EmptyCloud("refusing to write an empty PLY")
    header = [
        "ply",
        "format binary_little_endian 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        if len(colors) != len(points):
            raise ValueError(f"{len(colors)} colors for {len(points)} points")
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if colors is None:
            fh.write(points.tobytes())
        else:
            record = np.zeros(len(points), dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
            record["xyz"] = points
            record["rgb"] = colors
            fh.write(record.tobytes())


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"{path}: no such PLY file")
    data = path.read_bytes()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    header = data[:end].decode("ascii").splitlines()
    if header[0] != "ply" or "format binary_little_endian 1.0" not in header[1]:
        raise BadMagic(f"{path}: not a binary little-endian PLY")
    n = next(int(line.split()[-1]) for line in header if line.startswith("element vertex"))
    has_color = any("uchar" in line for line in header)
    if has_color:
        record = np.frombuffer(data[end:], dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)], count=n)
        return record["xyz"].astype(np.float64), record["rgb"].copy()
    pts = np.frombuffer(data[end:], dtype="<f4", count=3 * n).reshape(n, 3)
    return pts.astype(np.float64), None


# --- JSON helpers for transforms ---

def sim3_to_dict(s: Sim3) -> dict:
    return {
        "scale": s.scale,
        "rotation": s.rotation.tolist(),
        "translation": s.translation.tolist(),
    }


def sim3_from_dict(d: dict) -> Sim3:
    return Sim3(d["scale"], np.array(d["rotation"]), np.array(d["translation"]))
