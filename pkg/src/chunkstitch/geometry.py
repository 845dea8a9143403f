"""Chunk scheduling, depth normalization, back-projection, and the reliability mask.

Depth maps from different chunks are only comparable after rescaling to a
common reference intrinsic; the mask then keeps pixels whose depths agree
across the two chunks and whose confidences clear a per-frame threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidWindow, ShapeMismatch
from .sim3 import Sim3

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside image {self.width}x{self.height}"
            )


@dataclass(frozen=True)
class DepthMap:
    """Per-frame depth values with an equally shaped confidence grid."""

    values: np.ndarray
    confidence: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        confidence = np.asarray(self.confidence, dtype=float)
        if values.shape != confidence.shape or values.ndim != 2:
            raise ShapeMismatch(
                f"depth {values.shape} and confidence {confidence.shape} must be equal 2-d grids"
            )
        if np.isnan(values).any() or np.isnan(confidence).any():
            raise ValueError("depth/confidence must not contain NaN")
        if (values < 0).any():
            raise ValueError("depth must be nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "confidence", confidence)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


@dataclass
class ChunkArtifact:
    """One chunk's worth of per-frame reconstruction outputs.

    ``poses`` are camera-to-world in the chunk-local frame, stored as Sim3
    with unit scale; ``tokens`` holds one (K, d) patch-token matrix per
    frame.  Temporal chunks carry contiguous frame ids; loop-centric chunks
    (``kind="loop"``) concatenate two distant windows.
    """

    chunk_id: int
    frame_ids: list[int]
    intrinsics: list[Intrinsics]
    poses: list[Sim3]
    depths: list[DepthMap]
    tokens: list[np.ndarray] = field(default_factory=list)
    kind: str = "temporal"

    def __post_init__(self) -> None:
        n = len(self.frame_ids)
        for name in ("intrinsics", "poses", "depths"):
            got = len(getattr(self, name))
            if got != n:
                raise ValueError(f"chunk {self.chunk_id}: {name} has {got} entries for {n} frames")
        if self.tokens and len(self.tokens) != n:
            raise ValueError(f"chunk {self.chunk_id}: tokens has {len(self.tokens)} entries for {n} frames")
        if len(set(self.frame_ids)) != n:
            raise ValueError(f"chunk {self.chunk_id}: duplicate frame ids")
        if self.kind == "temporal" and n > 1:
            diffs = np.diff(self.frame_ids)
            if not (diffs == 1).all():
                raise ValueError(f"chunk {self.chunk_id}: frame_ids must be contiguous and increasing")

    def __len__(self) -> int:
        return len(self.frame_ids)

    def index_of(self, frame_id: int) -> int:
        return self.frame_ids.index(frame_id)


def chunk_indices(n_frames: int, chunk_size: int, overlap: int) -> list[tuple[int, int]]:
    """Sliding-window frame ranges [start, end) covering [0, n_frames).

    The t-th window starts at t*(chunk_size - overlap); the final window is
    shifted back so it ends exactly at n_frames while keeping full size.
    """
    if not (0 < overlap < chunk_size):
        raise InvalidWindow(f"need 0 < overlap < chunk_size, got overlap={overlap}, chunk_size={chunk_size}")
    if chunk_size > n_frames:
        raise InvalidWindow(f"chunk_size={chunk_size} exceeds n_frames={n_frames}")
    stride = chunk_size - overlap
    ranges = []
    t = 0
    while True:
        start = t * stride
        end = start + chunk_size
        if end >= n_frames:
            ranges.append((max(0, n_frames - chunk_size), n_frames))
            return ranges
        ranges.append((start, end))
        t += 1


def normalize_depth(d: DepthMap, src: Intrinsics, ref: Intrinsics) -> DepthMap:
    """Rescale depth to the reference intrinsic; confidence is untouched.

    The factor is the mean of the two focal ratios, which accounts for
    anisotropy between fx and fy.
    """
    factor = 0.5 * (ref.fx / src.fx + ref.fy / src.fy)
    return DepthMap(d.values * factor, d.confidence)


def backproject(d: DepthMap, k: Intrinsics, pose: Sim3 | None = None,
                mask: np.ndarray | None = None) -> np.ndarray:
    """Lift pixels with positive depth through the pinhole model.

    Returns an (N, 3) array; pixel (u, v) with depth z maps to
    pose applied to ((u - cx) z / fx, (v - cy) z / fy, z).  Zero-depth
    pixels are omitted, as are pixels cleared in ``mask`` when given.
    """
    h, w = d.shape
    keep = d.values > 0
    if mask is not None:
        if mask.shape != d.shape:
            raise ShapeMismatch(f"mask {mask.shape} does not match depth {d.shape}")
        keep = keep & mask
    v, u = np.nonzero(keep)
    z = d.values[v, u]
    pts = np.column_stack([(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z])
    if pose is not None:
        pts = pose.scale * (pts @ pose.rotation.T) + pose.translation
    return pts


def project(pts: np.ndarray, k: Intrinsics) -> tuple[np.ndarray, np.ndarray]:
    """Forward pinhole projection of camera-frame points: (N, 2) pixels and depths."""
    pts = np.asarray(pts, dtype=float)
    z = pts[:, 2]
    uv = np.column_stack([k.fx * pts[:, 0] / z + k.cx, k.fy * pts[:, 1] / z + k.cy])
    return uv, z


def reliability_mask(d_t: DepthMap, d_t1: DepthMap, lambda_d: float,
                     lambda_gamma: float) -> np.ndarray:
    """Boolean grid of pixels safe to feed the similarity solve.

    A pixel passes when the two (already normalized) depths differ by less
    than lambda_d and both confidences exceed lambda_gamma times their
    frame-wide mean.  A frame whose mean confidence is zero contributes no
    confidence information; its test degenerates to depth-only.
    """
    if d_t.shape != d_t1.shape:
        raise ShapeMismatch(f"depth grids {d_t.shape} vs {d_t1.shape}")
    mask = np.abs(d_t.values - d_t1.values) < lambda_d
    for side in (d_t, d_t1):
        mean = side.confidence.mean()
        if mean == 0.0:
            log.warning("frame has zero mean confidence; skipping confidence test")
            continue
        mask &= side.confidence > lambda_gamma * mean
    return mask
