"""Chunk-to-chunk similarity estimation.

The workhorse is a single weighted Umeyama solve over masked overlap
correspondences; an IRLS refinement loop is kept as the robust baseline it
replaces.  Solved transforms map source-chunk coordinates into
destination-chunk coordinates.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateGeometry, InsufficientReliablePoints, NoOverlap
from .geometry import ChunkArtifact, Intrinsics
from .sim3 import Sim3, transform_points

log = logging.getLogger(__name__)

# second singular value below this (relative to the largest) means the
# centered points are essentially collinear
_RANK_TOL = 1e-12


@dataclass
class CorrespondenceSet:
    """Paired (N, 3) point arrays with optional per-pair weights."""

    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.src = np.asarray(self.src, dtype=float)
        self.dst = np.asarray(self.dst, dtype=float)
        if self.src.shape != self.dst.shape or self.src.ndim != 2 or self.src.shape[1] != 3:
            raise ValueError(f"src {self.src.shape} and dst {self.dst.shape} must be equal (N, 3)")
        if len(self.src) < 3:
            raise ValueError(f"need at least 3 correspondences, got {len(self.src)}")
        if not (np.isfinite(self.src).all() and np.isfinite(self.dst).all()):
            raise ValueError("correspondences must be finite")
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=float)
            if self.weights.shape != (len(self.src),):
                raise ValueError("weights must be one nonnegative value per pair")
            if (self.weights < 0).any():
                raise ValueError("weights must be nonnegative")

    def __len__(self) -> int:
        return len(self.src)


@dataclass
class AlignmentReport:
    transform: Sim3
    n_points: int
    rms_residual: float
    elapsed: float


@dataclass
class AlignmentParams:
    """Knobs for align_adjacent; defaults follow the pipeline config."""

    lambda_d: float = 0.2
    lambda_gamma: float = 0.5
    method: str = "umeyama"  # or "irls"
    min_reliable_points: int = 100
    max_points: int = 200_000
    irls_max_iters: int = 10
    irls_kernel_scale: float = 1.345
    seed: int = 0


def umeyama_sim3(c: CorrespondenceSet) -> Sim3:
    """Closed-form least-squares similarity mapping src onto dst.

    Weighted SVD of the cross-covariance with the determinant-sign
    correction, minimizing sum_i w_i || dst_i - s R src_i - t ||^2.
    """
    if c.weights is None:
        w = np.full(len(c), 1.0 / len(c))
    else:
        total = c.weights.sum()
        if total <= 0:
            raise DegenerateGeometry("all correspondence weights are zero")
        w = c.weights / total

    mu_src = w @ c.src
    mu_dst = w @ c.dst
    x = c.src - mu_src
    y = c.dst - mu_dst

    cov = (y * w[:, None]).T @ x  # maps centered src toward centered dst
    u, d, vt = np.linalg.svd(cov)
    if d[0] <= 0 or d[1] <= _RANK_TOL * d[0]:
        raise DegenerateGeometry(
            f"cross-covariance is rank deficient (singular values {d})"
        )
    sign = np.sign(np.linalg.det(u) * np.linalg.det(vt))
    flip = np.array([1.0, 1.0, sign])
    rotation = u @ np.diag(flip) @ vt

    var_src = float(w @ (x * x).sum(axis=1))
    if var_src <= 0:
        raise DegenerateGeometry("source points are coincident")
    scale = float((d * flip).sum() / var_src)
    if scale <= 0:
        raise DegenerateGeometry(f"recovered nonpositive scale {scale}")
    translation = mu_dst - scale * (rotation @ mu_src)
    return Sim3(scale, rotation, translation)


def _huber_weights(residuals: np.ndarray, kernel_scale: float) -> np.ndarray:
    med = np.median(residuals)
    mad = np.median(np.abs(residuals - med))
    scale = mad if mad > 0 else med
    if scale <= 0:
        return np.ones_like(residuals)  # perfect fit
    k = kernel_scale * scale
    w = np.ones_like(residuals)
    large = residuals > k
    w[large] = k / residuals[large]
    return w


def irls_sim3(c: CorrespondenceSet, max_iters: int = 10, kernel_scale: float = 1.345) -> Sim3:
    """Iteratively reweighted Umeyama with a Huber kernel.

    Zero iterations degenerate to a single plain solve.  Iteration stops
    when the largest weight change drops below 1e-8.
    """
    base = c.weights if c.weights is not None else np.ones(len(c))
    w = np.ones(len(c))
    transform = umeyama_sim3(CorrespondenceSet(c.src, c.dst, base * w))
    for _ in range(max_iters):
        residuals = np.linalg.norm(c.dst - transform_points(transform, c.src), axis=1)
        w_new = _huber_weights(residuals, kernel_scale)
        if np.abs(w_new - w).max() < 1e-8:
            break
        w = w_new
        transform = umeyama_sim3(CorrespondenceSet(c.src, c.dst, base * w))
    return transform


def overlap_frame_ids(chunk_t: ChunkArtifact, chunk_t1: ChunkArtifact) -> list[int]:
    shared = sorted(set(chunk_t.frame_ids) & set(chunk_t1.frame_ids))
    if not shared:
        raise NoOverlap(f"chunks {chunk_t.chunk_id} and {chunk_t1.chunk_id} share no frames")
    return shared


def masked_overlap_points(chunk_t: ChunkArtifact, chunk_t1: ChunkArtifact,
                          ref: Intrinsics, lambda_d: float, lambda_gamma: float
                          ) -> tuple[np.ndarray, np.ndarray]:
    """Correspondences from the shared frames of two chunks.

    Both depth maps are normalized to the reference intrinsic; the
    reliability mask selects pixels, which are back-projected through each
    chunk's own pose for that frame.
    """
    src_pts, dst_pts = [], []
    for fid in overlap_frame_ids(chunk_t, chunk_t1):
        i_t = chunk_t.index_of(fid)
        i_t1 = chunk_t1.index_of(fid)
        d_t = geometry.normalize_depth(chunk_t.depths[i_t], chunk_t.intrinsics[i_t], ref)
        d_t1 = geometry.normalize_depth(chunk_t1.depths[i_t1], chunk_t1.intrinsics[i_t1], ref)
        mask = geometry.reliability_mask(d_t, d_t1, lambda_d, lambda_gamma)
        src_pts.append(geometry.backproject(d_t, ref, chunk_t.poses[i_t], mask=mask))
        dst_pts.append(geometry.backproject(d_t1, ref, chunk_t1.poses[i_t1], mask=mask))
    return np.concatenate(src_pts), np.concatenate(dst_pts)


def align_adjacent(chunk_t: ChunkArtifact, chunk_t1: ChunkArtifact,
                   params: AlignmentParams | None = None,
                   ref: Intrinsics | None = None) -> AlignmentReport:
    """Estimate the Sim(3) taking chunk_t coordinates into chunk_t1 coordinates.

    When the mask keeps fewer than min_reliable_points pixels, lambda_d is
    relaxed by x2 up to three times before giving up; every relaxation is
    logged.  Point sets above max_points are uniformly subsampled with a
    seeded generator.
    """
    params = params or AlignmentParams()
    if ref is None:
        ref = chunk_t.intrinsics[0]
    start = time.perf_counter()

    lambda_d = params.lambda_d
    for attempt in range(4):
        src, dst = masked_overlap_points(chunk_t, chunk_t1, ref, lambda_d, params.lambda_gamma)
        if len(src) >= params.min_reliable_points:
            break
        if attempt == 3:
            raise InsufficientReliablePoints(
                f"chunks {chunk_t.chunk_id}->{chunk_t1.chunk_id}: {len(src)} masked pixels "
                f"after relaxing lambda_d to {lambda_d}"
            )
        lambda_d *= 2.0
        log.warning(
            "chunks %d->%d: only %d masked pixels; relaxing lambda_d to %g",
            chunk_t.chunk_id, chunk_t1.chunk_id, len(src), lambda_d,
        )

    if len(src) > params.max_points:
        rng = np.random.default_rng(params.seed + 7919 * chunk_t.chunk_id)
        keep = rng.choice(len(src), size=params.max_points, replace=False)
        keep.sort()
        src, dst = src[keep], dst[keep]

    corr = CorrespondenceSet(src, dst)
    if params.method == "irls":
        transform = irls_sim3(corr, params.irls_max_iters, params.irls_kernel_scale)
    elif params.method == "umeyama":
        transform = umeyama_sim3(corr)
    else:
        raise ValueError(f"unknown alignment method {params.method!r}")

    residuals = np.linalg.norm(dst - transform_points(transform, src), axis=1)
    return AlignmentReport(
        transform=transform,
        n_points=len(src),
        rms_residual=float(np.sqrt(np.mean(residuals**2))),
        elapsed=time.perf_counter() - start,
    )
