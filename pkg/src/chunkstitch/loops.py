"""Training-free loop retrieval from encoder patch tokens.

Per-frame tokens are pooled, signed-power normalized, and whitened with the
top principal directions removed, which strips the scene-wide component that
makes unrelated frames look alike.  Retrieval is cosine similarity with a
temporal gate and greedy non-maximum suppression in index space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sim3
from .errors import RankDeficient, TooFewFrames, ZeroProjection, ZeroToken, ZeroVector
from .sim3 import Sim3

_EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True)
class WhiteningModel:
    """Mean descriptor plus the scaled projection onto retained directions."""

    mean: np.ndarray          # (d,)
    projection: np.ndarray    # (d, d_out), columns are eigvec / sqrt(eigval)
    removed_components: int


@dataclass(frozen=True)
class LoopCandidate:
    frame_i: int
    frame_j: int
    similarity: float


def pool_tokens(tokens: np.ndarray) -> np.ndarray:
    """Average of per-token l2-normalized rows: (K, d) -> (d,)."""
    tokens = np.asarray(tokens, dtype=float)
    if tokens.ndim != 2 or tokens.shape[0] < 1:
        raise ValueError(f"tokens must be (K, d), got {tokens.shape}")
    norms = np.linalg.norm(tokens, axis=1)
    if (norms < 1e-12).any():
        raise ZeroToken(f"{int((norms < 1e-12).sum())} token rows have near-zero norm")
    return (tokens / norms[:, None]).mean(axis=0)


def signed_power(g: np.ndarray, beta: float = 0.5) -> np.ndarray:
    """Elementwise sign(g) |g|^beta followed by l2 normalization."""
    g = np.asarray(g, dtype=float)
    out = np.sign(g) * np.abs(g) ** beta
    norm = np.linalg.norm(out)
    if norm < 1e-12:
        raise ZeroVector("signed power of an all-zero descriptor")
    return out / norm


def fit_whitening(descriptors: np.ndarray, r: int = 1, d_out: int | None = None) -> WhiteningModel:
    """Whitening model from (N, d) unit-norm descriptor rows.

    Eigendecomposes the covariance of mean-centered rows, drops the r
    largest-eigenvalue directions, and keeps the next d_out eigenvectors
    scaled by 1/sqrt(eigenvalue).  Directions at the eigenvalue floor are
    never amplified; if fewer than d_out usable directions remain the model
    is rank deficient.
    """
    g = np.asarray(descriptors, dtype=float)
    n, d = g.shape
    if d_out is None:
        d_out = d - r
    if d_out < 1 or d_out > d - r:
        raise ValueError(f"d_out must be in [1, d - r] = [1, {d - r}], got {d_out}")
    if n < d_out + r + 1:
        raise TooFewFrames(f"need at least {d_out + r + 1} rows to retain {d_out} dims, got {n}")

    mean = g.mean(axis=0)
    centered = g - mean
    cov = centered.T @ centered / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)  # ascending
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]

    kept_vals = eigvals[r:r + d_out]
    kept_vecs = eigvecs[:, r:r + d_out]
    if (kept_vals <= _EIGENVALUE_FLOOR).any():
        usable = int((eigvals[r:] > _EIGENVALUE_FLOOR).sum())
        raise RankDeficient(f"{usable} usable directions after removing top {r}, need {d_out}")

    return WhiteningModel(mean, kept_vecs / np.sqrt(kept_vals), r)


def apply_whitening(g: np.ndarray, model: WhiteningModel) -> np.ndarray:
    """Unit-norm whitened descriptor: normalize((g - mean) @ projection)."""
    z = (np.asarray(g, dtype=float) - model.mean) @ model.projection
    norm = np.linalg.norm(z)
    if norm < 1e-12:
        raise ZeroProjection("frame descriptor is indistinguishable from the scene mean")
    return z / norm


def similarity_matrix(z: np.ndarray) -> np.ndarray:
    """Cosine similarities of unit rows: symmetric, unit diagonal, in [-1, 1]."""
    z = np.asarray(z, dtype=float)
    s = z @ z.T
    s = np.clip((s + s.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(s, 1.0)
    return s


def detect_loops(sim: np.ndarray, threshold: float, min_frame_gap: int,
                 nms_radius: int) -> list[LoopCandidate]:
    """Temporally gated loop pairs above threshold, after greedy NMS.

    Candidates are ranked by (similarity desc, i asc, j asc); an accepted
    pair suppresses every later pair within Chebyshev distance nms_radius
    of it in (i, j) index space.  Only i < j pairs are emitted.
    """
    sim = np.asarray(sim, dtype=float)
    n = sim.shape[0]
    ii, jj = np.triu_indices(n, k=max(min_frame_gap, 1))
    vals = sim[ii, jj]
    keep = vals >= threshold
    ii, jj, vals = ii[keep], jj[keep], vals[keep]
    order = np.lexsort((jj, ii, -vals))

    accepted: list[LoopCandidate] = []
    for idx in order:
        i, j, v = int(ii[idx]), int(jj[idx]), float(vals[idx])
        suppressed = any(
            max(abs(i - c.frame_i), abs(j - c.frame_j)) <= nms_radius for c in accepted
        )
        if not suppressed:
            accepted.append(LoopCandidate(i, j, v))
    return accepted


def build_loop_batch(i: int, j: int, loop_chunk_size: int, n_frames: int) -> list[int]:
    """Frame ids for a loop-centric chunk: two windows centered on i and j.

    Each window holds loop_chunk_size // 2 frames, shifted to stay inside
    [0, n_frames); the combined list is deduplicated keeping the i-window
    segment first.
    """
    if i == j or not (0 <= i < n_frames and 0 <= j < n_frames):
        raise ValueError(f"need two distinct frames inside [0, {n_frames}), got {i}, {j}")
    half = loop_chunk_size // 2

    def window(center: int) -> range:
        if n_frames <= half:
            return range(0, n_frames)
        start = min(max(center - half // 2, 0), n_frames - half)
        return range(start, start + half)

    seen: dict[int, None] = {}
    for fid in list(window(i)) + list(window(j)):
        seen.setdefault(fid)
    return list(seen)


def loop_sim3(s_i_loop: Sim3, s_j_loop: Sim3) -> Sim3:
    """Loop constraint from the two loop-chunk alignments.

    With s_i_loop and s_j_loop mapping loop-chunk coordinates into the
    frames of the chunks containing i and j, the result maps chunk-[i]
    coordinates into chunk-[j] coordinates.
    """
    return sim3.compose(s_j_loop, sim3.inverse(s_i_loop))
