"""Deterministic synthetic scenes for end-to-end and acceptance testing.

A scene is a camera path through a field of per-pixel landmarks (every pixel
of every frame carries a smooth procedural depth, bounding the points to a
tube around the trajectory).  Chunks mimic a feed-forward reconstruction
backend: each chunk observes its frame window in a private gauge (a random
similarity applied to poses, with the scale folded into depths), optionally
with depth noise, masked outliers in the overlap frames, and a per-chunk
focal misestimate coupled into depth the way the reference-intrinsic
normalization expects.

Patch tokens follow a place-cluster model: a sparse centroid per spatial
cell plus two dedicated bias coordinates whose energy swaps between cluster
revisits while preserving token norm.  The swap is exactly rank-one in
descriptor space (so top-1 whitening removes it) yet large enough to break
plain cosine retrieval; revisited cells share centroids, giving ground-truth
loop labels.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry, sim3
from .alignment import CorrespondenceSet
from .errors import InvalidSpec
from .evaluation import TrajectoryEstimate
from .geometry import ChunkArtifact, DepthMap, Intrinsics
from .sim3 import Sim3, Sim3Tangent, rotation_exp


@dataclass
class SceneSpec:
    seed: int = 0
    n_frames: int = 165
    trajectory_shape: str = "figure-eight"  # line | circle | figure-eight
    point_density: int = 2048  # pixels per frame
    depth_noise_sigma: float = 0.0
    drift_sigma: float = 0.0  # per-chunk gauge corruption, tangent units
    outlier_fraction: float = 0.0
    loop_closure: bool = True
    chunk_size: int = 75
    overlap: int = 30
    step: float = 0.25  # path length per frame, scene units
    depth_base: float = 6.0
    focal_jitter: float = 0.0  # per-chunk relative focal misestimate
    token_dim: int = 64
    tokens_per_frame: int = 16
    token_noise: float = 0.02
    # bias energy on the two dedicated token coordinates; unequal values swap
    # with the revisit level, modelling appearance change between visits (the
    # swing is only dominant, hence whitening-removable, when revisit levels
    # are roughly balanced across the sequence)
    bias_high: float = 4.0
    bias_low: float = 4.0
    cells_per_axis: int = 4
    # mid-chunk scale break: the named chunk's second half sits at a gauge
    # whose log-scale differs by scale_step (internal backbone scale drift)
    scale_step_chunk: int = -1
    scale_step: float = 0.0
    # systematic internal drift: every temporal chunk's gauge log-scale (and
    # yaw, radians) ramps by this amount across its frames, so consecutive
    # measured transforms all carry a like-signed error that accumulates
    intra_scale_drift: float = 0.0
    intra_yaw_drift: float = 0.0
    # express every chunk after the first in its own leading camera's frame,
    # the way independent per-chunk reconstructions come out; keeps gauge
    # perturbations (drift, scale steps) anchored near the chunk's content
    anchor_chunk_frames: bool = False

    def __post_init__(self) -> None:
        if self.n_frames < self.chunk_size:
            raise InvalidSpec(f"n_frames={self.n_frames} below chunk_size={self.chunk_size}")
        for name in ("depth_noise_sigma", "drift_sigma", "token_noise", "focal_jitter"):
            if getattr(self, name) < 0:
                raise InvalidSpec(f"{name} must be nonnegative")
        if not (0 <= self.outlier_fraction < 1):
            raise InvalidSpec(f"outlier_fraction must be in [0, 1), got {self.outlier_fraction}")
        if self.trajectory_shape not in ("line", "circle", "figure-eight"):
            raise InvalidSpec(f"unknown trajectory shape {self.trajectory_shape!r}")


def _frame_grid(density: int) -> tuple[int, int]:
    h = max(int(np.sqrt(density / 2)), 4)
    return h, 2 * h


def _path_points(spec: SceneSpec) -> np.ndarray:
    n = spec.n_frames
    length = spec.step * n
    u = np.arange(n) / n
    if spec.trajectory_shape == "line":
        return np.column_stack([length * u, np.zeros(n), np.zeros(n)])
    if spec.trajectory_shape == "circle":
        radius = length / (2 * np.pi)
        ang = 2 * np.pi * u
        return np.column_stack([radius * np.cos(ang), radius * np.sin(ang), np.zeros(n)])
    # figure-eight as two tangent circles traversed in opposite senses (the
    # driving pattern): every pass through the junction keeps the same
    # heading, so the junction is a genuine revisited place
    radius = length / (4 * np.pi)
    pts = np.zeros((n, 3))
    first = u < 0.5
    theta = 4 * np.pi * u[first]
    pts[first, 0] = -radius + radius * np.cos(theta)
    pts[first, 1] = radius * np.sin(theta)
    phi = 4 * np.pi * (u[~first] - 0.5)
    pts[~first, 0] = radius - radius * np.cos(phi)
    pts[~first, 1] = radius * np.sin(phi)
    return pts


def _camera_rotation(forward: np.ndarray) -> np.ndarray:
    """Camera axes (x right, y down, z forward) for a forward vector in XY."""
    z = forward / np.linalg.norm(forward)
    y = np.array([0.0, 0.0, -1.0])
    x = np.cross(y, z)
    x /= np.linalg.norm(x)
    return np.column_stack([x, y, z])


def _gt_poses(spec: SceneSpec) -> list[Sim3]:
    pts = _path_points(spec)
    poses = []
    for f in range(spec.n_frames):
        ahead = pts[(f + 1) % spec.n_frames] - pts[f]
        if np.linalg.norm(ahead) < 1e-12:
            ahead = np.array([1.0, 0.0, 0.0])
        poses.append(Sim3(1.0, _camera_rotation(ahead), pts[f]))
    return poses


def _gt_depth(spec: SceneSpec, frame_id: int) -> np.ndarray:
    """Smooth positive depth field, identical wherever the frame reappears."""
    h, w = _frame_grid(spec.point_density)
    rng = np.random.default_rng([spec.seed, 101, frame_id])
    p = rng.uniform(0, 2 * np.pi, size=4)
    v, u = np.mgrid[0:h, 0:w]
    return (
        spec.depth_base
        + 1.5 * np.sin(u / 9.0 + p[0])
        + 1.0 * np.cos(v / 5.0 + p[1])
        + 0.8 * np.sin((u + 2 * v) / 13.0 + p[2])
        + 0.4 * np.cos((2 * u - v) / 11.0 + p[3])
    )


def _gt_confidence(spec: SceneSpec, frame_id: int) -> np.ndarray:
    h, w = _frame_grid(spec.point_density)
    rng = np.random.default_rng([spec.seed, 103, frame_id])
    p = rng.uniform(0, 2 * np.pi, size=2)
    v, u = np.mgrid[0:h, 0:w]
    return 1.0 + 0.4 * np.sin(u / 6.0 + p[0]) * np.cos(v / 4.0 + p[1])


def place_cluster_tokens(labels: np.ndarray, levels: np.ndarray, spec: SceneSpec
                         ) -> list[np.ndarray]:
    """Per-frame (K, d) token matrices for given cluster labels and bias levels.

    Cluster centroids occupy a sparse support on coordinates 2..d; the bias
    energy lives on coordinates 0 and 1 and swaps between them with the
    level, keeping the total norm fixed.
    """
    d = spec.token_dim
    rng = np.random.default_rng([spec.seed, 107])
    n_clusters = int(labels.max()) + 1
    centroids = np.zeros((n_clusters, d))
    support_size = min(8, d - 2)
    for k in range(n_clusters):
        support = rng.choice(np.arange(2, d), size=support_size, replace=False)
        centroids[k, support] = rng.normal(size=support_size)
    centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)

    frames = []
    for f, (label, level) in enumerate(zip(labels, levels)):
        frame_rng = np.random.default_rng([spec.seed, 109, f])
        base = centroids[label].copy()
        pair = (spec.bias_high, spec.bias_low) if level % 2 == 0 else (spec.bias_low, spec.bias_high)
        base[0], base[1] = pair
        frames.append(base + frame_rng.normal(scale=spec.token_noise,
                                              size=(spec.tokens_per_frame, d)))
    return frames


def _cluster_labels(spec: SceneSpec, positions: np.ndarray,
                    headings: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Place labels (spatial cell x heading quadrant) and visit parity.

    Folding the heading in keeps path self-crossings from counting as the
    same place: a revisit only matches when seen from a similar direction.
    """
    xy = positions[:, :2]
    lo = xy.min(axis=0)
    span = np.maximum(xy.max(axis=0) - lo, 1e-9)
    # half-cell offset keeps the path extremes (closure points of closed
    # trajectories) away from cell boundaries
    cells = np.floor((xy - lo) / span * (spec.cells_per_axis - 1e-9) + 0.5).astype(int)
    cells = np.clip(cells, 0, spec.cells_per_axis - 1)
    # bin boundaries rotated off the axis directions so cardinal headings
    # (lobe tips, circle starts) sit mid-bin rather than on an edge
    quadrant = np.floor((np.arctan2(headings[:, 1], headings[:, 0]) + np.pi - np.pi / 8.0)
                        / (np.pi / 2.0)).astype(int) % 4
    flat = (cells[:, 0] * spec.cells_per_axis + cells[:, 1]) * 4 + quadrant
    _, labels = np.unique(flat, return_inverse=True)

    levels = np.zeros(len(labels), dtype=int)
    visits: dict[int, int] = {}
    current = -1
    for f, lab in enumerate(labels):
        if lab != current:
            visits[lab] = visits.get(lab, -1) + 1
            current = lab
        levels[f] = visits[lab]
    return labels, levels


@dataclass
class SyntheticScene:
    spec: SceneSpec
    windows: list[tuple[int, int]]
    gt_trajectory: TrajectoryEstimate
    gt_poses: list[Sim3]
    chunks: list[ChunkArtifact]
    gauges: list[Sim3]
    gt_cloud: np.ndarray
    clusters: np.ndarray
    levels: np.ndarray
    tokens: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def intrinsics(self) -> Intrinsics:
        return self.chunks[0].intrinsics[0]

    def render_chunk(self, frame_ids: list[int], chunk_id: int,
                     gauge: Sim3 | None = None) -> ChunkArtifact:
        """Chunk over an arbitrary frame list (loop-centric batches)."""
        if gauge is None:
            gauge = _random_gauge(self.spec, 1000 + chunk_id)
            if self.spec.anchor_chunk_frames:
                gauge = sim3.compose(gauge, sim3.inverse(self.gt_poses[frame_ids[0]]))
        return _render_chunk(self.spec, chunk_id, frame_ids, self.gt_poses, gauge,
                             self.tokens, kind="loop")


def _random_gauge(spec: SceneSpec, tag: int) -> Sim3:
    if spec.drift_sigma == 0.0:
        return Sim3.identity()
    rng = np.random.default_rng([spec.seed, 113, tag])
    tangent = Sim3Tangent(
        rng.normal(scale=spec.drift_sigma, size=3),
        rng.normal(scale=spec.drift_sigma, size=3),
        rng.normal(scale=spec.drift_sigma),
    )
    return sim3.exp_map(tangent)


def _render_chunk(spec: SceneSpec, chunk_id: int, frame_ids: list[int],
                  gt_poses: list[Sim3], gauge: Sim3, tokens: list[np.ndarray],
                  kind: str = "temporal") -> ChunkArtifact:
    h, w = _frame_grid(spec.point_density)
    true_focal = float(w)
    if spec.focal_jitter > 0:
        jrng = np.random.default_rng([spec.seed, 127, chunk_id])
        gamma = float(np.exp(jrng.normal(scale=spec.focal_jitter)))
    else:
        gamma = 1.0
    k = Intrinsics(gamma * true_focal, gamma * true_focal, (w - 1) / 2.0, (h - 1) / 2.0, w, h)

    poses, depths = [], []
    overlap_start = frame_ids[0]
    split = len(frame_ids) // 2
    n = len(frame_ids)
    for idx, f in enumerate(frame_ids):
        log_bump = 0.0
        yaw_bump = 0.0
        if chunk_id == spec.scale_step_chunk and idx >= split:
            log_bump += spec.scale_step
        if kind == "temporal":
            ramp = idx / max(n - 1, 1)
            log_bump += spec.intra_scale_drift * ramp
            yaw_bump += spec.intra_yaw_drift * ramp
        if log_bump or yaw_bump:
            bump = Sim3(np.exp(log_bump),
                        rotation_exp(np.array([0.0, 0.0, yaw_bump])), np.zeros(3))
            frame_gauge = sim3.compose(gauge, bump)
        else:
            frame_gauge = gauge
        s, r_g, t_g = frame_gauge.scale, frame_gauge.rotation, frame_gauge.translation
        gt = gt_poses[f]
        poses.append(Sim3(1.0, r_g @ gt.rotation, s * (r_g @ gt.translation) + t_g))

        depth = gamma * s * _gt_depth(spec, f)
        conf = _gt_confidence(spec, f)
        if spec.depth_noise_sigma > 0:
            nrng = np.random.default_rng([spec.seed, 131, chunk_id, f])
            depth = depth + nrng.normal(scale=spec.depth_noise_sigma, size=depth.shape)
        if spec.outlier_fraction > 0 and chunk_id > 0 and f - overlap_start < spec.overlap:
            orng = np.random.default_rng([spec.seed, 137, chunk_id, f])
            n_bad = int(spec.outlier_fraction * depth.size)
            bad = orng.choice(depth.size, size=n_bad, replace=False)
            depth = depth.copy()
            depth.flat[bad] += orng.uniform(5.0, 20.0, size=n_bad)
            conf = conf.copy()
            conf.flat[bad] = 0.02
        depths.append(DepthMap(np.maximum(depth, 0.0), conf))

    return ChunkArtifact(
        chunk_id, list(frame_ids), [k] * len(frame_ids), poses, depths,
        tokens=[tokens[f] for f in frame_ids], kind=kind,
    )


def generate_scene(spec: SceneSpec) -> SyntheticScene:
    """Deterministic scene: same spec (and seed) gives bit-identical output."""
    windows = geometry.chunk_indices(spec.n_frames, spec.chunk_size, spec.overlap)
    gt_poses = _gt_poses(spec)
    positions = np.array([p.translation for p in gt_poses])
    rotations = np.array([p.rotation for p in gt_poses])
    gt_trajectory = TrajectoryEstimate(list(range(spec.n_frames)), positions, rotations)

    headings = np.array([p.rotation[:, 2] for p in gt_poses])  # camera forward
    labels, levels = _cluster_labels(spec, positions, headings)
    if not spec.loop_closure:
        # unique cells per frame block: no revisits share a centroid
        labels = np.arange(spec.n_frames) // max(spec.chunk_size // 2, 1)
        levels = np.zeros(spec.n_frames, dtype=int)
    tokens = place_cluster_tokens(labels, levels, spec)

    h, w = _frame_grid(spec.point_density)
    ref = Intrinsics(float(w), float(w), (w - 1) / 2.0, (h - 1) / 2.0, w, h)
    cloud = []
    for f in range(spec.n_frames):
        d = DepthMap(_gt_depth(spec, f), _gt_confidence(spec, f))
        cloud.append(geometry.backproject(d, ref, gt_poses[f]))
    gt_cloud = np.concatenate(cloud)

    gauges = []
    for c, (start, _) in enumerate(windows):
        if c == 0:
            gauges.append(Sim3.identity())  # chunk 0 pins the output gauge
            continue
        gauge = _random_gauge(spec, c)
        if spec.anchor_chunk_frames:
            gauge = sim3.compose(gauge, sim3.inverse(gt_poses[start]))
        gauges.append(gauge)
    chunks = [
        _render_chunk(spec, c, list(range(start, end)), gt_poses, gauges[c], tokens)
        for c, (start, end) in enumerate(windows)
    ]
    return SyntheticScene(spec, windows, gt_trajectory, gt_poses, chunks, gauges,
                          gt_cloud, labels, levels, tokens)


def inject_outliers(c: CorrespondenceSet, fraction: float, magnitude: float,
                    seed: int) -> CorrespondenceSet:
    """Displace a seeded random subset of dst points by vectors of the given norm."""
    if not (0 <= fraction < 1):
        raise ValueError(f"fraction must be in [0, 1), got {fraction}")
    dst = c.dst.copy()
    n_bad = int(fraction * len(c))
    if n_bad:
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(c), size=n_bad, replace=False)
        direction = rng.normal(size=(n_bad, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        dst[idx] += magnitude * direction
    return CorrespondenceSet(c.src, dst, None if c.weights is None else c.weights.copy())
