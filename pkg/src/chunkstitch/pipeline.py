"""End-to-end orchestration: load, align, retrieve loops, optimize, export.

Loop-centric chunks normally come from a backbone inference over the loop
batch.  This stitcher accepts them from two sources: pre-exported loop
manifests sitting next to the temporal ones, or on-the-fly rendering when
the manifest directory carries a synthetic scene description.  Loops with
no obtainable chunk are logged and dropped.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import alignment, loops, posegraph, sim3, synthetic, tensorio
from .config import PipelineConfig
from .errors import StitchError, ZeroProjection
from .evaluation import TrajectoryEstimate
from .geometry import ChunkArtifact, Intrinsics
from .loops import LoopCandidate
from .posegraph import Edge, PoseGraph, SolveReport, SolveSettings
from .sim3 import Sim3

log = logging.getLogger(__name__)

SCENE_SPEC_FILE = "scene_spec.json"


@dataclass
class PipelineResult:
    trajectory: TrajectoryEstimate
    cloud: np.ndarray
    nodes: list[Sim3]
    sequential: list[alignment.AlignmentReport]
    loop_candidates: list[LoopCandidate]
    loop_edges: list[Edge]
    solve_report: SolveReport
    timings: dict[str, float] = field(default_factory=dict)


def alignment_params(cfg: PipelineConfig) -> alignment.AlignmentParams:
    return alignment.AlignmentParams(
        lambda_d=cfg.lambda_d,
        lambda_gamma=cfg.lambda_gamma,
        method=cfg.method,
        min_reliable_points=cfg.min_reliable_points,
        max_points=cfg.max_align_points,
        irls_max_iters=cfg.irls_max_iters,
        irls_kernel_scale=cfg.irls_kernel_scale,
        seed=cfg.seed,
    )


def solve_settings(cfg: PipelineConfig) -> SolveSettings:
    return SolveSettings(
        max_iters=cfg.lm_max_iters,
        initial_damping=cfg.lm_initial_damping,
        damping_up=cfg.lm_damping_up,
        damping_down=cfg.lm_damping_down,
        cost_tolerance=cfg.lm_cost_tolerance,
        step_tolerance=cfg.lm_step_tolerance,
    )


# --- loop-chunk sources ---

class LoopChunkSource:
    """Resolves a loop-centric chunk for a detected loop pair."""

    def get(self, i: int, j: int, frame_ids: list[int]) -> ChunkArtifact | None:
        raise NotImplementedError


class ManifestLoopSource(LoopChunkSource):
    """Pre-exported loop chunks; picks the one covering both frames best."""

    def __init__(self, loop_chunks: list[ChunkArtifact]):
        self.loop_chunks = loop_chunks

    def get(self, i: int, j: int, frame_ids: list[int]) -> ChunkArtifact | None:
        want = set(frame_ids)
        best, best_cover = None, 0
        for chunk in self.loop_chunks:
            have = set(chunk.frame_ids)
            if i in have and j in have:
                cover = len(want & have)
                if cover > best_cover:
                    best, best_cover = chunk, cover
        return best


class SyntheticLoopSource(LoopChunkSource):
    """Renders loop chunks on demand from a stored scene description."""

    def __init__(self, scene: synthetic.SyntheticScene):
        self.scene = scene
        self._next_id = 10_000

    def get(self, i: int, j: int, frame_ids: list[int]) -> ChunkArtifact | None:
        self._next_id += 1
        return self.scene.render_chunk(frame_ids, chunk_id=self._next_id)


def loop_source_for(manifest_dir: str | Path, loop_chunks: list[ChunkArtifact]) -> LoopChunkSource:
    spec_path = Path(manifest_dir) / SCENE_SPEC_FILE
    if loop_chunks:
        return ManifestLoopSource(loop_chunks)
    if spec_path.exists():
        spec = synthetic.SceneSpec(**json.loads(spec_path.read_text()))
        return SyntheticLoopSource(synthetic.generate_scene(spec))
    return ManifestLoopSource([])


# --- stages ---

def owner_chunks(chunks: list[ChunkArtifact]) -> dict[int, int]:
    """frame id -> index of the earliest chunk containing it."""
    owner: dict[int, int] = {}
    for idx, chunk in enumerate(chunks):
        for fid in chunk.frame_ids:
            owner.setdefault(fid, idx)
    return owner


def sequential_alignments(chunks: list[ChunkArtifact], cfg: PipelineConfig,
                          ref: Intrinsics) -> list[alignment.AlignmentReport]:
    params = alignment_params(cfg)
    return [
        alignment.align_adjacent(chunks[t], chunks[t + 1], params, ref=ref)
        for t in range(len(chunks) - 1)
    ]


def compute_descriptors(chunks: list[ChunkArtifact], cfg: PipelineConfig
                        ) -> tuple[np.ndarray, list[int]]:
    """Whitened global descriptors, one row per usable frame.

    Returns (descriptors, frame_ids).  The whitening output dimension is
    clamped to what the token dimension and frame count can support.
    """
    owner = owner_chunks(chunks)
    frame_ids = sorted(owner)
    pooled = []
    for fid in frame_ids:
        chunk = chunks[owner[fid]]
        tokens = chunk.tokens[chunk.index_of(fid)]
        pooled.append(loops.signed_power(loops.pool_tokens(tokens), cfg.beta))
    g = np.array(pooled)

    n, d = g.shape
    d_out = min(cfg.whitening_dim, d - cfg.whitening_r, n - cfg.whitening_r - 1)
    if d_out < cfg.whitening_dim:
        log.info("whitening_dim clamped from %d to %d (d=%d, frames=%d)",
                 cfg.whitening_dim, d_out, d, n)
    model = loops.fit_whitening(g, r=cfg.whitening_r, d_out=d_out)

    rows, kept = [], []
    for fid, vec in zip(frame_ids, g):
        try:
            rows.append(loops.apply_whitening(vec, model))
            kept.append(fid)
        except ZeroProjection:
            log.warning("frame %d indistinguishable from scene mean; skipped", fid)
    return np.array(rows), kept


def detect_loop_candidates(descriptors: np.ndarray, frame_ids: list[int],
                           cfg: PipelineConfig) -> list[LoopCandidate]:
    if len(descriptors) == 0:
        return []
    sim_matrix = loops.similarity_matrix(descriptors)
    found = loops.detect_loops(sim_matrix, cfg.similarity_threshold,
                               cfg.min_frame_gap, cfg.nms_radius)
    # map row indices back to global frame ids
    return [LoopCandidate(frame_ids[c.frame_i], frame_ids[c.frame_j], c.similarity)
            for c in found]


def build_loop_edges(chunks: list[ChunkArtifact], candidates: list[LoopCandidate],
                     source: LoopChunkSource, cfg: PipelineConfig,
                     ref: Intrinsics, n_frames: int) -> list[Edge]:
    owner = owner_chunks(chunks)
    params = alignment_params(cfg)
    edges = []
    for cand in candidates:
        c_i, c_j = owner[cand.frame_i], owner[cand.frame_j]
        if c_i == c_j:
            log.info("loop (%d, %d) falls inside chunk %d; skipped", cand.frame_i, cand.frame_j, c_i)
            continue
        batch = loops.build_loop_batch(cand.frame_i, cand.frame_j, cfg.loop_chunk_size, n_frames)
        loop_chunk = source.get(cand.frame_i, cand.frame_j, batch)
        if loop_chunk is None:
            log.warning("no loop chunk available for (%d, %d); dropping the constraint",
                        cand.frame_i, cand.frame_j)
            continue
        try:
            s_i_loop = alignment.align_adjacent(loop_chunk, chunks[c_i], params, ref=ref).transform
            s_j_loop = alignment.align_adjacent(loop_chunk, chunks[c_j], params, ref=ref).transform
        except StitchError as exc:
            log.warning("loop (%d, %d) alignment failed: %s", cand.frame_i, cand.frame_j, exc)
            continue
        relative = loops.loop_sim3(s_i_loop, s_j_loop)  # chunk c_i coords -> c_j coords
        edges.append(Edge("loop", c_i, c_j, sim3.inverse(relative)))
    return edges


def build_graph(reports: list[alignment.AlignmentReport], loop_edges: list[Edge]) -> PoseGraph:
    """Nodes by forward chaining; measurements map node-j coords into node-i."""
    measurements = [sim3.inverse(r.transform) for r in reports]
    nodes = [Sim3.identity()]
    for m in measurements:
        nodes.append(sim3.compose(nodes[-1], m))
    edges = [Edge("sequential", t, t + 1, m) for t, m in enumerate(measurements)]
    return PoseGraph(nodes, edges + loop_edges)


def run_pipeline(manifest_dir: str | Path, cfg: PipelineConfig,
                 out_dir: str | Path | None = None,
                 with_loops: bool = True) -> PipelineResult:
    """Full stitching pass over a manifest directory.

    Writes trajectory (KITTI and TUM), binary PLY, the loop list, and a
    timing report into out_dir when given.
    """
    timings: dict[str, float] = {}
    t0 = time.perf_counter()
    chunks, loop_chunks = tensorio.read_manifest_dir(manifest_dir)
    ref = chunks[0].intrinsics[0]
    n_frames = max(max(c.frame_ids) for c in chunks) + 1
    timings["load"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    reports = sequential_alignments(chunks, cfg, ref)
    timings["align"] = time.perf_counter() - t0

    candidates: list[LoopCandidate] = []
    loop_edges: list[Edge] = []
    if with_loops:
        t0 = time.perf_counter()
        descriptors, desc_frames = compute_descriptors(chunks, cfg)
        candidates = detect_loop_candidates(descriptors, desc_frames, cfg)
        timings["loop_detect"] = time.perf_counter() - t0

        t0 = time.perf_counter()
        source = loop_source_for(manifest_dir, loop_chunks)
        loop_edges = build_loop_edges(chunks, candidates, source, cfg, ref, n_frames)
        timings["loop_align"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    graph = build_graph(reports, loop_edges)
    nodes, solve_report = posegraph.optimize(graph, solve_settings(cfg))
    timings["optimize"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    ceiling = cfg.depth_ceiling if cfg.depth_ceiling > 0 else None
    trajectory, cloud = posegraph.propagate_to_frames(
        nodes, chunks, ref=ref, point_stride=cfg.export_point_stride, depth_ceiling=ceiling
    )
    timings["propagate"] = time.perf_counter() - t0

    result = PipelineResult(trajectory, cloud, nodes, reports, candidates,
                            loop_edges, solve_report, timings)
    if out_dir is not None:
        t0 = time.perf_counter()
        write_outputs(result, out_dir)
        timings["export"] = time.perf_counter() - t0
    return result


def write_outputs(result: PipelineResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tensorio.export_trajectory(result.trajectory, out / "trajectory_kitti.txt", "kitti")
    tensorio.export_trajectory(result.trajectory, out / "trajectory_tum.txt", "tum")
    tensorio.export_ply(result.cloud, out / "cloud.ply")

    (out / "loops.json").write_text(json.dumps({
        "candidates": [asdict(c) for c in result.loop_candidates],
        "edges": [
            {"kind": e.kind, "i": e.i, "j": e.j,
             "measurement": tensorio.sim3_to_dict(e.measurement)}
            for e in result.loop_edges
        ],
    }, indent=2))
    (out / "nodes.json").write_text(json.dumps(
        [tensorio.sim3_to_dict(n) for n in result.nodes], indent=2))
    (out / "alignments.json").write_text(json.dumps([
        {"transform": tensorio.sim3_to_dict(r.transform), "n_points": r.n_points,
         "rms_residual": r.rms_residual, "elapsed": r.elapsed}
        for r in result.sequential
    ], indent=2))
    (out / "timing.json").write_text(json.dumps(result.timings, indent=2))
    (out / "report.json").write_text(json.dumps({
        "iters": result.solve_report.iters,
        "initial_cost": result.solve_report.initial_cost,
        "final_cost": result.solve_report.final_cost,
        "converged": result.solve_report.converged,
        "n_loop_edges": len(result.loop_edges),
        "n_frames": len(result.trajectory),
        "n_points": int(len(result.cloud)),
    }, indent=2))
