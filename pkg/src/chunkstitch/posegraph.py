"""Global Sim(3) optimization over sequential and loop constraints.

Nodes are chunk-to-world transforms; every edge stores the measured relative
transform taking node-j coordinates into node-i coordinates, so a consistent
edge satisfies s_j = s_i o measurement.  Residuals live in the 7-dim tangent
space and are squared-summed with equal weight.  Levenberg-Marquardt updates
use right perturbations (node <- node o exp(delta)) with per-edge Jacobian
blocks from central finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import geometry, sim3
from .errors import AngleAtPi, NotConnected
from .evaluation import TrajectoryEstimate
from .sim3 import Sim3, Sim3Tangent

_FD_STEP = 1e-6
_DENSE_NODE_LIMIT = 500


@dataclass(frozen=True)
class Edge:
    kind: str  # "sequential" or "loop"
    i: int
    j: int
    measurement: Sim3


@dataclass
class PoseGraph:
    nodes: list[Sim3]
    edges: list[Edge]

    def __post_init__(self) -> None:
        n = len(self.nodes)
        for e in self.edges:
            if not (0 <= e.i < n and 0 <= e.j < n) or e.i == e.j:
                raise ValueError(f"edge ({e.i}, {e.j}) invalid for {n} nodes")


@dataclass
class SolveSettings:
    max_iters: int = 100
    initial_damping: float = 1e-4
    damping_up: float = 10.0
    damping_down: float = 0.1
    cost_tolerance: float = 1e-10
    step_tolerance: float = 1e-10

    def __post_init__(self) -> None:
        for name in ("max_iters", "initial_damping", "damping_up", "damping_down",
                     "cost_tolerance", "step_tolerance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class SolveReport:
    iters: int
    initial_cost: float
    final_cost: float
    converged: bool
    gain_ratios: list[float] = field(default_factory=list)  # accepted steps only


def edge_residual(measurement: Sim3, s_i: Sim3, s_j: Sim3) -> Sim3Tangent:
    """log( measurement^-1 o s_i^-1 o s_j ); zero when the edge is consistent."""
    rel = sim3.compose(sim3.inverse(measurement), sim3.compose(sim3.inverse(s_i), s_j))
    return sim3.log_map(rel)


def total_cost(g: PoseGraph) -> float:
    cost = 0.0
    for e in g.edges:
        r = _residual_checked(e, g.nodes[e.i], g.nodes[e.j])
        cost += float(r @ r)
    return cost


def _residual_checked(e: Edge, s_i: Sim3, s_j: Sim3) -> np.ndarray:
    try:
        return edge_residual(e.measurement, s_i, s_j).as_vector()
    except AngleAtPi as exc:
        raise AngleAtPi(f"{e.kind} edge ({e.i}, {e.j}): {exc}") from exc


def check_sequential_chain(g: PoseGraph) -> None:
    """Sequential edges must connect every consecutive node pair."""
    covered = {(min(e.i, e.j), max(e.i, e.j)) for e in g.edges if e.kind == "sequential"}
    missing = [(t, t + 1) for t in range(len(g.nodes) - 1) if (t, t + 1) not in covered]
    if missing:
        raise NotConnected(f"sequential chain is missing edges {missing}")


def _perturbed(node: Sim3, coord: int, step: float) -> Sim3:
    delta = np.zeros(7)
    delta[coord] = step
    return sim3.compose(node, sim3.exp_map(Sim3Tangent.from_vector(delta)))


def _edge_jacobian_block(e: Edge, nodes: list[Sim3], which: int) -> np.ndarray:
    """7x7 d(residual)/d(tangent of node `which`) by central differences."""
    block = np.empty((7, 7))
    for k in range(7):
        if which == e.i:
            rp = _residual_checked(e, _perturbed(nodes[e.i], k, _FD_STEP), nodes[e.j])
            rm = _residual_checked(e, _perturbed(nodes[e.i], k, -_FD_STEP), nodes[e.j])
        else:
            rp = _residual_checked(e, nodes[e.i], _perturbed(nodes[e.j], k, _FD_STEP))
            rm = _residual_checked(e, nodes[e.i], _perturbed(nodes[e.j], k, -_FD_STEP))
        block[:, k] = (rp - rm) / (2.0 * _FD_STEP)
    return block


def _build_normal_equations(g: PoseGraph, free_index: dict[int, int]):
    """Gauss-Newton H = J^T J and gradient g = J^T r over free nodes."""
    n_free = len(free_index)
    use_sparse = len(g.nodes) > _DENSE_NODE_LIMIT
    if use_sparse:
        from scipy.sparse import lil_matrix

        h = lil_matrix((7 * n_free, 7 * n_free))
    else:
        h = np.zeros((7 * n_free, 7 * n_free))
    grad = np.zeros(7 * n_free)
    cost = 0.0

    for e in g.edges:
        r = _residual_checked(e, g.nodes[e.i], g.nodes[e.j])
        cost += float(r @ r)
        blocks = []
        for which in (e.i, e.j):
            if which in free_index:
                blocks.append((free_index[which], _edge_jacobian_block(e, g.nodes, which)))
        for a, ja in blocks:
            grad[7 * a:7 * a + 7] += ja.T @ r
            for b, jb in blocks:
                h[7 * a:7 * a + 7, 7 * b:7 * b + 7] += ja.T @ jb
    return h, grad, cost, use_sparse


def _solve_damped(h, grad, damping: float, use_sparse: bool) -> np.ndarray:
    n = grad.shape[0]
    if use_sparse:
        from scipy.sparse import identity
        from scipy.sparse.linalg import spsolve

        return spsolve((h + damping * identity(n)).tocsr(), -grad)
    return np.linalg.solve(h + damping * np.eye(n), -grad)


def optimize(g: PoseGraph, settings: SolveSettings | None = None) -> tuple[list[Sim3], SolveReport]:
    """Minimize the summed squared edge residuals; node 0 stays fixed.

    Returns the refined node list and a report.  Accepted steps never
    increase the cost; rejected steps raise the damping and retry.
    """
    settings = settings or SolveSettings()
    check_sequential_chain(g)

    free = [t for t in range(len(g.nodes)) if t != 0]
    free_index = {t: k for k, t in enumerate(free)}
    nodes = list(g.nodes)
    work = PoseGraph(nodes, g.edges)

    damping = settings.initial_damping
    initial_cost = total_cost(work)
    cost = initial_cost
    gain_ratios: list[float] = []
    converged = False
    iters = 0

    for iters in range(1, settings.max_iters + 1):
        h, grad, cost, use_sparse = _build_normal_equations(work, free_index)
        if np.linalg.norm(grad) == 0.0:
            converged = True
            break

        accepted = False
        while not accepted:
            delta = _solve_damped(h, grad, damping, use_sparse)
            if np.linalg.norm(delta) < settings.step_tolerance:
                converged = True
                break
            candidate = list(nodes)
            for t, k in free_index.items():
                tangent = Sim3Tangent.from_vector(delta[7 * k:7 * k + 7])
                candidate[t] = sim3.compose(nodes[t], sim3.exp_map(tangent))
            new_cost = total_cost(PoseGraph(candidate, g.edges))
            # model: ||r + J d||^2 = cost + 2 g.d + d.H d
            predicted = -(2.0 * grad @ delta + delta @ (h @ delta))
            if new_cost < cost:
                if predicted > 0:
                    gain_ratios.append(float((cost - new_cost) / predicted))
                nodes = candidate
                work = PoseGraph(nodes, g.edges)
                damping = max(damping * settings.damping_down, 1e-12)
                if cost - new_cost < settings.cost_tolerance * max(cost, 1e-30):
                    converged = True
                cost = new_cost
                accepted = True
            else:
                damping *= settings.damping_up
                if damping > 1e16:
                    converged = True
                    break
        if converged:
            break

    return nodes, SolveReport(iters, initial_cost, cost, converged, gain_ratios)


def propagate_to_frames(nodes: list[Sim3], chunks: list[geometry.ChunkArtifact],
                        ref: geometry.Intrinsics | None = None,
                        point_stride: int = 1,
                        depth_ceiling: float | None = None
                        ) -> tuple[TrajectoryEstimate, np.ndarray]:
    """World-frame trajectory and merged point cloud from optimized nodes.

    A frame appearing in several chunks takes its pose and points from the
    earliest chunk.  Depths are normalized to the reference intrinsic
    before back-projection, mirroring the alignment stage.
    """
    if len(nodes) != len(chunks):
        raise ValueError(f"{len(nodes)} nodes for {len(chunks)} chunks")
    if ref is None:
        ref = chunks[0].intrinsics[0]

    owner: dict[int, tuple[int, int]] = {}
    for c_idx, chunk in enumerate(chunks):
        for f_idx, fid in enumerate(chunk.frame_ids):
            owner.setdefault(fid, (c_idx, f_idx))

    frame_ids = sorted(owner)
    positions = np.empty((len(frame_ids), 3))
    rotations = np.empty((len(frame_ids), 3, 3))
    clouds = []
    for row, fid in enumerate(frame_ids):
        c_idx, f_idx = owner[fid]
        chunk = chunks[c_idx]
        world_pose = sim3.compose(nodes[c_idx], chunk.poses[f_idx])
        positions[row] = world_pose.translation
        rotations[row] = world_pose.rotation

        depth = geometry.normalize_depth(chunk.depths[f_idx], chunk.intrinsics[f_idx], ref)
        mask = None
        if depth_ceiling is not None:
            mask = depth.values <= depth_ceiling
        pts = geometry.backproject(depth, ref, chunk.poses[f_idx], mask=mask)
        if point_stride > 1:
            pts = pts[::point_stride]
        clouds.append(sim3.transform_points(nodes[c_idx], pts))

    cloud = np.concatenate(clouds) if clouds else np.empty((0, 3))
    return TrajectoryEstimate(frame_ids, positions, rotations), cloud
