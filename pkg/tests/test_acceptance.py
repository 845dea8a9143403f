"""Acceptance suite: every release gate in one module, one line per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see the pass lines and
the measured margins.
"""

import dataclasses
import json
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from chunkstitch import geometry, loops, pipeline, posegraph, sim3, tensorio
from chunkstitch.alignment import (
    AlignmentParams,
    CorrespondenceSet,
    align_adjacent,
    irls_sim3,
    masked_overlap_points,
    umeyama_sim3,
)
from chunkstitch.cli import main
from chunkstitch.config import PipelineConfig
from chunkstitch.evaluation import TrajectoryEstimate, ate_rmse, cloud_metrics
from chunkstitch.posegraph import Edge, PoseGraph, SolveSettings
from chunkstitch.synthetic import SceneSpec, generate_scene, place_cluster_tokens


def _report(name, detail):
    print(f"[PASS] {name}: {detail}")


def rotation_angle(r):
    return np.linalg.norm(sim3.rotation_log(r))


def transform_error(est, gt):
    return max(
        abs(est.scale - gt.scale) / gt.scale,
        rotation_angle(est.rotation.T @ gt.rotation),
        np.linalg.norm(est.translation - gt.translation) / max(1.0, np.linalg.norm(gt.translation)),
    )


def test_umeyama_exactness():
    """1000 seeded apply-and-recover trials, 100 points each, < 1e-9, < 5 s."""
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        s_gt = sim3.random_sim3(rng)
        src = rng.normal(scale=3.0, size=(100, 3))
        est = umeyama_sim3(CorrespondenceSet(src, sim3.transform_points(s_gt, src)))
        worst = max(worst, transform_error(est, s_gt))
    elapsed = time.perf_counter() - start
    assert worst < 1e-9
    assert elapsed < 5.0
    _report("umeyama exactness", f"max rel error {worst:.2e}, {elapsed:.2f}s")


def test_exp_log_roundtrip():
    """10,000 seeded tangents with |phi| <= pi - 1e-3 round-trip below 1e-9."""
    rng = np.random.default_rng(2025)
    worst = 0.0
    for _ in range(10_000):
        tau = sim3.random_tangent(rng, max_angle=np.pi - 1e-3)
        back = sim3.log_map(sim3.exp_map(tau))
        worst = max(worst, float(np.linalg.norm(back.as_vector() - tau.as_vector())))
    assert worst < 1e-9
    _report("sim3 exp/log roundtrip", f"max error {worst:.2e} over 10k tangents")


def test_mask_efficacy():
    """30% flagged outliers: masked solve < 1e-6 error, unmasked > 1e-2."""
    start = time.perf_counter()
    spec = SceneSpec(seed=17, n_frames=60, chunk_size=25, overlap=10,
                     point_density=2048, drift_sigma=0.01, outlier_fraction=0.3)
    scene = generate_scene(spec)
    chunk_a, chunk_b = scene.chunks[0], scene.chunks[1]
    expected = sim3.compose(scene.gauges[1], sim3.inverse(scene.gauges[0]))

    masked = align_adjacent(chunk_a, chunk_b, AlignmentParams(), ref=scene.intrinsics)
    masked_err = transform_error(masked.transform, expected)

    # same pixels with the reliability mask disabled
    src, dst = masked_overlap_points(chunk_a, chunk_b, scene.intrinsics,
                                     lambda_d=np.inf, lambda_gamma=0.0)
    unmasked = umeyama_sim3(CorrespondenceSet(src, dst))
    unmasked_err = transform_error(unmasked, expected)

    elapsed = time.perf_counter() - start
    assert masked_err < 1e-6
    assert unmasked_err > 1e-2
    assert elapsed < 10.0
    _report("mask efficacy", f"masked {masked_err:.2e} vs unmasked {unmasked_err:.2e}, {elapsed:.1f}s")


def test_speed_ordering():
    """Single solve on 200k points takes <= 1/5 the time of 10-iteration IRLS."""
    rng = np.random.default_rng(2026)
    src = rng.normal(scale=3.0, size=(200_000, 3))
    dst = sim3.transform_points(sim3.random_sim3(rng), src)
    idx = rng.choice(len(src), size=40_000, replace=False)
    dst[idx] += rng.normal(scale=30.0, size=(len(idx), 3))  # keeps reweighting alive
    c = CorrespondenceSet(src, dst)

    start = time.perf_counter()
    umeyama_sim3(c)
    t_single = time.perf_counter() - start
    start = time.perf_counter()
    irls_sim3(c, max_iters=10)
    t_irls = time.perf_counter() - start
    assert t_single <= t_irls / 5.0
    _report("speed ordering", f"single {t_single * 1e3:.1f}ms vs 10-iter IRLS {t_irls * 1e3:.1f}ms")


def test_drift_correction(tmp_path):
    """50-chunk figure-eight with per-chunk drift and one revisited place.

    The loop closure must cut ATE by at least 5x against the loop-free run
    and leave every loop-edge residual below 1e-6, within 60 s.
    """
    start = time.perf_counter()
    spec = SceneSpec(seed=42, n_frames=45 * 49 + 75, chunk_size=75, overlap=30,
                     point_density=512, drift_sigma=0.01,
                     intra_scale_drift=5e-7, anchor_chunk_frames=True,
                     cells_per_axis=16, trajectory_shape="figure-eight")
    assert len(geometry.chunk_indices(spec.n_frames, 75, 30)) == 50
    scene = generate_scene(spec)
    for chunk in scene.chunks:
        tensorio.write_chunk(tmp_path, chunk)
    (tmp_path / pipeline.SCENE_SPEC_FILE).write_text(json.dumps(dataclasses.asdict(spec)))

    cfg = PipelineConfig(nms_radius=60, export_point_stride=64)
    with_loops = pipeline.run_pipeline(tmp_path, cfg)
    no_loops = pipeline.run_pipeline(tmp_path, cfg, with_loops=False)

    # one physical loop: every detected pair joins the junction revisits
    assert with_loops.loop_edges
    junction_chunks = {0, 1, 22, 23, 24, 25, 26, 47, 48, 49}
    for e in with_loops.loop_edges:
        assert e.i in junction_chunks and e.j in junction_chunks

    ate_with = ate_rmse(with_loops.trajectory, scene.gt_trajectory, mode="sim3")
    ate_without = ate_rmse(no_loops.trajectory, scene.gt_trajectory, mode="sim3")
    worst_residual = max(
        posegraph.edge_residual(e.measurement, with_loops.nodes[e.i], with_loops.nodes[e.j]).norm()
        for e in with_loops.loop_edges
    )
    elapsed = time.perf_counter() - start
    assert ate_without >= 5.0 * ate_with
    assert worst_residual < 1e-6
    assert elapsed < 60.0
    _report("drift correction",
            f"ATE {ate_without:.2e} -> {ate_with:.2e} ({ate_without / ate_with:.1f}x), "
            f"worst loop residual {worst_residual:.2e}, {elapsed:.1f}s")


def test_lm_matches_brute_force():
    """3-node toy graphs: LM minimum equals dense minimization within 1e-6."""
    rng = np.random.default_rng(2027)
    worst_gap = 0.0
    for trial in range(3):
        nodes = [sim3.Sim3.identity()] + [sim3.random_sim3(rng, max_angle=1.0) for _ in range(2)]
        edges = [
            Edge("sequential", t, t + 1, sim3.compose(sim3.inverse(nodes[t]), nodes[t + 1]))
            for t in range(2)
        ]
        off = sim3.exp_map(sim3.Sim3Tangent(
            rng.normal(scale=0.05, size=3), rng.normal(scale=0.05, size=3), rng.normal(scale=0.05)))
        edges.append(Edge("loop", 0, 2,
                          sim3.compose(sim3.compose(sim3.inverse(nodes[0]), nodes[2]), off)))
        graph = PoseGraph(nodes, edges)
        refined, report = posegraph.optimize(graph, SolveSettings(max_iters=200))

        def cost_of(x, nodes=nodes, edges=edges):
            cand = [nodes[0]]
            for k in range(2):
                tau = sim3.Sim3Tangent.from_vector(x[7 * k:7 * k + 7])
                cand.append(sim3.compose(nodes[k + 1], sim3.exp_map(tau)))
            return posegraph.total_cost(PoseGraph(cand, edges))

        res = minimize(cost_of, np.zeros(14), method="BFGS",
                       options={"gtol": 1e-12, "maxiter": 2000})
        worst_gap = max(worst_gap, abs(report.final_cost - res.fun))
        assert abs(report.final_cost - res.fun) < 1e-6
    _report("LM vs brute force", f"worst cost gap {worst_gap:.2e} over 3 toy graphs")


def test_lm_gain_ratio_band():
    """Linearized-model gain ratios on accepted steps stay within [0.5, 2]."""
    rng = np.random.default_rng(2028)
    nodes = [sim3.Sim3.identity()] + [sim3.random_sim3(rng, max_angle=1.0) for _ in range(5)]
    edges = [
        Edge("sequential", t, t + 1, sim3.compose(sim3.inverse(nodes[t]), nodes[t + 1]))
        for t in range(5)
    ]
    edges.append(Edge("loop", 0, 5, sim3.compose(sim3.inverse(nodes[0]), nodes[5])))
    noise = sim3.Sim3Tangent(np.full(3, 0.05), np.full(3, -0.03), 0.02)
    init = [nodes[0]] + [sim3.compose(n, sim3.exp_map(noise)) for n in nodes[1:]]
    _, report = posegraph.optimize(PoseGraph(init, edges))
    assert report.gain_ratios
    assert all(0.5 <= rho <= 2.0 for rho in report.gain_ratios)
    _report("LM gain ratios", f"{len(report.gain_ratios)} accepted steps in "
            f"[{min(report.gain_ratios):.3f}, {max(report.gain_ratios):.3f}]")


def _gated_recall(descriptors, labels, gap):
    sim_matrix = loops.similarity_matrix(descriptors)
    n = len(labels)
    hits = total = 0
    for f in range(n):
        far = np.abs(np.arange(n) - f) >= gap
        if not (labels[far] == labels[f]).any():
            continue
        total += 1
        cand = np.where(far)[0]
        hits += labels[cand[sim_matrix[f, cand].argmax()]] == labels[f]
    return hits / total


def test_loop_retrieval():
    """500 frames, 5 clusters, contaminated tokens: whitened retrieval is
    perfect, reduces off-cluster similarity, and beats the naive baseline."""
    spec = SceneSpec(seed=2029, bias_high=6.0, bias_low=0.5, token_noise=0.02)
    n_frames, block = 500, 50
    # two visits per cluster; the appearance bias flips between them
    labels = (np.arange(n_frames) // block) % 5
    levels = (np.arange(n_frames) // block) // 5
    frames = place_cluster_tokens(labels, levels, spec)

    pooled = np.array([loops.signed_power(loops.pool_tokens(x), beta=0.5) for x in frames])
    model = loops.fit_whitening(pooled, r=1, d_out=4)
    whitened = np.array([loops.apply_whitening(g, model) for g in pooled])
    naive = np.array([loops.pool_tokens(x) for x in frames])
    naive /= np.linalg.norm(naive, axis=1, keepdims=True)

    gap = 2 * block
    recall_full = _gated_recall(whitened, labels, gap)
    recall_naive = _gated_recall(naive, labels, gap)
    off = labels[:, None] != labels[None, :]
    hub_before = loops.similarity_matrix(pooled)[off].mean()
    hub_after = loops.similarity_matrix(whitened)[off].mean()

    assert recall_full == 1.0
    assert hub_after < hub_before
    assert recall_naive < recall_full
    _report("loop retrieval",
            f"recall@1 {recall_full:.0%} vs naive {recall_naive:.0%}, "
            f"off-cluster similarity {hub_before:.3f} -> {hub_after:.3f}")


def test_metric_oracles():
    """cloud_metrics equals O(N^2) brute force; ATE recovers a known noise level."""
    rng = np.random.default_rng(2030)
    pred = rng.normal(scale=4.0, size=(2000, 3))
    gt = rng.normal(scale=4.0, size=(1800, 3))
    out = cloud_metrics(pred, gt)
    d = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)
    acc = float(np.mean(np.linalg.norm(pred - gt[d.argmin(axis=1)], axis=1)))
    comp = float(np.mean(np.linalg.norm(gt - pred[d.argmin(axis=0)], axis=1)))
    assert out["accuracy"] == acc
    assert out["completeness"] == comp
    assert out["chamfer"] == (acc + comp) / 2.0

    positions = np.cumsum(rng.normal(scale=1.0, size=(1000, 3)), axis=0)
    gt_traj = TrajectoryEstimate(list(range(1000)), positions, np.tile(np.eye(3), (1000, 1, 1)))
    noise = rng.normal(scale=0.1 / np.sqrt(3.0), size=(1000, 3))
    est = TrajectoryEstimate(list(range(1000)), positions + noise, np.tile(np.eye(3), (1000, 1, 1)))
    ate = ate_rmse(est, gt_traj, mode="se3")
    assert abs(ate - 0.1) <= 0.01
    _report("metric oracles", f"chamfer exact; ATE {ate:.4f} for sigma=0.1 noise")


def test_end_to_end_determinism(tmp_path):
    """`run` twice on one synthetic manifest: byte-identical trajectory and PLY,
    and the zero-noise scene reproduces ground truth below 1e-6 ATE."""
    man = tmp_path / "manifests"
    assert main(["--seed", "3", "--out-dir", str(man), "synth",
                 "--n-frames", "165", "--point-density", "512"]) == 0
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    sets = ["--set", "min_frame_gap=40", "--set", "whitening_dim=8"]
    assert main([*sets, "--out-dir", str(out_a), "run", str(man)]) == 0
    assert main([*sets, "--out-dir", str(out_b), "run", str(man)]) == 0
    identical = []
    for name in ("trajectory_kitti.txt", "trajectory_tum.txt", "cloud.ply"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()
        identical.append(name)

    est = tensorio.read_trajectory(out_a / "trajectory_kitti.txt")
    gt = tensorio.read_trajectory(man / "gt_trajectory_kitti.txt")
    ate = ate_rmse(est, gt, mode="sim3")
    assert ate < 1e-6
    _report("end-to-end determinism", f"{', '.join(identical)} byte-identical; ATE {ate:.2e}")
