"""Command-line interface for the stitching pipeline.

Subcommands mirror the pipeline stages so partial runs and parameter sweeps
stay cheap: `synth` writes a synthetic manifest set, `align`/`loops`/
`optimize`/`export` run individual stages against saved intermediates, and
`run` executes everything in one go.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import evaluation, pipeline, posegraph, sim3, synthetic, tensorio
from .config import PipelineConfig
from .posegraph import Edge, PoseGraph

log = logging.getLogger("chunkstitch")


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.set:
        cfg.apply_overrides(args.set)
    return cfg


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out_dir or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    spec = synthetic.SceneSpec(
        seed=cfg.seed,
        n_frames=args.n_frames,
        trajectory_shape=args.shape,
        point_density=args.point_density,
        depth_noise_sigma=args.depth_noise,
        drift_sigma=args.drift_sigma,
        outlier_fraction=args.outlier_fraction,
        loop_closure=not args.no_loop,
        chunk_size=cfg.chunk_size,
        overlap=cfg.overlap,
    )
    scene = synthetic.generate_scene(spec)
    out = _out_dir(args)
    for chunk in scene.chunks:
        tensorio.write_chunk(out, chunk)
    (out / pipeline.SCENE_SPEC_FILE).write_text(json.dumps(dataclasses.asdict(spec), indent=2))
    tensorio.export_trajectory(scene.gt_trajectory, out / "gt_trajectory_kitti.txt", "kitti")
    tensorio.export_trajectory(scene.gt_trajectory, out / "gt_trajectory_tum.txt", "tum")
    tensorio.export_ply(scene.gt_cloud, out / "gt_cloud.ply")
    print(f"wrote {len(scene.chunks)} chunks ({spec.n_frames} frames) to {out}")
    return 0


def cmd_align(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    chunks, _ = tensorio.read_manifest_dir(args.manifest_dir)
    ref = chunks[0].intrinsics[0]
    reports = pipeline.sequential_alignments(chunks, cfg, ref)
    out = _out_dir(args)
    (out / "alignments.json").write_text(json.dumps([
        {"transform": tensorio.sim3_to_dict(r.transform), "n_points": r.n_points,
         "rms_residual": r.rms_residual, "elapsed": r.elapsed}
        for r in reports
    ], indent=2))
    for t, r in enumerate(reports):
        print(f"chunk {t}->{t + 1}: {r.n_points} pts, rms {r.rms_residual:.3e}, {r.elapsed:.3f}s")
    return 0


def cmd_loops(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    chunks, _ = tensorio.read_manifest_dir(args.manifest_dir)
    descriptors, frame_ids = pipeline.compute_descriptors(chunks, cfg)
    candidates = pipeline.detect_loop_candidates(descriptors, frame_ids, cfg)
    out = _out_dir(args)
    (out / "loops.json").write_text(json.dumps({
        "candidates": [dataclasses.asdict(c) for c in candidates], "edges": [],
    }, indent=2))
    if args.dump_descriptors:
        tensorio.write_tensor(out / "descriptors.tsr", descriptors.astype(np.float32))
        (out / "descriptor_frames.json").write_text(json.dumps(frame_ids))
    print(f"{len(candidates)} loop candidates")
    for c in candidates:
        print(f"  ({c.frame_i}, {c.frame_j}) similarity {c.similarity:.4f}")
    return 0


def cmd_optimize(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    alignments = json.loads(Path(args.alignments).read_text())
    measurements = [sim3.inverse(tensorio.sim3_from_dict(a["transform"])) for a in alignments]
    nodes = [sim3.Sim3.identity()]
    for m in measurements:
        nodes.append(sim3.compose(nodes[-1], m))
    edges = [Edge("sequential", t, t + 1, m) for t, m in enumerate(measurements)]
    if args.loops:
        loop_data = json.loads(Path(args.loops).read_text())
        for e in loop_data.get("edges", []):
            edges.append(Edge("loop", e["i"], e["j"], tensorio.sim3_from_dict(e["measurement"])))
    graph = PoseGraph(nodes, edges)
    refined, report = posegraph.optimize(graph, pipeline.solve_settings(cfg))
    (out / "nodes.json").write_text(json.dumps(
        [tensorio.sim3_to_dict(n) for n in refined], indent=2))
    print(f"cost {report.initial_cost:.3e} -> {report.final_cost:.3e} "
          f"in {report.iters} iterations (converged={report.converged})")
    return 0


def cmd_export(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    chunks, _ = tensorio.read_manifest_dir(args.manifest_dir)
    nodes = [tensorio.sim3_from_dict(d) for d in json.loads(Path(args.nodes).read_text())]
    ceiling = cfg.depth_ceiling if cfg.depth_ceiling > 0 else None
    trajectory, cloud = posegraph.propagate_to_frames(
        nodes, chunks, point_stride=cfg.export_point_stride, depth_ceiling=ceiling
    )
    out = _out_dir(args)
    tensorio.export_trajectory(trajectory, out / "trajectory_kitti.txt", "kitti")
    tensorio.export_trajectory(trajectory, out / "trajectory_tum.txt", "tum")
    tensorio.export_ply(cloud, out / "cloud.ply")
    print(f"{len(trajectory)} poses, {len(cloud)} points -> {out}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    est = tensorio.read_trajectory(args.est)
    gt = tensorio.read_trajectory(args.gt)
    result = {"ate_rmse": evaluation.ate_rmse(est, gt, mode=args.mode), "mode": args.mode}
    if args.est_cloud and args.gt_cloud:
        pred, _ = tensorio.read_ply(args.est_cloud)
        true, _ = tensorio.read_ply(args.gt_cloud)
        result.update(evaluation.cloud_metrics(pred, true))
    for key, value in result.items():
        print(f"{key}: {value}")
    if args.out_dir:
        (_out_dir(args) / "eval.json").write_text(json.dumps(result, indent=2))
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    out = _out_dir(args)
    result = pipeline.run_pipeline(args.manifest_dir, cfg, out_dir=out,
                                   with_loops=not args.no_loops)
    print(f"{len(result.trajectory)} poses, {len(result.cloud)} points, "
          f"{len(result.loop_edges)} loop edges")
    print(f"optimizer: cost {result.solve_report.initial_cost:.3e} -> "
          f"{result.solve_report.final_cost:.3e} in {result.solve_report.iters} iters")
    for stage, seconds in result.timings.items():
        print(f"  {stage:>12s}: {seconds:8.3f}s")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chunkstitch",
        description="Stitch per-chunk reconstruction outputs into a global trajectory and cloud",
    )
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--config", default=None, help="config file path")
    parser.add_argument("--out-dir", default=None, help="output directory (default ./out)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one config value (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic manifest directory")
    p.add_argument("--n-frames", type=int, default=165)
    p.add_argument("--shape", default="figure-eight", choices=["line", "circle", "figure-eight"])
    p.add_argument("--point-density", type=int, default=2048)
    p.add_argument("--depth-noise", type=float, default=0.0)
    p.add_argument("--drift-sigma", type=float, default=0.0)
    p.add_argument("--outlier-fraction", type=float, default=0.0)
    p.add_argument("--no-loop", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("align", help="sequential chunk-to-chunk alignment")
    p.add_argument("manifest_dir")
    p.set_defaults(func=cmd_align)

    p = sub.add_parser("loops", help="detect loop candidates from patch tokens")
    p.add_argument("manifest_dir")
    p.add_argument("--dump-descriptors", action="store_true")
    p.set_defaults(func=cmd_loops)

    p = sub.add_parser("optimize", help="pose-graph optimization from saved stages")
    p.add_argument("--alignments", required=True)
    p.add_argument("--loops", default=None)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("export", help="propagate nodes to frames and export")
    p.add_argument("manifest_dir")
    p.add_argument("--nodes", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("eval", help="trajectory / cloud metrics")
    p.add_argument("--est", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--mode", default="sim3", choices=["sim3", "se3"])
    p.add_argument("--est-cloud", default=None)
    p.add_argument("--gt-cloud", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="full pipeline")
    p.add_argument("manifest_dir")
    p.add_argument("--no-loops", action="store_true")
    p.set_defaults(func=cmd_run)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
