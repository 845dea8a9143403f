"""Sweep the depth-difference threshold and report alignment error.

Reproduces the shape of the chunk-alignment ablation: too-tight thresholds
starve the solver, loose ones admit outliers, and the default sits in the
flat middle.

Example:
  python scripts/sweep_depth_threshold.py --outlier-fraction 0.3
"""

from __future__ import annotations

import argparse

import numpy as np

from chunkstitch import sim3
from chunkstitch.alignment import AlignmentParams, align_adjacent
from chunkstitch.errors import InsufficientReliablePoints
from chunkstitch.synthetic import SceneSpec, generate_scene


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--outlier-fraction", type=float, default=0.3)
    parser.add_argument("--depth-noise", type=float, default=0.02)
    parser.add_argument("--lambdas", type=float, nargs="+",
                        default=[0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 1.0, 10.0])
    args = parser.parse_args()

    spec = SceneSpec(seed=args.seed, n_frames=60, chunk_size=25, overlap=10,
                     point_density=2048, drift_sigma=0.01,
                     outlier_fraction=args.outlier_fraction,
                     depth_noise_sigma=args.depth_noise)
    scene = generate_scene(spec)
    chunk_a, chunk_b = scene.chunks[0], scene.chunks[1]
    expected = sim3.compose(scene.gauges[1], sim3.inverse(scene.gauges[0]))

    print(f"{'lambda_d':>10s} {'points':>8s} {'rms':>10s} {'scale err':>10s} {'t err':>10s}")
    for lam in args.lambdas:
        params = AlignmentParams(lambda_d=lam)
        try:
            report = align_adjacent(chunk_a, chunk_b, params, ref=scene.intrinsics)
        except InsufficientReliablePoints:
            print(f"{lam:10.3f} {'-':>8s}  too few reliable points")
            continue
        s_err = abs(report.transform.scale - expected.scale) / expected.scale
        t_err = np.linalg.norm(report.transform.translation - expected.translation)
        print(f"{lam:10.3f} {report.n_points:8d} {report.rms_residual:10.2e} "
              f"{s_err:10.2e} {t_err:10.2e}")


if __name__ == "__main__":
    main()
