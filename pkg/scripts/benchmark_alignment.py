"""Wall-clock comparison of single-step alignment against IRLS refinement.

Example:
  python scripts/benchmark_alignment.py --sizes 10000 50000 200000
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chunkstitch import sim3
from chunkstitch.alignment import CorrespondenceSet, irls_sim3, umeyama_sim3


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", type=int, nargs="+", default=[10_000, 50_000, 200_000])
    parser.add_argument("--irls-iters", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    print(f"{'points':>10s} {'single (ms)':>12s} {'irls (ms)':>12s} {'speedup':>8s}")
    for n in args.sizes:
        src = rng.normal(scale=3.0, size=(n, 3))
        dst = sim3.transform_points(sim3.random_sim3(rng), src)
        idx = rng.choice(n, size=n // 5, replace=False)
        dst[idx] += rng.normal(scale=30.0, size=(len(idx), 3))
        c = CorrespondenceSet(src, dst)

        start = time.perf_counter()
        umeyama_sim3(c)
        t_single = time.perf_counter() - start
        start = time.perf_counter()
        irls_sim3(c, max_iters=args.irls_iters)
        t_irls = time.perf_counter() - start
        print(f"{n:10d} {t_single * 1e3:12.2f} {t_irls * 1e3:12.2f} {t_irls / t_single:7.1f}x")


if __name__ == "__main__":
    main()
