"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--points 600000]
"""

import argparse
import time

import numpy as np

from seqkitti import kernels
from seqkitti.temporal import DEFAULT_RANGE, grid_shape


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(n_points, rng):
    xyz = np.c_[rng.uniform(-102.4, 102.4, (n_points, 2)), rng.uniform(-10, 15, n_points)]
    lo, hi = DEFAULT_RANGE.lo, DEFAULT_RANGE.hi
    grid = grid_shape(DEFAULT_RANGE, (0.1, 0.1, 0.1))
    boxes = np.c_[rng.uniform(-60, 60, (100, 2)), rng.uniform(-1, 1, 100), rng.uniform(0.5, 5, (100, 3)),
                  rng.uniform(-np.pi, np.pi, 100)]
    bev = np.c_[rng.uniform(-20, 20, (300, 2)), rng.uniform(0.5, 5, (300, 2)), rng.uniform(-np.pi, np.pi, 300)]
    return {
        f"voxel_assign ({n_points} pts)": lambda k: k.voxel_assign(xyz, lo, hi, (0.1, 0.1, 0.1), grid, 10, 160_000),
        f"points_in_boxes ({n_points} pts x 100 boxes)": lambda k: k.points_in_boxes(xyz, boxes),
        "bev_intersection (300 x 300 boxes)": lambda k: k.bev_intersection(bev, bev),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--points", type=int, default=600_000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    impls = [kernels.python_impl]
    if kernels.compiled_impl is None:
        print("compiled extension not built; timing the numpy fallback only")
    else:
        impls.append(kernels.compiled_impl)

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':48s} " + " ".join(f"{k.BACKEND:>10s}" for k in impls) + ("    speedup" if len(impls) > 1 else ""))
    for name, fn in cases(args.points, rng).items():
        t = [best_of(lambda: fn(k), args.repeat) for k in impls]
        row = f"{name:48s} " + " ".join(f"{x * 1e3:8.1f}ms" for x in t)
        if len(t) > 1:
            row += f"  {t[0] / t[1]:8.1f}x"
        print(row)


if __name__ == "__main__":
    main()
