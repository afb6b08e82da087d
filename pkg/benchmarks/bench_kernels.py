"""Time the compiled and numpy trilinear kernels on tracker-sized problems.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Both backends are checked for agreement before timing. The tracker's finest
level samples a 64x64x32 volume at every voxel (``sample_grad``) and the
shape term samples a few thousand plane voxels.
"""
import argparse
import json
import platform
import timeit

import numpy as np

from mvmotion.kernels import get_backend

CASES = {
    "volume 64x64x32, all voxels": ((32, 64, 64), 32 * 64 * 64),
    "volume 64x64x32, 5k points": ((32, 64, 64), 5_000),
    "volume 128x128x64, all voxels": ((64, 128, 128), 64 * 128 * 128),
}


def make_case(shape, n, seed=0):
    r = np.random.default_rng(seed)
    src = r.random(shape)
    D, H, W = shape
    pts = [r.uniform(-1.0, m, n) for m in (W, H, D)]
    return src, pts


def best_of(fn, repeat):
    timer = timeit.Timer(fn)
    loops, _ = timer.autorange()
    return min(timer.repeat(repeat=repeat, number=loops)) / loops


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write the results to this file")
    args = ap.parse_args()

    try:
        cy = get_backend("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run `pip install --no-build-isolation -e .`")
    py = get_backend("python")

    rows = []
    for name, (shape, n) in CASES.items():
        src, (xs, ys, zs) = make_case(shape, n)
        for op in ("sample", "sample_grad"):
            a = getattr(cy, op)(src, xs, ys, zs)
            b = getattr(py, op)(src, xs, ys, zs)
            diff = max(float(np.abs(np.asarray(u) - np.asarray(v)).max())
                       for u, v in zip(np.atleast_2d(a), np.atleast_2d(b)))
            t_cy = best_of(lambda: getattr(cy, op)(src, xs, ys, zs), args.repeat)
            t_py = best_of(lambda: getattr(py, op)(src, xs, ys, zs), args.repeat)
            rows.append({"case": name, "op": op, "points": n, "cython_ms": 1e3 * t_cy,
                         "numpy_ms": 1e3 * t_py, "speedup": t_py / t_cy, "max_abs_diff": diff})

    print(f"{'case':32s} {'op':12s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for r in rows:
        print(f"{r['case']:32s} {r['op']:12s} {r['cython_ms']:10.2f} {r['numpy_ms']:10.2f} "
              f"{r['speedup']:8.1f} {r['max_abs_diff']:9.1e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"python": platform.python_version(), "numpy": np.__version__,
                       "results": rows}, fh, indent=2)


if __name__ == "__main__":
    main()
