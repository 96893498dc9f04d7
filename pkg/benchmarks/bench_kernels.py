"""Compare the JIT kernels against the pure numpy fallback.

Run:  python benchmarks/bench_kernels.py
The dispatch in the library is controlled by SYMHREC_NO_NUMBA; this script
calls both implementations directly so one process covers both paths.
"""

import time

import numpy as np

from symhrec import _kernels
from symhrec.synthesis import GenConfig, synthesize_sample
from symhrec.tree import flatten_tree


def timeit(fn, repeats):
    fn()  # warm-up (includes JIT compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def main():
    sample = synthesize_sample(GenConfig(), seed=42)
    boxes = flatten_tree(sample.tree)
    packed = _kernels.pack_boxes(boxes)
    corners = np.concatenate([o.corners() for o in boxes])
    lo = corners.min(axis=0)
    hi = corners.max(axis=0)

    rows = []
    for res in (32, 64, 96):
        step = (hi - lo) / res
        f_np = lambda: _kernels.voxel_occupancy_numpy(lo, step, res, *packed)
        t_np = timeit(f_np, 5)
        if _kernels.NUMBA_AVAILABLE:
            f_nb = lambda: _kernels.voxel_occupancy_numba(lo, step, res, *packed)
            t_nb = timeit(f_nb, 5)
            assert np.array_equal(f_np(), f_nb()), "kernel paths disagree"
        else:
            t_nb = float("nan")
        rows.append((f"voxel_occupancy R={res}", t_np, t_nb))

    rng = np.random.default_rng(0)
    for n in (200, 1000):
        a = rng.normal(size=(n, 3))
        b = rng.normal(size=(n, 3))
        f_np = lambda: _kernels.directed_min_dists_numpy(a, b)
        t_np = timeit(f_np, 20)
        if _kernels.NUMBA_AVAILABLE:
            f_nb = lambda: _kernels.directed_min_dists_numba(a, b)
            t_nb = timeit(f_nb, 20)
            assert np.allclose(f_np(), f_nb())
        else:
            t_nb = float("nan")
        rows.append((f"directed_min_dists n={n}", t_np, t_nb))

    print(f"numba available: {_kernels.NUMBA_AVAILABLE}  (dispatch: "
          f"{'numba' if _kernels.USING_NUMBA else 'numpy'})")
    print(f"{'kernel':30s} {'numpy':>12s} {'numba':>12s} {'speedup':>9s}")
    for name, t_np, t_nb in rows:
        speed = t_np / t_nb if t_nb == t_nb and t_nb > 0 else float("nan")
        print(f"{name:30s} {t_np * 1e3:10.3f}ms {t_nb * 1e3:10.3f}ms {speed:8.1f}x")


if __name__ == "__main__":
    main()
