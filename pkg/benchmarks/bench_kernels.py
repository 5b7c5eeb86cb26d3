"""Time the numba and numpy kernel backends on one rank's worth of work.

Run with ``python3 benchmarks/bench_kernels.py [--dims 64,32,8] [--repeat 5]``.
Both backends are also checked for bit-identical results on every kernel.
"""

import argparse
import time

import numpy as np

from xgyrosim.kernels import _numba, _numpy
from xgyrosim.kernels._jit import NUMBA_AVAILABLE


def _cases(nc, nv, nt):
    h = _numpy.initial_state(7, 0, nc, 0, nv, 0, nt)
    w = np.arange(1, nv + 1, dtype=np.float64) / (nv * (nv + 1) / 2)
    field = _numpy.partial_moment(h, w)
    blocks = _numpy.cmat_blocks(0.05, 3, nv, 0, nc, 0, nt)
    return {
        "cmat_blocks": lambda m: m.cmat_blocks(0.05, 3, nv, 0, nc, 0, nt),
        "initial_state": lambda m: m.initial_state(7, 0, nc, 0, nv, 0, nt),
        "partial_moment": lambda m: m.partial_moment(h, w),
        "stream_step": lambda m: m.stream_step(h, field, field, 1.0, 0.05),
        "collision_apply": lambda m: m.collision_apply(blocks, h),
        "ordered_sum": lambda m: m.ordered_sum(h),
    }


def _best(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--dims", default="64,32,8")
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()
    nc, nv, nt = (int(x) for x in args.dims.split(","))
    if not NUMBA_AVAILABLE:
        print("numba is not installed; only the numpy backend can be timed")

    print(f"dims nc={nc} nv={nv} nt={nt}, best of {args.repeat}")
    print(f"{'kernel':<16} {'numpy_ms':>10} {'numba_ms':>10} {'speedup':>8}  same_bits")
    for name, call in _cases(nc, nv, nt).items():
        ref = np.asarray(call(_numpy))
        t_np = _best(lambda: call(_numpy), args.repeat)
        if NUMBA_AVAILABLE:
            got = np.asarray(call(_numba))  # first call compiles
            t_nb = _best(lambda: call(_numba), args.repeat)
            same = ref.tobytes() == got.tobytes()
            print(f"{name:<16} {t_np * 1e3:>10.3f} {t_nb * 1e3:>10.3f} "
                  f"{t_np / t_nb:>7.1f}x  {same}")
        else:
            print(f"{name:<16} {t_np * 1e3:>10.3f} {'-':>10} {'-':>8}  -")


if __name__ == "__main__":
    main()
