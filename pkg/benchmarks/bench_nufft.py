"""Time the compiled and numpy gridding kernels on representative problems.

Usage::

    python benchmarks/bench_nufft.py [--repeat 5] [--tier eval]

Reports the best-of-``repeat`` wall time of a forward and an adjoint NUFFT
per backend and the speed-up of the compiled kernels.
"""
import argparse
import timeit

import numpy as np

from trajopt.nufft import _backend
from trajopt.nufft.plan import NufftPlan

CASES = [
    ("2-D 64x64, 16k samples", (64, 64), 16384),
    ("2-D 128x128, 64k samples", (128, 128), 65536),
    ("3-D 32^3, 32k samples", (32, 32, 32), 32768),
]


def best_time(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--tier", default="eval", choices=("train", "eval", "fine"))
    args = parser.parse_args(argv)

    backends = ["python"]
    try:
        _backend.get_kernels("cython")
        backends.append("cython")
    except ImportError:
        print("compiled kernels not built; timing the numpy fallback only")

    rng = np.random.default_rng(0)
    print(f"tier {args.tier}, best of {args.repeat}")
    print(f"{'case':<28}{'op':<9}" + "".join(f"{b:>12}" for b in backends) +
          ("     speed-up" if len(backends) > 1 else ""))
    for name, shape, m in CASES:
        omega = rng.uniform(-np.pi, np.pi, (m, len(shape)))
        x = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        y = rng.standard_normal(m) + 1j * rng.standard_normal(m)
        plans = {b: NufftPlan(omega, shape, tier=args.tier, backend=b) for b in backends}
        for op in ("forward", "adjoint"):
            times = {}
            for b, plan in plans.items():
                fn = (lambda p=plan: p.forward(x)) if op == "forward" else \
                    (lambda p=plan: p.adjoint(y))
                fn()
                times[b] = best_time(fn, args.repeat)
            row = f"{name:<28}{op:<9}" + "".join(f"{times[b] * 1e3:>10.1f}ms" for b in backends)
            if len(backends) > 1:
                row += f"{times['python'] / times['cython']:>12.1f}x"
            print(row)


if __name__ == "__main__":
    main()
