"""Throughput of the orbit kernels: numba against the pure-numpy fallback.

Runs the same chunk through both backends, checks that the outputs are
bit-identical and prints orbit steps per second.

    python benchmarks/bench_kernels.py [--samples 8192] [--horizon 1000]
"""

import argparse
import time
from fractions import Fraction

import numpy as np

from rarelab import _kernels
from rarelab.simulate import OrbitSpec
from rarelab.symbolic import IntervalUnion
from rarelab.systems import RngStream, doubling_map


def _time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def bench(samples: int, horizon: int, repeat: int, conditional: bool):
    tmap = doubling_map()
    U = IntervalUnion.from_arcs([(Fraction(-1, 2 ** 12), Fraction(1, 2 ** 12))])
    start = U if conditional else IntervalUnion.full()
    spec = OrbitSpec(start, U, horizon, (1, horizon), nfirst=7)
    arrays = spec.arrays(tmap)
    base = RngStream(1, 0).base

    def run(name):
        return _kernels.simulate_chunk(base, 0, samples, arrays, horizon, 1, horizon, 7,
                                       use_backend=name)

    run("numba")  # compile outside the timing
    t_nb, out_nb = _time(lambda: run("numba"), repeat)
    t_np, out_np = _time(lambda: run("numpy"), repeat)
    same = all(np.array_equal(a, b) for a, b in zip(out_nb, out_np))
    steps = samples * horizon
    label = "conditional" if conditional else "stationary"
    print(f"{label:12s} samples={samples} horizon={horizon}")
    print(f"  numba  {t_nb:8.3f} s  {steps / t_nb / 1e6:8.1f} M steps/s")
    print(f"  numpy  {t_np:8.3f} s  {steps / t_np / 1e6:8.1f} M steps/s")
    print(f"  speedup {t_np / t_nb:6.1f}x   outputs identical: {same}")
    return same


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--samples", type=int, default=8192)
    p.add_argument("--horizon", type=int, default=1000)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args()
    ok = True
    for conditional in (False, True):
        ok &= bench(args.samples, args.horizon, args.repeat, conditional)
    raise SystemExit(0 if ok else 1)


if __name__ == "__main__":
    main()
