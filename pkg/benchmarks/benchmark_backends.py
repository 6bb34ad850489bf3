"""Compare the numba and pure-numpy backends on the three hot kernels.

Workloads: signature accumulation (Chen products over segment
exponentials), the Goursat PDE sweep, and batch reservoir extraction.
Each workload is warmed up per backend (absorbing JIT compilation), then
timed best-of-N. Run from the repository root:

    python3 benchmarks/benchmark_backends.py [--repeats 5] [--scale 1.0]

The same work runs on both backends, so the table also doubles as a quick
numerical cross-check: results must agree to near machine precision.
"""

import argparse
import time

import numpy as np

from sigres import backend
from sigres.algebra import signature
from sigres.paths import LabeledDataset, Path, generate_fbm
from sigres.reservoir import ReservoirSpec, ReservoirState, extract_batch
from sigres.rff import RFFSpec
from sigres.sigkernel import PDEGrid, sig_kernel_pde


def _best_of(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def workload_signature(scale):
    rng = np.random.default_rng(0)
    paths = [rng.standard_normal((50, 3)) for _ in range(int(200 * scale))]

    def run():
        total = 0.0
        for vals in paths:
            total += signature(vals, 4).level_norm(4)
        return total

    return run


def workload_goursat(scale):
    t = np.linspace(0.0, 1.0, int(60 * scale) + 2)
    x = Path(t, 0.4 * np.column_stack([np.sin(2 * np.pi * t), np.cos(np.pi * t)]))
    y = Path(t, 0.4 * np.column_stack([t**2, np.sin(3 * t + 0.5)]))
    grid = PDEGrid(16, 2)

    def run():
        return sig_kernel_pde(x, y, grid)

    return run


def workload_extraction(scale):
    n_paths = int(48 * scale)
    paths = tuple(generate_fbm(0.5, 200, 3, seed) for seed in range(n_paths))
    ds = LabeledDataset(paths, np.zeros(n_paths, dtype=int), 1)
    state = ReservoirState(ReservoirSpec(
        "rfcde", 96, 3, activation="tanh", sigma_a=1.0, sigma_b=0.1, seed=5,
        num_features=48,
    ))
    rff = RFFSpec(3, 48, 1.0, seed=5)

    def run():
        return extract_batch(state, ds, rff=rff)

    return run


WORKLOADS = [
    ("signature m=4", workload_signature),
    ("goursat sweep", workload_goursat),
    ("batch extraction", workload_extraction),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5, help="timed repetitions, best kept")
    ap.add_argument("--scale", type=float, default=1.0, help="workload size multiplier")
    args = ap.parse_args()

    backends = ["numpy"]
    if backend.HAS_NUMBA:
        backends.insert(0, "numba")
    else:
        print("numba not importable; timing the numpy path only\n")

    print(f"{'workload':<20} " + " ".join(f"{b + ' (s)':>12}" for b in backends)
          + ("      speedup" if len(backends) == 2 else ""))
    for name, factory in WORKLOADS:
        run = factory(args.scale)
        times = {}
        for b in backends:
            backend.set_backend(b)
            run()  # warmup: JIT compile and caches
            times[b] = _best_of(run, args.repeats)
        row = f"{name:<20} " + " ".join(f"{times[b]:>12.4f}" for b in backends)
        if len(backends) == 2:
            row += f"      {times['numpy'] / times['numba']:>6.1f}x"
        print(row)
    backend.set_backend("auto")


if __name__ == "__main__":
    main()
