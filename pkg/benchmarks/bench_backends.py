"""Compare the compiled solver core against the pure-Python fallback.

Times the scalar subproblem, the full exact solve and dataset labeling
throughput on both backends, and prints the speedups:

    python3 benchmarks/bench_backends.py [--n 3 5 10 20] [--instances 200] [--csv out.csv]
"""

import argparse
import time

import numpy as np

from wpcnsched import SystemParams, solve_opt, solve_tau
from wpcnsched import backend
from wpcnsched.channel import generate_dataset
from wpcnsched.params import LN2


def time_solve_opt(instances, params, repeats=1):
    best = np.inf
    for _ in range(repeats):
        start = time.perf_counter()
        for inst in instances:
            solve_opt(inst, params)
        best = min(best, (time.perf_counter() - start) / len(instances))
    return best


def time_solve_tau(params, count=20_000):
    rng = np.random.default_rng(0)
    target = params.demand_bits / params.bandwidth_hz
    cs = target * LN2 * 10.0 ** rng.uniform(0.1, 5, size=count)
    start = time.perf_counter()
    for c in cs:
        solve_tau(float(c), params.demand_bits, params.bandwidth_hz)
    return (time.perf_counter() - start) / count


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, nargs="+", default=[3, 5, 10, 20])
    parser.add_argument("--instances", type=int, default=200)
    parser.add_argument("--csv", help="also write the table to this CSV file")
    args = parser.parse_args()

    params = SystemParams()
    names = backend.available_backends()
    if "cython" not in names:
        print("note: compiled extension not built; run `python setup.py build_ext --inplace`")

    rows = []
    scalar = {}
    for name in names:
        backend.use_backend(name)
        scalar[name] = time_solve_tau(params)
    print(f"\nscalar subproblem solve ({20000} roots):")
    for name in names:
        print(f"  {name:8s} {scalar[name] * 1e6:8.2f} us/root")

    print(f"\nfull exact solve, {args.instances} instances per n:")
    header = f"  {'n':>4s} " + "".join(f"{name + ' (ms)':>14s}" for name in names)
    if len(names) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    for n in args.n:
        instances = generate_dataset(n, args.instances, params, seed=1234 + n)
        per = {}
        for name in names:
            backend.use_backend(name)
            per[name] = time_solve_opt(instances, params)
        line = f"  {n:4d} " + "".join(f"{per[name] * 1e3:14.3f}" for name in names)
        if len(names) == 2:
            line += f"{per['python'] / per['cython']:10.1f}x"
        print(line)
        rows.append((n, *[per[name] for name in names]))

    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write("n," + ",".join(f"{name}_s_per_instance" for name in names) + "\n")
            for row in rows:
                fh.write(",".join(repr(v) for v in row) + "\n")
        print(f"\nwrote {args.csv}")


if __name__ == "__main__":
    main()
