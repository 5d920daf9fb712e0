"""Compare the numba and pure-numpy kernel paths.

Run: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel is timed through both implementation tables in one process,
then a full heuristic and oracle solve is timed in a subprocess per path
(the env flag is read at import time, so solvers need a fresh interpreter).
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from condoffload import kernels

SOLVE_SNIPPET = """
import json, time
from condoffload import kernels
from condoffload.harness import gen_scenario, ingest_profile
from condoffload.manager import solve_heuristic, solve_oracle
kernels.warmup()
p = ingest_profile()
big = gen_scenario(p, 5, (5, 5), 1)
small = [gen_scenario(p, 3, (1, 2), s) for s in range(20)]
t0 = time.perf_counter(); solve_heuristic(big); t1 = time.perf_counter()
for s in small: solve_oracle(s)
t2 = time.perf_counter()
print(json.dumps({"heuristic_25": t1 - t0, "oracle_x20": t2 - t1}))
"""


def kernel_cases(rng: np.random.Generator) -> dict:
    prm = np.array([1e6, 0.4, 0.1, 2e6, 4e5])
    prms = np.stack([prm, prm * [2, 1, 1, 0.5, 2], prm * [0.5, 2, 1, 1, 1]])
    curves = np.sort(rng.uniform(0, 5, size=(3, 101)), axis=1)[:, ::-1].copy()
    data = rng.normal(size=(8, 16, 16))
    amap = kernels.NUMPY_KERNELS["intensity"](data)
    ys = np.linspace(1e-6, 1 - 1e-6, 201)
    return {
        "latency_curve": (ys, 2e7, prm),
        "min_share_for_target": (1.0, 2e7, prm, 1e-6, 1 - 1e-6, 1e-6),
        "simplex_grid_min": (curves,),
        "pair_refine": (np.full(3, 1 / 3), 2e7, prms, 1e-6, 1 - 1e-6, 1e-15, 50),
        "intensity": (data,),
        "effectiveness": (data, amap),
        "descriptor": (data, amap),
    }


def time_kernels(repeat: int) -> list[tuple[str, float, float]]:
    cases = kernel_cases(np.random.default_rng(0))
    kernels.warmup()
    out = []
    for name, args in cases.items():
        res = []
        for table in (kernels.NUMBA_KERNELS, kernels.NUMPY_KERNELS):
            fn = table[name]
            fn(*args)
            res.append(min(timeit.repeat(lambda: fn(*args), number=20, repeat=repeat)) / 20)
        out.append((name, res[0], res[1]))
    return out


def time_solvers() -> dict:
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, CONDOFFLOAD_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", SOLVE_SNIPPET], env=env, capture_output=True, text=True, check=True)
        out[label] = json.loads(proc.stdout)
    return out


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    print(f"{'kernel':<22}{'numba (us)':>12}{'numpy (us)':>12}{'speedup':>10}")
    for name, nb, np_ in time_kernels(args.repeat):
        print(f"{name:<22}{nb * 1e6:>12.1f}{np_ * 1e6:>12.1f}{np_ / nb:>9.1f}x")

    solve = time_solvers()
    print()
    print(f"{'solver':<22}{'numba (ms)':>12}{'numpy (ms)':>12}{'speedup':>10}")
    for key in solve["numba"]:
        nb, np_ = solve["numba"][key], solve["numpy"][key]
        print(f"{key:<22}{nb * 1e3:>12.1f}{np_ * 1e3:>12.1f}{np_ / nb:>9.1f}x")


if __name__ == "__main__":
    main()
