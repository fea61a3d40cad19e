"""Compare the numba kernels with their numpy twins.

Two parts: per-kernel timings on a random stencil (both variants live in the
same process), then an end-to-end Bellman cell solve run once per backend in
a subprocess with ``FNHOM_BACKEND`` set.

    python benchmarks/bench_kernels.py [--res 128] [--repeat 5]
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from fnhom import kernels
from fnhom.torus import TorusGrid, default_directions

SOLVE = """
import json, time
import numpy as np
from fnhom._backend import BACKEND
from fnhom.cell import CellProblem, solve_cell
from fnhom.presets import make_datum, make_operator
from fnhom.torus import TorusGrid
g = TorusGrid(2, {res})
op = make_operator("bellman")
prob = CellProblem(op, np.eye(2), make_datum("sin", g))
solve_cell(prob)  # warm-up (jit compile or cache load)
t = time.perf_counter()
sol = solve_cell(prob)
print(json.dumps({{"backend": BACKEND, "seconds": time.perf_counter() - t,
                   "alpha": sol.alpha, "iterations": sol.iterations}}))
"""


def stencil(res, branches=3, seed=0):
    rng = np.random.default_rng(seed)
    g = TorusGrid(2, res)
    dirs = default_directions(2)
    plus, minus = g.neighbours(dirs.offsets)
    rows = np.arange(g.size, dtype=np.int64)
    Wh = rng.uniform(0, 2, (branches, g.size, len(dirs)))
    c = rng.standard_normal((branches, g.size))
    v = rng.standard_normal(g.size)
    return v, Wh, c, plus, minus, rows


def best_of(fn, repeat):
    fn()  # compile
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_table(res, repeat):
    v, Wh, c, plus, minus, rows = stencil(res)
    vals = kernels.branch_values_numpy(v, Wh, c, plus, minus, rows)
    pol = np.zeros(len(rows), dtype=np.int64)
    radius = np.random.default_rng(1).uniform(0, 10, len(rows))
    centers = np.geomspace(1, 9, 8)
    cases = {
        "branch_values": lambda k: k(v, Wh, c, plus, minus, rows),
        "improve_policy": lambda k: k(vals, pol, False, 1e-14),
        "assemble": lambda k: k(pol, rows, Wh, plus, minus),
        "shell_max": lambda k: k(radius, vals[0], centers, 0.05),
    }
    out = []
    for name, call in cases.items():
        t_np = best_of(lambda: call(getattr(kernels, f"{name}_numpy")), repeat)
        t_nb = best_of(lambda: call(getattr(kernels, f"{name}_numba")), repeat)
        out.append((name, t_np, t_nb))
    return out


def solve_table(res):
    out = []
    for backend in ("numpy", "numba"):
        env = dict(os.environ, FNHOM_BACKEND=backend, FNHOM_THREADS="1")
        proc = subprocess.run([sys.executable, "-c", SOLVE.format(res=res)], env=env,
                              capture_output=True, text=True, check=True)
        out.append(json.loads(proc.stdout.strip().splitlines()[-1]))
    return out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--res", type=int, default=128)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)
    print(f"kernels on a {args.res}x{args.res} grid, 3 branches (best of {args.repeat})")
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'numba [ms]':>12}{'speedup':>10}")
    for name, a, b in kernel_table(args.res, args.repeat):
        print(f"{name:<16}{1e3 * a:>12.2f}{1e3 * b:>12.2f}{a / b:>10.1f}")
    print(f"\nbellman cell solve, res={args.res}")
    rows = solve_table(args.res)
    for r in rows:
        print(f"{r['backend']:<8}{r['seconds']:>8.2f} s  alpha={r['alpha']:.12f} "
              f"iterations={r['iterations']}")
    print(f"alpha difference between backends: {abs(rows[0]['alpha'] - rows[1]['alpha']):.1e}")


if __name__ == "__main__":
    main()
