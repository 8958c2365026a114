"""Relaxation kernel timing: compiled vs NumPy fallback (and the sparse direct solve).

    python benchmarks/bench_relax.py --size 128 --batch 16
"""
import argparse
import time

import numpy as np

from xbarmap import _relax_py, kernels
from xbarmap.circuit import cell_conductance, solve
from xbarmap.tech import TECHNOLOGIES, CrossbarGeometry


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - start)
    return min(times), out


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    tech = TECHNOLOGIES["TaOx"]
    geom = CrossbarGeometry(args.size, args.size)
    rng = np.random.default_rng(args.seed)
    v = rng.uniform(0, geom.v_max, (args.batch, args.size))
    g = 1.0 / rng.uniform(tech.r_on, tech.r_off, (args.batch, args.size, args.size))
    gc = cell_conductance(g, geom.r_access)
    gl = 1.0 / geom.r_line

    rows = []
    t_py, (_, vs_py, it_py) = best_of(lambda: _relax_py.relax_solve(v, gc, gl, 1e-13, 20000), args.repeat)
    rows.append(("numpy fallback", t_py, int(it_py.max())))
    vs_ref = vs_py
    if kernels.BACKEND == "cython":
        from xbarmap import _relax

        t_cy, (_, vs_cy, it_cy) = best_of(lambda: _relax.relax_solve(v, gc, gl, 1e-13, 20000), args.repeat)
        rows.append(("cython", t_cy, int(it_cy.max())))
        diff = np.abs(vs_cy - vs_ref).max() / np.abs(vs_ref).max()
    else:
        diff = float("nan")
    t_dir, _ = best_of(lambda: [solve(v[k], g[k], geom, "direct") for k in range(args.batch)], 1)
    rows.append(("sparse direct (splu)", t_dir, 1))

    print(f"{args.batch} crossbars of {args.size}x{args.size}, best of {args.repeat}")
    print(f"{'solver':24s} {'total s':>9s} {'ms/solve':>9s} {'sweeps':>7s}")
    for name, t, it in rows:
        print(f"{name:24s} {t:9.3f} {1e3 * t / args.batch:9.2f} {it:7d}")
    if kernels.BACKEND == "cython":
        print(f"speedup cython vs numpy: {t_py / t_cy:.1f}x; max rel difference {diff:.1e}")
    else:
        print("compiled kernel not available; build with `pip install -e . --no-build-isolation`")


if __name__ == "__main__":
    main()
