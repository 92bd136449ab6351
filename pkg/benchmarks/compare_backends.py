#!/usr/bin/env python3
"""Benchmark: compiled kernel extension vs the pure-Python fallback.

Times the three hot paths (tape gradient evaluation, tape Hessian
evaluation, and the full vakonomic RK4 drive of the particle system) on
both backends and prints the speedups.  Usage:

    python benchmarks/compare_backends.py [--steps 10000]
"""

import argparse
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[1] / "src"))

import numpy as np

from vakdirac._kernels import _pure
from vakdirac.catalog import builtin
from vakdirac.dynamics import pack_system
from vakdirac.expressions import parse
from vakdirac.systems import vak_gradients

try:
    from vakdirac._kernels import _core
except ImportError:
    _core = None

EXPR = ("sin(q0)*v0^2 + exp(q1*v1) + v0/(q1+2) + sqrt(v0+3)"
        " + tan(q1)*log(v0+2) - (q0-v1)^3")


def timeit(fn, min_time=0.2):
    fn()  # warm up
    reps = 1
    while True:
        start = time.perf_counter()
        for _ in range(reps):
            fn()
        elapsed = time.perf_counter() - start
        if elapsed > min_time:
            return elapsed / reps
        reps = max(reps * 2, int(reps * min_time / max(elapsed, 1e-9)))


def bench_tapes(impl):
    t = parse(EXPR, 2).tape
    q = np.array([0.4, 0.8])
    v = np.array([1.1, 0.3])
    grad = timeit(lambda: impl.tape_grad(t.code, t.consts, 2, q, v))
    hess = timeit(lambda: impl.tape_hess(t.code, t.consts, 2, q, v))
    return grad, hess


def bench_integrate(impl, nsteps):
    spec = builtin("particle")
    packed = pack_system(spec)
    q0 = np.array([0.0, 1.0, 0.0])
    v0 = np.array([1.0, 0.0, 1.0])
    lam0 = np.array([2.0])
    _, _, p0, _ = vak_gradients(spec, q0, v0, lam0)
    args = (packed.L_code, packed.L_consts, packed.phi_code,
            packed.phi_starts, packed.phi_consts, packed.phi_cstarts,
            3, 1, q0, p0, v0, lam0, 1e-3, nsteps, 1e-12, 50)

    def run():
        status, *_ = impl.integrate_vak_rk4(*args)
        assert status == 0

    return timeit(run, min_time=0.5)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=10_000,
                    help="RK4 steps for the integration benchmark")
    opts = ap.parse_args()

    rows = []
    for name, impl in (("python", _pure),) + (
            (("compiled", _core),) if _core is not None else ()):
        grad, hess = bench_tapes(impl)
        integ = bench_integrate(impl, opts.steps)
        rows.append((name, grad, hess, integ))

    print(f"{'backend':<10} {'tape grad':>12} {'tape hess':>12} "
          f"{'rk4 ' + str(opts.steps) + ' steps':>18}")
    for name, grad, hess, integ in rows:
        print(f"{name:<10} {grad * 1e6:>10.2f}us {hess * 1e6:>10.2f}us "
              f"{integ:>16.3f}s")
    if len(rows) == 2:
        p, c = rows
        print(f"\nspeedup (compiled over python): "
              f"grad {p[1] / c[1]:.1f}x, hess {p[2] / c[2]:.1f}x, "
              f"integration {p[3] / c[3]:.1f}x")
    else:
        print("\ncompiled extension not built; only the fallback was timed")


if __name__ == "__main__":
    main()
