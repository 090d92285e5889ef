"""Compiled vs pure-Python kernels on Lorenz-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs on the same inputs under both backends; the table shows the
best wall time of N repeats, the speedup and the max abs difference of the
outputs (the backends should agree to rounding).
"""

import argparse
import time

import numpy as np

from flowshadow import kernels
from flowshadow.cocycle import build_chain
from flowshadow.flow import integrate, sample_grid, tangent_integrate
from flowshadow.systems import lorenz


def _best(fn, repeat):
    out, best = None, np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.ravel(np.asarray(o, dtype=float)) for o in out])
    return np.ravel(np.asarray(out, dtype=float))


def cases():
    L = lorenz()
    seg = integrate(L, [1, 1, 1], 60.0, tol=1e-10).slice(1000, 6000)
    chain = build_chain(L, seg, propagation=tangent_integrate(L, seg))
    U = L.field_many(seg.states) / seg.speeds[:, None]
    B0 = np.eye(3)[1:]
    rng = np.random.default_rng(0)
    a = rng.normal(-0.5, 1.0, 20000) * 0.01
    b = rng.normal(0.5, 1.0, 20000) * 0.01
    dt = np.full(20000, 0.01)
    U_b, L_b = kernels.qh_bounds(a, b, dt, 0.2, 1e-9)
    t = np.concatenate(([0.0], np.cumsum(dt)))
    grid = sample_grid(10.0, 0.01)
    return [
        ("flow_samples (10 time units)",
         lambda: kernels.flow_samples(L, [1.0, 1.0, 1.0], grid, 1e-10, 1e4)[1]),
        ("flow_tangent (500 legs of 0.01)",
         lambda: kernels.flow_tangent(L, seg.states[:500], seg.dts[:500], 1e-10, 1e4)[3]),
        ("transport_frames (5000 samples)", lambda: kernels.transport_frames(U, B0)[0]),
        ("qr_accumulate (5000 steps)", lambda: kernels.qr_accumulate(chain.steps, np.eye(2))[0]),
        ("backward_subspace (5000 steps)",
         lambda: kernels.backward_subspace(chain.steps, np.eye(2)[:, 1:])),
        ("qh_bounds (20000 steps)", lambda: kernels.qh_bounds(a, b, dt, 0.2, 1e-9)),
        ("maximal_ranges (20000 steps)", lambda: kernels.maximal_ranges(U_b, L_b, t, 1.0)),
    ]


def main(argv=None):
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if kernels._c is None:
        print("compiled kernels are not built; nothing to compare")
        return 1
    rows = []
    for name, fn in cases():
        kernels.use_backend("compiled")
        tc, oc = _best(fn, args.repeat)
        kernels.use_backend("python")
        tp, op = _best(fn, args.repeat)
        kernels.use_backend("compiled")
        diff = float(np.max(np.abs(_flat(oc) - _flat(op)))) if np.size(_flat(oc)) else 0.0
        rows.append((name, tc, tp, tp / tc, diff))
    w = max(len(r[0]) for r in rows)
    print(f"{'kernel':<{w}}  {'compiled s':>11}  {'python s':>10}  {'speedup':>8}  {'max diff':>9}")
    for name, tc, tp, sp, diff in rows:
        print(f"{name:<{w}}  {tc:11.5f}  {tp:10.5f}  {sp:8.1f}  {diff:9.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
