"""Acceptance criteria 1-9 at their stated tolerances.

Each test prints one ``criterion N: PASS|FAIL`` line with the measured
numbers, then asserts the criterion.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from flowshadow import io
from flowshadow.cocycle import build_chain
from flowshadow.config import load_config
from flowshadow.flow import integrate, tangent_integrate
from flowshadow.pipeline import run_pipeline
from flowshadow.shadow import close_up
from flowshadow.spectrum import (domination_certificate, finite_time_splitting, qr_exponents,
                                 scaled_equals_unscaled_check, splitting_agreement,
                                 tangent_exponents)
from flowshadow.strings import LogProfile, pliss_select
from flowshadow.systems import hopf

from conftest import ROOT


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return emit


def test_criterion_1_hopf_spectrum(report):
    t0 = time.perf_counter()
    H = hopf()
    seg = integrate(H, [1.0, 0.0, 0.0], 20 * np.pi, tol=1e-12)
    prop = tangent_integrate(H, seg)
    lam = qr_exponents(build_chain(H, seg, propagation=prop)).exponents
    tan = tangent_exponents(H, seg, prop).exponents
    dt = time.perf_counter() - t0
    ok = (np.max(np.abs(lam - [-2, -1])) <= 0.01 and np.max(np.abs(tan - [-2, -1, 0])) <= 0.01
          and dt < 5)
    report(1, ok, f"psi* {lam.round(5).tolist()} tangent {tan.round(5).tolist()} {dt:.2f}s")
    assert ok


def test_criterion_2_scaled_identity(lorenz_data, hopf_circle, report):
    t0 = time.perf_counter()
    d = lorenz_data
    devs = []
    H, hseg, hch = hopf_circle
    pairs = [(build_chain(H, hseg, scaled=False), hch)]
    k = len(d.chain)
    for i, j in [(0, 100), (5000, 5300), (20000, 40000), (0, k // 2), (0, k)]:
        pairs.append((_sub(d.unscaled, i, j), _sub(d.chain, i, j)))
    for un, sc in pairs:
        devs.append(scaled_equals_unscaled_check(un, sc).deviation)
    long = [scaled_equals_unscaled_check(_sub(d.unscaled, 0, n), _sub(d.chain, 0, n)).max_diff
            for n in (k // 2, k)]
    dt = time.perf_counter() - t0
    ok = max(devs) <= 1e-10 and max(long) <= 0.01 and dt < 60
    report(2, ok, f"max identity deviation {max(devs):.2e}, windows 1000/2000 diff "
                  f"{long[0]:.2e}/{long[1]:.2e}, {dt:.1f}s")
    assert ok


def _sub(ch, i, j):
    return type(ch)(ch.times[i:j + 1], ch.dts[i:j], ch.points[i:j + 1], ch.speeds[i:j + 1],
                    ch.flow_dirs[i:j + 1], ch.bases[i:j + 1], ch.rebuilt[i:j + 1], ch.steps[i:j],
                    ch.scaled, ch.log_norms[i:j], ch.log_mininorms[i:j])


def test_criterion_3_lorenz_cross_oracle(report):
    from conftest import LorenzData
    t0 = time.perf_counter()
    d = LorenzData()
    tan = tangent_exponents(d.system, d.segment, d.prop).exponents
    normal = np.delete(tan, np.argmin(np.abs(tan)))
    lam = d.est.exponents
    dt = time.perf_counter() - t0
    ok = (np.max(np.abs(lam - normal)) <= 0.05 and abs(lam[1] - 0.90) <= 0.05
          and abs(lam[0] + 14.6) <= 0.05 and dt < 120)
    report(3, ok, f"scaled {lam.round(4).tolist()} tangent-minus-zero "
                  f"{normal.round(4).tolist()} {dt:.1f}s")
    assert ok


ALPHABET = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])


def _brute(a, b, eta, T):
    # every range [s, e] checked against the three conditions with running sums
    k = len(a)
    good = []
    for s in range(k):
        for e in range(s + 1, k + 1):
            if e - s <= T:
                continue
            ok = True
            pa = 0.0
            for n in range(s, e):
                if pa > -eta * (n - s) + 1e-9 or a[n] - b[n] > -eta + 1e-9:
                    ok = False
                    break
                pa += a[n]
            if ok:
                pb = 0.0
                for n in range(e - 1, s - 1, -1):
                    pb += b[n]
                    if pb < eta * (e - n) - 1e-9:
                        ok = False
                        break
            if ok:
                good.append((s, e))
    return sorted(r for r in good
                  if not any(o != r and o[0] <= r[0] and r[1] <= o[1] for o in good))


def test_criterion_4_pliss_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    bad = 0
    for _ in range(10_000):
        k = int(rng.integers(1, 15))
        a = rng.choice(ALPHABET, k)
        b = rng.choice(ALPHABET, k)
        eta = float(rng.choice([0.1, 0.25, 0.5]))
        T = float(rng.choice([1.0, 1.5, 2.5, 4.0]))
        got = sorted((s.start_index, s.end_index)
                     for s in pliss_select(LogProfile(np.ones(k), a, b), eta, T))
        bad += got != _brute(a.tolist(), b.tolist(), eta, T)
    dt = time.perf_counter() - t0
    ok = bad == 0 and dt < 60
    report(4, ok, f"{bad} mismatches in 10000 cases, {dt:.1f}s")
    assert ok


def test_criterion_5_domination(lorenz_data, report):
    d = lorenz_data
    cert = domination_certificate(finite_time_splitting(d.chain, 1), d.chain, window_cap=50.0,
                                  lambda_min=0.2)
    ang, mask = splitting_agreement(d.split, finite_time_splitting(d.chain, 1))
    frac = float(np.mean(ang <= 5e-2))
    ok = cert.passed and cert.lam >= 0.2 and frac >= 0.95
    report(5, ok, f"lambda {cert.lam:.3f}, fit residual {cert.residual:.3f} (limit 0.5), "
                  f"pass {cert.passed}, agreement {frac:.4f} on {int(mask.sum())} samples")
    assert ok


def test_criterion_6_shadowing(lorenz_run, report):
    _, out, _ = lorenz_run
    orbs = [o for o in io.load_json(out / "close.json")["orbits"] if o["status"] == "accepted"]
    worst = []
    for o in orbs:
        sh = o["shadowing"]
        lo, hi = sh["theta_prime_bounds"]
        worst.append(o["residual"] <= 1e-9 and 0.8 < lo and hi < 1.2
                     and sh["scaled_dist_max"] < 0.2)
    po = close_up(hopf(), [[1.05, 0.0, 0.01]], [6.2])
    hopf_ok = (abs(po.period - 2 * np.pi) <= 1e-8
               and np.max(np.abs(po.floquet_lognorms - [-2, -1])) <= 1e-6)
    ok = bool(orbs) and all(worst) and hopf_ok
    report(6, ok, f"{sum(worst)}/{len(orbs)} Lorenz orbits pass, Hopf period error "
                  f"{abs(po.period - 2 * np.pi):.1e}, "
                  f"Floquet {po.floquet_lognorms.round(8).tolist()}")
    assert ok


def test_criterion_7_main_trace(lorenz_run, report):
    code, out, secs = lorenz_run
    rep = io.load_json(out / "compare.json")
    best = rep["best"]
    vals = [p["best_value"] for p in rep["per_D"]]
    nonincr = all(v is not None for v in vals) and all(b <= a for a, b in zip(vals, vals[1:]))
    first = code == 0 and best is not None and best["value"] + rep["tail_bound"] < 0.1
    ok = first and nonincr and secs < 600 and rep["n"] == 6
    report(7, ok, f"best dm {best['value']:.3e} + tail {rep['tail_bound']} = {best['total']:.4f}; "
                  f"best per D {[f'{v:.3e}' for v in vals]} nonincreasing {nonincr}; "
                  f"{secs:.0f}s")
    assert ok


def test_criterion_8_block_monotone(lorenz_run, report):
    _, out, _ = lorenz_run
    s = io.load_json(out / "strings.json")
    fr = s["membership_C_2C_4C"]
    ok = fr[0] <= fr[1] <= fr[2]
    report(8, ok, f"C = {s['C']}: fractions at C, 2C, 4C = {fr}")
    assert ok


def test_criterion_9_determinism(lorenz_run, tmp_path, report):
    _, out, _ = lorenz_run
    second = tmp_path / "again"
    run_pipeline(load_config(ROOT / "configs" / "lorenz.yaml", out=str(second)), second)
    files = sorted(p.relative_to(out) for p in Path(out).rglob("*")
                   if p.suffix in (".json", ".csv"))
    diff = [str(f) for f in files if io.sha256(out / f) != io.sha256(second / f)]
    ok = bool(files) and not diff
    report(9, ok, f"{len(files)} JSON/CSV artifacts compared, {len(diff)} differ {diff[:5]}")
    assert ok
