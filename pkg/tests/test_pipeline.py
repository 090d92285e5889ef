import numpy as np
from scipy.integrate import solve_ivp

from flowshadow import io
from flowshadow.config import load_config
from flowshadow.flow import integrate
from flowshadow.measures import default_basis, dm_distance, empirical_measure
from flowshadow.pipeline import run_stage
from flowshadow.spectrum import exponents_of
from flowshadow.systems import lorenz

from conftest import ROOT


def _orbits(out):
    return [o for o in io.load_json(out / "close.json")["orbits"] if o["status"] == "accepted"]


def _loop(out, o):
    t, x, _, _ = io.read_orbit(out / o["file"])
    return t, x


def test_lorenz_run_finds_returns_and_orbits(lorenz_run):
    code, out, _ = lorenz_run
    assert code == 0
    close = io.load_json(out / "close.json")
    half = [b for b in close["buckets"] if b["D"] == 0.5][0]
    assert half["returns"] >= 1
    assert _orbits(out)


def test_accepted_orbits_periods_track_segments(lorenz_run):
    _, out, _ = lorenz_run
    for o in _orbits(out):
        assert o["residual"] <= 1e-9 * (1 + np.linalg.norm(o["anchor"]))
        assert abs(o["period"] - o["segment_duration"]) <= 0.25 * o["segment_duration"]
        assert min(abs(v) for v in o["floquet_lognorms"]) >= 0.02


def test_residual_certificate_independent_integrator(lorenz_run):
    # a one-shot check over a whole period is meaningless at exponent 0.9 (growth ~e^72),
    # so every sampled piece of the loop is re-integrated and must land on the next sample
    _, out, _ = lorenz_run
    L = lorenz()
    for o in _orbits(out)[:3]:
        t, x = _loop(out, o)
        worst = 0.0
        for i in range(len(t) - 1):
            sol = solve_ivp(lambda s, y: L.eval(y), (0, t[i + 1] - t[i]), x[i], method="DOP853",
                            rtol=1e-13, atol=1e-13)
            worst = max(worst, float(np.linalg.norm(sol.y[:, -1] - x[i + 1])))
        assert worst <= 1e-8


def test_floquet_matches_segment_exponents(lorenz_run):
    _, out, _ = lorenz_run
    _, dts, steps, _ = io.read_chain(out / "chain.pcc")
    for o in _orbits(out):
        s, e = o["start_index"], o["end_index"]
        lam = exponents_of(steps[s:e], dts[s:e])
        assert np.allclose(np.sort(o["floquet_lognorms"]), lam, atol=0.2)


def test_shadowing_rate(lorenz_run):
    _, out, _ = lorenz_run
    orbs = _orbits(out)
    passed = sum(o["shadowing"]["pass"] for o in orbs)
    assert passed >= 0.9 * len(orbs)


def test_periodic_z_in_attractor_range(lorenz_run):
    _, out, _ = lorenz_run
    rows = np.genfromtxt(out / "periodic_measure.csv", delimiter=",", names=True)
    w = rows["weight"]
    z = rows["x_3"]
    assert 20 <= float(np.sum(w * z)) <= 30


def test_compare_with_eight_functions(lorenz_run, tmp_path):
    _, out, _ = lorenz_run
    import shutil
    work = tmp_path / "w"
    shutil.copytree(out, work)
    cfg = load_config(ROOT / "configs" / "lorenz.yaml", out=str(work), n=8)
    assert run_stage(cfg, "compare", work) == 0
    rep = io.load_json(work / "compare.json")
    assert rep["n"] == 8 and rep["best"]["total"] < 0.1
    assert np.isfinite(rep["birkhoff"]["T1"])


def test_empirical_measure_converges_with_window(lorenz_data):
    d = lorenz_data
    b = default_basis([(-25, 25), (-30, 30), (-5, 55)], 8)
    long = integrate(d.system, [1.0, 1.0, 1.0], 4050.0, tol=1e-10)
    k = len(d.segment)
    mu2 = empirical_measure(long.slice(5000, 5000 + k - 1))
    mu4 = empirical_measure(long.slice(5000, len(long) - 1))
    assert dm_distance(mu2, mu4, b, 8).value <= 0.02
    assert dm_distance(mu2, empirical_measure(d.segment), b, 8).value <= 1e-6
