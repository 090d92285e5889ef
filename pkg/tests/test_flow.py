import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp

from flowshadow.errors import Blowup, ParseError, SingularBall
from flowshadow.flow import (flow_map, flow_with_tangent, integrate, sample_grid,
                             scaled_ball_check, tangent_integrate)
from flowshadow.systems import (FlowSystem, built_in_systems, fd_jacobian, get_system, hopf,
                                lorenz, system_from_mapping)


def test_lorenz_singularities_vanish():
    L = lorenz()
    r = math.sqrt(72.0)
    expect = np.array([[0, 0, 0], [r, r, 27], [-r, -r, 27]])
    assert np.allclose(np.sort(L.singularities, axis=0), np.sort(expect, axis=0), atol=1e-12)
    for s in L.singularities:
        assert np.max(np.abs(L.eval(s))) <= 1e-12


def test_hopf_singularity_and_jacobian():
    H = hopf()
    assert np.array_equal(H.singularities, np.zeros((1, 3)))
    assert np.allclose(H.jac(np.array([1.0, 0, 0])), [[-2, -1, 0], [1, 0, 0], [0, 0, -1]])


@pytest.mark.parametrize("system", [lorenz(), hopf()], ids=["lorenz", "hopf"])
def test_jacobian_matches_central_differences(system):
    rng = np.random.default_rng(1)
    fd = fd_jacobian(system.eval)
    for _ in range(20):
        x = rng.uniform(-10, 10, 3)
        J = system.jac(x)
        assert np.linalg.norm(J - fd(x)) <= 1e-5 * np.linalg.norm(J)


def test_user_system_from_mapping():
    cfg = {"dim": 3, "name": "lin", "parameters": {"k": 2.0},
           "equations": ["-k*x1 + x2", "-x1 - k*x2", "-x3"], "singularities": [[0, 0, 0]]}
    S = system_from_mapping(cfg)
    x = np.array([1.0, 2.0, 3.0])
    assert np.allclose(S.eval(x), [0.0, -5.0, -3.0])
    assert np.allclose(S.jac(x), [[-2, 1, 0], [-1, -2, 0], [0, 0, -1]], atol=1e-6)


@pytest.mark.parametrize("bad", [
    {"dim": 3, "equations": ["x1", "x2"]},
    {"dim": 3, "equations": ["x1", "x2", "__import__('os')"]},
    {"dim": 3, "equations": ["x1", "x2", "y"]},
    {"equations": ["x1", "x2", "x3"]},
])
def test_malformed_user_systems(bad):
    with pytest.raises(ParseError):
        system_from_mapping(bad)


def test_built_in_systems_include_user(tmp_path):
    p = tmp_path / "sys.yaml"
    p.write_text("dim: 3\nequations: ['x2', '-x1', '-x3']\n")
    names = [s.name for s in built_in_systems(p)]
    assert names[:2] == ["lorenz", "hopf"] and len(names) == 3
    assert get_system(str(p)).dim == 3


def test_sample_grid_ends_exactly():
    g = sample_grid(1.0, 0.3)
    assert g[-1] == 1.0 and np.all(np.diff(g) > 0)
    assert np.array_equal(sample_grid(0.0, 0.1), [0.0])


def test_hopf_period_returns():
    seg = integrate(hopf(), [1.0, 0.0, 0.0], 2 * np.pi, tol=1e-10)
    assert np.max(np.abs(seg.states[-1] - [1, 0, 0])) <= 1e-8


def test_zero_duration_is_identity():
    x0 = np.array([1.0, 2.0, 3.0])
    seg = integrate(lorenz(), x0, 0.0)
    assert len(seg) == 1 and np.array_equal(seg.states[0], x0)
    assert np.array_equal(flow_map(lorenz(), x0, 0.0), x0)


def test_speeds_recompute_exactly():
    L = lorenz()
    seg = integrate(L, [1, 1, 1], 2.0)
    assert np.array_equal(seg.speeds, L.speeds(seg.states))


def test_lorenz_bounded_and_mean_z_against_scipy():
    L = lorenz()
    seg = integrate(L, [1, 1, 1], 100.0, tol=1e-10)
    assert np.max(np.linalg.norm(seg.states, axis=1)) < 100
    mz = np.trapezoid(seg.states[:, 2], seg.times) / seg.duration
    ref = solve_ivp(lambda t, x: L.eval(x), (0, 100), [1, 1, 1], method="DOP853",
                    rtol=1e-12, atol=1e-12, dense_output=True)
    tz = np.linspace(0, 100, 20001)
    mz_ref = np.trapezoid(ref.sol(tz)[2], tz) / 100
    assert 22 <= mz <= 25 and 22 <= mz_ref <= 25


def test_reintegration_reproduces_end():
    H = hopf()
    tol = 1e-10
    seg = integrate(H, [1.2, 0.3, 0.5], 5.0, tol=tol)
    ref = solve_ivp(lambda t, x: H.eval(x), (0, 5.0), seg.states[0], method="DOP853",
                    rtol=1e-13, atol=1e-13)
    assert np.max(np.abs(ref.y[:, -1] - seg.states[-1])) <= 10 * tol * 5.0


def test_blowup_detected():
    S = system_from_mapping({"dim": 3, "equations": ["x1*x1", "0", "0"]})
    with pytest.raises(Blowup):
        integrate(S, [1.0, 0, 0], 2.0, escape=1e4)


@settings(max_examples=100, deadline=None)
@given(x=st.tuples(*[st.floats(-1.5, 1.5)] * 3), s=st.floats(0.01, 2.0), t=st.floats(0.01, 2.0))
def test_semigroup_hopf(x, s, t):
    H = hopf()
    tol = 1e-10
    a = flow_map(H, x, s + t, tol)
    b = flow_map(H, flow_map(H, x, s, tol), t, tol)
    assert np.max(np.abs(a - b)) <= 10 * tol * (s + t)


@settings(max_examples=30, deadline=None)
@given(s=st.floats(0.05, 0.5), t=st.floats(0.05, 0.5), k=st.integers(0, 50))
def test_semigroup_lorenz(s, t, k):
    L = lorenz()
    tol = 1e-10
    x = integrate(L, [1, 1, 1], 20.0 + 0.1 * k).states[-1]
    a = flow_map(L, x, s + t, tol)
    b = flow_map(L, flow_map(L, x, s, tol), t, tol)
    assert np.max(np.abs(a - b)) <= 10 * tol * (s + t) * max(1.0, np.max(np.abs(x)))


def test_hopf_monodromy_floquet():
    H = hopf()
    _, mats = flow_with_tangent(H, [[1.0, 0, 0]], [2 * np.pi], 1e-12)
    ev = np.sort(np.abs(np.linalg.eigvals(mats[0])))
    expect = np.sort(np.exp(2 * np.pi * np.array([0.0, -2.0, -1.0])))
    assert np.allclose(ev, expect, rtol=1e-6, atol=0)
    X = H.eval(np.array([1.0, 0, 0]))
    assert np.allclose(mats[0] @ X, X, atol=1e-6)


def test_tangent_chain_maps_flow_direction():
    L = lorenz()
    seg = integrate(L, [1, 1, 1], 1.0)
    prop = tangent_integrate(L, seg)
    v = prop.product() @ L.eval(seg.states[0])
    x1 = L.eval(seg.states[-1])
    assert np.linalg.norm(v - x1) <= 1e-4 * np.linalg.norm(x1)


def test_tangent_cocycle_law():
    L = lorenz()
    seg = integrate(L, [1, 1, 1], 25.0).slice(2000, 2100)
    prop = tangent_integrate(L, seg)
    rng = np.random.default_rng(3)
    for _ in range(100):
        j = int(rng.integers(1, 100))
        full = prop.product(0, 100)
        split = prop.product(j, 100) @ prop.product(0, j)
        assert np.linalg.norm(full - split) <= 1e-5 * np.linalg.norm(full)


def test_zero_interval_tangent_is_identity():
    _, mats = flow_with_tangent(lorenz(), [[1.0, 1, 1]], [0.0])
    assert np.array_equal(mats[0], np.eye(3))


def test_scaled_ball_on_hopf_circle():
    rep = scaled_ball_check(hopf(), [1.0, 0, 0], 0.01, samples=1000)
    assert 0.97 <= rep.ratio_min and rep.ratio_max <= 1.03


def test_scaled_ball_taylor_bound():
    H = hopf()
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.5, 1.5, (100, 3))
    sup = max(np.linalg.norm(H.jac(p), 2) for p in pts)
    Ks = []
    for p in pts:
        if H.speed(p) < 0.1:
            continue
        rep = scaled_ball_check(H, p, 1e-6, samples=50)
        Ks.append(rep.K)
        assert rep.K <= 1.05 * np.linalg.norm(H.jac(p), 2) + 1e-6
    assert max(Ks) <= 1.05 * sup


def test_scaled_ball_degenerate():
    assert scaled_ball_check(hopf(), [1.0, 0, 0], 0.0).K == 0.0
    assert scaled_ball_check(hopf(), [1.0, 0, 0], 0.1, samples=0).K == 0.0


def test_singular_ball():
    # field switched off left of x1 = 0.5, so the ball around (1, 0, 0) of radius 0.9 hits zeros
    def ev(x):
        return np.array([1.0, 0.0, 0.0]) if x[0] >= 0.5 else np.zeros(3)

    Z = FlowSystem("step", 3, ev, fd_jacobian(ev), np.zeros((0, 3)))
    scaled_ball_check(Z, [1.0, 0, 0], 0.1, samples=10)
    with pytest.raises(SingularBall):
        scaled_ball_check(Z, [1.0, 0, 0], 0.9, samples=2000, seed=1)
