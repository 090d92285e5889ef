import numpy as np
import pytest

from flowshadow.errors import Collapsed, NoConvergence
from flowshadow.flow import integrate
from flowshadow.shadow import (anchors_from_segment, close_up, find_close_returns,
                               first_recurrence, floquet, verify_shadowing)
from flowshadow.systems import hopf


def circle_anchors(m, r=1.0, z=0.0):
    th = 2 * np.pi * np.arange(m) / m
    return np.column_stack((r * np.cos(th), r * np.sin(th), np.full(m, z)))


@pytest.fixture(scope="module")
def hopf_orbit():
    H = hopf()
    return H, close_up(H, circle_anchors(4, 1.02, 0.01), np.full(4, np.pi / 2 + 0.02))


def test_hopf_close_up_recovers_unit_circle(hopf_orbit):
    _, po = hopf_orbit
    assert abs(po.period - 2 * np.pi) <= 1e-8
    assert po.residual <= 1e-10 * (1 + np.linalg.norm(po.anchor))
    r = np.linalg.norm(po.loop.states[:, :2], axis=1)
    assert np.max(np.abs(r - 1)) <= 1e-8 and np.max(np.abs(po.loop.states[:, 2])) <= 1e-8
    assert np.allclose(po.floquet_lognorms, [-2.0, -1.0], atol=1e-8)
    assert 1 <= po.iterations <= 50
    assert np.array_equal(po.loop.states[-1], po.loop.states[0])


def test_exact_input_needs_no_newton_step():
    H = hopf()
    po = close_up(H, circle_anchors(2), np.full(2, np.pi))
    assert po.iterations == 0
    assert abs(po.period - 2 * np.pi) <= 1e-12


def test_monodromy_eigenvalues():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 2 * np.pi, tol=1e-12)
    M, logs = floquet(H, seg)
    ev = np.sort(np.abs(np.linalg.eigvals(M)))
    assert np.allclose(ev, np.exp(2 * np.pi * np.array([-2.0, -1.0])), rtol=1e-6)
    assert np.allclose(logs, [-2.0, -1.0], atol=1e-9)


def test_collapse_detected():
    with pytest.raises(Collapsed):
        close_up(hopf(), circle_anchors(2), np.full(2, np.pi), min_duration=100.0)


def test_no_convergence():
    with pytest.raises(NoConvergence):
        close_up(hopf(), circle_anchors(4, 1.3, 0.2), np.full(4, 1.7), max_iter=1)


def test_zero_radius_gives_no_returns():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 20.0)
    k = len(seg)
    assert find_close_returns(seg, None, np.ones(k, bool), np.full(k, np.inf), 0.0, 0.0,
                              1.0) == []


def test_hopf_close_returns_one_period():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 40.0, tol=1e-12)
    k = len(seg)
    dt = seg.times[1] - seg.times[0]
    T = 10 * dt
    out = find_close_returns(seg, None, np.ones(k, bool), np.full(k, np.inf), 0.5, 0.1, T,
                             max_duration=20.0, base_stride=50)
    assert out
    for r in out:
        assert r.gap < 0.1
        assert abs(r.duration - 2 * np.pi) <= T
        assert (r.end_index - r.start_index) % 10 == 0
    # members far from everything: none at sing_dist <= alpha
    assert find_close_returns(seg, None, np.ones(k, bool), np.full(k, 0.4), 0.5, 0.1, T) == []


def test_first_recurrence_hopf():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 10.0, tol=1e-12)
    r = first_recurrence(seg, 0.2)
    assert abs(r.end_t - 2 * np.pi) <= seg.times[1]
    assert r.gap < 0.2
    assert first_recurrence(seg, 5.0) is None


def test_shadowing_off_circle_orbit(hopf_orbit):
    H, po = hopf_orbit
    y = integrate(H, [1.02, 0, 0], 4 * np.pi, tol=1e-12)
    rep = verify_shadowing(y, po, 0.2)
    assert rep.passed and rep.monotone
    assert rep.scaled_dist_max < 0.05
    lo, hi = rep.theta_prime_bounds
    assert 0.8 < lo <= hi < 1.2


def test_shadowing_on_the_loop(hopf_orbit):
    H, po = hopf_orbit
    y = integrate(H, po.loop.states[0], 2 * np.pi, tol=1e-12)
    rep = verify_shadowing(y, po, 0.01)
    assert rep.passed
    assert rep.scaled_dist_max < 1e-6
    assert np.allclose(rep.theta_prime_bounds, 1.0, atol=1e-4)


def test_shadowing_fails_far_away(hopf_orbit):
    H, po = hopf_orbit
    y = integrate(H, [1.6, 0, 0.5], 2.0, tol=1e-12)
    assert not verify_shadowing(y, po, 0.05).passed


def test_anchors_from_segment():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 2 * np.pi, tol=1e-12)
    A, taus = anchors_from_segment(seg, 4)
    assert len(A) == 4
    assert np.isclose(np.sum(taus), 2 * np.pi)
    assert np.allclose(A[0], [1, 0, 0])


def test_hopf_single_leg_from_off_circle_guess():
    H = hopf()
    po = close_up(H, [[1.05, 0.0, 0.01]], [6.2])
    assert abs(po.period - 2 * np.pi) <= 1e-8
    assert np.allclose(po.floquet_lognorms, [-2.0, -1.0], atol=1e-6)
    assert abs(np.linalg.norm(po.anchor[:2]) - 1) <= 1e-8
