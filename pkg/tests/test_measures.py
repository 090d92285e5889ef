import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from flowshadow.errors import BoxTooSmall, OutOfBox
from flowshadow.flow import integrate
from flowshadow.measures import (DiscreteMeasure, birkhoff_check, continuity_modulus,
                                 default_basis, dm_distance, empirical_measure, gamma_xi,
                                 integrals, integrate_measure, periodic_measure, point_mass,
                                 tail_n)
from flowshadow.shadow import close_up
from flowshadow.systems import hopf

BOX = [(-2.0, 2.0), (-2.0, 2.0), (-1.0, 1.0)]


class _Loop:
    def __init__(self, seg):
        self.loop = seg
        self.period = float(seg.times[-1] - seg.times[0])


def test_two_sample_trapezoid_weights():
    seg = integrate(hopf(), [1.0, 0, 0], 0.1, stride=0.1)
    mu = empirical_measure(seg)
    assert np.array_equal(mu.weights, [0.5, 0.5])
    assert mu.source_span == pytest.approx(0.1)


def test_weights_validated():
    with pytest.raises(ValueError):
        DiscreteMeasure([[0.0, 0, 0], [1, 1, 1]], [0.5, 0.6], "empirical", 1.0)
    with pytest.raises(ValueError):
        DiscreteMeasure([[np.nan, 0, 0]], [1.0], "empirical", 1.0)


def test_basis_order_and_norms():
    b = default_basis(BOX, 11)
    assert b.ks[:11].tolist() == [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [2, 0, 0],
                                  [1, 1, 0], [1, 0, 1], [0, 2, 0], [0, 1, 1], [0, 0, 2],
                                  [3, 0, 0]]
    assert np.all(b.sup_norms == 1)
    grid = np.stack(np.meshgrid(*[np.linspace(lo, hi, 21) for lo, hi in BOX]), -1).reshape(-1, 3)
    assert np.allclose(np.max(np.abs(b.evaluate(grid)), axis=0), 1.0)


def test_dirac_integrals():
    b = default_basis(BOX, 8)
    x = np.array([0.3, -0.4, 0.2])
    mu = point_mass(x)
    assert np.allclose(integrals(mu, b, 8), b.evaluate(x, 8)[0], rtol=0, atol=1e-15)
    assert integrate_measure(1, mu, b) == 1.0
    assert integrate_measure(lambda p: p[:, 0], mu) == pytest.approx(0.3)


def test_hopf_circle_integrals():
    H = hopf()
    po = close_up(H, [[1.0, 0, 0], [-1.0, 0, 0]], [np.pi, np.pi])
    mu = periodic_measure(po)
    b = default_basis(BOX, 10)
    got = integrals(mu, b, 10)
    # uniform measure on the unit circle: int cos(pi k (x + 2)/4) over the angle
    th = np.linspace(0, 2 * np.pi, 200001)[:-1]
    pts = np.column_stack((np.cos(th), np.sin(th), np.zeros_like(th)))
    ref = b.evaluate(pts, 10).mean(axis=0)
    assert np.allclose(got, ref, atol=1e-6)
    assert integrate_measure(lambda p: p[:, 0] ** 2, mu) == pytest.approx(0.5, abs=1e-6)


def test_quadrature_against_dense_oracle():
    # k = (2, 0, 0) along a Hopf spiral against 1e6 uniform samples of the same flow
    H = hopf()
    seg = integrate(H, [1.5, 0, 0.5], 6.0, tol=1e-12)
    b = default_basis(BOX, 5)
    got = integrals(empirical_measure(seg), b, 5)[4]
    dense = integrate(H, [1.5, 0, 0.5], 6.0, tol=1e-12, stride=6.0 / 1_000_000)
    ref = b(5, dense.states)
    ref = (np.sum(ref) - 0.5 * (ref[0] + ref[-1])) / (len(ref) - 1)
    assert b.ks[4].tolist() == [2, 0, 0]
    # composite trapezoid error is at most h^2/12 max|g''| along the orbit
    g = b(5, dense.states[::100])
    hd = 100 * 6.0 / 1_000_000
    g2 = np.max(np.abs(np.diff(g, 2))) / hd ** 2
    h = seg.times[1] - seg.times[0]
    assert abs(got - ref) <= h ** 2 / 12 * g2
    assert abs(got - ref) <= 1e-3


points3 = st.lists(st.tuples(st.floats(-1.9, 1.9), st.floats(-1.9, 1.9), st.floats(-0.9, 0.9)),
                   min_size=1, max_size=5)


def _measure(pts, raw):
    w = np.asarray(raw[:len(pts)] + [1.0] * (len(pts) - len(raw)), dtype=float)
    w = w / math.fsum(w)
    w[0] += 1 - math.fsum(w)
    return DiscreteMeasure(pts, w, "empirical", 1.0)


@settings(max_examples=100, deadline=None)
@given(p=points3, q=points3, r=points3, n=st.integers(1, 20),
       w=st.lists(st.floats(0.1, 1.0), min_size=5, max_size=5))
def test_metric_axioms(p, q, r, n, w):
    b = default_basis(BOX, 20)
    mu, nu, ro = _measure(p, w), _measure(q, w), _measure(r, w)
    d = lambda x, y: dm_distance(x, y, b, n).value
    assert d(mu, mu) == 0.0
    assert d(mu, nu) == pytest.approx(d(nu, mu), abs=1e-15)
    assert d(mu, ro) <= d(mu, nu) + d(nu, ro) + 1e-14
    assert d(mu, nu) <= 1.0


@settings(max_examples=100, deadline=None)
@given(p=points3, q=points3, n=st.integers(1, 19))
def test_truncation_sandwich(p, q, n):
    # adding terms only grows the sum, and never by more than the tail bound
    b = default_basis(BOX, 20)
    mu, nu = _measure(p, []), _measure(q, [])
    lo = dm_distance(mu, nu, b, n)
    hi = dm_distance(mu, nu, b, n + 1)
    assert lo.value <= hi.value <= lo.value + lo.tail_bound
    assert lo.tail_bound == 2.0 ** (-(n - 1))


def test_single_function_distance_is_zero():
    b = default_basis(BOX, 4)
    rep = dm_distance(point_mass([0, 0, 0]), point_mass([1, 1, 0.5]), b, 1)
    assert rep.value == 0.0 and rep.tail_bound == 1.0
    with pytest.raises(ValueError):
        dm_distance(point_mass([0, 0, 0]), point_mass([0, 0, 0]), b, 5)


def test_distance_terms_closed_form():
    b = default_basis(BOX, 4)
    rep = dm_distance(point_mass([-2.0, 0, 0]), point_mass([2.0, 0, 0]), b, 4)
    # only f_2 = cos(pi (x+2)/4) differs: 1 versus -1
    assert rep.per_i_terms == pytest.approx((0.0, 2 / 4, 0.0, 0.0))
    assert rep.value == pytest.approx(0.5)


def test_tail_n():
    for eps in (0.5, 0.1, 0.05, 0.01, 1e-4):
        n = tail_n(eps)
        assert 2.0 ** (-(n - 1)) < eps / 2 <= 2.0 ** (-(n - 2))


def test_box_errors():
    with pytest.raises(BoxTooSmall):
        default_basis(BOX, 4, points=[[3.0, 0, 0]])
    with pytest.raises(ValueError):
        default_basis([(1.0, 0.0)] * 3)
    b = default_basis(BOX, 4)
    with pytest.raises(OutOfBox):
        integrals(point_mass([0, 0, 5.0]), b, 4)


def test_birkhoff_on_periodic_orbit():
    H = hopf()
    po = close_up(H, [[1.0, 0, 0], [-1.0, 0, 0]], [np.pi, np.pi])
    mu = periodic_measure(po)
    b = default_basis(BOX, 8)
    seg = integrate(H, [1.0, 0, 0], 40 * np.pi, tol=1e-12)
    rep = birkhoff_check(seg, mu, b, 6, 0.1)
    assert rep.threshold == pytest.approx(0.1 / 24 * 2)
    assert rep.T1 < 40 * np.pi
    assert np.all(rep.deviations < rep.threshold)
    assert np.all(rep.max_dev[rep.prefix_times >= rep.T1] < rep.threshold)
    strict = birkhoff_check(seg, mu, b, 6, 0.1, gamma=1e-30)
    assert strict.T1 == math.inf


def test_gamma_xi_keeps_functions_close():
    b = default_basis(BOX, 10)
    gamma, xi = gamma_xi(b, 6, 0.1)
    assert gamma == pytest.approx(0.1 / 24 * 2)
    assert continuity_modulus(b, 6, xi) == pytest.approx(gamma)
    rng = np.random.default_rng(5)
    x = rng.uniform(-1.5, 1.5, (2000, 3))
    v = rng.normal(size=(2000, 3))
    y = x + xi * v / np.linalg.norm(v, axis=1)[:, None]
    assert np.max(np.abs(b.evaluate(x, 6) - b.evaluate(y, 6))) <= gamma


def test_periodic_weights_are_cyclic_trapezoid():
    H = hopf()
    seg = integrate(H, [1.0, 0, 0], 2 * np.pi, stride=2 * np.pi / 8, tol=1e-12)
    mu = periodic_measure(_Loop(seg))
    assert len(mu) == 8 and np.allclose(mu.weights, 1 / 8, atol=1e-15)


@pytest.fixture(scope="module")
def circle_measure():
    po = close_up(hopf(), [[1.0, 0, 0], [-1.0, 0, 0]], [np.pi, np.pi])
    return po, periodic_measure(po)


def test_circle_symmetry_integrals(circle_measure):
    _, mu = circle_measure
    assert abs(integrate_measure(lambda p: p[:, 0], mu)) <= 1e-8
    assert abs(integrate_measure(lambda p: p[:, 1], mu)) <= 1e-8
    r2 = integrate_measure(lambda p: p[:, 0] ** 2 + p[:, 1] ** 2, mu)
    assert r2 == pytest.approx(1, abs=1e-8)
    assert integrate_measure(lambda p: np.ones(len(p)), mu) == pytest.approx(1, abs=1e-12)


def test_half_period_shift_invariance():
    H = hopf()
    b = default_basis(BOX, 16)
    seg = integrate(H, [1.0, 0, 0], 2 * np.pi, tol=1e-12)
    shifted = integrate(H, seg.states[len(seg) // 2], 2 * np.pi, tol=1e-12)
    d = integrals(empirical_measure(seg), b, 16) - integrals(empirical_measure(shifted), b, 16)
    assert np.max(np.abs(d)) <= 1e-6


def test_circle_k200_against_dense_quadrature(circle_measure):
    _, mu = circle_measure
    b = default_basis(BOX, 5)
    th = np.linspace(0, 2 * np.pi, 1_000_001)[:-1]
    ref = np.mean(np.cos(np.pi * (np.cos(th) + 2) / 2))
    assert integrals(mu, b, 5)[4] == pytest.approx(ref, abs=1e-6)


def test_single_function_basis():
    b = default_basis(BOX, 1)
    assert b.ks.tolist() == [[0, 0, 0]]
    assert integrals(point_mass([0.5, 0.5, 0.5]), b, 1)[0] == 1.0


def test_two_circle_point_masses():
    b = default_basis(BOX, 8)
    x, y = np.array([1.0, 0, 0]), np.array([0.0, 1.0, 0])
    rep = dm_distance(point_mass(x), point_mass(y), b, 8)

    def f(k, p):
        return np.prod([np.cos(np.pi * k[j] * (p[j] - BOX[j][0]) / (BOX[j][1] - BOX[j][0]))
                        for j in range(3)])
    ks = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1), (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0)]
    hand = sum(abs(f(k, x) - f(k, y)) / 2 ** (i + 1) for i, k in enumerate(ks))
    assert rep.value > 0
    assert rep.value == pytest.approx(hand, abs=1e-15)


def test_birkhoff_same_data():
    H = hopf()
    seg = integrate(H, [1.3, 0.2, 0.4], 5.0, tol=1e-12)
    rep = birkhoff_check(seg, empirical_measure(seg), default_basis(BOX, 8), 8, 0.1)
    assert np.all(rep.deviations <= 1e-10)


def test_birkhoff_hopf_exact_at_one_period(circle_measure):
    po, mu = circle_measure
    b = default_basis(BOX, 8)
    seg = integrate(hopf(), po.anchor, 2 * np.pi, tol=1e-12)
    rep = birkhoff_check(seg, mu, b, 8, 0.1)
    assert np.all(rep.deviations <= 1e-6)
