"""Close returns, multiple-shooting closing and a-posteriori shadowing checks."""

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from . import io
from .cocycle import build_chain, rescale
from .errors import Blowup, Collapsed, NoConvergence, StepFailure
from .flow import ESCAPE, OrbitSegment, flow_with_tangent, integrate, tangent_integrate
from .kernels import qr_accumulate
from .kernels._pykernels import frame_from_scratch
from .strings import QHIndex


@dataclass(frozen=True)
class CloseReturn:
    start_index: int
    end_index: int
    start_t: float
    end_t: float
    y: np.ndarray
    ly: np.ndarray
    gap: float
    both_in_block: bool
    alpha_ok: bool

    @property
    def duration(self):
        return self.end_t - self.start_t


def _cells(points, D):
    return np.floor(points / D).astype(np.int64)


def find_close_returns(orbit: OrbitSegment, qh: Optional[QHIndex], member, sing_dist, alpha, D,
                       T, max_duration=100.0, base_stride=10):
    """First return at a multiple of T for each base sample, with gap < D.

    Base and end samples must be block members at singularity distance > alpha,
    and [s, e] must be a quasi-hyperbolic range in ``qh`` (skipped when None).
    Candidate ends come from a uniform grid hash with cell size D.
    """
    if D <= 0:
        return []
    x = orbit.states
    dt = float(orbit.times[1] - orbit.times[0])
    K = int(round(T / dt))
    lmax = int(max_duration / T)
    ok = np.asarray(member, dtype=bool) & (np.asarray(sing_dist) > alpha)
    if qh is not None:
        lo, hi = qh.offset, qh.offset + len(qh.U) - 1
        ok[:lo] = False
        ok[hi + 1:] = False
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return []
    cells = _cells(x[idx], D)
    table = defaultdict(list)
    for i, c in zip(idx.tolist(), map(tuple, cells)):
        table[c].append(i)
    table = {c: np.asarray(v, dtype=np.int64) for c, v in table.items()}
    offs = [np.array(o) for o in np.ndindex(*(3,) * x.shape[1])]
    out = []
    for s in idx[::base_stride].tolist():
        c = _cells(x[s][None, :], D)[0]
        cand = [table.get(tuple(c + o - 1)) for o in offs]
        cand = [v for v in cand if v is not None]
        if not cand:
            continue
        e = np.concatenate(cand)
        lag = e - s
        e = e[(lag >= 2 * K) & (lag <= lmax * K) & (lag % K == 0)]
        if len(e) == 0:
            continue
        e = np.sort(e)
        gaps = np.linalg.norm(x[e] - x[s], axis=1)
        e, gaps = e[gaps < D], gaps[gaps < D]
        if qh is not None and len(e):
            keep = qh.valid(np.full(len(e), s - qh.offset), e - qh.offset)
            e, gaps = e[keep], gaps[keep]
        if len(e) == 0:
            continue
        j = int(e[0])
        out.append(CloseReturn(s, j, float(orbit.times[s]), float(orbit.times[j]),
                               x[s].copy(), x[j].copy(), float(gaps[0]), True, True))
    return out


# ---------------------------------------------------------------- closing

@dataclass(frozen=True, eq=False)
class PeriodicOrbit:
    anchor: np.ndarray
    period: float
    loop: OrbitSegment = field(repr=False)
    residual: float
    leg_residuals: np.ndarray = field(repr=False)
    monodromy: np.ndarray = field(repr=False)
    floquet_lognorms: np.ndarray
    iterations: int = 0
    sections: np.ndarray = field(default=None, repr=False)
    taus: np.ndarray = field(default=None, repr=False)

    def to_json(self):
        return {"anchor": self.anchor, "period": self.period, "residual": self.residual,
                "floquet_lognorms": self.floquet_lognorms, "newton_iterations": self.iterations,
                "legs": len(self.taus) if self.taus is not None else 1}

    def write(self, json_path, orb_path):
        io.dump_json(json_path, self.to_json())
        io.write_orbit(orb_path, self.loop.times, self.loop.states, self.loop.speeds,
                       self.loop.dense_tol)


def _legs(system, P, taus, tol):
    ends, mats = flow_with_tangent(system, P, taus, tol, ESCAPE)
    return ends, mats


def _residual(ends, P):
    return ends - np.roll(P, -1, axis=0)


def close_up(system, anchors, taus, tol=1e-12, newton_tol=1e-10, max_iter=50,
             min_duration=None, stride=None, min_step=1e-6):
    """Multiple-shooting Newton for a periodic orbit through sections at ``anchors``.

    Unknowns: offsets c_j in the plane normal to X at anchor j and transit
    times tau_j. Residual: phi_{tau_j}(a_j + N_j c_j) - p_{j+1}, cyclic.
    Converged when every leg closes to ``newton_tol * (1 + |p|)``.
    ``min_duration`` is the source segment duration for the collapse test.
    """
    A = np.atleast_2d(np.asarray(anchors, dtype=float))
    taus = np.asarray(taus, dtype=float).copy()
    m, d = A.shape
    N = np.stack([frame_from_scratch(system.eval(a) / np.linalg.norm(system.eval(a))).T
                  for a in A])
    c = np.zeros((m, d - 1))

    def points(c):
        return A + np.einsum("jdk,jk->jd", N, c)

    def thresh(P):
        return newton_tol * (1.0 + np.max(np.linalg.norm(P, axis=1)))

    P = points(c)
    ends, mats = _legs(system, P, taus, tol)
    R = _residual(ends, P)
    it = 0
    while np.max(np.linalg.norm(R, axis=1)) > thresh(P):
        if it >= max_iter:
            raise NoConvergence(f"no convergence in {max_iter} Newton steps "
                                f"(residual {np.max(np.abs(R)):.3g})")
        it += 1
        J = np.zeros((m * d, m * d))
        Fend = system.field_many(ends)
        for j in range(m):
            r = slice(j * d, (j + 1) * d)
            J[r, j * d:j * d + d - 1] = mats[j] @ N[j]
            J[r, j * d + d - 1] = Fend[j]
            k = (j + 1) % m
            J[r, k * d:k * d + d - 1] -= N[k]
        try:
            delta = np.linalg.solve(J, -R.ravel())
        except np.linalg.LinAlgError:
            raise NoConvergence("singular shooting Jacobian") from None
        delta = delta.reshape(m, d)
        f0 = float(np.sum(R * R))
        lam = 1.0
        while True:
            c1 = c + lam * delta[:, :d - 1]
            t1 = taus + lam * delta[:, d - 1]
            if np.all(t1 > 0):
                P1 = points(c1)
                try:
                    e1, m1 = _legs(system, P1, t1, tol)
                    R1 = _residual(e1, P1)
                    f1 = float(np.sum(R1 * R1))
                except (Blowup, StepFailure, FloatingPointError):
                    f1 = np.inf
                if f1 <= (1.0 - 1e-4 * lam) * f0:
                    break
            lam *= 0.5
            if lam < min_step:
                raise NoConvergence("line search failed")
        c, taus, P, ends, mats, R = c1, t1, P1, e1, m1, R1
    period = float(np.sum(taus))
    if min_duration is not None and period < 0.1 * min_duration:
        raise Collapsed(f"period {period:.4g} is below a tenth of the segment duration "
                        f"{min_duration:.4g}")
    leg_res = np.linalg.norm(R, axis=1)
    loop = _loop_samples(system, P, taus, tol, stride)
    M, logs = floquet(system, loop, tol)
    return PeriodicOrbit(P[0].copy(), period, loop, float(leg_res.max()), leg_res, M, logs, it,
                         P, taus)


def _loop_samples(system, P, taus, tol, stride):
    """Dense loop from each leg separately; the last sample is p_0 again."""
    stride = system.default_stride if stride is None else stride
    ts, xs = [], []
    t0 = 0.0
    for j in range(len(P)):
        seg = integrate(system, P[j], taus[j], tol=tol, stride=stride)
        ts.append(seg.times[:-1] + t0)
        xs.append(seg.states[:-1])
        t0 += taus[j]
    ts.append(np.array([t0]))
    xs.append(P[:1])
    times = np.concatenate(ts)
    states = np.concatenate(xs)
    return OrbitSegment(times, states, system.speeds(states), system, tol)


def floquet(system, loop: OrbitSegment, tol=1e-12, max_loops=200, rtol=1e-13):
    """Normal monodromy and Floquet log-moduli per unit time by periodic QR.

    The chain steps around the loop are closed by the frame change from the
    transported end frame back to the start frame. Repeated QR sweeps converge
    to the Schur vectors, whose triangular diagonal gives the moduli without
    forming the badly scaled product.
    """
    chain = rescale(build_chain(system, loop, scaled=False, propagation=tangent_integrate(
        system, loop, tol=tol)), False)
    G = chain.bases[0] @ chain.bases[-1].T
    steps = np.concatenate((chain.steps, G[None]))
    n = steps.shape[1]
    M = np.eye(n)
    for S in steps:
        M = S @ M
    Q = np.eye(n)
    prev = None
    for _ in range(max_loops):
        cum, qh, _ = qr_accumulate(steps, Q, True)
        Q = qh[-1]
        logs = cum[-1]
        scale = max(1.0, np.max(np.abs(logs)))
        if prev is not None and np.max(np.abs(logs - prev)) <= rtol * scale:
            break
        prev = logs
    period = float(loop.times[-1] - loop.times[0])
    return M, np.sort(logs / period)


# ------------------------------------------------------------ verification

@dataclass(frozen=True)
class ShadowingReport:
    theta_samples: np.ndarray = field(repr=False)
    t_samples: np.ndarray = field(repr=False)
    theta_prime_bounds: tuple
    scaled_dist_max: float
    epsilon_used: float
    monotone: bool
    passed: bool

    def to_json(self):
        return {"theta_prime_bounds": list(self.theta_prime_bounds),
                "scaled_dist_max": self.scaled_dist_max, "epsilon": self.epsilon_used,
                "monotone": self.monotone, "pass": self.passed}


def _project(spline, dspline, ddspline, y, theta, lo, hi):
    # Newton on <gamma(theta) - y, gamma'(theta)> = 0, kept inside [lo, hi]
    for _ in range(20):
        g = spline(theta) - y
        g1 = dspline(theta)
        f = float(np.dot(g, g1))
        fp = float(np.dot(g1, g1) + np.dot(g, ddspline(theta)))
        if fp <= 0:
            fp = float(np.dot(g1, g1))
        step = f / fp
        theta = min(max(theta - step, lo), hi)
        if abs(step) < 1e-15 * max(1.0, abs(theta)):
            break
    return theta


def _track(spline, ds, dds, y, ty, th0, Theta, span):
    theta = np.empty(len(y))
    theta[0] = th0
    cur = th0
    for i in range(1, len(y)):
        guess = cur + (ty[i] - ty[i - 1])
        # keep the working window away from the spline ends by shifting whole periods
        shift = 0.0
        while guess - shift > 2 * Theta:
            shift += Theta
        cur = _project(spline, ds, dds, y[i], guess - shift, 0.0, span) + shift
        theta[i] = cur
    return theta


def _phase_candidates(loop_x, y0, count):
    # local minima of the distance to y0 around the loop, nearest first
    d = np.linalg.norm(loop_x - y0, axis=1)
    mins = np.flatnonzero((d <= np.roll(d, 1)) & (d <= np.roll(d, -1)))
    return mins[np.argsort(d[mins], kind="stable")][:count]


def verify_shadowing(y_segment: OrbitSegment, orbit: PeriodicOrbit, epsilon,
                     phase_candidates=5) -> ShadowingReport:
    """Build theta by projecting phi_t(y) onto the loop.

    The report passes when every difference quotient of theta lies in
    (1 - epsilon, 1 + epsilon) and the scaled distance stays below epsilon.

    A long loop can pass near y(0) on several strands, so tracking starts from
    the few nearest local minima of the distance and the best track is kept.
    """
    system = y_segment.system
    loop = orbit.loop
    Theta = orbit.period
    lt = loop.times - loop.times[0]
    # three periods of the loop so projections never meet the spline ends
    reps = 3
    span = reps * Theta
    tt = np.concatenate([lt[:-1] + r * Theta for r in range(reps)] + [[span]])
    xx = np.concatenate([loop.states[:-1]] * reps + [loop.states[:1]])
    spline = CubicHermiteSpline(tt, xx, system.field_many(xx), axis=0)
    ds, dds = spline.derivative(), spline.derivative(2)
    y = y_segment.states
    ty = y_segment.times - y_segment.times[0]
    dt = np.diff(ty)
    best = None
    for i0 in _phase_candidates(loop.states[:-1], y[0], phase_candidates):
        th0 = _project(spline, ds, dds, y[0], lt[i0] + Theta, 0.0, span)
        theta = _track(spline, ds, dds, y, ty, th0, Theta, span) - th0
        q = np.diff(theta) / dt
        monotone = bool(len(theta) < 2 or np.min(np.diff(theta)) >= -1e-6)
        gam = spline(np.mod(theta + th0, Theta) + Theta)
        scaled = float(np.max(np.linalg.norm(y - gam, axis=1) / y_segment.speeds))
        bounds = (float(q.min()), float(q.max())) if len(q) else (1.0, 1.0)
        ok = monotone and bounds[0] > 1 - epsilon and bounds[1] < 1 + epsilon and scaled < epsilon
        rep = ShadowingReport(theta, ty, bounds, scaled, float(epsilon), monotone, bool(ok))
        key = (not ok, scaled)
        if best is None or key < best[0]:
            best = (key, rep)
        if ok:
            break
    return best[1]


def anchors_from_segment(segment: OrbitSegment, m_sections):
    """Evenly spaced anchor samples along a segment (the last sample excluded) and transit times."""
    k = len(segment) - 1
    idx = np.unique(np.linspace(0, k, m_sections + 1).round().astype(int))[:-1]
    nxt = np.append(idx[1:], k)
    return segment.states[idx], segment.times[nxt] - segment.times[idx]


def first_recurrence(orbit: OrbitSegment, D, start=0):
    """First return of sample ``start`` to its D-ball after leaving it.

    The end sample is the closest approach during the first re-entry; None if
    the orbit never leaves or never comes back.
    """
    x = orbit.states
    d = np.linalg.norm(x[start:] - x[start], axis=1)
    out_idx = np.flatnonzero(d >= D)
    if len(out_idx) == 0:
        return None
    back = np.flatnonzero(d[out_idx[0]:] < D)
    if len(back) == 0:
        return None
    i = out_idx[0] + back[0]
    leave = np.flatnonzero(d[i:] >= D)
    j = i + (leave[0] if len(leave) else len(d) - i)
    e = i + int(np.argmin(d[i:j]))
    return CloseReturn(start, start + e, float(orbit.times[start]), float(orbit.times[start + e]),
                       x[start].copy(), x[start + e].copy(), float(d[e]), True, True)
