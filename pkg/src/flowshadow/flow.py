"""Numerical flow and tangent flow along sampled orbits."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import Blowup, SingularBall, StepFailure
from .systems import FlowSystem

ALPHA_MIN = 1e-3
ESCAPE = 1e4


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _raise_status(status, where=""):
    if status == 1:
        raise StepFailure(f"step size underflow{where}")
    if status == 2:
        raise Blowup(f"state left the escape ball or became non-finite{where}")
    if status != 0:
        raise MemoryError(f"integrator allocation failed{where}")


@dataclass(frozen=True, eq=False)
class OrbitSegment:
    """Time-stamped samples x_i of one trajectory with |X(x_i)|."""

    times: np.ndarray
    states: np.ndarray
    speeds: np.ndarray
    system: FlowSystem
    dense_tol: float

    def __post_init__(self):
        for name in ("times", "states", "speeds"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.states.ndim != 2 or len(self.states) != len(self.times):
            raise ValueError("states must be (m+1, d) matching times")
        if len(self.times) > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def duration(self):
        return float(self.times[-1] - self.times[0])

    @property
    def dts(self):
        return np.diff(self.times)

    def slice(self, i, j):
        """Samples i..j inclusive."""
        return OrbitSegment(self.times[i:j + 1], self.states[i:j + 1], self.speeds[i:j + 1],
                            self.system, self.dense_tol)

    def min_speed(self):
        return float(self.speeds.min())


@dataclass(frozen=True, eq=False)
class TangentPropagation:
    """Per-interval tangent matrices Phi_{t_{i+1}-t_i}(x_i) along ``base``."""

    base: OrbitSegment
    matrices: np.ndarray
    ends: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrices", _frozen(self.matrices))
        object.__setattr__(self, "ends", _frozen(self.ends))

    def __len__(self):
        return len(self.matrices)

    def product(self, i=0, j=None):
        """Phi from sample i to sample j, composed left to right in time."""
        j = len(self.matrices) if j is None else j
        P = np.eye(self.base.states.shape[1])
        for M in self.matrices[i:j]:
            P = M @ P
        return P


def sample_grid(duration, stride):
    """Uniform grid 0, stride, ... with the last node exactly at ``duration``."""
    if duration <= 0:
        return np.zeros(1)
    n = int(np.ceil(duration / stride - 1e-9))
    g = np.arange(n + 1, dtype=float) * stride
    g[-1] = duration
    if n > 1 and g[-1] - g[-2] < 1e-9 * stride:
        g = np.delete(g, -2)
    return g


def integrate(system: FlowSystem, x0, duration, tol=1e-10, stride=None, escape=ESCAPE,
              keep_steps=False, t0=0.0) -> OrbitSegment:
    """Integrate X from ``x0`` for ``duration`` with DOPRI5 and dense output.

    Samples lie on a uniform grid of spacing ``stride`` (system default when
    None). With ``keep_steps`` the adaptive step points are merged in as well.
    """
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (system.dim,) or not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be a finite point of R^d")
    if duration < 0:
        raise ValueError("duration must be nonnegative")
    stride = system.default_stride if stride is None else float(stride)
    grid = sample_grid(float(duration), stride)
    status, samples, st, sy = kernels.flow_samples(system, x0, grid, tol, escape, keep_steps)
    _raise_status(status)
    times, states = grid, samples
    if keep_steps and len(st):
        times = np.concatenate((grid, st))
        states = np.concatenate((samples, sy))
        order = np.argsort(times, kind="stable")
        times, states = times[order], states[order]
        keep = np.concatenate(([True], np.diff(times) > 1e-12 * max(1.0, duration)))
        times, states = times[keep], states[keep]
    return OrbitSegment(times + t0, states, system.speeds(states), system, float(tol))


def flow_map(system, x, tau, tol=1e-10, escape=ESCAPE):
    """phi_tau(x) for a single point."""
    status, out, _, _ = kernels.flow_samples(system, np.asarray(x, dtype=float),
                                             np.array([0.0, float(tau)]), tol, escape)
    _raise_status(status)
    return out[-1].copy()


def flow_with_tangent(system, starts, durations, tol=1e-10, escape=ESCAPE):
    """End states and Phi matrices for a batch of (start, duration) legs."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    durations = np.atleast_1d(np.asarray(durations, dtype=float))
    status, leg, ends, mats = kernels.flow_tangent(system, starts, durations, tol, escape)
    _raise_status(status, f" on leg {leg}")
    return ends, mats


def tangent_integrate(system: FlowSystem, segment: OrbitSegment, tol=None,
                      escape=ESCAPE) -> TangentPropagation:
    """Variational equation on each sample interval with V(t_i) = I."""
    tol = segment.dense_tol if tol is None else tol
    d = system.dim
    if len(segment) < 2:
        return TangentPropagation(segment, np.empty((0, d, d)), np.empty((0, d)))
    ends, mats = flow_with_tangent(system, segment.states[:-1], segment.dts, tol, escape)
    return TangentPropagation(segment, mats, ends)


@dataclass(frozen=True)
class BallReport:
    K: float
    K_direction: float
    K_line: float
    ratio_min: float
    ratio_max: float
    radius: float
    samples: int


def scaled_ball_check(system: FlowSystem, x, beta, samples=1000, seed=0) -> BallReport:
    """Measure the speed-comparison constants on y sampled in B(x, beta*|X(x)|).

    ``K`` bounds |X(x)|/|X(y)| - 1, ``K_direction`` the jump of the unit field
    X/|X| and ``K_line`` the angle between the lines <X(x)> and <X(y)>, each
    relative to d(x, y)/|X(x)|.
    """
    x = np.asarray(x, dtype=float)
    fx = system.eval(x)
    sx = float(np.linalg.norm(fx))
    r = beta * sx
    if samples <= 0 or r == 0.0:
        return BallReport(0.0, 0.0, 0.0, 1.0, 1.0, r, 0)
    rng = np.random.default_rng(seed)
    d = x.size
    g = rng.standard_normal((samples, d))
    g /= np.linalg.norm(g, axis=1)[:, None]
    rad = r * rng.random(samples) ** (1.0 / d)
    rad = np.maximum(rad, 1e-3 * r)
    ys = x + g * rad[:, None]
    fy = system.field_many(ys)
    sy = np.linalg.norm(fy, axis=1)
    if np.any(sy == 0.0):
        raise SingularBall("a sampled point in the scaled ball is a zero of X")
    dist = np.linalg.norm(ys - x, axis=1)
    ratio = sx / sy
    scale = sx / dist
    ux, uy = fx / sx, fy / sy[:, None]
    jump = np.linalg.norm(uy - ux, axis=1)
    cosang = np.clip(np.abs(uy @ ux), 0.0, 1.0)
    line = np.arccos(cosang)
    return BallReport(
        K=float(np.max(np.abs(ratio - 1.0) * scale)),
        K_direction=float(np.max(jump * scale)),
        K_line=float(np.max(line * scale)),
        ratio_min=float(ratio.min()), ratio_max=float(ratio.max()),
        radius=r, samples=int(samples),
    )
