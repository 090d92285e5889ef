"""Empirical and periodic measures, a cosine test family and the truncated weak* distance."""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BoxTooSmall, OutOfBox
from .flow import OrbitSegment

NORM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    points: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    kind: str
    source_span: float

    def __post_init__(self):
        p = np.array(self.points, dtype=float, ndmin=2)
        w = np.array(self.weights, dtype=float)
        if len(p) != len(w):
            raise ValueError("points and weights differ in length")
        if np.any(w < 0) or abs(math.fsum(w) - 1.0) > NORM_TOL:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite sample point")
        p.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.weights)


def point_mass(x):
    return DiscreteMeasure(np.atleast_2d(np.asarray(x, dtype=float)), [1.0], "empirical", 0.0)


def _normalise(w):
    w = np.asarray(w, dtype=float)
    w = w / math.fsum(w)
    # push the rounding remainder into the largest weight
    k = int(np.argmax(w))
    w[k] += 1.0 - math.fsum(w)
    return w


def empirical_measure(segment: OrbitSegment) -> DiscreteMeasure:
    """Trapezoid time weights over the samples of ``segment``."""
    dt = np.diff(segment.times)
    span = float(segment.times[-1] - segment.times[0])
    if span <= 0:
        raise ValueError("segment has zero duration")
    w = np.zeros(len(segment.times))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return DiscreteMeasure(segment.states, _normalise(w), "empirical", span)


def periodic_measure(orbit) -> DiscreteMeasure:
    """Time-uniform measure on a closed loop.

    The last loop sample repeats the first, so it is dropped and each point
    carries half of each adjacent interval (cyclic trapezoid).
    """
    t = orbit.loop.times
    x = orbit.loop.states[:-1]
    dt = np.diff(t)
    w = 0.5 * (dt + np.roll(dt, 1))
    return DiscreteMeasure(x, _normalise(w), "periodic", float(orbit.period))


# ------------------------------------------------------------------ basis

def _multi_indices(d, n_max):
    out = [(0,) * d]
    deg = 1
    while len(out) < n_max:
        level = [k for k in itertools.product(range(deg + 1), repeat=d) if sum(k) == deg]
        out.extend(sorted(level, reverse=True))
        deg += 1
    return out[:n_max]


@dataclass(frozen=True, eq=False)
class TestBasis:
    """f_i(x) = prod_j cos(pi k_j (x_j - a_j) / (b_j - a_j)) on the box [a, b].

    Ordered by total degree, ties by descending lexicographic k, so in 3-D the
    first entries are 1, then k = (1,0,0), (0,1,0), (0,0,1), (2,0,0), (1,1,0), ...
    Every sup norm over the box is 1.
    """

    __test__ = False

    box: np.ndarray
    ks: np.ndarray
    sup_norms: np.ndarray

    @property
    def count_available(self):
        return len(self.ks)

    @property
    def dim(self):
        return self.box.shape[0]

    def inside(self, points):
        p = np.atleast_2d(points)
        return np.all((p >= self.box[:, 0]) & (p <= self.box[:, 1]), axis=1)

    def evaluate(self, points, n=None):
        """Values of f_1..f_n at ``points``, shape (len(points), n)."""
        n = self.count_available if n is None else n
        p = np.atleast_2d(np.asarray(points, dtype=float))
        u = (p - self.box[:, 0]) / (self.box[:, 1] - self.box[:, 0])
        ks = self.ks[:n]
        vals = np.ones((len(p), n))
        for j in range(self.dim):
            vals *= np.cos(np.pi * u[:, j:j + 1] * ks[:, j][None, :])
        return vals

    def __call__(self, i, points):
        """f_i for 1-based i."""
        return self.evaluate(points, i)[:, i - 1]


def default_basis(box, n_max=64, points=None) -> TestBasis:
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 1] <= box[:, 0]):
        raise ValueError("box must be a list of (low, high) pairs with low < high")
    b = TestBasis(box, np.array(_multi_indices(box.shape[0], n_max), dtype=float),
                  np.ones(n_max))
    if points is not None and not np.all(b.inside(points)):
        raise BoxTooSmall("orbit samples lie outside the basis box")
    return b


def _fsum_cols(w, vals):
    return np.array([math.fsum(w * vals[:, i]) for i in range(vals.shape[1])])


def integrals(mu: DiscreteMeasure, basis: TestBasis, n):
    if not np.all(basis.inside(mu.points)):
        raise OutOfBox("measure support leaves the basis box")
    return _fsum_cols(mu.weights, basis.evaluate(mu.points, n))


def integrate_measure(f, mu: DiscreteMeasure, basis: TestBasis = None) -> float:
    """Integral of a basis element (1-based index) or of a vectorised callable."""
    if callable(f):
        return math.fsum(mu.weights * np.asarray(f(mu.points), dtype=float))
    if basis is None:
        raise ValueError("a basis is needed to integrate by index")
    return float(integrals(mu, basis, int(f))[int(f) - 1])


@dataclass(frozen=True)
class DistanceReport:
    n: int
    value: float
    tail_bound: float
    per_i_terms: tuple

    def to_json(self):
        return {"n": self.n, "value": self.value, "tail_bound": self.tail_bound,
                "per_i_terms": list(self.per_i_terms)}


def dm_distance(mu, nu, basis: TestBasis, n) -> DistanceReport:
    """Truncated sum_{i<=n} |int f_i dmu - int f_i dnu| / (2^i |f_i|), plus the tail 2^-(n-1)."""
    if n > basis.count_available:
        raise ValueError(f"n = {n} exceeds the {basis.count_available} available functions")
    diff = np.abs(integrals(mu, basis, n) - integrals(nu, basis, n))
    terms = diff / (2.0 ** np.arange(1, n + 1) * basis.sup_norms[:n])
    return DistanceReport(int(n), math.fsum(terms), 2.0 ** (-(n - 1)), tuple(terms.tolist()))


def tail_n(epsilon):
    """Smallest n with 2^-(n-1) < epsilon / 2."""
    return int(math.floor(math.log2(2.0 / epsilon))) + 2


# -------------------------------------------------------------- Birkhoff

@dataclass(frozen=True)
class BirkhoffReport:
    deviations: np.ndarray
    threshold: float
    T1: float
    prefix_times: np.ndarray = field(repr=False)
    max_dev: np.ndarray = field(repr=False)

    def to_json(self):
        return {"deviations": self.deviations, "threshold": self.threshold, "T1": self.T1}


def birkhoff_check(segment: OrbitSegment, mu_ref: DiscreteMeasure, basis: TestBasis, n,
                   epsilon, gamma=None):
    """Running time averages of f_1..f_n against their mu_ref integrals.

    The threshold is (epsilon/4n) * min_i 2^i |f_i| (or ``gamma`` if given).
    T1 is the smallest prefix length after which every deviation stays below
    it, inf if never.
    """
    ref = integrals(mu_ref, basis, n)
    vals = basis.evaluate(segment.states, n)
    dt = np.diff(segment.times)
    inc = 0.5 * (vals[1:] + vals[:-1]) * dt[:, None]
    run = np.cumsum(inc, axis=0)
    tp = segment.times[1:] - segment.times[0]
    dev = np.abs(run / tp[:, None] - ref)
    mx = dev.max(axis=1)
    thr = gamma if gamma is not None else (epsilon / (4 * n)) * float(
        np.min(2.0 ** np.arange(1, n + 1) * basis.sup_norms[:n]))
    bad = np.flatnonzero(mx >= thr)
    if len(bad) == 0:
        T1 = float(tp[0])
    elif bad[-1] == len(mx) - 1:
        T1 = math.inf
    else:
        T1 = float(tp[bad[-1] + 1])
    return BirkhoffReport(dev[-1], float(thr), T1, tp, mx)


def continuity_modulus(basis: TestBasis, n, delta):
    """Upper bound on |f_i(x) - f_i(y)| over |x - y| <= delta, i <= n (Lipschitz bound)."""
    ks = basis.ks[:n]
    L = np.pi * np.sqrt(np.sum((ks / (basis.box[:, 1] - basis.box[:, 0])) ** 2, axis=1))
    return float(np.max(L) * delta)


def gamma_xi(basis: TestBasis, n, epsilon):
    """gamma the estimate chain needs and the distance xi keeping each f_i within it."""
    gamma = epsilon / (4 * n) * 2.0
    ks = basis.ks[:n]
    L = float(np.max(np.pi * np.sqrt(np.sum((ks / (basis.box[:, 1] - basis.box[:, 0])) ** 2,
                                            axis=1))))
    xi = gamma / L if L > 0 else math.inf
    return gamma, xi
