"""Contracting points, quasi-hyperbolic strings and Pesin-block membership.

Everything works on a LogProfile: per-step log norms on E (``a``) and log
mininorms on F (``b``) of the scaled cocycle, with the step durations.
Partitions are always the profile's own sample grid.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .cocycle import CocycleChain
from .errors import GapTooLarge, NotHyperbolic
from .spectrum import GAP_MIN, SplittingEstimate

SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class LogProfile:
    dts: np.ndarray
    a: np.ndarray
    b: np.ndarray
    t0: float = 0.0
    offset: int = 0

    def __post_init__(self):
        for name in ("dts", "a", "b"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (len(self.dts) == len(self.a) == len(self.b)):
            raise ValueError("dts, a and b must have equal length")

    def __len__(self):
        return len(self.dts)

    @property
    def times(self):
        """Sample times relative to the first sample (length k+1)."""
        return np.concatenate(([0.0], np.cumsum(self.dts)))

    def reversed(self):
        """Profile of the reversed flow: E and F swap and every log flips sign."""
        return LogProfile(self.dts[::-1], -self.b[::-1], -self.a[::-1])

    def slice(self, i, j):
        return LogProfile(self.dts[i:j], self.a[i:j], self.b[i:j],
                          self.t0 + float(np.sum(self.dts[:i])), self.offset + i)


def log_profile(chain: CocycleChain, split: SplittingEstimate, start=0, stop=None) -> LogProfile:
    """a_i = log|A_i on E^s(i)|, b_i = log m(A_i on E^u(i)) for steps start..stop-1."""
    stop = len(chain) if stop is None else stop
    A = chain.steps[start:stop]
    sa = np.linalg.svd(A @ split.Es[start:stop], compute_uv=False)
    sb = np.linalg.svd(A @ split.Eu[start:stop], compute_uv=False)
    return LogProfile(chain.dts[start:stop], np.log(sa[:, 0]), np.log(sb[:, -1]),
                      float(chain.times[start]), start)


def valid_run(split: SplittingEstimate):
    """Longest run of consecutive valid samples as a step range (start, stop)."""
    v = np.concatenate(([False], split.valid, [False]))
    edges = np.flatnonzero(v[1:] != v[:-1])
    runs = edges.reshape(-1, 2)
    if len(runs) == 0:
        return 0, 0
    best = runs[np.argmax(runs[:, 1] - runs[:, 0])]
    return int(best[0]), int(best[1]) - 1


# -------------------------------------------------------------- contracting

def contracting_scan(profile: LogProfile, C, eta, T):
    """Start indices whose forward orbit is (C, eta, T, E)-contracting up to the profile end.

    From s, a grid point n is admissible when sum_{s<=i<n} a_i <= log C - eta (t_n - t_s).
    A partition with cells <= T through admissible points exists iff the end is
    admissible and no two consecutive admissible points are more than T apart;
    taking the furthest admissible point each time finds it when it exists.
    O(k^2); meant for moderate profiles.
    """
    if C < 1:
        raise ValueError("C must be >= 1")
    k = len(profile)
    t = profile.times
    q = np.concatenate(([0.0], np.cumsum(profile.a))) + eta * t
    logC = math.log(C)
    out = []
    for s in range(k):
        adm = np.flatnonzero(q[s:] <= q[s] + logC + SLACK) + s
        if adm[-1] != k:
            continue
        if np.all(np.diff(t[adm]) <= T + 1e-12):
            out.append(s)
    return out


def expanding_scan(profile: LogProfile, C, eta, T):
    """Contracting starts of the reversed profile (the field -X).

    Indices are in reversed numbering: index r is the original sample k - r.
    """
    return contracting_scan(profile.reversed(), C, eta, T)


# ------------------------------------------------------------ quasi-hyperbolic

@dataclass(frozen=True)
class QuasiHyperbolicSegment:
    start_index: int
    end_index: int
    eta: float
    T: float
    partition: np.ndarray = field(repr=False)
    margins: tuple
    start_t: float = 0.0
    end_t: float = 0.0

    @property
    def duration(self):
        return self.end_t - self.start_t

    def to_json(self, member=None):
        return {"start_t": self.start_t, "end_t": self.end_t, "eta": self.eta, "T": self.T,
                "margins": list(self.margins), "member_of_block": member,
                "start_index": self.start_index, "end_index": self.end_index}


def _margins(profile, s, e, eta):
    a, b, dt = profile.a[s:e], profile.b[s:e], profile.dts[s:e]
    span = float(np.sum(dt))
    contraction = -eta * span - float(np.sum(a))
    expansion = float(np.sum(b)) - eta * span
    domination = float(np.min(-eta * dt - (a - b)))
    return contraction, expansion, domination


def pliss_select(profile: LogProfile, eta, T, slack=SLACK):
    """Maximal grid ranges [s, e] that are (eta, T)-quasi-hyperbolic.

    Valid ranges satisfy, for every n in [s, e), the contraction bound on
    a-sums from s, the expansion bound on b-sums up to e and the per-step
    domination a_n - b_n <= -eta dt_n, each up to ``slack``, and last longer
    than T. A range is emitted unless a valid range strictly contains it.
    """
    if eta <= 0 or T <= 0:
        raise ValueError("eta and T must be positive")
    if len(profile) and float(np.max(profile.dts)) > T + 1e-12:
        raise GapTooLarge(f"a step of {np.max(profile.dts):.3g} exceeds T = {T:g}")
    U, L = kernels.qh_bounds(profile.a, profile.b, profile.dts, eta, slack)
    t = profile.times
    starts, ends = kernels.maximal_ranges(U, L, t, T)
    segs = []
    for s, e in zip(starts.tolist(), ends.tolist()):
        segs.append(QuasiHyperbolicSegment(
            s + profile.offset, e + profile.offset, float(eta), float(T),
            profile.t0 + t[s:e + 1], _margins(profile, s, e, eta),
            profile.t0 + float(t[s]), profile.t0 + float(t[e])))
    return segs


@dataclass(frozen=True, eq=False)
class QHIndex:
    """Range bounds from one Pliss pass; ``valid`` answers any [s, e] in O(1).

    Indices are local to the profile; ``offset`` maps them to chain samples.
    """

    U: np.ndarray
    L: np.ndarray
    t: np.ndarray
    T: float
    eta: float
    offset: int

    def valid(self, s, e):
        s = np.asarray(s)
        e = np.asarray(e)
        k = len(self.U) - 1
        inside = (s >= 0) & (e <= k) & (s < e)
        sc = np.clip(s, 0, k)
        ec = np.clip(e, 0, k)
        return inside & (ec <= self.U[sc]) & (self.L[ec] <= sc) & (self.t[ec] - self.t[sc] > self.T)


def qh_index(profile: LogProfile, eta, T, slack=SLACK) -> QHIndex:
    U, L = kernels.qh_bounds(profile.a, profile.b, profile.dts, eta, slack)
    return QHIndex(U, L, profile.times, float(T), float(eta), profile.offset)


def check_segment(profile: LogProfile, s, e, eta, slack=SLACK):
    """Direct O(k) test of the three quasi-hyperbolic conditions on [s, e] (local indices)."""
    a, b, dt = profile.a[s:e], profile.b[s:e], profile.dts[s:e]
    rel = np.concatenate(([0.0], np.cumsum(dt)))
    pa = np.concatenate(([0.0], np.cumsum(a)))
    pb = np.concatenate(([0.0], np.cumsum(b)))
    n = np.arange(e - s)
    ok_c = np.all(pa[n] <= -eta * rel[n] + slack)
    ok_e = np.all(pb[-1] - pb[n] >= eta * (rel[-1] - rel[n]) - slack)
    ok_d = np.all(a - b <= -eta * dt + slack)
    return bool(ok_c and ok_e and ok_d)


# ------------------------------------------------------------------ Pesin

@dataclass(frozen=True)
class PesinBlockParams:
    """Block step T, per-block rate eta and constant C; alpha = 1/C."""

    T: float
    eta: float
    C: float

    def __post_init__(self):
        if not (self.T > 0 and self.eta > 0 and self.C >= 1):
            raise ValueError("need T > 0, eta > 0, C >= 1")

    @property
    def alpha(self):
        return 1.0 / self.C

    @property
    def rate(self):
        return self.eta / self.T


def _block_stride(profile, T):
    dt = profile.dts
    if len(dt) == 0:
        raise ValueError("empty profile")
    h = float(dt[0])
    if np.max(np.abs(dt - h)) > 1e-9 * h:
        raise ValueError("membership needs a uniform profile grid")
    K = int(round(T / h))
    if K < 1 or abs(K * h - T) > 1e-6 * T:
        raise ValueError(f"block time {T} is not a multiple of the grid step {h}")
    return K


def _suffix_by_residue(vals, K, op):
    # out[j] = op over vals[j+K], vals[j+2K], ...; identity where nothing follows
    ident = -np.inf if op is np.maximum else np.inf
    out = np.empty(len(vals))
    for r in range(min(K, len(vals))):
        v = vals[r::K]
        acc = op.accumulate(v[::-1])[::-1]
        out[r::K] = np.concatenate((acc[1:], [ident]))
    return out


def membership_mask(profile: LogProfile, params: PesinBlockParams, sing_dist):
    """Block membership of every profile sample (length k+1).

    Block products use the step sums inside each block, an upper bound for
    block norms and a lower bound for block mininorms, so the test is
    conservative beyond 1-D bundles. Every J with a complete block in the
    profile is checked; samples with no complete block are non-members.
    """
    K = _block_stride(profile, params.T)
    k = len(profile)
    j = np.arange(k + 1)
    Sa = np.concatenate(([0.0], np.cumsum(profile.a)))
    Sb = np.concatenate(([0.0], np.cumsum(profile.b)))
    g = Sa + j / K * params.eta
    h = Sb - j / K * params.eta
    logC = math.log(params.C)
    ga = _suffix_by_residue(g, K, np.maximum)
    hb = _suffix_by_residue(h, K, np.minimum)
    ok = (ga <= g + logC + SLACK) & (hb >= h - logC - SLACK)
    ok &= j + K <= k
    ok &= np.asarray(sing_dist) >= params.alpha
    return ok


def pesin_membership(profile: LogProfile, params: PesinBlockParams, sing_dist):
    """Membership of the profile's first sample."""
    return bool(membership_mask(profile, params, np.full(len(profile) + 1, sing_dist))[0])


@dataclass(frozen=True)
class BlockConstants:
    chi: float
    epsilon: float
    T0: float
    eta0: float
    C: float
    j0: int
    T: float
    eta: float
    fraction: Optional[float] = None

    def params(self):
        return PesinBlockParams(self.T, self.eta, self.C)

    def to_json(self):
        return {
            "chi": self.chi, "epsilon": self.epsilon, "T0": self.T0, "eta0": self.eta0,
            "C": self.C, "j0": self.j0, "T": self.T, "eta": self.eta, "fraction": self.fraction,
            "formulas": {
                "chi": "min(|largest negative exponent|, smallest positive exponent)",
                "eta0": "(chi - epsilon/4) * T0",
                "j0": "smallest integer with C < exp(j0 * T0 * epsilon / 4)",
                "T": "j0 * T0",
                "eta": "(chi - epsilon/2) * j0 * T0",
            },
        }


def block_constants(exponents, epsilon=None, T0=1.0, C=None, profile=None, sing_dist=None,
                    target=0.5, C_max=2.0 ** 400) -> BlockConstants:
    """Block constants from a hyperbolic spectrum.

    With ``profile`` and no ``C``, C is the smallest power of two whose
    membership fraction at (T0, eta0) reaches ``target``.
    """
    ex = np.asarray(exponents, dtype=float)
    if len(ex) == 0 or float(np.min(np.abs(ex))) < GAP_MIN:
        raise NotHyperbolic("spectrum has an exponent within the gap threshold of zero")
    neg, pos = ex[ex < 0], ex[ex > 0]
    sides = []
    if len(neg):
        sides.append(abs(float(neg.max())))
    if len(pos):
        sides.append(float(pos.min()))
    chi = min(sides)
    epsilon = chi / 8 if epsilon is None else float(epsilon)
    if not 0 < epsilon < chi / 2:
        raise ValueError("epsilon must lie in (0, chi/2)")
    eta0 = (chi - epsilon / 4) * T0
    fraction = None
    if C is None:
        if profile is None:
            C = 1.0
        else:
            if sing_dist is None:
                sing_dist = np.full(len(profile) + 1, np.inf)
            C = 1.0
            while True:
                fraction = float(np.mean(membership_mask(profile, PesinBlockParams(T0, eta0, C),
                                                         sing_dist)))
                if fraction >= target or C >= C_max:
                    break
                C *= 2.0
    C = float(C)
    j0 = max(1, math.floor(4 * math.log(C) / (T0 * epsilon)) + 1)
    return BlockConstants(chi, epsilon, T0, eta0, C, j0, j0 * T0, (chi - epsilon / 2) * j0 * T0,
                          fraction)


def membership_fraction(profile, params, sing_dist):
    return float(np.mean(membership_mask(profile, params, sing_dist)))
