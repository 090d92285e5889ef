"""Lyapunov spectra, stable/unstable splittings and domination certificates."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .cocycle import CocycleChain
from .errors import AllStable, AllUnstable, IllConditioned, IndexMismatch, NoGap
from .flow import ALPHA_MIN, OrbitSegment, TangentPropagation, tangent_integrate

GAP_MIN = 0.05


@dataclass(frozen=True)
class SpectrumEstimate:
    exponents: np.ndarray
    which_flow: str
    window: float
    drift: np.ndarray
    history_t: np.ndarray = field(default=None, repr=False)
    history: np.ndarray = field(default=None, repr=False)

    @property
    def index(self):
        return int(np.sum(self.exponents < 0))

    @property
    def gap(self):
        return float(np.min(np.abs(self.exponents)))

    def to_json(self):
        return {"flow": self.which_flow, "window": self.window,
                "exponents": self.exponents, "drift": self.drift}


def _spectrum(steps, dts, which, min_steps, Q0=None, burn=0.0):
    steps = np.asarray(steps, dtype=float)
    m, n, _ = steps.shape
    if m < min_steps:
        raise ValueError(f"need at least {min_steps} steps, got {m}")
    cumlogs, _, mn = kernels.qr_accumulate(steps, np.eye(n) if Q0 is None else Q0)
    if not mn >= 1e-300:
        raise IllConditioned(f"R diagonal {mn:.3g} underflowed")
    t = np.cumsum(dts)
    window = float(t[-1])
    # averages start after the burn-in, once the frame has aligned
    b = int(burn * m)
    if b:
        cumlogs = cumlogs[b:] - cumlogs[b - 1]
        t = t[b:] - t[b - 1]
        m -= b
    run = cumlogs / t[:, None]
    lam = run[-1]
    order = np.argsort(lam, kind="stable")
    tail = run[int(0.9 * m):, order]
    drift = tail.max(axis=0) - tail.min(axis=0)
    pick = np.unique(np.linspace(0, m - 1, min(m, 400)).astype(int))
    return SpectrumEstimate(lam[order], which, window, drift, t[pick], run[pick][:, order])


def generic_frame(n, seed=0):
    """Fixed orthonormal frame in general position (no column along a coordinate axis)."""
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(n, n)))
    return Q


def qr_exponents(chain: CocycleChain, min_steps=100) -> SpectrumEstimate:
    """Benettin QR exponents of the chain steps per unit time, sorted ascending."""
    which = "scaled_poincare" if chain.scaled else "poincare"
    return _spectrum(chain.steps, chain.dts, which, min_steps)


def tangent_exponents(system, segment: OrbitSegment,
                      propagation: Optional[TangentPropagation] = None,
                      min_steps=100, burn=0.1) -> SpectrumEstimate:
    """Benettin exponents of the full tangent flow.

    Starts from a generic frame: on a periodic orbit the coordinate axes can be
    exactly invariant, and a vector started on a contracting one reaches the
    leading direction only through rounding. The first ``burn`` fraction of
    steps aligns the frame and is left out of the averages.
    """
    if propagation is None:
        propagation = tangent_integrate(system, segment)
    return _spectrum(propagation.matrices, segment.dts, "tangent", min_steps,
                     generic_frame(system.dim), burn)


def exponents_of(steps, dts):
    """Plain QR exponents for an arbitrary matrix sequence (no step minimum)."""
    return _spectrum(steps, dts, "matrix", 1).exponents


@dataclass(frozen=True)
class ScaledCheck:
    max_diff: float
    expected: float
    deviation: float
    psi: np.ndarray
    psi_star: np.ndarray


def scaled_equals_unscaled_check(unscaled: CocycleChain, scaled: CocycleChain) -> ScaledCheck:
    """Exponent gap between psi and psi*; telescoping gives |log(s_0/s_m)|/window."""
    a = qr_exponents(unscaled, min_steps=1)
    b = qr_exponents(scaled, min_steps=1)
    diff = float(np.max(np.abs(a.exponents - b.exponents)))
    expected = abs(float(np.log(scaled.speeds[0] / scaled.speeds[-1]))) / scaled.window
    return ScaledCheck(diff, expected, abs(diff - expected), a.exponents, b.exponents)


# ----------------------------------------------------------------- splittings

@dataclass(frozen=True, eq=False)
class SplittingEstimate:
    """Per-sample bases (columns, frame coordinates) of E^s and E^u.

    ``valid`` marks samples where both bases are converged; ``angles`` is the
    smallest principal angle between them.
    """

    index: int
    Es: np.ndarray
    Eu: np.ndarray
    valid: np.ndarray
    exponents: np.ndarray
    gap: float
    angles: np.ndarray
    theta_min: float
    method: str
    domination: Optional[tuple] = None

    def with_domination(self, C, lam):
        return SplittingEstimate(self.index, self.Es, self.Eu, self.valid, self.exponents,
                                 self.gap, self.angles, self.theta_min, self.method, (C, lam))


def principal_angles(A, B):
    """Principal angles between column spans of orthonormal A, B (batched over the first axis)."""
    s = np.linalg.svd(np.swapaxes(A, -1, -2) @ B, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def _min_angle(Es, Eu):
    # smallest angle between the two subspaces
    return principal_angles(Es, Eu).min(axis=-1)


def _check_index(exponents, index):
    n = len(exponents)
    if index >= n:
        raise AllStable("no unstable direction: every normal exponent is negative")
    if index <= 0:
        raise AllUnstable("no stable direction: every normal exponent is positive")
    neg = int(np.sum(exponents < 0))
    if neg != index:
        raise IndexMismatch(f"requested index {index} but {neg} exponents are negative")
    gap = float(np.min(np.abs(exponents)))
    if gap < GAP_MIN:
        raise NoGap(f"smallest |exponent| {gap:.3g} below {GAP_MIN}")
    return gap


def _regular(chain, alpha_min):
    return chain.speeds >= 10 * alpha_min


def oseledec_splitting(chain: CocycleChain, index: int, burn_in=None,
                       exponents=None, alpha_min=ALPHA_MIN) -> SplittingEstimate:
    """E^u from the forward QR frames, E^s from backward iteration of the inverse cocycle.

    Samples closer than ``burn_in`` (time) to either end are marked invalid.
    """
    n = chain.n
    if exponents is None:
        exponents = qr_exponents(chain, min_steps=1).exponents
    gap = _check_index(exponents, index)
    if burn_in is None:
        burn_in = min(20.0 / gap, 0.1 * chain.window)
    _, qhist, _ = kernels.qr_accumulate(chain.steps, np.eye(n), True)
    Eu = qhist[:, :, :n - index]
    Es = kernels.backward_subspace(chain.steps, np.eye(n)[:, n - index:])
    t = np.concatenate(([0.0], np.cumsum(chain.dts)))
    valid = (t >= burn_in) & (t <= t[-1] - burn_in) & _regular(chain, alpha_min)
    angles = _min_angle(Es, Eu)
    theta_min = float(angles[valid].min()) if valid.any() else 0.0
    return SplittingEstimate(index, Es, Eu, valid, np.asarray(exponents), gap, angles,
                             theta_min, "oseledec")


def _window_products(steps, H):
    """P[i] = A_{i+H-1} ... A_i for every admissible i."""
    m, n, _ = steps.shape
    M = m - H + 1
    P = np.broadcast_to(np.eye(n), (M, n, n)).copy()
    for j in range(H):
        P = steps[j:j + M] @ P
        if j % 8 == 7:
            P /= np.linalg.norm(P, axis=(1, 2))[:, None, None]
    return P


def finite_time_splitting(chain: CocycleChain, index: int, horizon=2.0,
                          exponents=None, alpha_min=ALPHA_MIN) -> SplittingEstimate:
    """Splitting from singular vectors of products over a fixed horizon.

    E(i): weakest right singular directions of the forward window product.
    F(i): strongest left singular directions of the product arriving at i.
    """
    n = chain.n
    if exponents is None:
        exponents = qr_exponents(chain, min_steps=1).exponents
    gap = _check_index(exponents, index)
    m = len(chain)
    dt = float(np.median(chain.dts))
    H = max(1, int(round(horizon / dt)))
    if H > m:
        raise ValueError("horizon longer than the chain")
    P = _window_products(chain.steps, H)
    U, _, Vt = np.linalg.svd(P)
    Es = np.zeros((m + 1, n, index))
    Eu = np.zeros((m + 1, n, n - index))
    Es[:m - H + 1] = np.swapaxes(Vt, 1, 2)[:, :, n - index:]
    Eu[H:] = U[:, :, :n - index]
    valid = np.zeros(m + 1, dtype=bool)
    valid[H:m - H + 1] = True
    valid &= _regular(chain, alpha_min)
    angles = np.full(m + 1, np.nan)
    angles[valid] = _min_angle(Es[valid], Eu[valid])
    theta_min = float(angles[valid].min()) if valid.any() else 0.0
    return SplittingEstimate(index, Es, Eu, valid, np.asarray(exponents), gap, angles,
                             theta_min, "finite_time")


def invariance_defect(chain: CocycleChain, split: SplittingEstimate):
    """Max principal angle between A_i E(i) and E(i+1), for E^s and E^u, over valid pairs."""
    ok = split.valid[:-1] & split.valid[1:]
    out = []
    for E in (split.Es, split.Eu):
        img = chain.steps[ok] @ E[:-1][ok]
        Q, _ = np.linalg.qr(img)
        ang = principal_angles(Q, E[1:][ok]).max(axis=-1) if ok.any() else np.zeros(1)
        out.append(float(ang.max()))
    return tuple(out)


def splitting_agreement(a: SplittingEstimate, b: SplittingEstimate):
    """Per-sample largest principal angle between the two E^s and the two E^u bases.

    Returns ``(angles, mask)`` over samples valid in both.
    """
    mask = a.valid & b.valid
    ang_s = principal_angles(a.Es[mask], b.Es[mask]).max(axis=-1)
    ang_u = principal_angles(a.Eu[mask], b.Eu[mask]).max(axis=-1)
    return np.maximum(ang_s, ang_u), mask


# -------------------------------------------------------------- domination

@dataclass(frozen=True)
class DominationCertificate:
    C: float
    lam: float
    residual: float
    passed: bool
    lengths: np.ndarray
    envelope: np.ndarray
    n_windows: int


def restricted_steps(chain: CocycleChain, split: SplittingEstimate):
    """A_i restricted to E(i) -> E(i+1) and F(i) -> F(i+1) in the split's bases.

    Pushing E vectors through long products lets rounding drift into F; the
    restrictions keep every product inside its own bundle.
    """
    ME = np.swapaxes(split.Es[1:], 1, 2) @ chain.steps @ split.Es[:-1]
    MF = np.swapaxes(split.Eu[1:], 1, 2) @ chain.steps @ split.Eu[:-1]
    return ME, MF


def _restricted_logs(M, which):
    if M.shape[1] == 1:
        with np.errstate(divide="ignore"):
            return np.log(np.abs(M[:, 0, 0]))
    sv = np.linalg.svd(M, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.log(sv[:, 0] if which == "norm" else sv[:, -1])


def domination_windows(chain: CocycleChain, split: SplittingEstimate, window_cap=50.0,
                       n_starts=2000, n_lengths=200):
    """Envelope over windows of log|psi*|_E| - log m(psi*|_F).

    Returns ``(lengths, envelope, n_windows)``: envelope[j] is the max over
    admissible start samples at window length lengths[j]. A window is
    admissible when every sample in it is valid for the splitting.
    """
    m = len(chain)
    dt = float(np.median(chain.dts))
    max_len = int(min(window_cap / dt, m))
    if max_len < 1:
        raise ValueError("chain shorter than one step")
    ME, MF = restricted_steps(chain, split)
    bad = np.concatenate(([0], np.cumsum(~split.valid)))
    checkpoints = np.unique(np.linspace(1, max_len, n_lengths).round().astype(int))
    one_dim = ME.shape[1] == 1 and MF.shape[1] == 1
    if one_dim:
        # steps touching invalid samples never enter an admissible window; zero them
        ok = split.valid[:-1] & split.valid[1:]
        SA = np.concatenate(([0.0], np.cumsum(np.where(ok, _restricted_logs(ME, "norm"), 0.0))))
        SB = np.concatenate(([0.0], np.cumsum(np.where(ok, _restricted_logs(MF, "min"), 0.0))))
    env, lengths, count = [], [], 0
    for L in checkpoints:
        s = np.arange(m - L + 1)
        s = s[bad[s + L + 1] - bad[s] == 0]
        if len(s) == 0:
            continue
        if one_dim:
            y = (SA[s + L] - SA[s]) - (SB[s + L] - SB[s])
        else:
            s = s[np.unique(np.linspace(0, len(s) - 1, min(n_starts, len(s))).astype(int))]
            y = _product_logs(ME, s, L, "norm") - _product_logs(MF, s, L, "min")
        env.append(float(np.max(y)))
        lengths.append(L * dt)
        count += len(s)
    if not env:
        raise ValueError("no admissible windows")
    return np.asarray(lengths), np.asarray(env), count


def _product_logs(M, starts, L, which):
    # log norm (or mininorm) of M_{s+L-1} ... M_s, renormalised as it grows
    k = M.shape[1]
    P = np.broadcast_to(np.eye(k), (len(starts), k, k)).copy()
    acc = np.zeros(len(starts))
    for j in range(L):
        P = M[starts + j] @ P
        sc = np.linalg.norm(P, axis=(1, 2))
        P /= sc[:, None, None]
        acc += np.log(sc)
    sv = np.linalg.svd(P, compute_uv=False)
    return acc + np.log(sv[:, 0] if which == "norm" else sv[:, -1])


def fit_domination(lengths, envelope):
    """Least-squares g ~ c - lam t; C lifts the line over every point."""
    lengths = np.asarray(lengths, dtype=float)
    g = np.asarray(envelope, dtype=float)
    X = np.column_stack((np.ones_like(lengths), -lengths))
    (c, lam), *_ = np.linalg.lstsq(X, g, rcond=None)
    resid = g - (c - lam * lengths)
    rms = float(np.sqrt(np.mean(resid ** 2)))
    C = max(1.0, float(np.exp(np.max(g + lam * lengths))))
    return C, float(lam), rms


def domination_certificate(split: SplittingEstimate, chain: CocycleChain, window_cap=50.0,
                           lambda_min=0.05, max_residual=0.5, n_starts=2000,
                           n_lengths=200) -> DominationCertificate:
    lengths, env, nw = domination_windows(chain, split, window_cap, n_starts, n_lengths)
    C, lam, rms = fit_domination(lengths, env)
    ok = lam >= lambda_min and rms <= max_residual
    return DominationCertificate(C, lam, rms, bool(ok), lengths, env, nw)


def spectrum_report(est: SpectrumEstimate, split: Optional[SplittingEstimate] = None,
                    cert: Optional[DominationCertificate] = None):
    out = est.to_json()
    out["index"] = est.index
    out["gap"] = est.gap
    out["C"] = cert.C if cert else None
    out["lambda"] = cert.lam if cert else None
    out["pass"] = bool(cert.passed) if cert else None
    if cert is not None:
        out["residual"] = cert.residual
    if split is not None:
        out["theta_min"] = split.theta_min
    return out
