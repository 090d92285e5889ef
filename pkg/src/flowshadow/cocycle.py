"""Normal frames and the (scaled) linear Poincare cocycle as finite matrices."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateProjection, NearSingularity, ZeroPush
from .flow import ALPHA_MIN, OrbitSegment, TangentPropagation, tangent_integrate
from .kernels._pykernels import frame_from_scratch
from .systems import FlowSystem


@dataclass(frozen=True, eq=False)
class NormalFrame:
    """Orthonormal basis (rows of ``basis``) of the plane normal to X at ``base_point``."""

    base_point: np.ndarray
    flow_dir: np.ndarray
    basis: np.ndarray
    rebuilt: bool = False

    def matrix(self):
        """[flow_dir | basis] as a d x d matrix with orthonormal columns."""
        return np.column_stack((self.flow_dir, self.basis.T))


@dataclass(frozen=True, eq=False)
class SphereVectorPair:
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if abs(np.linalg.norm(u) - 1.0) > 1e-12:
            raise ValueError("u must be a unit vector")
        if abs(np.dot(u, v)) > 1e-12 * max(np.linalg.norm(v), 1e-300):
            raise ValueError("v must be orthogonal to u")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)


def _unit_field(system, x, alpha_min):
    f = system.eval(np.asarray(x, dtype=float))
    s = float(np.linalg.norm(f))
    if s < alpha_min:
        raise NearSingularity(f"|X(x)| = {s:.3g} below the speed floor {alpha_min:g}")
    return f / s


def normal_frame(system: FlowSystem, x, alpha_min=ALPHA_MIN) -> NormalFrame:
    """Gram-Schmidt on the standard basis minus the axis most aligned with X(x)."""
    x = np.asarray(x, dtype=float)
    u = _unit_field(system, x, alpha_min)
    return NormalFrame(x, u, frame_from_scratch(u))


def transport_frame(prev: NormalFrame, system: FlowSystem, next_point, alpha_min=ALPHA_MIN,
                    rebuild=False) -> NormalFrame:
    """Project ``prev`` onto the normal plane at ``next_point`` and re-orthonormalise.

    A projected vector shorter than 1e-8 raises DegenerateProjection, or with
    ``rebuild`` yields a fresh frame flagged as rebuilt.
    """
    x = np.asarray(next_point, dtype=float)
    u = _unit_field(system, x, alpha_min)
    bases, flags = kernels.transport_frames(np.stack((prev.flow_dir, u)), prev.basis)
    if flags[1]:
        if not rebuild:
            raise DegenerateProjection("previous frame collapses onto the new flow direction")
        return NormalFrame(x, u, bases[1], True)
    return NormalFrame(x, u, bases[1])


def linear_poincare_step(propagation: TangentPropagation, i, frames) -> np.ndarray:
    """psi over interval i expressed from frames[0] to frames[1].

    Pushing the basis by Phi and reading coordinates in the next frame removes
    the flow component at the endpoint, since that basis is normal to X there.
    """
    f0, f1 = frames
    Phi = propagation.matrices[i]
    return f1.basis @ Phi @ f0.basis.T


def scaled_step(unscaled, speed_start, speed_end, alpha_min=ALPHA_MIN):
    if min(speed_start, speed_end) < alpha_min:
        raise NearSingularity("scaling needs both speeds above the floor")
    return np.asarray(unscaled) * (speed_start / speed_end)


@dataclass(frozen=True, eq=False)
class CocycleChain:
    """Step matrices A_i from frame i to frame i+1 along a segment."""

    times: np.ndarray
    dts: np.ndarray
    points: np.ndarray
    speeds: np.ndarray
    flow_dirs: np.ndarray
    bases: np.ndarray
    rebuilt: np.ndarray
    steps: np.ndarray
    scaled: bool
    log_norms: np.ndarray
    log_mininorms: np.ndarray

    def __post_init__(self):
        for name in ("times", "dts", "points", "speeds", "flow_dirs", "bases", "rebuilt",
                     "steps", "log_norms", "log_mininorms"):
            a = np.array(getattr(self, name))
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self):
        return len(self.steps)

    @property
    def n(self):
        return self.bases.shape[1]

    @property
    def window(self):
        return float(np.sum(self.dts))

    def frame(self, i):
        return NormalFrame(self.points[i], self.flow_dirs[i], self.bases[i], bool(self.rebuilt[i]))

    def product(self, i=0, j=None):
        """A_{j-1} ... A_i."""
        j = len(self.steps) if j is None else j
        P = np.eye(self.n)
        for A in self.steps[i:j]:
            P = A @ P
        return P

    def with_steps(self, steps, scaled):
        return CocycleChain(self.times, self.dts, self.points, self.speeds, self.flow_dirs,
                            self.bases, self.rebuilt, steps, scaled, *norm_profile(steps))


def norm_profile(steps):
    """Per-step log operator norm and log mininorm."""
    steps = np.asarray(steps)
    if len(steps) == 0:
        return np.empty(0), np.empty(0)
    sv = np.linalg.svd(steps, compute_uv=False)
    with np.errstate(divide="ignore"):
        return np.log(sv[:, 0]), np.log(sv[:, -1])


def build_chain(system: FlowSystem, segment: OrbitSegment, scaled=True,
                propagation: TangentPropagation = None, alpha_min=ALPHA_MIN) -> CocycleChain:
    """Frames by transport along ``segment`` and the psi (or psi*) step matrices."""
    low = np.flatnonzero(segment.speeds < alpha_min)
    if len(low):
        err = NearSingularity(f"{len(low)} samples below the speed floor, first at index {low[0]}")
        err.indices = low
        raise err
    if propagation is None:
        propagation = tangent_integrate(system, segment)
    U = system.field_many(segment.states) / segment.speeds[:, None]
    B0 = frame_from_scratch(U[0])
    bases, rebuilt = kernels.transport_frames(U, B0)
    steps = bases[1:] @ propagation.matrices @ np.transpose(bases[:-1], (0, 2, 1))
    if scaled:
        steps = steps * (segment.speeds[:-1] / segment.speeds[1:])[:, None, None]
    return CocycleChain(segment.times, segment.dts, segment.states, segment.speeds, U, bases,
                        rebuilt.astype(bool), steps, bool(scaled), *norm_profile(steps))


def rescale(chain: CocycleChain, scaled: bool) -> CocycleChain:
    """The same chain with psi <-> psi* switched by the speed ratios."""
    if chain.scaled == scaled:
        return chain
    r = chain.speeds[:-1] / chain.speeds[1:]
    f = r if scaled else 1.0 / r
    return chain.with_steps(chain.steps * f[:, None, None], scaled)


def extended_flow(Phi, pair: SphereVectorPair) -> SphereVectorPair:
    """Theta for a tangent matrix Phi: (Phi u normalised, Phi v minus its Phi u component)."""
    pu = Phi @ pair.u
    nu = float(np.linalg.norm(pu))
    if nu < 1e-14:
        raise ZeroPush("|Phi u| vanished")
    pv = Phi @ pair.v
    w = pv - (np.dot(pu, pv) / (nu * nu)) * pu
    u1 = pu / nu
    # one extra pass keeps <u', v'> at rounding level
    w = w - np.dot(u1, w) * u1
    return SphereVectorPair(u1, w)


def extended_flow_step(propagation: TangentPropagation, i, pair: SphereVectorPair):
    return extended_flow(propagation.matrices[i], pair)


def chain_from_steps(system: FlowSystem, segment: OrbitSegment, steps, scaled) -> CocycleChain:
    """Rebuild a chain around cached step matrices; frames are recomputed by transport."""
    U = system.field_many(segment.states) / segment.speeds[:, None]
    bases, rebuilt = kernels.transport_frames(U, frame_from_scratch(U[0]))
    steps = np.asarray(steps, dtype=float)
    return CocycleChain(segment.times, segment.dts, segment.states, segment.speeds, U, bases,
                        rebuilt.astype(bool), steps, bool(scaled), *norm_profile(steps))
