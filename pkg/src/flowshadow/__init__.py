"""Periodic measures approximating hyperbolic measures of flows.

Orbits and tangent flows, the (scaled) linear Poincare cocycle, Lyapunov
spectra and dominated splittings, Pliss strings and Pesin blocks, closing by
multiple shooting, and weak* distances between invariant measures.
"""

from .cocycle import CocycleChain, NormalFrame, build_chain, normal_frame, transport_frame
from .config import PipelineConfig, load_config
from .flow import OrbitSegment, flow_map, integrate, tangent_integrate
from .kernels import backend
from .measures import (DiscreteMeasure, TestBasis, default_basis, dm_distance,
                       empirical_measure, periodic_measure)
from .shadow import PeriodicOrbit, close_up, find_close_returns, verify_shadowing
from .spectrum import domination_certificate, oseledec_splitting, qr_exponents
from .strings import PesinBlockParams, block_constants, pliss_select
from .systems import FlowSystem, get_system, hopf, lorenz

__all__ = [
    "CocycleChain", "NormalFrame", "build_chain", "normal_frame", "transport_frame",
    "PipelineConfig", "load_config",
    "OrbitSegment", "flow_map", "integrate", "tangent_integrate",
    "backend",
    "DiscreteMeasure", "TestBasis", "default_basis", "dm_distance",
    "empirical_measure", "periodic_measure",
    "PeriodicOrbit", "close_up", "find_close_returns", "verify_shadowing",
    "domination_certificate", "oseledec_splitting", "qr_exponents",
    "PesinBlockParams", "block_constants", "pliss_select",
    "FlowSystem", "get_system", "hopf", "lorenz",
]

__version__ = "0.1.0"
