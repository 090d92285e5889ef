"""Hot loops, compiled when available.

``BACKEND`` is ``"compiled"`` when the Cython extension imports and
``FLOWSHADOW_BACKEND`` is not set to ``"python"``; otherwise every call goes
to the numpy twin in ``_pykernels``.  The integrators fall back to the
Python path for any system without a built-in field code.
"""

import os

import numpy as np

from . import _pykernels as py

try:
    from . import _ckernels as _c
except ImportError:  # extension not built
    _c = None

BACKEND = "compiled" if _c is not None and os.environ.get("FLOWSHADOW_BACKEND") != "python" \
    else "python"


def _impl():
    return _c if BACKEND == "compiled" else py


def backend():
    return BACKEND


def use_backend(name):
    """Switch backend at runtime (``"compiled"`` or ``"python"``); returns the previous one."""
    global BACKEND
    if name not in ("compiled", "python"):
        raise ValueError(name)
    if name == "compiled" and _c is None:
        raise ImportError("compiled kernels are not built")
    prev, BACKEND = BACKEND, name
    return prev


def _arr(a, dtype=float):
    # writable C-contiguous copy; typed memoryviews reject read-only buffers
    return np.array(a, dtype=dtype, order="C")


def _compiled_field(system):
    return BACKEND == "compiled" and getattr(system, "kernel", None) is not None


def flow_samples(system, x0, t_out, tol, escape, keep_steps=False):
    x0 = _arr(x0)
    t_out = _arr(t_out)
    if _compiled_field(system):
        code, params = system.kernel
        return _c.flow_samples(code, _arr(params), x0, t_out,
                               float(tol), float(escape), bool(keep_steps))
    return py.flow_samples(system.eval, x0, t_out, tol, escape, keep_steps)


def flow_tangent(system, starts, durations, tol, escape):
    starts = _arr(starts)
    durations = _arr(durations)
    if _compiled_field(system):
        code, params = system.kernel
        return _c.flow_tangent(code, _arr(params), starts,
                               durations, float(tol), float(escape))
    return py.flow_tangent(system.eval, system.jac, starts, durations, tol, escape)


def transport_frames(u, B0, min_norm=1e-8):
    return _impl().transport_frames(_arr(u),
                                    _arr(B0), min_norm)


def qr_accumulate(steps, Q0, keep_q=False):
    return _impl().qr_accumulate(_arr(steps),
                                 _arr(Q0), keep_q)


def backward_subspace(steps, V_end):
    return _impl().backward_subspace(_arr(steps),
                                     _arr(V_end))


def qh_bounds(a, b, dt, eta, slack):
    return _impl().qh_bounds(_arr(a),
                             _arr(b),
                             _arr(dt), float(eta), float(slack))


def maximal_ranges(U, L, t, T):
    return _impl().maximal_ranges(_arr(U, dtype=np.int64),
                                  _arr(L, dtype=np.int64),
                                  _arr(t), float(T))
