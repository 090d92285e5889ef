"""Binary caches (ORB1 orbits, PCC1 chains), CSV mirrors and JSON helpers."""

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

ORB_MAGIC = b"ORB1"
PCC_MAGIC = b"PCC1"
_ORB_HEAD = struct.Struct("<4sIQd")
_PCC_HEAD = struct.Struct("<4sIQd")


def _fmt(v):
    return repr(float(v))


def write_orbit(path, times, states, speeds, tol):
    times = np.asarray(times, dtype="<f8")
    states = np.asarray(states, dtype="<f8")
    speeds = np.asarray(speeds, dtype="<f8")
    m, d = states.shape
    rec = np.empty((m, d + 2), dtype="<f8")
    rec[:, 0] = times
    rec[:, 1:d + 1] = states
    rec[:, d + 1] = speeds
    with open(path, "wb") as fh:
        fh.write(_ORB_HEAD.pack(ORB_MAGIC, d, m, float(tol)))
        fh.write(rec.tobytes())


def read_orbit(path):
    """Returns ``(times, states, speeds, tol)``."""
    raw = Path(path).read_bytes()
    magic, d, m, tol = _ORB_HEAD.unpack_from(raw)
    if magic != ORB_MAGIC:
        raise ValueError(f"{path}: not an ORB1 file")
    rec = np.frombuffer(raw, dtype="<f8", offset=_ORB_HEAD.size, count=m * (d + 2))
    rec = rec.reshape(m, d + 2).astype(float)
    return rec[:, 0], rec[:, 1:d + 1], rec[:, d + 1], tol


def write_orbit_csv(path, times, states, speeds):
    d = states.shape[1]
    lines = [",".join(["t"] + [f"x_{j + 1}" for j in range(d)] + ["speed"])]
    for t, x, s in zip(times, states, speeds):
        lines.append(",".join([_fmt(t)] + [_fmt(v) for v in x] + [_fmt(s)]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_chain(path, times, dts, steps, scaled):
    steps = np.asarray(steps, dtype="<f8")
    m, n, _ = steps.shape
    rec = np.empty((m, 2 + n * n), dtype="<f8")
    rec[:, 0] = np.asarray(times, dtype=float)[:m]
    rec[:, 1] = dts
    rec[:, 2:] = steps.reshape(m, n * n)
    with open(path, "wb") as fh:
        fh.write(_PCC_HEAD.pack(PCC_MAGIC, n, m, 1.0 if scaled else 0.0))
        fh.write(rec.tobytes())


def read_chain(path):
    """Returns ``(times, dts, steps, scaled)``."""
    raw = Path(path).read_bytes()
    magic, n, m, flag = _PCC_HEAD.unpack_from(raw)
    if magic != PCC_MAGIC:
        raise ValueError(f"{path}: not a PCC1 file")
    rec = np.frombuffer(raw, dtype="<f8", offset=_PCC_HEAD.size, count=m * (2 + n * n))
    rec = rec.reshape(m, 2 + n * n).astype(float)
    return rec[:, 0], rec[:, 1], rec[:, 2:].reshape(m, n, n), bool(flag)


def write_chain_csv(path, times, dts, speeds, log_norms, log_mininorms):
    lines = ["i,t_i,dt,speed,log_norm,log_mininorm"]
    for i in range(len(dts)):
        lines.append(",".join([str(i), _fmt(times[i]), _fmt(dts[i]), _fmt(speeds[i]),
                               _fmt(log_norms[i]), _fmt(log_mininorms[i])]))
    Path(path).write_text("\n".join(lines) + "\n")


def write_measure_csv(path, points, weights):
    d = points.shape[1]
    lines = [",".join(["weight"] + [f"x_{j + 1}" for j in range(d)])]
    for w, x in zip(weights, points):
        lines.append(",".join([_fmt(w)] + [_fmt(v) for v in x]))
    Path(path).write_text("\n".join(lines) + "\n")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if v != v or v in (float("inf"), float("-inf")):
            return None
        return v
    return obj


def dump_json(path, obj):
    """Deterministic JSON: sorted keys, shortest float repr, non-finite -> null."""
    Path(path).write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n")


def load_json(path):
    return json.loads(Path(path).read_text())


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
