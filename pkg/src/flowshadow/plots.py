"""SVG figures from a run directory's caches."""

from pathlib import Path

import numpy as np

from . import io
from .errors import MissingCache

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_META = {"Date": None, "Creator": "flowshadow"}


def _need(path):
    if not Path(path).exists():
        raise MissingCache(path)
    return Path(path)


def _save(fig, path):
    with matplotlib.rc_context({"svg.hashsalt": "flowshadow", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata=_META)
    plt.close(fig)


def _csv(path):
    return np.genfromtxt(path, delimiter=",", names=True)


def plot_attractor(out):
    t, x, _, _ = io.read_orbit(_need(out / "orbit.orb"))
    fig, ax = plt.subplots(figsize=(5, 5))
    j = 2 if x.shape[1] > 2 and np.ptp(x[:, 2]) > 1e-3 * np.ptp(x[:, 0]) else 1
    ax.plot(x[:, 0], x[:, j], lw=0.2, color="0.6", label="orbit")
    cpath = out / "compare.json"
    if cpath.exists():
        best = io.load_json(cpath).get("best")
        if best is not None:
            _, lx, _, _ = io.read_orbit(out / "orbits" / f"po_{best['id']:03d}.orb")
            ax.plot(lx[:, 0], lx[:, j], lw=1.0, color="C3", label="periodic orbit")
    ax.set_xlabel("x_1")
    ax.set_ylabel(f"x_{j + 1}")
    ax.legend(loc="upper right")
    _save(fig, out / "attractor.svg")


def plot_exponents(out):
    d = _csv(_need(out / "exponents.csv"))
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in d.dtype.names[1:]:
        ax.plot(d["t"], d[name], label=name)
    ax.set_xscale("log")
    ax.set_xlabel("t")
    ax.set_ylabel("running exponent")
    ax.legend()
    _save(fig, out / "exponents.svg")


def plot_dm(out):
    rep = io.load_json(_need(out / "compare.json"))
    fig, ax = plt.subplots(figsize=(5, 4))
    D = [p["D"] for p in rep["per_D"] if p["best_value"] is not None]
    v = [p["best_value"] for p in rep["per_D"] if p["best_value"] is not None]
    if D:
        ax.plot(D, v, "o-")
        ax.invert_xaxis()
    ax.axhline(rep["epsilon"] - rep["tail_bound"], color="0.5", ls="--", lw=0.8)
    ax.set_xlabel("D")
    ax.set_ylabel("best truncated d_M")
    _save(fig, out / "dm_vs_D.svg")


def plot_pliss(out):
    d = _csv(_need(out / "profile.csv"))
    fig, ax = plt.subplots(figsize=(7, 3))
    if np.size(d) > 1:
        ax.plot(d["t"], d["sum_a"], lw=0.6, label="sum log |A|E|")
        ax.plot(d["t"], d["sum_b"], lw=0.6, label="sum log m(A|F)")
        sj = io.load_json(out / "strings.json")
        for s in sj.get("segments", []):
            ax.axvspan(s["start_t"], s["end_t"], color="C2", alpha=0.15, lw=0)
        ax.legend(loc="upper left")
    ax.set_xlabel("t")
    _save(fig, out / "pliss_timeline.svg")


def emit_plots(out):
    out = Path(out)
    for name in ("orbit.orb", "exponents.csv", "profile.csv", "compare.json"):
        _need(out / name)
    plot_attractor(out)
    plot_exponents(out)
    plot_dm(out)
    plot_pliss(out)
    return sorted(str(p) for p in out.glob("*.svg"))
