"""Stage-by-stage pipeline from a seed state to a periodic measure close to the empirical one.

Stages and their caches under the output directory:

  simulate  orbit.orb, orbit.csv, chain.pcc, chain.csv, simulate.json
  spectrum  spectrum.json, exponents.csv
  strings   strings.json, profile.csv
  close     close.json, orbits/po_NNN.json, orbits/po_NNN.orb
  compare   compare.json, inequality_chain.txt, periodic_measure.csv

Each stage reads only the caches of earlier stages, so deleting the caches of
stage k and re-running from k reproduces the later artifacts bit for bit.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io, measures, shadow, spectrum, strings
from .cocycle import build_chain, chain_from_steps
from .config import AUTO, PipelineConfig
from .errors import Collapsed, FlowShadowError, MissingCache, NoConvergence
from .flow import OrbitSegment, integrate, tangent_integrate

STAGES = ("simulate", "spectrum", "strings", "close", "compare")
ACCEPT_RESIDUAL = 1e-9
FLOQUET_BAND = 0.02
AGREE_ANGLE = 5e-2


class NoMeasure(FlowShadowError):
    code = "no_measure"


def _need(path):
    path = Path(path)
    if not path.exists():
        raise MissingCache(path)
    return path


def write_manifest(out):
    out = Path(out)
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"
                   and p.name != "error.json")
    io.dump_json(out / "manifest.json",
                 {"artifacts": {str(p.relative_to(out)): io.sha256(p) for p in files}})


@dataclass
class Run:
    """Per-invocation state; recomputed objects are memoised so ``run`` does each once."""

    cfg: PipelineConfig
    out: Path

    def __post_init__(self):
        self.out = Path(self.out)
        self.system = self.cfg.build_system()
        self.stride = self.cfg.stride or self.system.default_stride
        self._memo = {}

    def memo(self, key, fn):
        if key not in self._memo:
            self._memo[key] = fn()
        return self._memo[key]

    # ---- cached objects
    def orbit(self):
        def load():
            t, x, s, tol = io.read_orbit(_need(self.out / "orbit.orb"))
            return OrbitSegment(t, x, s, self.system, tol)
        return self.memo("orbit", load)

    def chain(self):
        def load():
            _, _, steps, scaled = io.read_chain(_need(self.out / "chain.pcc"))
            return chain_from_steps(self.system, self.orbit(), steps, scaled)
        return self.memo("chain", load)

    def spectrum_json(self):
        return io.load_json(_need(self.out / "spectrum.json"))

    def strings_json(self):
        return io.load_json(_need(self.out / "strings.json"))

    def exponents(self):
        return np.asarray(self.spectrum_json()["exponents"], dtype=float)

    def splitting(self):
        sj = self.spectrum_json()
        return self.memo("split", lambda: spectrum.oseledec_splitting(
            self.chain(), sj["index"], exponents=self.exponents()))

    def strings_context(self):
        """Profile, block mask, singularity distances and the quasi-hyperbolic index."""
        def build():
            sj = self.strings_json()
            chain, split = self.chain(), self.splitting()
            i0, i1 = strings.valid_run(split)
            prof = strings.log_profile(chain, split, i0, i1)
            params = strings.PesinBlockParams(sj["T"], sj["eta_block"], sj["C"])
            sd = self.system.singularity_distance(chain.points[i0:i1 + 1])
            mem = strings.membership_mask(prof, params, sd)
            full = np.zeros(len(chain.points), dtype=bool)
            full[i0:i1 + 1] = mem
            qh = strings.qh_index(prof, sj["eta_rate"], sj["T"])
            return {"profile": prof, "params": params, "member": full, "qh": qh,
                    "sing_dist": self.system.singularity_distance(chain.points), "i0": i0}
        return self.memo("strings_ctx", build)

    def basis(self, n):
        box = self.cfg.box or self.system.default_box
        return measures.default_basis(box, max(n, 16), self.orbit().states)


# ------------------------------------------------------------------ stages

def stage_simulate(run: Run):
    cfg, system = run.cfg, run.system
    full = integrate(system, cfg.seed_state, cfg.transient + cfg.window, tol=cfg.tol,
                     stride=run.stride)
    k0 = int(round(cfg.transient / run.stride))
    seg = full.slice(k0, len(full) - 1)
    prop = tangent_integrate(system, seg)
    chain = build_chain(system, seg, scaled=True, propagation=prop)
    out = run.out
    io.write_orbit(out / "orbit.orb", seg.times, seg.states, seg.speeds, seg.dense_tol)
    io.write_orbit_csv(out / "orbit.csv", seg.times, seg.states, seg.speeds)
    io.write_chain(out / "chain.pcc", chain.times, chain.dts, chain.steps, True)
    io.write_chain_csv(out / "chain.csv", chain.times, chain.dts, chain.speeds,
                       chain.log_norms, chain.log_mininorms)
    io.dump_json(out / "simulate.json", {
        "system": system.name, "params": system.params, "seed_state": list(cfg.seed_state),
        "transient": cfg.transient, "window": seg.duration, "stride": run.stride,
        "tol": cfg.tol, "samples": len(seg), "min_speed": seg.min_speed(),
        "state_min": seg.states.min(axis=0), "state_max": seg.states.max(axis=0),
        "frames_rebuilt": int(np.sum(chain.rebuilt)),
    })
    run._memo.update(orbit=seg, chain=chain, propagation=prop)
    return 0


def stage_spectrum(run: Run):
    cfg, system = run.cfg, run.system
    chain, seg = run.chain(), run.orbit()
    est = spectrum.qr_exponents(chain)
    prop = run.memo("propagation", lambda: tangent_integrate(system, seg))
    tan = spectrum.tangent_exponents(system, seg, propagation=prop)
    check = spectrum.scaled_equals_unscaled_check(
        build_chain(system, seg, scaled=False, propagation=prop), chain)
    rep = spectrum.spectrum_report(est)
    rep.update({
        "tangent_exponents": tan.exponents,
        "unscaled_exponents": check.psi, "psi_psistar_max_diff": check.max_diff,
        "speed_identity": check.expected, "identity_deviation": check.deviation,
        "index": est.index, "gap": est.gap,
    })
    n = chain.n
    if est.index == n:
        rep["case"] = 1
    elif est.index == 0:
        rep["case"] = 0
    else:
        rep["case"] = 2
        split = spectrum.oseledec_splitting(chain, est.index, exponents=est.exponents)
        run._memo["split"] = split
        cert_split = spectrum.finite_time_splitting(chain, est.index, exponents=est.exponents)
        cert = spectrum.domination_certificate(cert_split, chain, window_cap=cfg.window_cap,
                                               lambda_min=cfg.lambda_min)
        ang, _ = spectrum.splitting_agreement(split, cert_split)
        rep.update({
            "C": cert.C, "lambda": cert.lam, "residual": cert.residual, "pass": cert.passed,
            "theta_min": split.theta_min, "certified_theta_min": cert_split.theta_min,
            "agreement_fraction": float(np.mean(ang <= AGREE_ANGLE)) if len(ang) else 0.0,
            "agreement_max_angle": float(ang.max()) if len(ang) else None,
            "domination_windows": cert.n_windows,
        })
    io.dump_json(run.out / "spectrum.json", rep)
    lines = ["t," + ",".join(f"lambda_{i + 1}" for i in range(n))]
    for t, row in zip(est.history_t, est.history):
        lines.append(",".join([repr(float(t))] + [repr(float(v)) for v in row]))
    (run.out / "exponents.csv").write_text("\n".join(lines) + "\n")
    return 0


def _auto_C(profile, T, eta_block, sd, target):
    C, frac = 1.0, 0.0
    while C < 2.0 ** 60:
        frac = strings.membership_fraction(profile, strings.PesinBlockParams(T, eta_block, C), sd)
        if frac >= target:
            break
        C *= 2.0
    return C, frac


def stage_strings(run: Run):
    cfg = run.cfg
    sj = run.spectrum_json()
    out = run.out
    if sj["case"] != 2:
        io.dump_json(out / "strings.json", {"case": sj["case"]})
        (out / "profile.csv").write_text("i,t,sum_a,sum_b,member\n")
        return 0
    chain, split = run.chain(), run.splitting()
    gap = sj["gap"]
    T = cfg.T
    rate = cfg.eta_rate * gap if cfg.eta == AUTO else float(cfg.eta) / T
    eta_block = rate * T
    i0, i1 = strings.valid_run(split)
    prof = strings.log_profile(chain, split, i0, i1)
    sd = run.system.singularity_distance(chain.points[i0:i1 + 1])
    if cfg.C == AUTO:
        C, frac = _auto_C(prof, T, eta_block, sd, cfg.block_target)
    else:
        C = float(cfg.C)
        frac = strings.membership_fraction(prof, strings.PesinBlockParams(T, eta_block, C), sd)
    mono = [strings.membership_fraction(prof, strings.PesinBlockParams(T, eta_block, c), sd)
            for c in (C, 2 * C, 4 * C)]
    eps = None if cfg.spectral_epsilon == AUTO else float(cfg.spectral_epsilon)
    bc = strings.block_constants(sj["exponents"], epsilon=eps, T0=T, C=C)
    segs = strings.pliss_select(prof, rate, T)
    params = strings.PesinBlockParams(T, eta_block, C)
    mem = strings.membership_mask(prof, params, sd)
    segj = [s.to_json(bool(mem[s.start_index - i0] and mem[s.end_index - i0])) for s in segs]
    io.dump_json(out / "strings.json", {
        "case": 2, "T": T, "eta_rate": rate, "eta_block": eta_block, "C": C,
        "alpha": params.alpha, "membership_fraction": frac,
        "membership_C_2C_4C": mono, "block_constants": bc.to_json(),
        "valid_run": [i0, i1], "segments": segj,
        "formulas": {"eta_rate": "eta_rate_factor * spectral gap (per unit time)",
                     "eta_block": "eta_rate * T", "alpha": "1 / C",
                     "C": "smallest power of 2 with block membership >= block_target"},
    })
    sa = np.concatenate(([0.0], np.cumsum(prof.a)))
    sb = np.concatenate(([0.0], np.cumsum(prof.b)))
    tt = prof.times
    lines = ["i,t,sum_a,sum_b,member"]
    for i in range(0, len(sa), 10):
        lines.append(f"{i + i0},{float(tt[i])!r},{float(sa[i])!r},{float(sb[i])!r},{int(mem[i])}")
    (out / "profile.csv").write_text("\n".join(lines) + "\n")
    return 0


def _segment_integrals(seg: OrbitSegment, basis, n):
    """Running trapezoid integrals of f_1..f_n along the orbit."""
    vals = basis.evaluate(seg.states, n)
    inc = 0.5 * (vals[1:] + vals[:-1]) * seg.dts[:, None]
    return np.vstack((np.zeros(n), np.cumsum(inc, axis=0)))


def _segment_dm(cum, times, ref, s, e):
    avg = (cum[e] - cum[s]) / (times[e] - times[s])
    n = len(ref)
    return float(np.sum(np.abs(avg - ref) / 2.0 ** np.arange(1, n + 1)))


def _accept(po: shadow.PeriodicOrbit):
    res_ok = po.residual <= ACCEPT_RESIDUAL * (1.0 + float(np.linalg.norm(po.anchor)))
    hyp = bool(np.all(np.abs(po.floquet_lognorms) >= FLOQUET_BAND))
    return res_ok and hyp, res_ok, hyp


def _close_one(run: Run, s, e):
    seg = run.orbit().slice(s, e)
    m = max(2, int(round(seg.duration / run.cfg.section_spacing)))
    A, tau = shadow.anchors_from_segment(seg, m)
    try:
        po = shadow.close_up(run.system, A, tau, tol=run.cfg.close_tol, min_duration=seg.duration,
                             stride=run.stride)
    except (NoConvergence, Collapsed) as exc:
        return None, {"status": exc.code, "message": str(exc)}
    ok, res_ok, hyp = _accept(po)
    rep = shadow.verify_shadowing(seg, po, run.cfg.shadow_epsilon)
    info = {"status": "accepted" if ok else "rejected", "residual_ok": res_ok,
            "hyperbolic": hyp, "shadowing": rep.to_json()}
    info.update(po.to_json())
    return po, info


def stage_close(run: Run):
    cfg = run.cfg
    sj = run.strings_json()
    out = run.out
    (out / "orbits").mkdir(exist_ok=True)
    seg = run.orbit()
    n = cfg.n_functions()
    basis = run.basis(n)
    mu = measures.empirical_measure(seg)
    ref = measures.integrals(mu, basis, n)
    cum = _segment_integrals(seg, basis, n)
    if sj["case"] == 2:
        ctx = run.strings_context()
        returns = shadow.find_close_returns(seg, ctx["qh"], ctx["member"], ctx["sing_dist"],
                                            ctx["params"].alpha, cfg.D_schedule[0], sj["T"],
                                            cfg.max_return, cfg.base_stride)
    elif sj["case"] == 1:
        # attracting periodic orbit: any return of the settled orbit will do
        r = shadow.first_recurrence(seg, cfg.D_schedule[-1])
        returns = [] if r is None else [r]
    else:
        returns = []
    scored = [(_segment_dm(cum, seg.times, ref, r.start_index, r.end_index), r) for r in returns]
    todo = {}
    buckets = []
    for D in cfg.D_schedule:
        inb = sorted((x for x in scored if x[1].gap < D),
                     key=lambda x: (x[0], x[1].start_index))
        pick = inb[:cfg.candidates_per_D]
        for _, r in pick:
            todo.setdefault((r.start_index, r.end_index), r)
        buckets.append({"D": D, "returns": len(inb),
                        "tried": [[r.start_index, r.end_index] for _, r in pick]})
    keys = sorted(todo)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(lambda k: _close_one(run, *k), keys))
    else:
        results = [_close_one(run, *k) for k in keys]
    orbits = []
    found = []
    for j, (key, (po, info)) in enumerate(zip(keys, results)):
        r = todo[key]
        info.update({"id": j, "start_index": r.start_index, "end_index": r.end_index,
                     "start_t": r.start_t, "end_t": r.end_t, "gap": r.gap,
                     "segment_duration": r.duration,
                     "segment_dm": next(x[0] for x in scored if x[1] is r)})
        if po is not None:
            info["duplicate_of"] = next((i for i, q in found if same_orbit(po, q)), None)
            found.append((j, po))
            stem = out / "orbits" / f"po_{j:03d}"
            po.write(stem.with_suffix(".json"), stem.with_suffix(".orb"))
            info["file"] = f"orbits/po_{j:03d}.orb"
        orbits.append(info)
    conv = [o["gap"] for o in orbits if o["status"] in ("accepted", "rejected")]
    io.dump_json(out / "close.json", {
        "case": sj["case"], "n_returns": len(returns), "buckets": buckets, "orbits": orbits,
        "largest_converged_gap": max(conv) if conv else None,
        "accepted": sum(o["status"] == "accepted" for o in orbits),
    })
    return 0


def same_orbit(a, b, rtol=1e-6):
    """Two closed loops are the same orbit when periods agree and a's anchor lies on b."""
    if abs(a.period - b.period) > rtol * b.period:
        return False
    step = float(np.max(np.diff(b.loop.times)) * np.max(b.loop.speeds))
    return float(np.min(np.linalg.norm(b.loop.states - a.anchor, axis=1))) <= step


@dataclass
class _Loop:
    loop: OrbitSegment
    period: float


def _load_loop(run: Run, info):
    t, x, s, tol = io.read_orbit(_need(run.out / info["file"]))
    return _Loop(OrbitSegment(t, x, s, run.system, tol), float(info["period"]))


def stage_compare(run: Run):
    cfg = run.cfg
    cj = io.load_json(_need(run.out / "close.json"))
    seg = run.orbit()
    n = cfg.n_functions()
    eps = cfg.epsilon
    basis = run.basis(n)
    mu = measures.empirical_measure(seg)
    rows = []
    best = None
    by_id = {o["id"]: o for o in cj["orbits"]}
    for o in cj["orbits"]:
        if o["status"] != "accepted":
            continue
        # a repeated orbit is the same measure; use its first copy
        src = o if o.get("duplicate_of") is None else by_id[o["duplicate_of"]]
        mp = measures.periodic_measure(_load_loop(run, src))
        d = measures.dm_distance(mu, mp, basis, n)
        row = {"id": o["id"], "duplicate_of": o.get("duplicate_of"), "gap": o["gap"],
               "period": o["period"], "value": d.value,
               "tail_bound": d.tail_bound, "total": d.value + d.tail_bound,
               "per_i_terms": list(d.per_i_terms),
               "shadowing_pass": o["shadowing"]["pass"]}
        rows.append(row)
        if best is None or (row["value"], row["id"]) < (best[0]["value"], best[0]["id"]):
            best = (row, mp)
    per_D = []
    for b in cj["buckets"]:
        tried = {tuple(k) for k in b["tried"]}
        vals = [r["value"] for r, o in ((r, next(o for o in cj["orbits"] if o["id"] == r["id"]))
                                        for r in rows)
                if (o["start_index"], o["end_index"]) in tried]
        per_D.append({"D": b["D"], "best_value": min(vals) if vals else None,
                      "accepted": len(vals)})
    bests = [p["best_value"] for p in per_D if p["best_value"] is not None]
    nonincreasing = (len(bests) == len(per_D)
                     and all(b2 <= b1 for b1, b2 in zip(bests, bests[1:])))
    bk = measures.birkhoff_check(seg, mu, basis, n, eps)
    gamma, xi = measures.gamma_xi(basis, n, eps)
    tail = 2.0 ** (-(n - 1))
    found = best is not None and best[0]["total"] < eps
    rep = {
        "epsilon": eps, "n": n, "tail_bound": tail, "tail_ok": tail < eps / 2,
        "orbits": rows, "per_D": per_D, "best_per_D_nonincreasing": nonincreasing,
        "best": best[0] if best else None, "success": bool(found),
        "birkhoff": {"T1": bk.T1, "threshold": bk.threshold, "final_deviations": bk.deviations},
        "gamma": gamma, "xi": xi, "case": cj["case"],
    }
    io.dump_json(run.out / "compare.json", rep)
    lines = [f"case {cj['case']}",
             f"n = {n}: tail = 2^-(n-1) = {tail!r} {'<' if tail < eps / 2 else '>='} "
             f"epsilon/2 = {eps / 2!r}",
             f"gamma = (epsilon/4n)*2 = {gamma!r}; xi = gamma / max Lipschitz(f_i) = {xi!r}",
             f"Birkhoff T1 = {bk.T1!r} (threshold {bk.threshold!r})"]
    if best:
        r = best[0]
        terms = " + ".join(f"{v:.3e}" for v in r["per_i_terms"])
        lines.append("d_M(mu, mu_p) <= sum_(i<=n) |int f_i dmu - int f_i dmu_p| / 2^i + tail")
        lines.append(f"  = {terms} + {tail!r}")
        lines.append(f"  = {r['value']!r} + {tail!r} = {r['total']!r} "
                     f"{'<' if r['total'] < eps else '>='} epsilon = {eps!r}")
        io.write_measure_csv(run.out / "periodic_measure.csv", best[1].points, best[1].weights)
    else:
        lines.append("no accepted periodic orbit")
    (run.out / "inequality_chain.txt").write_text("\n".join(lines) + "\n")
    return 0 if found else 1


STAGE_FUNCS = {"simulate": stage_simulate, "spectrum": stage_spectrum, "strings": stage_strings,
               "close": stage_close, "compare": stage_compare}


def run_stage(cfg: PipelineConfig, name, out=None, run=None):
    run = run or Run(cfg, out or cfg.out)
    run.out.mkdir(parents=True, exist_ok=True)
    try:
        code = STAGE_FUNCS[name](run)
    except FlowShadowError as exc:
        exc.stage = name
        raise
    write_manifest(run.out)
    return code


def run_pipeline(cfg: PipelineConfig, out=None):
    """All stages in order; returns the exit code of the compare stage."""
    run = Run(cfg, out or cfg.out)
    code = 0
    for name in STAGES:
        code = run_stage(cfg, name, run=run)
    from .plots import emit_plots
    emit_plots(run.out)
    write_manifest(run.out)
    return code
