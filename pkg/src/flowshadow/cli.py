"""Command line front end.

Exit codes: 0 success, 1 no periodic measure within epsilon, 2 bad config,
3 missing cache, 4 numerical failure.
"""

import argparse
import sys
from pathlib import Path

from . import io
from .config import load_config
from .errors import ConfigError, FlowShadowError, MissingCache

EXIT_OK, EXIT_NO_MEASURE, EXIT_CONFIG, EXIT_CACHE, EXIT_NUMERIC = 0, 1, 2, 3, 4


def _seed(text):
    try:
        return tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed state {text!r}") from None


def build_parser():
    p = argparse.ArgumentParser(prog="flowshadow",
                                description="Periodic measures near an empirical measure of a flow")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="parallel close-ups")
    common.add_argument("--seed-state", type=_seed, help='initial state, e.g. "1,1,1"')
    common.add_argument("--epsilon", type=float, help="target d_M bound")
    common.add_argument("--n", type=int, help="number of test functions")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("simulate", "integrate the orbit and its tangent cocycle"),
                       ("spectrum", "exponents, splitting and domination certificate"),
                       ("strings", "block constants, Pliss strings and block membership"),
                       ("close", "close returns, shooting and shadowing checks"),
                       ("compare", "weak* distances and the final estimate"),
                       ("run", "all stages and plots"),
                       ("plots", "SVG figures from an existing run")):
        sp = sub.add_parser(name, parents=[common], help=text)
        if name == "run":
            sp.add_argument("--stage", help="run a single named stage instead of all")
    return p


def _report_error(out, stage, exc):
    try:
        Path(out).mkdir(parents=True, exist_ok=True)
        info = {"stage": stage, "code": getattr(exc, "code", "error"), "message": str(exc)}
        if isinstance(exc, MissingCache):
            info["path"] = exc.path
        io.dump_json(Path(out) / "error.json", info)
    except OSError:
        pass
    print(f"flowshadow: {stage}: {exc}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = args.out or "out"
    stage = args.command
    try:
        cfg = load_config(args.config, out=args.out, threads=args.threads,
                          seed_state=args.seed_state, epsilon=args.epsilon, n=args.n)
        out = cfg.out
        from . import pipeline
        if stage == "plots":
            from .plots import emit_plots
            emit_plots(out)
            pipeline.write_manifest(out)
            return EXIT_OK
        if stage == "run" and args.stage:
            stage = args.stage
            if stage not in pipeline.STAGES:
                raise ConfigError(f"unknown stage {stage!r}")
        if stage == "run":
            code = pipeline.run_pipeline(cfg, out)
        else:
            code = pipeline.run_stage(cfg, stage, out)
    except ConfigError as exc:
        _report_error(out, stage, exc)
        return EXIT_CONFIG
    except MissingCache as exc:
        _report_error(out, stage, exc)
        return EXIT_CACHE
    except FlowShadowError as exc:
        _report_error(out, getattr(exc, "stage", stage), exc)
        return EXIT_NUMERIC
    if code != 0:
        print(f"flowshadow: no periodic measure within epsilon (see {out}/compare.json)",
              file=sys.stderr)
    return EXIT_NO_MEASURE if code else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
