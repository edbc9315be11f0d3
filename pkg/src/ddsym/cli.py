"""Command-line entry point.

Each stage subcommand runs one step of the pipeline against an output
directory; ``run`` chains all of them and ``sweep`` reports sample counts.
The exit code is 0 only when the certificate passes and every requested
simulation stays safe.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline as pl
from .config import load_config
from .errors import DdsymError

STAGE_COMMANDS = {
    "sample": pl.stage_sample,
    "abstract": pl.stage_abstract,
    "asbf": pl.stage_asbf,
    "lipschitz": pl.stage_lipschitz,
    "sigma": pl.stage_sigma,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", required=True, help="JSON config path, or 'room' / 'vehicle' for the shipped ones")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config)")
    p.add_argument("--m", type=int, help="number of subsystems (overrides the config)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ddsym", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGE_COMMANDS, "compose", "synthesize", "simulate", "run", "report"):
        _common(sub.add_parser(name))
    sw = sub.add_parser("sweep", help="compositional vs monolithic sample counts")
    _common(sw)
    sw.add_argument("--m-values", default="10,100,1000,10000", help="comma-separated increasing M values")
    return parser


def _context(args):
    cfg = load_config(args.config, seed=args.seed, M=args.m, out=args.out)
    return cfg, pl.Context.create(cfg)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _dispatch(args)
    except DdsymError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    cmd = args.command
    if cmd == "sweep":
        cfg = load_config(args.config, seed=args.seed, M=args.m, out=args.out)
        res = pl.complexity_sweep(cfg, [int(v) for v in args.m_values.split(",")], cfg.out)
        for r in res.rows:
            print(f"M={r['M']:>6}  compositional={r['compositional_samples']:>10}  "
                  f"monolithic=10^{r['monolithic_log10_samples']:.1f}")
        print(f"linear fit R^2 = {res.r2:.6f}")
        return 0
    if cmd == "report":
        cfg = load_config(args.config, out=args.out)
        from .report import render_report
        print(render_report(cfg.out))
        return 0
    cfg, ctx = _context(args)
    if cmd in STAGE_COMMANDS:
        STAGE_COMMANDS[cmd](ctx)
        return 0
    if cmd == "compose":
        cert = pl.stage_compose(ctx)
        print(json.dumps({"total": cert.total, "pass": cert.passed, "epsilon": cert.epsilon}))
        return 0 if cert.passed else 1
    if cmd == "synthesize":
        pl.stage_synthesize(ctx)
        return 0
    if cmd == "simulate":
        sim = pl.stage_simulate(ctx)
        print(json.dumps({k: v["n_safe"] for k, v in sim["scenarios"].items()}))
        return 0 if sim["safe"] else 1
    rr = pl.run_pipeline(cfg)
    total = rr.certificate.total if rr.certificate else float("nan")
    print(f"certificate total {total:.6g} ({'pass' if rr.passed else 'fail'}); "
          f"simulation {'safe' if rr.safe else 'not safe' if rr.safe is False else 'not run'}; "
          f"report {rr.out / 'report.md'}")
    return rr.exit_code


if __name__ == "__main__":
    sys.exit(main())
