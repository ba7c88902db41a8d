"""Command line entry point ``wkblab``.

Verbs::

    wkblab run CONFIG [--set section.key=value ...] [--output DIR] [--workers N] [--seed S]
    wkblab validate CONFIG [--set ...]
    wkblab bandscan [--potential kind=periodic,c=2,T=6.283185307179586] [--lo] [--hi] [--count]
    wkblab version

Exit status: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure.
"""
from __future__ import annotations

import argparse
import sys

from . import __version__
from .errors import ConfigurationError, NumericalError, WKBLabError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _overrides(args):
    ov = list(args.set or [])
    for flag, key in (("output", "experiment.output"), ("workers", "experiment.workers"),
                      ("seed", "experiment.seed")):
        v = getattr(args, flag, None)
        if v is not None:
            ov.append(f"{key}={v}")
    return ov


def _cmd_run(args):
    from .config import load_config
    from .experiments import run_experiment

    cfg = load_config(args.config, _overrides(args))
    rep = run_experiment(cfg)
    for name, c in rep.checks.items():
        print(f"{name}: {'pass' if c['pass'] else 'FAIL'} (value={c['value']!r}, threshold={c['threshold']!r})")
    print(f"{cfg.kind}: {'PASS' if rep.passed else 'FAIL'}; outputs in {cfg.output}")
    return EXIT_OK if rep.passed else EXIT_CHECK


def _cmd_validate(args):
    from .config import load_config

    cfg = load_config(args.config, _overrides(args))
    print(f"{args.config}: valid {cfg.kind} configuration")
    return EXIT_OK


def _parse_potential(text):
    items = {}
    for part in text.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ConfigurationError(f"bad potential item {part!r}; expected key=value")
        k, v = part.split("=", 1)
        items[k.strip()] = v.strip()
    return items


def _cmd_bandscan(args):
    import numpy as np

    from .basis import band_edges, band_scan, write_band_scan_csv
    from .potential import spec_from_mapping

    U = spec_from_mapping(_parse_potential(args.potential), name="background")
    if U.period is None:
        raise ConfigurationError("bandscan needs a periodic background", key="kind")
    if not 0 < args.lo < args.hi or args.count < 2:
        raise ConfigurationError("need 0 < lo < hi and count >= 2")
    grid = np.linspace(args.lo, args.hi, args.count)
    rows = band_scan(U, grid, args.margin)
    if args.output:
        write_band_scan_csv(args.output, rows)
    else:
        print("lambda,trace,in_band")
        for r in rows:
            print(f"{r.lam!r},{r.trace!r},{int(r.in_band)}")
    edges = band_edges(U, args.lo, args.hi, max(args.count, 50), args.tol)
    print("# band edges: " + ", ".join(f"{e:.10g}" for e in edges), file=sys.stderr)
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="wkblab", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("config")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
        sp.add_argument("--output", help="output directory")
        sp.add_argument("--workers", type=int, help="worker processes")
        sp.add_argument("--seed", type=int)

    common(sub.add_parser("run", help="run an experiment"))
    common(sub.add_parser("validate", help="check a config without running it"))
    b = sub.add_parser("bandscan", help="trace of the monodromy over an energy grid")
    b.add_argument("--potential", default="kind=periodic,c=2,T=6.283185307179586",
                   help="periodic background as comma separated key=value items")
    b.add_argument("--lo", type=float, default=0.05)
    b.add_argument("--hi", type=float, default=3.0)
    b.add_argument("--count", type=int, default=200)
    b.add_argument("--margin", type=float, default=1e-6)
    b.add_argument("--tol", type=float, default=1e-8)
    b.add_argument("--output", help="CSV path (default: stdout)")
    sub.add_parser("version", help="print the version")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.verb == "version":
            print(f"wkblab {__version__}")
            return EXIT_OK
        return {"run": _cmd_run, "validate": _cmd_validate, "bandscan": _cmd_bandscan}[args.verb](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except WKBLabError as exc:
        # domain errors from inputs the config allowed through
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
