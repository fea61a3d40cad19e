"""Command line entry point: ``fnhom <subcommand> --config FILE [--set k=v ...] --out DIR``.

``FNHOM_THREADS`` pins the thread count of numba and of the BLAS/OpenMP
pools; it has to be applied before numpy is imported, so heavy imports
below are deferred.
"""

import argparse
import json
import os
import sys
import warnings

from .config import SUBCOMMANDS

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _apply_threads():
    n = os.environ.get("FNHOM_THREADS", "").strip()
    if not n:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, n)
    from ._backend import set_threads

    with warnings.catch_warnings():
        # numba probes every threading layer and complains about old TBB builds
        warnings.filterwarnings("ignore", message=".*TBB.*")
        set_threads(int(n))


def build_parser():
    p = argparse.ArgumentParser(prog="fnhom", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field (repeatable)")
        sp.add_argument("--out", help="output directory (overrides 'out')")
        sp.add_argument("--quiet", action="store_true", help="do not print the report")
    sp = sub.add_parser("presets", help="list operator and datum presets")
    sp.add_argument("--json", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    _apply_threads()
    from .errors import ConfigError
    from .runner import EXIT_CONFIG

    if args.command == "presets":
        from .presets import preset_catalog

        cat = preset_catalog()
        if args.json:
            print(json.dumps(cat, indent=2, default=str))
        else:
            for entry in cat:
                params = ", ".join(f"{k}={v}" for k, v in entry["params"].items())
                print(f"{entry['kind']:8s} {entry['name']:10s} {entry['doc']}"
                      + (f" [{params}]" if params else ""))
        return 0

    from .config import load
    from .runner import run

    overrides = list(args.set)
    if args.out:
        overrides.append(f"out={args.out}")
    try:
        cfg = load(args.config, overrides, subcommand=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    report, code = run(cfg)
    if not args.quiet:
        print(json.dumps({"passed": report["passed"], "results": report["results"],
                          "failure": report["failure"]}, indent=2))
    if report["failure"]:
        print(f"{report['failure']['kind']}: {report['failure']['message']}", file=sys.stderr)
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
