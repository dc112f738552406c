"""Command-line entry point: ``hkflow {run, refine-study, gate, export-plots}``.

Exit codes: 0 success, 1 a named invariant failed, 2 configuration error.
The thread count of the numerical backends can be capped with the
``HKFLOW_THREADS`` environment variable.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .errors import ConfigError, HKFlowError, MissingRun
from .harness import RunConfig, export_plots, refine_study, run, run_gate

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--fixture", help="F1..F5 or a metric field file")
    p.add_argument("--N", type=int, dest="N", help="nodes per axis")
    p.add_argument("--out", help="output directory")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hkflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="integrate a fixture and write diagnostics")
    _common(r)
    r.add_argument("--scheme", choices=["tensor", "scalar", "both"])
    r.add_argument("--t-end", type=float)
    r.add_argument("--dt", type=float)
    r.add_argument("--stride", type=int)
    r.add_argument("--normalized", action="store_true", default=None)
    r.add_argument("--gate", action="store_true", default=None, help="also run the barrier-time gate")
    r.add_argument("--seed", type=int)

    s = sub.add_parser("refine-study", help="observed convergence orders against oracle values")
    _common(s)
    s.add_argument("--levels", type=int, default=3)

    g = sub.add_parser("gate", help="barrier-time gate and cutoff checks")
    _common(g)
    g.add_argument("--theta", type=float)
    g.add_argument("--kappa-cut", type=float)
    g.add_argument("--u", help="'zero' or 'logdet:<c>'")

    e = sub.add_parser("export-plots", help="long-format CSV from a run directory")
    e.add_argument("run_dir", type=Path)
    e.add_argument("-o", "--output", type=Path)
    return ap


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig.from_dict({})
    over = {"fixture": args.fixture, "grid.N": args.N, "output": args.out}
    if args.command == "run":
        over.update({
            "flow.scheme": args.scheme,
            "flow.t_end": args.t_end,
            "flow.dt": args.dt,
            "flow.stride": args.stride,
            "flow.normalized": args.normalized,
            "gate.enabled": args.gate,
            "diagnostics.seed": args.seed,
        })
    elif args.command == "gate":
        over.update({"gate.theta": args.theta, "gate.kappa_cut": args.kappa_cut, "gate.u": args.u})
    return cfg.override(**over)


def _limit_threads():
    n = os.environ.get("HKFLOW_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        return None
    return threadpool_limits(limits=int(n))


def _report(result) -> int:
    for name in result.failed:
        print(f"FAILED invariant: {name}", file=sys.stderr)
    summary = json.dumps(result.manifest.get("summary", {}), sort_keys=True)
    print(f"{result.outdir}: status {result.status} {summary}")
    return EXIT_FAIL if result.failed else EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads()
    try:
        if args.command == "export-plots":
            path = export_plots(args.run_dir, args.output)
            print(path)
            return EXIT_OK
        cfg = _config(args)
        if args.command == "run":
            return _report(run(cfg))
        if args.command == "gate":
            return _report(run_gate(cfg))
        if args.command == "refine-study":
            res = refine_study(cfg, args.levels)
            out = Path(cfg.data["output"])
            out.mkdir(parents=True, exist_ok=True)
            (out / "refine.json").write_text(json.dumps(res, indent=2, sort_keys=True) + "\n")
            print(f"{'quantity':<10}" + "".join(f"{'N=' + str(n):>14}" for n in res["N"][1:]))
            for name, row in res["table"].items():
                cells = "".join(f"{o:>14}" if isinstance(o, str) else f"{o:>14.4f}" for o in row["orders"])
                print(f"{name:<10}{cells}")
            for name in res["failed"]:
                print(f"FAILED invariant: {name}", file=sys.stderr)
            return EXIT_FAIL if res["failed"] else EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingRun as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except HKFlowError as exc:
        print(f"FAILED invariant: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
