"""Command line entry point: ``eoslab <kind> [flags]`` or ``eoslab check``."""

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

from . import __version__
from .harness.experiments import KINDS, ExperimentConfig, run_experiment
from .harness.trace import write_report


def _threads():
    raw = os.environ.get("EOSLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise SystemExit(f"EOSLAB_THREADS must be an integer, got {raw!r}")
    return max(n, 1)


def _add_run_flags(p):
    p.add_argument("--eta", type=float, help="learning rate (drift step size for driftsim)")
    p.add_argument("--wd", type=float, help="weight decay")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="trace path; the report goes to OUT.report.json for csv")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--record-every", type=int)
    p.add_argument("--project-every", type=int)
    p.add_argument("--sched", choices=("gdwd", "scalar-rms"), default="gdwd")


def build_parser():
    ap = argparse.ArgumentParser(prog="eoslab", description="Edge-of-stability experiments on scale-invariant losses.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    for kind in KINDS:
        _add_run_flags(sub.add_parser(kind, help=f"run the {kind} experiment"))
    chk = sub.add_parser("check", help="run the acceptance checks")
    chk.add_argument("ids", nargs="*", type=int, help="criterion numbers (default: all)")
    chk.add_argument("--fast", action="store_true", help="skip the slow checks")
    chk.add_argument("--out", help="write a JSON report of the results")
    return ap


def _run(args):
    cfg = ExperimentConfig(kind=args.cmd, eta_hat=args.eta, lambda_hat=args.wd, steps=args.steps,
                           seed=args.seed, record_every=args.record_every,
                           project_every=args.project_every, out=args.out, fmt=args.format,
                           sched=args.sched)
    res = run_experiment(cfg)
    summary = {k: v for k, v in res.report.items() if k != "config"}
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    return 0 if not res.report.get("diverged") else 2


def _one(cid):
    from .harness.checks import run_check

    return run_check(cid)


def _check(args):
    from .harness.checks import CHECKS, SLOW, format_result

    ids = sorted(args.ids or CHECKS)
    unknown = [i for i in ids if i not in CHECKS]
    if unknown:
        raise SystemExit(f"unknown criteria: {unknown}")
    if args.fast:
        ids = [i for i in ids if i not in SLOW]
    n = min(_threads(), len(ids))
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(_one, ids))
        for r in results:
            print(format_result(r))
    else:
        results = []
        for cid in ids:
            r = _one(cid)
            print(format_result(r), flush=True)
            results.append(r)
    passed = sum(r.passed for r in results)
    print(f"{passed}/{len(results)} criteria passed")
    if args.out:
        write_report(args.out, {"version": __version__, "checks": [asdict(r) for r in results]})
    return 0 if passed == len(results) else 1


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.cmd == "check":
        return _check(args)
    return _run(args)


if __name__ == "__main__":
    sys.exit(main())
