"""Command-line entry point.

Subcommands:

* ``run <config.json>`` - execute one experiment described by a JSON config
* ``tabulate <kind>``   - emit a t,value CSV for a closed-form flow
* ``verify``            - run the standard acceptance battery

The output root defaults to the SINKFLOW_OUT environment variable (falling
back to the current directory); ``--seed`` overrides the config seed.  The
exit code is nonzero iff any verdict in the run failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .closed_form import ClosedFormFlow, FlowKind, evaluate
from .experiments import ExperimentConfig, execute, verify_battery


def _out_root(args) -> Path:
    if args.output is not None:
        return Path(args.output)
    return Path(os.environ.get("SINKFLOW_OUT", "."))


def _cmd_run(args) -> int:
    with open(args.config) as fh:
        raw = json.load(fh)
    if args.seed is not None:
        raw.setdefault("numerics", {})["seed"] = args.seed
    config = ExperimentConfig.from_dict(raw)
    report, manifest = execute(config, _out_root(args))
    for v in report.verdicts:
        status = "pass" if v["pass"] else "FAIL"
        print(f"[{status}] {v['check']}: {v['value']!r} (tolerance {v['tolerance']})")
    print(f"config hash {manifest['config_hash']}")
    return 0 if report.passed() else 1


def _cmd_tabulate(args) -> int:
    kind = FlowKind(args.kind)
    flow = ClosedFormFlow(kind, args.param)
    out = _out_root(args)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"tabulate_{kind.value}.csv"
    rows = ["t,value"]
    for t in np.linspace(0.0, args.t_end, args.points):
        val = evaluate(flow, float(t))
        scalar = val.variance if hasattr(val, "variance") else val
        rows.append(f"{float(t):.17g},{scalar:.17g}")
    path.write_text("\n".join(rows) + "\n")
    print(f"wrote {path}")
    return 0


def _cmd_verify(args) -> int:
    combined = verify_battery(_out_root(args), profile=args.profile, seed=args.seed)
    for name, entry in combined["experiments"].items():
        status = "pass" if entry["passed"] else "FAIL"
        print(f"[{status}] {name}")
        for v in entry["verdicts"]:
            mark = "ok " if v["pass"] else "BAD"
            print(f"    {mark} {v['check']}: {v['value']!r} (tolerance {v['tolerance']})")
    print("all passed" if combined["all_passed"] else "FAILURES present")
    return 0 if combined["all_passed"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinkflow")
    parser.add_argument("--output", help="output directory (default: $SINKFLOW_OUT or .)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a JSON config")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_tab = sub.add_parser("tabulate", help="tabulate a closed-form flow")
    p_tab.add_argument("kind", choices=[k.value for k in FlowKind])
    p_tab.add_argument("--param", type=float, default=0.5)
    p_tab.add_argument("--t-end", type=float, default=2.0)
    p_tab.add_argument("--points", type=int, default=101)
    p_tab.set_defaults(func=_cmd_tabulate)

    p_ver = sub.add_parser("verify", help="run the acceptance battery")
    p_ver.add_argument("--profile", choices=("full", "quick"), default="full")
    p_ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
