"""Command line entry point: ``billiard <experiment> [--config cfg.json] ...``."""

from __future__ import annotations

import argparse
import json
import shutil
import sys

from .errors import ConfigError
from .harness import EXPERIMENTS, load_config, run_experiment


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="billiard", description="Cusp billiard simulator and verification lab.")
    sub = ap.add_subparsers(dest="experiment", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file or inline JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int, help="default: $BILLIARD_WORKERS or the CPU count")
        p.add_argument("--out", dest="out_dir", help="output directory")
        p.add_argument("--smoke", action="store_true", help="divide every sample count by 100")
        if name == "orbit":
            p.add_argument("--table", help="table parameters as JSON, inline or a file")
            p.add_argument("--steps", type=int)
            p.add_argument("--trace-out", help="also copy the trace CSV here")
    return ap


def _table_arg(text: str) -> dict:
    try:
        with open(text) as fh:
            return json.load(fh)
    except FileNotFoundError:
        return json.loads(text)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    raw = {}
    try:
        if args.config:
            cfg0 = load_config(args.config)
            raw = dict(cfg0.raw)
            if raw["experiment"] != args.experiment:
                raise ConfigError(f"config is for '{raw['experiment']}', not '{args.experiment}'", "/experiment")
        raw["experiment"] = args.experiment
        over = {"seed": args.seed, "workers": args.workers, "out_dir": args.out_dir}
        if args.smoke:
            over["scale"] = 0.01
        if args.experiment == "orbit":
            if args.table:
                over["table"] = _table_arg(args.table)
            over["steps"] = args.steps
        cfg = load_config(raw, over)
    except (ConfigError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    bundle = run_experiment(cfg)
    s = bundle.summary
    for c in s["criteria"]:
        print(f"{c['id']:>4} {c['status'].upper():5} {c['title']}")
    for e in s["errors"]:
        print(f"error: {e}", file=sys.stderr)
    if args.experiment == "orbit" and getattr(args, "trace_out", None):
        shutil.copyfile(bundle.files["samples"], args.trace_out)
    print(f"summary: {bundle.files['summary']}")
    return 0 if bundle.ok else 1


if __name__ == "__main__":
    sys.exit(main())
