"""Command-line interface.

Exit codes: 0 on success, 1 on configuration errors, 2 on numerical failures.
"""

import argparse
import os
import sys

from .config import load_config
from .errors import AmpLabError, ConfigError
from .experiments import run_experiment
from .reporting import write_records_csv, write_summary_json
from .selftest import run_selftest

_THREADS_ENV = "AMPLAB_THREADS"


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="amplab",
        description="AMP universality experiments on spiked symmetric random matrices",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment from a JSON config")
    run.add_argument("--config", required=True, help="path to the JSON configuration")
    run.add_argument("--out-dir", default=None, help="directory for records CSV and summary JSON")
    run.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")
    run.add_argument("--threads", type=int, default=None, help="concurrent trial workers")
    run.add_argument("--seed", type=int, default=None, help="override the master seed")

    sub.add_parser("selftest", help="run the built-in oracle suite")
    return parser


def _output_paths(cfg, out_dir):
    records = cfg.records_csv
    summary = cfg.summary_json
    if out_dir is not None:
        records = os.path.join(out_dir, f"{cfg.experiment}_records.csv")
        summary = os.path.join(out_dir, f"{cfg.experiment}_summary.json")
    if records is None:
        records = f"{cfg.experiment}_records.csv"
    if summary is None:
        summary = f"{cfg.experiment}_summary.json"
    return records, summary


def _cmd_run(args):
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.master_seed = args.seed
        if args.threads is not None:
            cfg.threads = args.threads
        elif os.environ.get(_THREADS_ENV):
            cfg.threads = max(1, int(os.environ[_THREADS_ENV]))
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.dry_run:
        print(cfg.canonical_json())
        return 0

    records_path, summary_path = _output_paths(cfg, args.out_dir)
    try:
        columns, rows, summary = run_experiment(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except AmpLabError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2

    summary["master_seed"] = cfg.master_seed
    write_records_csv(records_path, columns, rows)
    write_summary_json(summary_path, summary)
    ok_rows = sum(1 for r in rows if r["status"] == "ok")
    print(f"{cfg.experiment}: {ok_rows}/{len(rows)} rows ok")
    for entry in summary["groups"]:
        print(
            f"  {summary['group_by']}={entry['group']} {entry['field']}: "
            f"mean={entry['mean']:.6g} std={entry['std']:.3g} n={entry['count']}"
        )
    for key, value in summary["extras"].items():
        print(f"  {key}: {value}")
    print(f"records: {records_path}")
    print(f"summary: {summary_path}")
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.command == "selftest":
        failures = run_selftest()
        return 0 if failures == 0 else 2
    return _cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
