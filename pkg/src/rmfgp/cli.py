"""Command-line runner for the benchmark experiments.

    rmfgp-bench run config.json [--out DIR] [--seed-override 0 1 2]
    rmfgp-bench run --problem linear [--out DIR]
    rmfgp-bench schema
    rmfgp-bench default-config elliptic

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import traceback
from pathlib import Path

from .errors import ConfigError
from .experiment import PROBLEM_DEFAULTS, default_config, load_schema, run_experiment, validate_config

OUTPUT_ROOT_ENV = "RMFGP_OUTPUT_ROOT"
EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("rmfgp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="rmfgp-bench", description="RMFGP benchmark experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config", nargs="?", help="path to a JSON experiment config")
    run.add_argument("--problem", choices=sorted(PROBLEM_DEFAULTS),
                     help="use the default config for this problem")
    run.add_argument("--seed-override", type=int, nargs="+", metavar="SEED",
                     help="replace the config's seed list")
    run.add_argument("--out", help=f"output directory (default: ${OUTPUT_ROOT_ENV}/<problem> or .)")

    sub.add_parser("schema", help="print the experiment config JSON schema")
    dc = sub.add_parser("default-config", help="print the default config for a problem")
    dc.add_argument("problem", choices=sorted(PROBLEM_DEFAULTS))
    return ap


def _load(args) -> dict:
    if (args.config is None) == (args.problem is None):
        raise ConfigError("give exactly one of a config path or --problem")
    if args.problem:
        raw = default_config(args.problem)
    else:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    if args.seed_override:
        raw = {**raw, "seeds": args.seed_override}
    return raw


def _output_dir(args, raw: dict) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root:
        return Path(root) / raw.get("problem", "experiment")
    return Path(raw.get("output_dir", "."))


def cmd_run(args) -> int:
    try:
        raw = _load(args)
        cfg = validate_config(raw)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = _output_dir(args, raw)
    try:
        report = run_experiment(cfg, out)
    except Exception as exc:  # keep whatever was written, record the failure
        out.mkdir(parents=True, exist_ok=True)
        (out / "failure.txt").write_text(traceback.format_exc(), encoding="utf-8")
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    table = report.table("relative_error")
    for method in report.methods():
        cells = "  ".join(f"{nh}:{table[method][nh]:.6f}" for nh in cfg["N_H"])
        print(f"{method:12s} {cells}")
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "schema":
        print(json.dumps(load_schema(), indent=2))
        return EXIT_OK
    if args.command == "default-config":
        print(json.dumps(default_config(args.problem), indent=2))
        return EXIT_OK
    return cmd_run(args)


if __name__ == "__main__":
    sys.exit(main())
