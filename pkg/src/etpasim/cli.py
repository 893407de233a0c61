"""Command-line entry point.

    etpasim run KIND [--config PATH] [--preset NAME] [--seed N] [--noiseless] [--out DIR]
    etpasim rates RECORDS.csv --k-cal 4.5
    etpasim presets

Exit codes: 0 success, 1 scenario runtime error, 2 config error.
"""

from __future__ import annotations

import argparse
import csv
import sys

from .config import KINDS, PRESETS, ConfigError, validate_config
from .detection import read_records_csv
from .scenarios import records_to_rates, run, write_outputs

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="etpasim", description="ETPA fluorescence experiment simulator")
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a named scenario")
    r.add_argument("scenario", nargs="?", choices=KINDS,
                   help="scenario kind (may instead come from the config's 'kind')")
    r.add_argument("--config", help="flat YAML scenario config")
    r.add_argument("--preset", help="sample preset, e.g. rh6g-110mmol")
    r.add_argument("--seed", type=int, help="master seed")
    r.add_argument("--noiseless", action="store_true", default=None,
                   help="use expected counts instead of Poisson draws")
    r.add_argument("--out", help="output directory (default: out)")
    r.add_argument("--workers", type=int, help="threads for record simulation")

    rt = sub.add_parser("rates", help="reduce a detection records CSV to fluorescence rates")
    rt.add_argument("records")
    rt.add_argument("--k-cal", type=float, default=4.5)
    rt.add_argument("--k-cal-uncertainty", type=float, default=0.0)

    sub.add_parser("presets", help="list sample presets")
    return ap


def cmd_run(args) -> int:
    text = ""
    if args.config:
        try:
            with open(args.config) as fh:
                text = fh.read()
        except OSError as exc:
            print(f"error: cannot read config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    overrides = {"kind": args.scenario, "preset": args.preset, "seed": args.seed,
                 "noiseless": args.noiseless, "output_dir": args.out, "workers": args.workers}
    try:
        sc = validate_config(text, overrides)
    except ConfigError as exc:
        for d in exc.diagnostics:
            print(f"config error: {d}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        result = run(sc)
        paths = write_outputs(result, sc.output_dir)
    except Exception as exc:  # noqa: BLE001 - reported as exit code 1
        print(f"error: {sc.kind} failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{sc.kind} (preset {sc.preset}, seed {sc.seed}{', noiseless' if sc.noiseless else ''})")
    for line in result.summary:
        print(f"  {line}")
    for p in paths:
        print(f"  wrote {p}")
    return EXIT_OK


def cmd_rates(args) -> int:
    try:
        records = read_records_csv(args.records)
        rows = records_to_rates(records, args.k_cal, args.k_cal_uncertainty)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("group", "rate_s", "rate_err_s"))
    for group, est in rows:
        w.writerow((group, repr(est.value), repr(est.sigma)))
    return EXIT_OK


def cmd_presets(args) -> int:
    for name, p in PRESETS.items():
        s = p.sample
        print(f"{name}: C = {s.concentration:g} mol/l, V = {s.active_volume:g} l, "
              f"Y = {s.quantum_yield:g}{'' if s.yield_known else ' (unknown)'}, sigma_e = {s.sigma_e:.3g} cm2")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handler = {"run": cmd_run, "rates": cmd_rates, "presets": cmd_presets}[args.cmd]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
