"""Command-line entry point ``unnfwi``.

Exit status: 0 on success, 2 for configuration or argument errors, 3 when
a simulation or optimisation produced non-finite values.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import io as uio
from .config import InversionConfig, apply_seed_overrides, load_config, preset, PRESETS
from .errors import ConfigError, GeometryError, NumericError, StabilityError
from .experiment import compare_runs, format_metrics, format_table, recompute_metrics, run_experiment, simulate_only

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="experiment config (INI)")
    p.add_argument("--preset", choices=sorted(PRESETS), help="built-in base configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    p.add_argument("--seed-override", action="append", default=[], metavar="K=V",
                   help="override a [seeds] key (phantom, noise, init); repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="unnfwi", description="Ultrasound FWI with untrained-network priors")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)
    _add_common(sub.add_parser("simulate", help="write the truth field and observed data"))
    _add_common(sub.add_parser("invert", help="full run: simulate, invert with each method, write artifacts"))
    p = sub.add_parser("metrics", help="recompute metrics from a run manifest")
    p.add_argument("manifest", type=Path)
    p = sub.add_parser("compare", help="table of metrics over several runs")
    p.add_argument("manifests", type=Path, nargs="+")
    p.add_argument("--mode", choices=("image", "speed"), default="image")
    p.add_argument("--out", type=Path, help="write the CSV table here")
    p = sub.add_parser("export", help="write a USFD field as a 16-bit PGM")
    p.add_argument("field", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--window", type=float, nargs=2, metavar=("LO", "HI"), required=True)
    p.add_argument("--truth", type=Path, help="also write the signed error map truth - field")
    p.add_argument("--error-out", type=Path, help="path of the error map (default: <out>.error.pgm)")
    return ap


def resolve_config(args) -> InversionConfig:
    base = preset(args.preset) if args.preset else InversionConfig()
    cfg = load_config(args.config, base) if args.config else base
    return apply_seed_overrides(cfg, args.seed_override)


def _dispatch(args) -> int:
    if args.verb in ("simulate", "invert"):
        cfg = resolve_config(args)
        out = args.out if args.out is not None else Path(cfg.output.dir)
        if args.verb == "simulate":
            print(simulate_only(cfg, out))
        else:
            for path in run_experiment(cfg, out):
                print(path)
        return EXIT_OK
    if args.verb == "metrics":
        sys.stdout.write(format_metrics(recompute_metrics(args.manifest)))
        return EXIT_OK
    if args.verb == "compare":
        rows = compare_runs(args.manifests, args.mode)
        csv_text, table = format_table(rows)
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            args.out.write_text(csv_text)
        sys.stdout.write(table)
        return EXIT_OK
    if args.verb == "export":
        lo, hi = args.window
        uio.export_pgm(args.field, args.out, (lo, hi))
        if args.truth is not None:
            err_out = args.error_out or args.out.with_suffix(".error.pgm")
            uio.export_error_pgm(uio.read_field(args.truth), uio.read_field(args.field), err_out, 0.5 * (hi - lo))
        return EXIT_OK
    raise AssertionError(args.verb)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _dispatch(args)
    except NumericError as exc:
        where = f" (iteration {exc.step})" if exc.step is not None else ""
        print(f"numeric abort{where}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, GeometryError, StabilityError, ValueError, OSError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
