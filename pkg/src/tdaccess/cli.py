"""Command-line entry point: ``tdaccess <stage> [-c run.cfg] [--set key=value ...]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .config import ConfigError, load_config

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2

COMMANDS = ("synth", "matrix", "access", "cartogram", "render", "stats", "all")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="tdaccess",
        description="Time-of-day car accessibility, time cartograms and extrusion map frames.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("-c", "--config", help="key = value run configuration file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration key (repeatable)")
    p.add_argument("--beta", help="decay parameter per minute (overrides config)")
    p.add_argument("--workers", help="worker processes for routing")
    p.add_argument("--slots", dest="slot_count", help="number of departure slots")
    p.add_argument("--seed", help="seed for synthetic data")
    p.add_argument("--direction", choices=("from", "to", "both"))
    p.add_argument("--mode", dest="render_mode", help="comma list of choropleth,extrusion,cartogram")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set {item}: expected KEY=VALUE")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for key in ("beta", "workers", "slot_count", "seed", "direction", "render_mode"):
        v = getattr(args, key)
        if v is not None:
            out[key] = v
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args))
        if args.command == "stats":
            stats = pipeline.cmd_stats(cfg)
            print("frc\tkm\tprofiled_km\tprofiled_pct")
            for frc, km, pkm, pct in stats.rows():
                print(f"{frc}\t{km:.3f}\t{pkm:.3f}\t{pct:.2f}")
            print(f"all\t{stats.total_km:.3f}\t{stats.profiled_km:.3f}\t{stats.profiled_pct:.2f}")
            print(f"strongly_connected\t{stats.strongly_connected}")
        else:
            getattr(pipeline, f"cmd_{args.command}")(cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        # format and consistency errors in the input files
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"ERROR: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
