"""Command-line entry point: ``trajrisk {ingest,score,sweep,perturb,compare}``.

Settings come from defaults, then an optional ``--config`` file, then flags;
later sources win. ``TRAJRISK_SEED`` supplies the default noise seed.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields, replace
from typing import Dict, List, Optional

from .model import NYC_TLC_2009_SCHEMA, LOGICAL_FIELDS, ParseError, read_schema_file, SchemaError
from .pipeline import (CONFIG_KEYS, EXIT_CONFIG, EXIT_EMPTY, EXIT_IO, ConfigError,
                       EmptyDatasetError, RunConfig, cmd_compare, cmd_ingest, cmd_perturb,
                       cmd_score, cmd_sweep, convert, read_config_file)

log = logging.getLogger("trajrisk")


def _add_common(p: argparse.ArgumentParser) -> None:
    S = argparse.SUPPRESS
    g = p.add_argument_group("input")
    g.add_argument("--config", help="key = value config file (flags override it)")
    g.add_argument("--input", "-i", default=S, help="trip-record CSV")
    g.add_argument("--schema", dest="schema_file", help="file of logical_field=column lines")
    g.add_argument("--schema-preset", choices=("canonical", "nyc2009"),
                   help="built-in column mapping")
    g.add_argument("--col", action="append", default=[], metavar="FIELD=COLUMN",
                   help=f"map one logical field ({', '.join(('id',) + LOGICAL_FIELDS)})")
    g.add_argument("--strict", action="store_true", default=S, help="abort on the first malformed row")

    g = p.add_argument_group("filters")
    g.add_argument("--min-duration", default=S, help="drop trips shorter than this (default 60s)")
    g.add_argument("--bbox", default=S, help="lon_min,lat_min,lon_max,lat_max (default NYC)")
    g.add_argument("--qi-window", default=S,
                   help='keep trips starting in "HH:MM..HH:MM" (on --day) or "ISO..ISO"')
    g.add_argument("--day", default=S, help="day for time-of-day windows (default: first pickup day)")
    g.add_argument("--drop-self-loops", action="store_true", default=S,
                   help="leave same-area trips out of l-diversity and t-closeness")

    g = p.add_argument_group("areas")
    g.add_argument("--grid", default=S, help="grid cell size in degrees")
    g.add_argument("--twindow", default=S, help="grid time slot, e.g. 10m")
    g.add_argument("--grid-bbox", default=S, help="grid extent (default: --bbox)")
    g.add_argument("--time-origin", default=S, help="grid time origin (default: midnight of first day)")
    g.add_argument("--areas", default=S, help="GeoJSON FeatureCollection of equivalence areas")
    g.add_argument("--area-window", default=S, help='default area time window "ISO..ISO"')

    g = p.add_argument_group("noise")
    g.add_argument("--sigma-space", default=S, help="spatial noise std in meters")
    g.add_argument("--sigma-time", default=S, help="temporal noise std, e.g. 10m")
    g.add_argument("--seed", default=S, help="noise seed (default $TRAJRISK_SEED or 0)")
    g.add_argument("--repetitions", default=S, help="noise repetitions to average (default 3)")

    g = p.add_argument_group("output")
    g.add_argument("--out", "-o", default=S, help="output directory")
    g.add_argument("--no-svg", dest="svg", action="store_false", default=S,
                   help="skip SVG staircase plots")
    g.add_argument("--emit-perturbed", action="store_true", default=S,
                   help="also write perturbed datasets as CSV")
    g.add_argument("--jobs", "-j", default=S, help="parallel sweep configurations")
    g.add_argument("--stdout", action="store_true",
                   help="also stream the main report JSON to stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajrisk",
                                     description="Privacy risk scores for trajectory data over equivalence areas.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("ingest", "parse and filter a trip file, write the canonical CSV"),
        ("score", "score one area set"),
        ("sweep", "score a grid of spatial x temporal sizes"),
        ("perturb", "write Gaussian-perturbed copies of the data"),
        ("compare", "score raw vs. perturbed data and emit per-area diffs"),
    ):
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "sweep":
            p.add_argument("--sweep-spatial", default=argparse.SUPPRESS,
                           help="comma-separated degrees (default 0.002,0.005,0.01)")
            p.add_argument("--sweep-temporal", default=argparse.SUPPRESS,
                           help="comma-separated durations (default 5m,10m,30m)")
        if name == "compare":
            p.add_argument("--anon-config",
                           help="config file for the anonymized side; must use the same areas")
    return parser


def _schema(ns, file_values: Dict) -> Dict[str, str]:
    schema = dict(file_values.get("schema", {}))
    if ns.schema_preset == "nyc2009":
        schema.update(NYC_TLC_2009_SCHEMA)
    if ns.schema_file:
        schema.update(read_schema_file(ns.schema_file))
    for item in ns.col:
        if "=" not in item:
            raise ConfigError(f"--col expects FIELD=COLUMN, got {item!r}")
        key, col = item.split("=", 1)
        schema[key.strip()] = col.strip()
    return schema


def config_from_args(ns) -> RunConfig:
    values: Dict = {}
    env_seed = os.environ.get("TRAJRISK_SEED")
    if env_seed:
        values["seed"] = convert("seed", env_seed)
    file_values = read_config_file(ns.config) if ns.config else {}
    values.update({k: v for k, v in file_values.items() if k != "schema"})
    for key in CONFIG_KEYS:
        if hasattr(ns, key):
            values[key] = convert(key, getattr(ns, key))
    values["schema"] = _schema(ns, file_values)
    known = {f.name for f in fields(RunConfig)}
    return RunConfig(**{k: v for k, v in values.items() if k in known})


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="trajrisk: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(ns)
        if ns.command == "ingest":
            code = cmd_ingest(cfg)
        elif ns.command == "score":
            code = cmd_score(cfg)
        elif ns.command == "sweep":
            code = cmd_sweep(cfg)
        elif ns.command == "perturb":
            code = cmd_perturb(cfg)
        else:
            noise_cfg = None
            if ns.anon_config:
                # the anonymized side is the raw configuration with the file's values on top
                overrides = read_config_file(ns.anon_config)
                overrides.pop("schema", None)
                noise_cfg = replace(cfg, **overrides)
            if noise_cfg is not None and not noise_cfg.noisy:
                raise ConfigError("--anon-config sets no noise")
            if noise_cfg is None and not cfg.noisy:
                raise ConfigError("compare needs --sigma-space and/or --sigma-time")
            code = cmd_compare(cfg, noise_cfg)
        if ns.stdout:
            main_report = os.path.join(cfg.out, "report.json")
            if os.path.exists(main_report):
                with open(main_report, encoding="utf-8") as fh:
                    sys.stdout.write(fh.read())
        return code
    except (ConfigError, SchemaError) as exc:
        print(f"trajrisk: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ParseError, UnicodeDecodeError) as exc:
        print(f"trajrisk: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EmptyDatasetError as exc:
        print(f"trajrisk: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
