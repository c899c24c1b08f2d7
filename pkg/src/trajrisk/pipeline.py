"""Run configuration and the ingest / score / sweep / perturb / compare commands.

Each ``cmd_*`` function takes a :class:`RunConfig`, writes its artifacts
under ``cfg.out`` together with a ``manifest.json`` that lists every file
with its digest, and returns a process exit code.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Tuple

from . import __version__
from .anonymize import NoiseConfig, average_results, perturb, perturb_repetitions
from .areas import (AreaError, approx_cell_meters, build_grid, default_time_origin,
                    load_polygon_areas)
from .metrics import STAIRCASE_METRICS, score_area_set
from .model import (NYC_BBOX, Dataset, FilterConfig, ParseError, SchemaError, filter_dataset,
                    format_timestamp, parse_dataset, parse_timestamp, write_dataset)
from .report import (AREA_METRICS, ScoreReport, emit_area_geojson, emit_diff_geojson,
                     emit_staircase, fmt, staircase_panel_svg, staircase_table_csv,
                     write_report_json)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_EMPTY = 0, 1, 2, 3

DEFAULT_SWEEP_SPATIAL = (0.002, 0.005, 0.01)
DEFAULT_SWEEP_TEMPORAL = (300, 600, 1800)


class ConfigError(ValueError):
    pass


class EmptyDatasetError(RuntimeError):
    pass


def parse_duration(text) -> int:
    """Seconds from ``"90"``, ``"90s"``, ``"10m"``, ``"10min"`` or ``"1h"``."""
    if isinstance(text, (int, float)):
        return int(text)
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(s|sec|m|min|h|hr)?\s*", str(text))
    if not m:
        raise ConfigError(f"bad duration {text!r}")
    value = float(m.group(1)) * {None: 1, "s": 1, "sec": 1, "m": 60, "min": 60,
                                 "h": 3600, "hr": 3600}[m.group(2)]
    if value != int(value):
        raise ConfigError(f"duration {text!r} is not a whole number of seconds")
    return int(value)


def parse_bbox(text) -> Tuple[float, float, float, float]:
    if isinstance(text, (list, tuple)):
        parts = list(text)
    else:
        parts = str(text).split(",")
    try:
        bbox = tuple(float(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad bbox {text!r}") from None
    if len(bbox) != 4 or not (bbox[0] < bbox[2] and bbox[1] < bbox[3]):
        raise ConfigError(f"bbox must be lon_min,lat_min,lon_max,lat_max: {text!r}")
    return bbox


def parse_window(text: str, day: Optional[int]) -> Tuple[int, int]:
    """``"07:00..07:30"`` (on ``day``, epoch seconds of a midnight) or ``"ISO..ISO"``."""
    if ".." not in text:
        raise ConfigError(f"window must be START..END: {text!r}")
    a, b = (s.strip() for s in text.split("..", 1))
    try:
        if re.fullmatch(r"\d{1,2}:\d{2}(:\d{2})?", a) and re.fullmatch(r"\d{1,2}:\d{2}(:\d{2})?", b):
            if day is None:
                raise ConfigError("time-of-day window needs a day")

            def tod(s):
                parts = [int(p) for p in s.split(":")] + [0]
                return parts[0] * 3600 + parts[1] * 60 + parts[2]
            start, end = day + tod(a), day + tod(b)
        else:
            start, end = parse_timestamp(a), parse_timestamp(b)
    except ValueError as exc:
        raise ConfigError(f"bad window {text!r}: {exc}") from None
    if not start < end:
        raise ConfigError(f"empty window {text!r}")
    return start, end


def _floats(text) -> List[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


def _durations(text) -> List[int]:
    if isinstance(text, (list, tuple)):
        return [parse_duration(v) for v in text]
    return [parse_duration(v) for v in str(text).split(",") if v.strip()]


@dataclass
class RunConfig:
    input: Optional[str] = None
    schema: Dict[str, str] = field(default_factory=dict)
    strict: bool = False
    min_duration: int = 60
    bbox: Tuple[float, float, float, float] = NYC_BBOX
    qi_window: Optional[str] = None
    day: Optional[str] = None
    grid: Optional[float] = None
    twindow: Optional[int] = None
    grid_bbox: Optional[Tuple[float, float, float, float]] = None
    time_origin: Optional[str] = None
    areas: Optional[str] = None
    area_window: Optional[str] = None
    sigma_space: Optional[float] = None
    sigma_time: Optional[int] = None
    seed: int = 0
    repetitions: int = 3
    sweep_spatial: List[float] = field(default_factory=lambda: list(DEFAULT_SWEEP_SPATIAL))
    sweep_temporal: List[int] = field(default_factory=lambda: list(DEFAULT_SWEEP_TEMPORAL))
    out: str = "trajrisk-out"
    drop_self_loops: bool = False
    jobs: int = 1
    emit_perturbed: bool = False
    svg: bool = True

    @property
    def noisy(self) -> bool:
        return self.sigma_space is not None or self.sigma_time is not None

    def noise(self) -> NoiseConfig:
        try:
            return NoiseConfig(self.sigma_space or 0.0, self.sigma_time or 0,
                               self.seed, self.repetitions)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def area_source(self) -> Dict[str, Any]:
        return {"grid": self.grid, "twindow": self.twindow, "grid_bbox": self.grid_bbox,
                "time_origin": self.time_origin, "areas": self.areas,
                "area_window": self.area_window}

    def echo(self) -> Dict[str, Any]:
        # output location and parallelism do not change results
        d = asdict(self)
        del d["out"], d["jobs"]
        d["bbox"] = list(self.bbox)
        if self.grid_bbox is not None:
            d["grid_bbox"] = list(self.grid_bbox)
        return d


# keys accepted in config files, with the converter applied to their string values
CONFIG_KEYS = {
    "input": str, "strict": "bool", "min_duration": parse_duration, "bbox": parse_bbox,
    "qi_window": str, "day": str, "grid": float, "twindow": parse_duration,
    "grid_bbox": parse_bbox, "time_origin": str, "areas": str, "area_window": str,
    "sigma_space": float, "sigma_time": parse_duration, "seed": int, "repetitions": int,
    "sweep_spatial": _floats, "sweep_temporal": _durations, "out": str,
    "drop_self_loops": "bool", "jobs": int, "emit_perturbed": "bool", "svg": "bool",
}


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    s = str(text).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"bad boolean {text!r}")


def convert(key: str, value):
    conv = CONFIG_KEYS[key]
    try:
        return _bool(value) if conv == "bool" else conv(value)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: {exc}") from None


def read_config_file(path: str) -> Dict[str, Any]:
    """Flat ``key = value`` file; ``[section]`` headers are ignored and values may be quoted.

    Keys prefixed ``schema.`` map logical CSV fields to column names.
    """
    values: Dict[str, Any] = {}
    schema: Dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line or (line.startswith("[") and line.endswith("]")):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            key = key.replace("-", "_")
            if key.startswith("schema."):
                schema[key[len("schema."):]] = value
            elif key in CONFIG_KEYS:
                values[key] = convert(key, value)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    if schema:
        values["schema"] = schema
    return values


# -- pipeline steps ------------------------------------------------------------

def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def load_input(cfg: RunConfig) -> Tuple[Dataset, Dataset, Dict[str, Any], str]:
    """Parse and filter the input; returns (raw, filtered, filter summary, digest)."""
    if not cfg.input:
        raise ConfigError("no input file given")
    digest = sha256_file(cfg.input)
    try:
        with open(cfg.input, encoding="utf-8", newline="") as fh:
            raw = parse_dataset(fh, cfg.schema or None, strict=cfg.strict, provenance=cfg.input)
    except SchemaError as exc:
        raise ConfigError(str(exc)) from None
    window = None
    if cfg.qi_window:
        day = None
        if cfg.day:
            day = parse_timestamp(cfg.day)
        elif len(raw):
            day = min(tr.qi.t for tr in raw)
        if day is not None:
            day -= day % 86400
        window = parse_window(cfg.qi_window, day)
    try:
        fcfg = FilterConfig(cfg.min_duration, tuple(cfg.bbox), window)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    filtered, rep = filter_dataset(raw, fcfg)
    summary = {"parse_errors": raw.parse_errors, **asdict(rep),
               "time_window": None if window is None else [format_timestamp(w) for w in window]}
    log.info("parsed %d trips (%d malformed), kept %d", len(raw), raw.parse_errors, len(filtered))
    return raw, filtered, summary, digest


def make_areas(cfg: RunConfig, d: Dataset, grid: Optional[float] = None,
               twindow: Optional[int] = None):
    grid = cfg.grid if grid is None else grid
    twindow = cfg.twindow if twindow is None else twindow
    if (grid is None) == (cfg.areas is None):
        raise ConfigError("give exactly one area source: --grid or --areas")
    try:
        if grid is not None:
            if twindow is None:
                raise ConfigError("--grid needs --twindow")
            bbox = cfg.grid_bbox or cfg.bbox
            origin = parse_timestamp(cfg.time_origin) if cfg.time_origin else default_time_origin(d)
            ew, ns = approx_cell_meters(grid, (bbox[1] + bbox[3]) / 2)
            log.info("grid %s deg ~ %.0f m x %.0f m, %s s slots", grid, ew, ns, twindow)
            return build_grid(bbox, grid, twindow, None, origin)
        default = None
        if cfg.area_window:
            default = [parse_window(cfg.area_window, None)]
        with open(cfg.areas, encoding="utf-8") as fh:
            gj = json.load(fh)
        return load_polygon_areas(gj, default)
    except (AreaError, json.JSONDecodeError) as exc:
        raise ConfigError(str(exc)) from None


def _write_outputs(report: ScoreReport, outdir: str, suffix: str, svg: bool) -> List[str]:
    """Report JSON, per-metric area GeoJSON and staircases; returns paths written."""
    os.makedirs(outdir, exist_ok=True)
    paths = []
    p = os.path.join(outdir, f"report{suffix}.json")
    write_report_json(report, p)
    paths.append(p)
    for m in AREA_METRICS:
        p = os.path.join(outdir, f"areas_{m}{suffix}.geojson")
        emit_area_geojson(report, m, p)
        paths.append(p)
    for m in STAIRCASE_METRICS:
        if m not in report.result.staircases:
            continue
        for fmt_ in (("csv", "svg") if svg else ("csv",)):
            p = os.path.join(outdir, f"staircase_{m}{suffix}.{fmt_}")
            emit_staircase(report, m, p, fmt_)
            paths.append(p)
    return paths


def _write_diffs(raw: ScoreReport, anon: ScoreReport, outdir: str) -> List[str]:
    paths = []
    for m in AREA_METRICS:
        p = os.path.join(outdir, f"diff_{m}.geojson")
        emit_diff_geojson(raw, anon, m, p)
        paths.append(p)
    return paths


def write_manifest(cfg: RunConfig, command: str, digest: Optional[str], files: Sequence[str],
                   extra: Optional[Dict[str, Any]] = None) -> str:
    path = os.path.join(cfg.out, "manifest.json")
    manifest = {
        "tool": "trajrisk",
        "version": __version__,
        "command": command,
        "config": cfg.echo(),
        "input": {"path": cfg.input, "sha256": digest},
        **(extra or {}),
        "files": {os.path.relpath(f, cfg.out).replace(os.sep, "/"): sha256_file(f)
                  for f in sorted(files)},
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, indent=1) + "\n")
    return path


def _report(result, areas, cfg: RunConfig, filters, extra=None) -> ScoreReport:
    config = {"areas": areas.config(), "filters": filters,
              "drop_self_loops": cfg.drop_self_loops, **(extra or {})}
    return ScoreReport(result, areas, config)


def _prepare(cfg: RunConfig) -> Tuple[Dataset, Dict[str, Any], str]:
    _, d, filters, digest = load_input(cfg)
    if not len(d):
        raise EmptyDatasetError("no trajectories left after filtering")
    return d, filters, digest


def _noise_echo(noise: NoiseConfig) -> Dict[str, Any]:
    return asdict(noise)


def cmd_ingest(cfg: RunConfig) -> int:
    raw, d, filters, digest = load_input(cfg)
    os.makedirs(cfg.out, exist_ok=True)
    p_csv = os.path.join(cfg.out, "dataset.csv")
    with open(p_csv, "w", encoding="utf-8", newline="") as fh:
        write_dataset(d, fh)
    p_rep = os.path.join(cfg.out, "filter_report.json")
    with open(p_rep, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(filters, indent=1) + "\n")
    write_manifest(cfg, "ingest", digest, [p_csv, p_rep])
    if not len(d):
        raise EmptyDatasetError("no trajectories left after filtering")
    return EXIT_OK


def cmd_score(cfg: RunConfig) -> int:
    d, filters, digest = _prepare(cfg)
    areas = make_areas(cfg, d)
    result = score_area_set(d, areas, cfg.drop_self_loops)
    report = _report(result, areas, cfg, filters)
    files = _write_outputs(report, cfg.out, "", cfg.svg)
    write_manifest(cfg, "score", digest, files)
    return EXIT_OK


def _sweep_label(size: float, seconds: int) -> str:
    return f"s{size!r}_t{fmt(seconds / 60)}"


def _sweep_job(args):
    cfg, d, perturbed, filters, size, seconds = args
    areas = make_areas(cfg, d, size, seconds)
    sub = os.path.join(cfg.out, _sweep_label(size, seconds))
    raw = _report(score_area_set(d, areas, cfg.drop_self_loops), areas, cfg, filters)
    files = _write_outputs(raw, sub, "", cfg.svg)
    stairs = {"raw": raw.result.staircases}
    if perturbed is not None:
        results = [score_area_set(pd, areas, cfg.drop_self_loops) for pd in perturbed]
        anon = _report(average_results(results), areas, cfg, filters,
                       {"noise": _noise_echo(cfg.noise())})
        files += _write_outputs(anon, sub, "_anon", cfg.svg)
        files += _write_diffs(raw, anon, sub)
        stairs["anonymized"] = anon.result.staircases
    return size, seconds, files, stairs


def cmd_sweep(cfg: RunConfig) -> int:
    if not cfg.sweep_spatial or not cfg.sweep_temporal:
        raise ConfigError("sweep needs non-empty spatial and temporal size lists")
    if cfg.areas is not None:
        raise ConfigError("sweep works on grids only; drop --areas")
    d, filters, digest = _prepare(cfg)
    grid_cfg = replace(cfg, grid=cfg.sweep_spatial[0], twindow=cfg.sweep_temporal[0])
    if cfg.time_origin is None:
        # one time origin for every configuration keeps the grids nested
        grid_cfg.time_origin = format_timestamp(default_time_origin(d))
    perturbed = None
    extra = {}
    if cfg.noisy:
        noise = cfg.noise()
        runs = perturb_repetitions(d, noise)
        perturbed = [pd for pd, _ in runs]
        extra = {"noise": _noise_echo(noise), "perturb_reports": [asdict(r) for _, r in runs]}
    jobs = [(grid_cfg, d, perturbed, filters, s, t)
            for s in cfg.sweep_spatial for t in cfg.sweep_temporal]
    if cfg.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            done = list(pool.map(_sweep_job, jobs))
    else:
        done = [_sweep_job(j) for j in jobs]

    files: List[str] = []
    rows = [repr(s) for s in cfg.sweep_spatial]
    cols = [f"{fmt(t / 60)} min" for t in cfg.sweep_temporal]
    per_metric: Dict[str, Dict] = {m: {} for m in STAIRCASE_METRICS}
    for size, seconds, written, stairs in done:
        files += written
        for series, by_metric in stairs.items():
            for m, st in by_metric.items():
                per_metric[m].setdefault((repr(size), f"{fmt(seconds / 60)} min"), {})[series] = st
    for m, cells in per_metric.items():
        if not cells:
            continue
        p = os.path.join(cfg.out, f"sweep_staircase_{m}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            fh.write(staircase_table_csv(cells))
        files.append(p)
        if cfg.svg:
            p = os.path.join(cfg.out, f"sweep_staircase_{m}.svg")
            with open(p, "w", encoding="utf-8") as fh:
                fh.write(staircase_panel_svg(cells, rows, cols, m))
            files.append(p)
    write_manifest(cfg, "sweep", digest, files, {"effective_time_origin": grid_cfg.time_origin, **extra})
    return EXIT_OK


def cmd_perturb(cfg: RunConfig) -> int:
    d, filters, digest = _prepare(cfg)
    noise = cfg.noise()
    os.makedirs(cfg.out, exist_ok=True)
    files = []
    reports = []
    for r in range(noise.repetitions):
        pd, rep = perturb(d, noise, r)
        reports.append(asdict(rep))
        p = os.path.join(cfg.out, f"perturbed_r{r}.csv")
        with open(p, "w", encoding="utf-8", newline="") as fh:
            write_dataset(pd, fh)
        files.append(p)
    p = os.path.join(cfg.out, "perturb_report.json")
    with open(p, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(reports, indent=1) + "\n")
    files.append(p)
    write_manifest(cfg, "perturb", digest, files, {"noise": _noise_echo(noise)})
    return EXIT_OK


def cmd_compare(raw_cfg: RunConfig, noise_cfg: Optional[RunConfig] = None) -> int:
    """Score raw and repetition-averaged perturbed data on one area set; emit diffs."""
    noise_cfg = noise_cfg or raw_cfg
    if raw_cfg.area_source() != noise_cfg.area_source():
        raise ConfigError("raw and anonymized configurations use different area sources")
    d, filters, digest = _prepare(raw_cfg)
    areas = make_areas(raw_cfg, d)
    noise = noise_cfg.noise()
    raw = _report(score_area_set(d, areas, raw_cfg.drop_self_loops), areas, raw_cfg, filters)
    runs = perturb_repetitions(d, noise)
    anon_result = average_results([score_area_set(pd, areas, raw_cfg.drop_self_loops)
                                   for pd, _ in runs])
    anon = _report(anon_result, areas, raw_cfg, filters, {"noise": _noise_echo(noise)})
    files = _write_outputs(raw, raw_cfg.out, "", raw_cfg.svg)
    files += _write_outputs(anon, raw_cfg.out, "_anon", raw_cfg.svg)
    files += _write_diffs(raw, anon, raw_cfg.out)
    if raw_cfg.emit_perturbed or noise_cfg.emit_perturbed:
        for r, (pd, _) in enumerate(runs):
            p = os.path.join(raw_cfg.out, f"perturbed_r{r}.csv")
            with open(p, "w", encoding="utf-8", newline="") as fh:
                write_dataset(pd, fh)
            files.append(p)
    write_manifest(raw_cfg, "compare", digest, files,
                   {"noise": _noise_echo(noise), "perturb_reports": [asdict(r) for _, r in runs]})
    return EXIT_OK
