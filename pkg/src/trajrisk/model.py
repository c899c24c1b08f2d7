"""Trajectory data model, trip-record CSV ingestion and cleaning filters.

Timestamps are integer seconds since the Unix epoch (UTC). Coordinates are
``(lon, lat)`` pairs in WGS84 degrees.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, TextIO, Tuple

log = logging.getLogger(__name__)

Coord = Tuple[float, float]
BBox = Tuple[float, float, float, float]

# lon in [-74.667, -71.75], lat in [40.3, 41.5]
NYC_BBOX: BBox = (-74.667, 40.3, -71.75, 41.5)

LOGICAL_FIELDS = (
    "pickup_time",
    "dropoff_time",
    "pickup_lon",
    "pickup_lat",
    "dropoff_lon",
    "dropoff_lat",
)
CANONICAL_COLUMNS = (
    "id",
    "pickup_time",
    "pickup_lon",
    "pickup_lat",
    "dropoff_time",
    "dropoff_lon",
    "dropoff_lat",
)

DEFAULT_SCHEMA: Dict[str, str] = {name: name for name in CANONICAL_COLUMNS}

# Column names of the 2009 yellow-cab trip files.
NYC_TLC_2009_SCHEMA: Dict[str, str] = {
    "pickup_time": "Trip_Pickup_DateTime",
    "dropoff_time": "Trip_Dropoff_DateTime",
    "pickup_lon": "Start_Lon",
    "pickup_lat": "Start_Lat",
    "dropoff_lon": "End_Lon",
    "dropoff_lat": "End_Lat",
}


class SchemaError(ValueError):
    pass


class ParseError(ValueError):
    pass


_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)


def parse_timestamp(text: str) -> int:
    """Parse an ISO-8601 or ``YYYY-MM-DD HH:MM:SS`` string to epoch seconds.

    Naive values are taken as UTC; sub-second parts are truncated.
    """
    s = text.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    delta = dt - _EPOCH
    return delta.days * 86400 + delta.seconds


def format_timestamp(t: int) -> str:
    return datetime.fromtimestamp(t, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class Record:
    t: int
    s: Coord
    traj_id: str
    extras: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        lon, lat = self.s
        if not (-180.0 <= lon <= 180.0 and -90.0 <= lat <= 90.0):
            raise ValueError(f"coordinates out of range: {self.s!r}")
        if not self.traj_id:
            raise ValueError("empty trajectory id")

    @property
    def lon(self) -> float:
        return self.s[0]

    @property
    def lat(self) -> float:
        return self.s[1]


@dataclass(frozen=True)
class Trajectory:
    """Ordered records with a quasi-identifier and a sensitive-attribute point.

    Ordering by time is expected of ingested data but not enforced, since
    perturbed trips may end up with the drop-off before the pick-up.
    """

    id: str
    records: Tuple[Record, ...]
    qi_index: int = 0
    sa_index: int = -1

    def __post_init__(self):
        n = len(self.records)
        if n < 2:
            raise ValueError(f"trajectory {self.id!r} has {n} records, need >= 2")
        qi = self.qi_index % n
        sa = self.sa_index % n
        if qi == sa:
            raise ValueError(f"trajectory {self.id!r}: qi_index == sa_index")
        object.__setattr__(self, "qi_index", qi)
        object.__setattr__(self, "sa_index", sa)

    @property
    def qi(self) -> Record:
        return self.records[self.qi_index]

    @property
    def sa(self) -> Record:
        return self.records[self.sa_index]

    @property
    def duration(self) -> int:
        return self.sa.t - self.qi.t


@dataclass(frozen=True)
class Dataset:
    trajectories: Tuple[Trajectory, ...]
    provenance: str = ""
    parse_errors: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trajectories", tuple(self.trajectories))
        ids = [tr.id for tr in self.trajectories]
        if len(set(ids)) != len(ids):
            raise ValueError("trajectory ids must be unique within a dataset")

    def __len__(self):
        return len(self.trajectories)

    def __iter__(self):
        return iter(self.trajectories)

    def time_span(self) -> Optional[Tuple[int, int]]:
        times = [r.t for tr in self.trajectories for r in tr.records]
        if not times:
            return None
        return min(times), max(times)


def trip(traj_id: str, pickup_t: int, pickup: Coord, dropoff_t: int, dropoff: Coord,
         extras: Optional[Mapping[str, str]] = None) -> Trajectory:
    """Build a two-point trajectory (origin as QI, destination as SA)."""
    extras = dict(extras or {})
    return Trajectory(
        traj_id,
        (Record(pickup_t, (float(pickup[0]), float(pickup[1])), traj_id, extras),
         Record(dropoff_t, (float(dropoff[0]), float(dropoff[1])), traj_id, extras)),
        0,
        1,
    )


def read_schema_file(path: str) -> Dict[str, str]:
    """Read a ``logical_field=column`` mapping, one pair per line."""
    schema = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected key=column")
            key, value = (part.strip() for part in line.split("=", 1))
            schema[key] = value
    return schema


def _timestamp_style(text: str) -> str:
    s = text.strip()
    return "iso" if len(s) > 10 and s[10] in "Tt" else "space"


def parse_dataset(stream: TextIO, schema: Optional[Mapping[str, str]] = None, *,
                  strict: bool = False, provenance: str = "") -> Dataset:
    """Read one two-point trajectory per CSV row.

    Malformed rows are skipped and counted in ``Dataset.parse_errors``; with
    ``strict=True`` the first one raises :class:`ParseError`. A mapped column
    missing from the header raises :class:`SchemaError`.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    unknown = set(schema) - set(LOGICAL_FIELDS) - {"id"}
    if unknown:
        raise SchemaError(f"unknown logical fields in schema: {sorted(unknown)}")
    for name in LOGICAL_FIELDS:
        schema.setdefault(name, name)

    reader = csv.reader(stream)
    try:
        header = next(reader)
    except StopIteration:
        raise SchemaError("input has no header row") from None
    index = {name: i for i, name in enumerate(header)}

    id_col = schema.get("id")
    if id_col is not None and id_col not in index:
        # only the default "id" mapping is optional
        if id_col != "id":
            raise SchemaError(f"id column {id_col!r} not in header")
        id_col = None
    missing = [schema[f] for f in LOGICAL_FIELDS if schema[f] not in index]
    if missing:
        raise SchemaError(f"mapped columns missing from header: {missing}")

    mapped = {schema[f] for f in LOGICAL_FIELDS}
    if id_col is not None:
        mapped.add(id_col)
    extra_cols = [(i, name) for i, name in enumerate(header) if name not in mapped]
    cols = {f: index[schema[f]] for f in LOGICAL_FIELDS}
    id_idx = index[id_col] if id_col is not None else None

    styles: Dict[str, str] = {}
    seen = set()
    trajectories: List[Trajectory] = []
    errors = 0
    for rowno, row in enumerate(reader, 1):
        if not row:
            continue
        try:
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}")
            times = {}
            for f in ("pickup_time", "dropoff_time"):
                raw = row[cols[f]]
                style = _timestamp_style(raw)
                if styles.setdefault(f, style) != style:
                    raise ParseError(f"{f}: timestamp format differs from earlier rows")
                times[f] = parse_timestamp(raw)
            coords = {f: float(row[cols[f]]) for f in LOGICAL_FIELDS[2:]}
            traj_id = row[id_idx].strip() if id_idx is not None else str(rowno)
            if traj_id in seen:
                raise ParseError(f"duplicate trajectory id {traj_id!r}")
            extras = {name: row[i] for i, name in extra_cols if row[i] != ""}
            tr = trip(
                traj_id,
                times["pickup_time"], (coords["pickup_lon"], coords["pickup_lat"]),
                times["dropoff_time"], (coords["dropoff_lon"], coords["dropoff_lat"]),
                extras,
            )
        except (ValueError, OverflowError) as exc:
            if strict:
                raise ParseError(f"row {rowno}: {exc}") from exc
            log.debug("skipping row %d: %s", rowno, exc)
            errors += 1
            continue
        seen.add(traj_id)
        trajectories.append(tr)
    if errors:
        log.warning("%d malformed rows skipped", errors)
    return Dataset(tuple(trajectories), provenance, errors)


def write_dataset(d: Dataset, stream: TextIO) -> None:
    """Write the canonical CSV: fixed columns, then extras in key order."""
    extra_keys = sorted({k for tr in d for k in tr.qi.extras})
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(list(CANONICAL_COLUMNS) + extra_keys)
    for tr in d:
        qi, sa = tr.qi, tr.sa
        writer.writerow([
            tr.id,
            format_timestamp(qi.t), f"{qi.lon:.6f}", f"{qi.lat:.6f}",
            format_timestamp(sa.t), f"{sa.lon:.6f}", f"{sa.lat:.6f}",
        ] + [qi.extras.get(k, "") for k in extra_keys])


@dataclass(frozen=True)
class FilterConfig:
    min_duration: int = 60
    bbox: BBox = NYC_BBOX
    time_window: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.min_duration < 0:
            raise ValueError("min_duration must be >= 0")
        lon0, lat0, lon1, lat1 = self.bbox
        if not (lon0 < lon1 and lat0 < lat1):
            raise ValueError(f"bbox not well-ordered: {self.bbox!r}")
        if self.time_window is not None and not self.time_window[0] < self.time_window[1]:
            raise ValueError(f"empty time window: {self.time_window!r}")


@dataclass(frozen=True)
class FilterReport:
    input_count: int = 0
    kept_count: int = 0
    dropped_duration: int = 0
    dropped_bbox: int = 0
    dropped_window: int = 0


def in_bbox(s: Coord, bbox: BBox) -> bool:
    return bbox[0] <= s[0] <= bbox[2] and bbox[1] <= s[1] <= bbox[3]


def filter_dataset(d: Dataset, f: FilterConfig) -> Tuple[Dataset, FilterReport]:
    """Drop short trips, trips leaving the bbox, and trips starting outside the window.

    Each dropped trip is attributed to the first failing rule, checked in the
    order duration, bbox, window.
    """
    kept = []
    n_dur = n_bbox = n_win = 0
    for tr in d:
        qi, sa = tr.qi, tr.sa
        if sa.t - qi.t < f.min_duration:
            n_dur += 1
        elif not (in_bbox(qi.s, f.bbox) and in_bbox(sa.s, f.bbox)):
            n_bbox += 1
        elif f.time_window is not None and not (f.time_window[0] <= qi.t < f.time_window[1]):
            n_win += 1
        else:
            kept.append(tr)
    report = FilterReport(len(d), len(kept), n_dur, n_bbox, n_win)
    return Dataset(tuple(kept), d.provenance, d.parse_errors), report
