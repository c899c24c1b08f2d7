"""Equivalence areas: uniform spatio-temporal grids and polygon sets.

Both kinds expose the same small surface: ``locate(t, s)`` returns the id of
the area containing a spatio-temporal point (or ``None``), ``feature(id)``
materializes an area as a GeoJSON feature, and ``fingerprint()`` identifies
the set so reports computed against different sets are never mixed.
"""
from __future__ import annotations

import functools
import hashlib
import json
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

from .model import BBox, Coord, Dataset, format_timestamp, parse_timestamp

Ring = Tuple[Coord, ...]
Polygon = Tuple[Ring, ...]          # exterior ring first, then holes
Interval = Tuple[int, int]          # [start, end) in epoch seconds

METERS_PER_DEGREE = 111_320.0


class AreaError(ValueError):
    pass


def approx_cell_meters(size_deg: float, lat: float) -> Tuple[float, float]:
    """East-west and north-south extent in meters of a square degree cell at ``lat``."""
    return (size_deg * METERS_PER_DEGREE * math.cos(math.radians(lat)),
            size_deg * METERS_PER_DEGREE)


def default_time_origin(d: Dataset) -> int:
    """Midnight UTC of the day of the earliest record."""
    span = d.time_span()
    if span is None:
        return 0
    return span[0] - span[0] % 86400


# -- point in polygon --------------------------------------------------------

def _on_segment(x: float, y: float, x1: float, y1: float, x2: float, y2: float) -> bool:
    if (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1) != 0.0:
        return False
    return min(x1, x2) <= x <= max(x1, x2) and min(y1, y2) <= y <= max(y1, y2)


def point_in_polygon(x: float, y: float, polygon: Polygon) -> bool:
    """Even-odd rule over all rings; points on any edge count as inside."""
    inside = False
    for ring in polygon:
        x1, y1 = ring[-1]
        for x2, y2 in ring:
            if _on_segment(x, y, x1, y1, x2, y2):
                return True
            if (y1 > y) != (y2 > y) and x < (x2 - x1) * (y - y1) / (y2 - y1) + x1:
                inside = not inside
            x1, y1 = x2, y2
    return inside


def _polygon_bounds(polygon: Polygon) -> BBox:
    xs = [p[0] for p in polygon[0]]
    ys = [p[1] for p in polygon[0]]
    return min(xs), min(ys), max(xs), max(ys)


# -- packed R-tree -----------------------------------------------------------

class PackedRTree:
    """Static bounding-box tree, bulk-loaded with Sort-Tile-Recursive packing.

    ``query_point`` returns the payloads of every entry whose box contains the
    point (boundary inclusive), in no particular order.
    """

    def __init__(self, entries: Sequence[Tuple[BBox, Any]], node_capacity: int = 16):
        if node_capacity < 2:
            raise ValueError("node_capacity must be >= 2")
        self.node_capacity = node_capacity
        self.size = len(entries)
        # a node is (bbox, children, is_leaf); leaf children are (bbox, payload)
        level = [(bbox, payload) for bbox, payload in entries]
        self._root = None
        leaf = True
        while level:
            nodes = self._pack(level, leaf)
            leaf = False
            if len(nodes) == 1:
                self._root = nodes[0]
                break
            level = nodes

    def _pack(self, items, leaf):
        cap = self.node_capacity
        n_nodes = math.ceil(len(items) / cap)
        n_slabs = math.ceil(math.sqrt(n_nodes))
        per_slab = n_slabs * cap
        items = sorted(items, key=lambda it: (it[0][0] + it[0][2], it[0][1] + it[0][3]))
        nodes = []
        for i in range(0, len(items), per_slab):
            slab = sorted(items[i:i + per_slab], key=lambda it: (it[0][1] + it[0][3], it[0][0] + it[0][2]))
            for j in range(0, len(slab), cap):
                group = slab[j:j + cap]
                box = (min(g[0][0] for g in group), min(g[0][1] for g in group),
                       max(g[0][2] for g in group), max(g[0][3] for g in group))
                nodes.append((box, group, leaf))
        return nodes

    def query_point(self, x: float, y: float) -> List[Any]:
        out = []
        if self._root is None:
            return out
        stack = [self._root]
        while stack:
            box, children, leaf = stack.pop()
            if not (box[0] <= x <= box[2] and box[1] <= y <= box[3]):
                continue
            if leaf:
                for b, payload in children:
                    if b[0] <= x <= b[2] and b[1] <= y <= b[3]:
                        out.append(payload)
            else:
                stack.extend(children)
        return out

    def __len__(self):
        return self.size


# -- areas -------------------------------------------------------------------

@dataclass(frozen=True)
class EquivalenceArea:
    area_id: str
    spatial: Tuple[Polygon, ...]
    temporal: Optional[Tuple[Interval, ...]] = None     # None: all time
    label: str = ""

    def active(self, t: int) -> bool:
        if self.temporal is None:
            return True
        return any(a <= t < b for a, b in self.temporal)

    def contains(self, t: int, s: Coord) -> bool:
        return self.active(t) and any(point_in_polygon(s[0], s[1], p) for p in self.spatial)

    def feature_parts(self) -> Tuple[str, str, Optional[List[List[str]]]]:
        """Encoded geometry JSON, label and ISO time windows."""
        f = self.feature()
        geometry = json.dumps(f["geometry"], separators=(",", ":"))
        return geometry, self.label, f["properties"]["time_windows"]

    def feature(self) -> Dict[str, Any]:
        if len(self.spatial) == 1:
            geometry = {"type": "Polygon", "coordinates": _rings_json(self.spatial[0])}
        else:
            geometry = {"type": "MultiPolygon",
                        "coordinates": [_rings_json(p) for p in self.spatial]}
        windows = None
        if self.temporal is not None:
            windows = [[format_timestamp(a), format_timestamp(b)] for a, b in self.temporal]
        return {
            "type": "Feature",
            "geometry": geometry,
            "properties": {"area_id": self.area_id, "label": self.label,
                           "time_windows": windows},
        }


def _rings_json(polygon: Polygon) -> List[List[List[float]]]:
    return [[[x, y] for x, y in ring] for ring in polygon]


def _check_intervals(intervals: Sequence[Interval], where: str) -> Tuple[Interval, ...]:
    ivs = tuple(sorted((int(a), int(b)) for a, b in intervals))
    for a, b in ivs:
        if not a < b:
            raise AreaError(f"{where}: empty time interval [{a}, {b})")
    for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
        if a1 < b0:
            raise AreaError(f"{where}: overlapping time intervals")
    return ivs


class GridAreaSet:
    """Regular lon/lat/time grid aligned to the bbox min corner and ``time_origin``.

    Cells are half-open in every axis and clipped to the bbox. Edges are
    computed in exact rational arithmetic so that a grid whose sizes are
    integer multiples of another's nests into it exactly.
    """

    kind = "grid"

    def __init__(self, bbox: BBox, spatial_size: float, temporal_size: int,
                 time_origin: int = 0, time_range: Optional[Interval] = None):
        lon0, lat0, lon1, lat1 = (float(v) for v in bbox)
        if not (lon0 < lon1 and lat0 < lat1):
            raise AreaError(f"degenerate bbox {bbox!r}")
        if not spatial_size > 0 or not temporal_size > 0:
            raise AreaError("grid sizes must be positive")
        if int(temporal_size) != temporal_size:
            raise AreaError("temporal_size must be a whole number of seconds")
        if time_range is not None and not time_range[0] < time_range[1]:
            raise AreaError(f"empty time range {time_range!r}")
        self.bbox = (lon0, lat0, lon1, lat1)
        self.spatial_size = float(spatial_size)
        self.temporal_size = int(temporal_size)
        self.time_origin = int(time_origin)
        self.time_range = None if time_range is None else (int(time_range[0]), int(time_range[1]))

        self._size = Fraction(repr(self.spatial_size))
        self._lon0 = Fraction(lon0)
        self._lat0 = Fraction(lat0)
        self.ncols = math.ceil((Fraction(lon1) - self._lon0) / self._size)
        self.nrows = math.ceil((Fraction(lat1) - self._lat0) / self._size)
        if self.time_range is None:
            self.slot_range = None
        else:
            a, b = self.time_range
            self.slot_range = ((a - self.time_origin) // self.temporal_size,
                               -((self.time_origin - b) // self.temporal_size))
        self._wc = len(str(self.ncols - 1))
        self._wr = len(str(self.nrows - 1))

    def __repr__(self):
        return (f"GridAreaSet(bbox={self.bbox}, spatial_size={self.spatial_size}, "
                f"temporal_size={self.temporal_size}, time_origin={self.time_origin}, "
                f"time_range={self.time_range})")

    @property
    def n_cells(self) -> Optional[int]:
        if self.slot_range is None:
            return None
        return self.ncols * self.nrows * (self.slot_range[1] - self.slot_range[0])

    def __len__(self):
        n = self.n_cells
        if n is None:
            raise TypeError("grid without a time range has unbounded cell count")
        return n

    def fingerprint(self) -> str:
        return "grid:" + json.dumps([self.bbox, repr(self.spatial_size), self.temporal_size,
                                     self.time_origin, self.time_range])

    def cell_id(self, col: int, row: int, slot: int) -> str:
        return f"g_{col:0{self._wc}d}_{row:0{self._wr}d}_{slot}"

    @staticmethod
    def parse_cell_id(area_id: str) -> Tuple[int, int, int]:
        _, col, row, slot = area_id.split("_")
        return int(col), int(row), int(slot)

    def _index(self, v: float, origin_f: float, origin: Fraction) -> int:
        q = (v - origin_f) / self.spatial_size
        i = math.floor(q)
        frac = q - i
        if frac < 1e-7 or frac > 1 - 1e-7:
            # close to an edge: decide exactly
            i = math.floor((Fraction(v) - origin) / self._size)
        return i

    def locate_cell(self, t: int, s: Coord) -> Optional[Tuple[int, int, int]]:
        lon, lat = s
        b = self.bbox
        if not (b[0] <= lon < b[2] and b[1] <= lat < b[3]):
            return None
        if self.time_range is not None and not (self.time_range[0] <= t < self.time_range[1]):
            return None
        col = self._index(lon, b[0], self._lon0)
        row = self._index(lat, b[1], self._lat0)
        slot = (t - self.time_origin) // self.temporal_size
        return col, row, slot

    def locate(self, t: int, s: Coord) -> Optional[str]:
        cell = self.locate_cell(t, s)
        return None if cell is None else self.cell_id(*cell)

    def area_ids(self) -> Iterator[str]:
        if self.slot_range is None:
            raise TypeError("grid without a time range cannot be enumerated")
        for col in range(self.ncols):
            for row in range(self.nrows):
                for slot in range(*self.slot_range):
                    yield self.cell_id(col, row, slot)

    @functools.lru_cache(maxsize=4096)
    def _edge(self, axis: int, i: int) -> float:
        origin, limit = (self._lon0, self.bbox[2]) if axis == 0 else (self._lat0, self.bbox[3])
        return min(float(origin + i * self._size), limit)

    def area(self, area_id: str) -> EquivalenceArea:
        col, row, slot = self.parse_cell_id(area_id)
        x0, x1 = self._edge(0, col), self._edge(0, col + 1)
        y0, y1 = self._edge(1, row), self._edge(1, row + 1)
        t0 = self.time_origin + slot * self.temporal_size
        t1 = t0 + self.temporal_size
        if self.time_range is not None:
            t0, t1 = max(t0, self.time_range[0]), min(t1, self.time_range[1])
        ring = ((x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0))
        return EquivalenceArea(area_id, ((ring,),), ((t0, t1),), "")

    def feature(self, area_id: str) -> Dict[str, Any]:
        return self.area(area_id).feature()

    def feature_parts(self, area_id: str):
        col, row, slot = self.parse_cell_id(area_id)
        return self._geometry_json(col, row), "", [self._slot_window(slot)]

    @functools.lru_cache(maxsize=65536)
    def _geometry_json(self, col: int, row: int) -> str:
        x0, x1 = self._edge(0, col), self._edge(0, col + 1)
        y0, y1 = self._edge(1, row), self._edge(1, row + 1)
        return json.dumps({"type": "Polygon", "coordinates": [
            [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]]}, separators=(",", ":"))

    @functools.lru_cache(maxsize=4096)
    def _slot_window(self, slot: int) -> List[str]:
        t0 = self.time_origin + slot * self.temporal_size
        t1 = t0 + self.temporal_size
        if self.time_range is not None:
            t0, t1 = max(t0, self.time_range[0]), min(t1, self.time_range[1])
        return [format_timestamp(t0), format_timestamp(t1)]

    def config(self) -> Dict[str, Any]:
        return {"kind": "grid", "bbox": list(self.bbox), "spatial_size": self.spatial_size,
                "temporal_size": self.temporal_size, "time_origin": self.time_origin,
                "time_range": None if self.time_range is None else list(self.time_range)}


def build_grid(bbox: BBox, spatial_size_deg: float, temporal_size: int,
               time_range: Optional[Interval] = None, time_origin: Optional[int] = None) -> GridAreaSet:
    if time_origin is None:
        time_origin = time_range[0] if time_range is not None else 0
    return GridAreaSet(bbox, spatial_size_deg, temporal_size, time_origin, time_range)


class PolygonAreaSet:
    """Polygon equivalence areas; later areas take priority where they overlap."""

    kind = "polygon"

    def __init__(self, areas: Sequence[EquivalenceArea]):
        self.areas = tuple(areas)
        self._by_id = {}
        for i, a in enumerate(self.areas):
            if a.area_id in self._by_id:
                raise AreaError(f"duplicate area_id {a.area_id!r}")
            self._by_id[a.area_id] = i
        entries = [(_polygon_bounds(p), (i, p))
                   for i, a in enumerate(self.areas) for p in a.spatial]
        self._tree = PackedRTree(entries)
        self._parts: Dict[str, Any] = {}

    def __len__(self):
        return len(self.areas)

    def __repr__(self):
        return f"PolygonAreaSet({len(self.areas)} areas)"

    @property
    def n_cells(self) -> int:
        return len(self.areas)

    def fingerprint(self) -> str:
        blob = json.dumps([a.feature() for a in self.areas], sort_keys=True)
        return "polygon:" + hashlib.sha256(blob.encode()).hexdigest()

    def locate(self, t: int, s: Coord) -> Optional[str]:
        x, y = s
        hits = self._tree.query_point(x, y)
        hits.sort(key=lambda h: h[0], reverse=True)
        for i, polygon in hits:
            area = self.areas[i]
            if area.active(t) and point_in_polygon(x, y, polygon):
                return area.area_id
        return None

    def area_ids(self) -> Iterator[str]:
        return (a.area_id for a in self.areas)

    def area(self, area_id: str) -> EquivalenceArea:
        return self.areas[self._by_id[area_id]]

    def priority(self, area_id: str) -> int:
        return self._by_id[area_id]

    def feature(self, area_id: str) -> Dict[str, Any]:
        return self.area(area_id).feature()

    def feature_parts(self, area_id: str):
        if area_id not in self._parts:
            self._parts[area_id] = self.area(area_id).feature_parts()
        return self._parts[area_id]

    def to_geojson(self) -> Dict[str, Any]:
        return {"type": "FeatureCollection", "features": [a.feature() for a in self.areas]}

    def config(self) -> Dict[str, Any]:
        return {"kind": "polygon", "areas": len(self.areas), "fingerprint": self.fingerprint()}


AreaSet = Any  # GridAreaSet | PolygonAreaSet


def locate(areas: AreaSet, t: int, s: Coord) -> Optional[str]:
    return areas.locate(t, s)


def _validate_polygon(coords, where: str) -> Polygon:
    from shapely.geometry import Polygon as ShapelyPolygon

    if not coords:
        raise AreaError(f"{where}: polygon without rings")
    rings = []
    for ring in coords:
        pts = tuple((float(p[0]), float(p[1])) for p in ring)
        if len(pts) < 4:
            raise AreaError(f"{where}: ring with fewer than 4 positions")
        if pts[0] != pts[-1]:
            raise AreaError(f"{where}: ring is not closed")
        rings.append(pts)
    shp = ShapelyPolygon(rings[0], rings[1:])
    if not shp.is_valid:
        from shapely.validation import explain_validity
        raise AreaError(f"{where}: invalid polygon ({explain_validity(shp)})")
    return tuple(rings)


def load_polygon_areas(geojson: Dict[str, Any],
                       default_time_windows: Optional[Sequence[Interval]] = None) -> PolygonAreaSet:
    """Build a polygon area set from a GeoJSON FeatureCollection.

    Recognised feature properties: ``area_id``, ``label`` and
    ``time_windows`` (a list of ``[start, end)`` ISO-8601 pairs). Features
    without windows inherit ``default_time_windows``; ``None`` means the area
    is active at all times.
    """
    from shapely.geometry import MultiPolygon as ShapelyMultiPolygon
    from shapely.geometry import Polygon as ShapelyPolygon

    if geojson.get("type") != "FeatureCollection":
        raise AreaError("expected a GeoJSON FeatureCollection")
    default = None
    if default_time_windows is not None:
        default = _check_intervals(default_time_windows, "default_time_windows")
    areas = []
    for i, feat in enumerate(geojson.get("features", [])):
        props = feat.get("properties") or {}
        area_id = props.get("area_id", feat.get("id", i))
        area_id = str(area_id)
        where = f"feature {i} ({area_id})"
        geom = feat.get("geometry") or {}
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = (_validate_polygon(geom.get("coordinates"), where),)
        elif gtype == "MultiPolygon":
            parts = tuple(_validate_polygon(c, f"{where} part {j}")
                          for j, c in enumerate(geom.get("coordinates") or []))
            if not parts:
                raise AreaError(f"{where}: empty MultiPolygon")
            multi = ShapelyMultiPolygon([ShapelyPolygon(p[0], p[1:]) for p in parts])
            if not multi.is_valid:
                raise AreaError(f"{where}: MultiPolygon parts overlap")
        else:
            raise AreaError(f"{where}: unsupported geometry type {gtype!r}")
        windows = props.get("time_windows")
        if windows is None:
            temporal = default
        else:
            try:
                ivs = [(parse_timestamp(a), parse_timestamp(b)) for a, b in windows]
            except (TypeError, ValueError) as exc:
                raise AreaError(f"{where}: bad time_windows: {exc}") from exc
            temporal = _check_intervals(ivs, where)
        label = props.get("label") or ""
        areas.append(EquivalenceArea(area_id, parts, temporal, str(label)))
    return PolygonAreaSet(areas)


def grid_to_geojson(grid: GridAreaSet, area_ids: Optional[Sequence[str]] = None) -> Dict[str, Any]:
    ids = sorted(grid.area_ids()) if area_ids is None else sorted(area_ids)
    return {"type": "FeatureCollection", "features": [grid.feature(a) for a in ids]}
