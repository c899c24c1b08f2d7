"""Brute-force reference implementations and random instance generators.

The references deliberately take other routes than the engine: grid cells
are found by bisecting materialised exact edges instead of floor arithmetic,
polygon membership comes from shapely instead of the engine's ray casting,
and every metric is a plain loop over (area, trajectory) pairs.
"""
from __future__ import annotations

import bisect
import random
from collections import Counter
from fractions import Fraction

import numpy as np
import shapely
from shapely.geometry import MultiPoint, Polygon, box

from trajrisk.areas import GridAreaSet, PolygonAreaSet, load_polygon_areas
from trajrisk.model import Dataset, format_timestamp, trip

T0 = 1231113600          # 2009-01-05T00:00:00Z
LON0, LAT0 = -74.02, 40.70


# -- instances -------------------------------------------------------------------

def random_dataset(rng: random.Random, n: int, n_clusters: int = 8, spread: float = 0.1,
                   spread_t: int = 7200) -> Dataset:
    """Trips whose endpoints cluster around a few hot spots, so areas collide."""
    centers = [(LON0 + rng.uniform(-0.01, spread), LAT0 + rng.uniform(-0.01, spread),
                T0 + 7 * 3600 + rng.randrange(spread_t)) for _ in range(n_clusters)]

    def point():
        cx, cy, ct = rng.choice(centers)
        return (cx + rng.gauss(0, spread / 15), cy + rng.gauss(0, spread / 15),
                ct + int(rng.gauss(0, 600)))

    trs = []
    for i in range(n):
        x0, y0, t0 = point()
        x1, y1, _ = point()
        trs.append(trip(f"tr{i:04d}", t0, (x0, y0), t0 + rng.randrange(60, 3600), (x1, y1)))
    return Dataset(tuple(trs), "synthetic")


def random_grid(rng: random.Random) -> GridAreaSet:
    size = rng.choice([0.01, 0.02, 0.025])
    dt = rng.choice([600, 1800, 3600])
    w = rng.choice([0.04, 0.06, 0.08])
    h = rng.choice([0.04, 0.06, 0.08])
    span = rng.choice([3600, 7200, 10800])
    start = T0 + 7 * 3600 - rng.choice([0, 600])
    grid = GridAreaSet((LON0, LAT0, LON0 + w, LAT0 + h), size, dt, T0, (start, start + span))
    while grid.n_cells > 100:
        span //= 2
        grid = GridAreaSet(grid.bbox, size, dt, T0, (start, start + span))
    return grid


def _convex(rng, cx, cy, r):
    pts = [(cx + rng.uniform(-r, r), cy + rng.uniform(-r, r)) for _ in range(rng.randint(3, 8))]
    hull = MultiPoint(pts).convex_hull
    if not isinstance(hull, Polygon) or hull.area < 1e-8:
        hull = box(cx - r / 2, cy - r / 2, cx + r / 2, cy + r / 2)
    return [list(map(list, hull.exterior.coords))]


def random_polygon_geojson(rng: random.Random, m: int, spread: float = 0.1) -> dict:
    feats = []
    for i in range(m):
        cx, cy = LON0 + rng.uniform(0, spread), LAT0 + rng.uniform(0, spread)
        r = rng.uniform(0.005, 0.03)
        if rng.random() < 0.15:
            # two disjoint parts side by side
            geom = {"type": "MultiPolygon", "coordinates": [
                [[[cx, cy], [cx + r, cy], [cx + r, cy + r], [cx, cy + r], [cx, cy]]],
                [[[cx + 2 * r, cy], [cx + 3 * r, cy], [cx + 3 * r, cy + r], [cx + 2 * r, cy + r],
                  [cx + 2 * r, cy]]],
            ]}
        else:
            geom = {"type": "Polygon", "coordinates": _convex(rng, cx, cy, r)}
        props = {"area_id": f"p{i:03d}", "label": f"L{i % 5}"}
        if rng.random() < 0.5:
            a = T0 + 6 * 3600 + rng.randrange(0, 4 * 3600)
            props["time_windows"] = [[format_timestamp(a), format_timestamp(a + rng.choice([1800, 3600, 7200]))]]
        feats.append({"type": "Feature", "geometry": geom, "properties": props})
    return {"type": "FeatureCollection", "features": feats}


def random_instance(rng: random.Random, n: int = None, m: int = None):
    n = rng.randint(20, 500) if n is None else n
    d = random_dataset(rng, n)
    if rng.random() < 0.5:
        return d, random_grid(rng)
    m = rng.randint(3, 100) if m is None else m
    return d, load_polygon_areas(random_polygon_geojson(rng, m))


# -- locate oracles --------------------------------------------------------------

def grid_oracle_locate(grid: GridAreaSet, points):
    """Cell ids by bisecting materialised exact cell edges."""
    size = Fraction(repr(grid.spatial_size))
    lon0, lat0, lon1, lat1 = (Fraction(v) for v in grid.bbox)
    xs = []
    e = lon0
    while e < lon1:
        xs.append(e)
        e += size
    ys = []
    e = lat0
    while e < lat1:
        ys.append(e)
        e += size
    a, b = grid.time_range
    ts = list(range(grid.time_origin + ((a - grid.time_origin) // grid.temporal_size) * grid.temporal_size,
                    b, grid.temporal_size))
    out = []
    for t, (x, y) in points:
        fx, fy = Fraction(x), Fraction(y)
        if not (lon0 <= fx < lon1 and lat0 <= fy < lat1 and a <= t < b):
            out.append(None)
            continue
        col = bisect.bisect_right(xs, fx) - 1
        row = bisect.bisect_right(ys, fy) - 1
        k = bisect.bisect_right(ts, t) - 1
        slot = (ts[k] - grid.time_origin) // grid.temporal_size
        out.append(grid.cell_id(col, row, slot))
    return out


def polygon_oracle_locate(areas: PolygonAreaSet, points):
    """Scan every area with shapely; the last listed area containing a point wins."""
    if not points:
        return []
    t = np.array([p[0] for p in points])
    x = np.array([p[1][0] for p in points])
    y = np.array([p[1][1] for p in points])
    result = [None] * len(points)
    for area in areas.areas:
        inside = np.zeros(len(points), dtype=bool)
        for part in area.spatial:
            poly = Polygon(part[0], part[1:])
            inside |= shapely.intersects_xy(poly, x, y)
        if area.temporal is not None:
            active = np.zeros(len(points), dtype=bool)
            for a, b in area.temporal:
                active |= (t >= a) & (t < b)
            inside &= active
        for i in np.flatnonzero(inside):
            result[i] = area.area_id
    return result


def oracle_locate(areas, points):
    if areas.kind == "grid":
        return grid_oracle_locate(areas, points)
    return polygon_oracle_locate(areas, points)


# -- metric oracles --------------------------------------------------------------

def oracle_scores(d: Dataset, areas, drop_self_loops: bool = False):
    """k, l, t per area and strict_k per trajectory by exhaustive loops."""
    trs = list(d)
    qi = oracle_locate(areas, [(tr.qi.t, tr.qi.s) for tr in trs])
    sa = oracle_locate(areas, [(tr.sa.t, tr.sa.s) for tr in trs])
    if areas.kind == "grid":
        area_ids = sorted({a for a in qi + sa if a is not None})
    else:
        area_ids = sorted(a.area_id for a in areas.areas)

    def contributes(i):
        return (qi[i] is not None and sa[i] is not None
                and not (drop_self_loops and qi[i] == sa[i]))

    global_dest = Counter(sa[i] for i in range(len(trs)) if contributes(i))
    k, l, t = {}, {}, {}
    for a in area_ids:
        members = [i for i in range(len(trs)) if qi[i] == a]
        k[a] = len(members)
        dests = [sa[i] for i in members if contributes(i)]
        l[a] = len(set(dests))
        if dests:
            q = Counter(dests)
            support = set(q) | set(global_dest)
            nq, n = sum(q.values()), sum(global_dest.values())
            t[a] = float(sum(abs(Fraction(q[z], nq) - Fraction(global_dest[z], n)) for z in support) / 2)
        else:
            t[a] = None
    strict = {}
    for i, tr in enumerate(trs):
        if qi[i] is None or sa[i] is None:
            strict[tr.id] = None
            continue
        strict[tr.id] = sum(1 for j in range(len(trs))
                            if j != i and qi[j] == qi[i] and sa[j] == sa[i])
    unmatched_qi = sum(1 for a in qi if a is None)
    return {"k": k, "l": l, "t": t, "strict_k": strict, "unmatched_qi": unmatched_qi,
            "qi": dict(zip((tr.id for tr in trs), qi))}


def sorted_cdf_oracle(values, threshold):
    """Fraction of values strictly below ``threshold`` by counting a sorted copy."""
    s = sorted(values)
    return bisect.bisect_left(s, threshold) / len(s)


# -- synthetic trip files --------------------------------------------------------

HUBS = [(-73.9903, 40.7506), (-73.9772, 40.7527), (-73.7781, 40.6413), (-73.8740, 40.7769),
        (-74.0110, 40.7127), (-73.9857, 40.7484), (-73.9442, 40.8116), (-73.9500, 40.6500)]


def write_synthetic_nyc(path, n: int, seed: int = 0, morning_share: float = 0.4) -> None:
    """Yellow-cab style CSV (2009 column names) with realistic dirt.

    Roughly 2% of rows are malformed, 3% last under a minute, 2% carry
    (0, 0) coordinates, and ``morning_share`` of pickups fall between 07:00
    and 07:30 on 2009-01-05.
    """
    import csv

    rng = random.Random(seed)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vendor_name", "Trip_Pickup_DateTime", "Passenger_Count", "Start_Lon", "Start_Lat",
                    "Trip_Dropoff_DateTime", "End_Lon", "End_Lat", "Total_Amt"])
        for i in range(n):
            if rng.random() < morning_share:
                t0 = T0 + 7 * 3600 + rng.randrange(1800)
            else:
                t0 = T0 + rng.randrange(86400)
            dur = rng.randrange(10, 59) if rng.random() < 0.03 else rng.randrange(120, 3600)
            hx, hy = rng.choice(HUBS)
            x0, y0 = hx + rng.gauss(0, 0.01), hy + rng.gauss(0, 0.01)
            dx, dy = rng.choice(HUBS)
            x1, y1 = dx + rng.gauss(0, 0.02), dy + rng.gauss(0, 0.02)
            if rng.random() < 0.02:
                x0 = y0 = 0.0
            fmt = "%Y-%m-%d %H:%M:%S"
            from datetime import datetime, timezone
            s0 = datetime.fromtimestamp(t0, timezone.utc).strftime(fmt)
            s1 = datetime.fromtimestamp(t0 + dur, timezone.utc).strftime(fmt)
            row = [rng.choice(["VTS", "CMT", "DDS"]), s0, rng.randint(1, 4), f"{x0:.6f}", f"{y0:.6f}",
                   s1, f"{x1:.6f}", f"{y1:.6f}", f"{rng.uniform(3, 60):.2f}"]
            if rng.random() < 0.02:
                row[3] = "n/a"
            w.writerow(row)
