"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``PASS``/``FAIL`` line (visible without ``-s``)
before asserting, so ``pytest -v`` output doubles as the acceptance record.
"""
import io
import json
import math
import os
import random
import statistics
import time

import pytest

from trajrisk.anonymize import NoiseConfig, perturb, score_averaged
from trajrisk.areas import build_grid
from trajrisk.cli import main
from trajrisk.metrics import score_area_set
from trajrisk.model import Dataset, trip, write_dataset
from trajrisk.report import ScoreReport, area_geojson_text, diff_geojson, report_to_dict, staircase_csv

from oracles import T0, oracle_scores, random_dataset, random_instance, write_synthetic_nyc
from test_metrics import four_trip_example
from test_report import dense_cluster_fixture

BBOX = (-74.05, 40.68, -73.9, 40.82)


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
        assert ok, detail
    return emit


def csv_bytes(d):
    buf = io.StringIO()
    write_dataset(d, buf)
    return buf.getvalue()


def report_bytes(d, areas):
    r = ScoreReport(score_area_set(d, areas), areas)
    text = json.dumps(report_to_dict(r), sort_keys=True)
    return text + "".join(area_geojson_text(r, m) for m in ("k", "l", "t"))


def mismatches(res, ref):
    bad = []
    for a, s in res.areas.items():
        if s.k != ref["k"].get(a) or s.l != ref["l"].get(a):
            bad.append(a)
        elif (s.t is None) != (ref["t"][a] is None) or (s.t is not None and abs(s.t - ref["t"][a]) > 1e-12):
            bad.append(a)
    if set(res.areas) != set(ref["k"]):
        bad.append("area set")
    if {tid: s.strict_k for tid, s in res.trajectories.items()} != ref["strict_k"]:
        bad.append("strict_k")
    return bad


def test_oracle_equivalence(verdict):
    engine_time = 0.0
    failures = []
    kinds = set()
    for seed in range(60):
        rng = random.Random(seed)
        d, areas = random_instance(rng)
        kinds.add(areas.kind)
        assert len(d) <= 500
        assert areas.kind == "grid" and areas.n_cells <= 100 or len(areas.areas) <= 100
        start = time.perf_counter()
        res = score_area_set(d, areas)
        engine_time += time.perf_counter() - start
        bad = mismatches(res, oracle_scores(d, areas))
        if bad:
            failures.append((seed, bad[:3]))
    ok = not failures and engine_time < 5.0 and kinds == {"grid", "polygon"}
    verdict(1, ok, f"60 instances ({'+'.join(sorted(kinds))}), {len(failures)} mismatching, "
                   f"engine {engine_time:.2f}s")


def test_metric_invariants(verdict):
    problems = []
    for seed in range(60):
        rng = random.Random(1000 + seed)
        d, areas = random_instance(rng)
        res = score_area_set(d, areas, drop_self_loops=seed % 2 == 1)
        for s in res.areas.values():
            if s.l > s.k or not (s.t is None or 0.0 <= s.t <= 1.0):
                problems.append((seed, s.area_id))
        for ts in res.trajectories.values():
            if ts.strict_k is not None and ts.strict_k > ts.k - 1:
                problems.append((seed, ts.traj_id))
        if sum(s.k for s in res.areas.values()) + res.unmatched_qi != len(d):
            problems.append((seed, "k total"))
        shuffled = list(d.trajectories)
        rng.shuffle(shuffled)
        if report_bytes(Dataset(tuple(shuffled)), areas) != report_bytes(d, areas):
            problems.append((seed, "permutation"))
    verdict(2, not problems, f"60 instances, {len(problems)} violations {problems[:3]}")


def test_nested_grid_monotonicity(verdict):
    sizes, windows = (0.002, 0.005, 0.01), (300, 600, 1800)
    pairs = [((s1, t1), (s2, t2)) for s1 in sizes for s2 in sizes for t1 in windows for t2 in windows
             if (s1, t1) != (s2, t2) and round(s2 / s1, 9).is_integer() and t2 % t1 == 0]
    violations = 0
    for seed in range(20):
        d = random_dataset(random.Random(seed), 300)
        k = {}
        for s in sizes:
            for t in windows:
                res = score_area_set(d, build_grid(BBOX, s, t, None, T0))
                k[s, t] = {tid: ts.k for tid, ts in res.trajectories.items()}
        for fine, coarse in pairs:
            for tid, kf in k[fine].items():
                kc = k[coarse][tid]
                if (kf is None) != (kc is None) or (kf is not None and kc < kf):
                    violations += 1
    verdict(3, violations == 0, f"20 fixtures x {len(pairs)} nested pairs, {violations} decreases")


def test_four_trip_worked_example(verdict):
    d, areas = four_trip_example()
    s = score_area_set(d, areas).areas["A"]
    verdict(4, (s.k, s.l) == (4, 3), f"origin area k={s.k}, l={s.l}")


def test_staircase_twenty_percent_point(verdict):
    # two lone trips, one cell of three and one of five: 2/10 score below 3
    g = build_grid(BBOX, 0.01, 3600, None, T0)
    origins = [(-74.045, 40.685), (-74.035, 40.685)] + [(-74.015, 40.705)] * 3 + [(-73.985, 40.755)] * 5
    d = Dataset(tuple(trip(f"t{i}", T0 + 60, o, T0 + 900, (-73.95, 40.8)) for i, o in enumerate(origins)))
    r = ScoreReport(score_area_set(d, g), g)
    points = r.staircase("k").points
    line = "0.2,3" in staircase_csv(r.staircase("k")).splitlines()
    verdict(5, (0.2, 3) in points and line, f"k staircase {points}")


def test_anonymizer(verdict):
    d = random_dataset(random.Random(4), 400)
    same, _ = perturb(d, NoiseConfig(0, 0, seed=9))
    identity = csv_bytes(same) == csv_bytes(d) and same.trajectories == d.trajectories

    cfg = NoiseConfig(500, 600, seed=77)
    first = csv_bytes(perturb(d, cfg, 1)[0])
    repeat = first == csv_bytes(perturb(d, cfg, 1)[0])
    other = first != csv_bytes(perturb(d, NoiseConfig(500, 600, seed=78), 1)[0])

    r = random.Random(2)
    base = Dataset(tuple(
        trip(f"t{i:05d}", T0, (-73.98 + r.uniform(-0.05, 0.05), 40.75 + r.uniform(-0.05, 0.05)),
             T0 + 3600, (-73.95, 40.78)) for i in range(5000)))
    noisy, _ = perturb(base, NoiseConfig(500, 0, seed=2024))
    dists = []
    for a, b in zip(base, noisy):
        for ra, rb in ((a.qi, b.qi), (a.sa, b.sa)):
            dy = (rb.lat - ra.lat) * 111_320.0
            dx = (rb.lon - ra.lon) * 111_320.0 * math.cos(math.radians(ra.lat))
            dists.append(math.hypot(dx, dy))
    expected = 500 * math.sqrt(math.pi / 2)
    rel = abs(statistics.fmean(dists) / expected - 1)
    ok = identity and repeat and other and len(dists) == 10_000 and rel < 0.02
    verdict(6, ok, f"identity={identity}, reproducible={repeat}, seed-sensitive={other}, "
                   f"Rayleigh mean off by {rel:.2%} over {len(dists)} records")


def test_perturbation_diff_direction(verdict):
    seeds = range(10)
    center_delta = ring_delta = 0.0
    for seed in seeds:
        d, g, center = dense_cluster_fixture(seed)
        raw = ScoreReport(score_area_set(d, g), g)
        anon = ScoreReport(score_averaged(d, g, NoiseConfig(500, 600, seed=seed, repetitions=3)), g)
        delta = {f["properties"]["area_id"]: f["properties"]["delta"]
                 for f in diff_geojson(raw, anon, "k")["features"]}
        c = g.locate_cell(T0 + 43200, center)
        center_delta += delta[g.cell_id(*c)]
        ring_delta += sum(delta.get(g.cell_id(c[0] + dx, c[1] + dy, c[2]), 0)
                          for dx in (-1, 0, 1) for dy in (-1, 0, 1) if (dx, dy) != (0, 0))
    cm, rm = center_delta / len(seeds), ring_delta / len(seeds)
    verdict(7, cm < 0 <= rm, f"mean center delta {cm:.1f}, mean ring delta {rm:.1f} over {len(seeds)} seeds")


def test_protocol_at_desk_scale(tmp_path, verdict):
    src = tmp_path / "trips.csv"
    write_synthetic_nyc(src, 10_000, seed=1)
    out = tmp_path / "sweep"
    start = time.perf_counter()
    code = main(["sweep", "-i", str(src), "--schema-preset", "nyc2009", "--qi-window", "07:00..07:30",
                 "--day", "2009-01-05", "--sigma-space", "500", "--sigma-time", "10m",
                 "--repetitions", "3", "--seed", "0", "-o", str(out)])
    elapsed = time.perf_counter() - start

    expected = ["manifest.json"] + [f"sweep_staircase_{m}.{x}" for m in ("k", "l", "strict_k", "t")
                                    for x in ("csv", "svg")]
    per_config = ["report.json", "report_anon.json"]
    for m in ("k", "l", "t"):
        per_config += [f"areas_{m}.geojson", f"areas_{m}_anon.geojson", f"diff_{m}.geojson"]
    for m in ("k", "l", "strict_k", "t"):
        per_config += [f"staircase_{m}{sfx}.{x}" for sfx in ("", "_anon") for x in ("csv", "svg")]
    for s in ("0.002", "0.005", "0.01"):
        for t in (5, 10, 30):
            expected += [f"s{s}_t{t}/{name}" for name in per_config]
    missing = [p for p in expected if not os.path.isfile(out / p) or os.path.getsize(out / p) == 0]

    report = json.loads((out / "s0.005_t10" / "report_anon.json").read_text())
    noise = report["config"]["noise"]
    averaged = (noise["sigma_space_m"], noise["sigma_time"], noise["repetitions"]) == (500, 600, 3)
    filtered = report["config"]["filters"]["time_window"] == ["2009-01-05T07:00:00Z", "2009-01-05T07:30:00Z"]
    ok = code == 0 and not missing and elapsed < 60 and averaged and filtered
    verdict(8, ok, f"exit {code}, {len(expected) - len(missing)}/{len(expected)} artifacts, {elapsed:.1f}s")
