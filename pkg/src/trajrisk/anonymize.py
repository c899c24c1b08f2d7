"""Gaussian spatio-temporal perturbation and repetition-averaged scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

from . import rng
from .areas import METERS_PER_DEGREE
from .metrics import AreaScores, ScoreResult, TrajectoryScores, score_area_set, staircases_of
from .model import Dataset, Record, Trajectory

AXIS_EAST, AXIS_NORTH, AXIS_TIME = 0, 1, 2


@dataclass(frozen=True)
class NoiseConfig:
    sigma_space_m: float = 500.0
    sigma_time: float = 600.0       # seconds
    seed: int = 0
    repetitions: int = 3

    def __post_init__(self):
        if self.sigma_space_m < 0 or self.sigma_time < 0:
            raise ValueError("noise standard deviations must be >= 0")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class PerturbReport:
    records_perturbed: int = 0
    trips_time_inverted: int = 0


def _wrap(lon: float, lat: float) -> Tuple[float, float]:
    # moving past a pole continues down the opposite meridian
    if lat > 90.0:
        lat, lon = 180.0 - lat, lon + 180.0
    elif lat < -90.0:
        lat, lon = -180.0 - lat, lon + 180.0
    if not -180.0 <= lon <= 180.0:
        lon = (lon + 180.0) % 360.0 - 180.0
    return lon, lat


def perturb_record(r: Record, cfg: NoiseConfig, repetition: int, index: int) -> Record:
    lon, lat = r.s
    t = r.t
    if cfg.sigma_space_m > 0:
        east = cfg.sigma_space_m * rng.normal(cfg.seed, repetition, r.traj_id, index, AXIS_EAST)
        north = cfg.sigma_space_m * rng.normal(cfg.seed, repetition, r.traj_id, index, AXIS_NORTH)
        dlat = north / METERS_PER_DEGREE
        dlon = east / (METERS_PER_DEGREE * math.cos(math.radians(lat)))
        lon, lat = _wrap(lon + dlon, lat + dlat)
    if cfg.sigma_time > 0:
        t += round(cfg.sigma_time * rng.normal(cfg.seed, repetition, r.traj_id, index, AXIS_TIME))
    return Record(t, (lon, lat), r.traj_id, r.extras)


def perturb(d: Dataset, cfg: NoiseConfig, repetition_index: int = 0) -> Tuple[Dataset, PerturbReport]:
    """Add independent zero-mean Gaussian noise to every QI and SA record.

    Spatial noise is drawn in meters on the east and north axes and converted
    to degrees at the record's latitude; temporal noise is rounded to whole
    seconds. Nothing is clamped or re-filtered: trips whose drop-off lands
    before the pick-up are only counted.
    """
    if cfg.sigma_space_m == 0 and cfg.sigma_time == 0:
        return d, PerturbReport(0, sum(1 for tr in d if tr.sa.t < tr.qi.t))
    out = []
    n_records = inverted = 0
    for tr in d:
        records = list(tr.records)
        for i in {tr.qi_index, tr.sa_index}:
            records[i] = perturb_record(records[i], cfg, repetition_index, i)
            n_records += 1
        new = replace(tr, records=tuple(records))
        if new.sa.t < new.qi.t:
            inverted += 1
        out.append(new)
    return Dataset(tuple(out), d.provenance, d.parse_errors), PerturbReport(n_records, inverted)


def perturb_repetitions(d: Dataset, cfg: NoiseConfig) -> List[Tuple[Dataset, PerturbReport]]:
    return [perturb(d, cfg, r) for r in range(cfg.repetitions)]


def _mean(values: Sequence) -> Optional[float]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    first = vals[0]
    if all(v == first for v in vals):
        # identical runs average to themselves bit for bit
        return first
    if all(isinstance(v, int) for v in vals):
        q, r = divmod(sum(vals), len(vals))
        return q if r == 0 else sum(vals) / len(vals)
    return math.fsum(vals) / len(vals)


def average_results(results: Sequence[ScoreResult]) -> ScoreResult:
    """Mean of each score over repetitions where it is defined.

    Counts (k, l, matched_count) of an area absent from a repetition are 0 in
    that repetition; t stays undefined there.
    """
    if not results:
        raise ValueError("nothing to average")
    area_ids = sorted(set().union(*(r.areas for r in results)))
    areas: Dict[str, AreaScores] = {}
    for a in area_ids:
        runs = [r.areas.get(a) for r in results]
        areas[a] = AreaScores(
            a,
            _mean([s.k if s else 0 for s in runs]),
            _mean([s.l if s else 0 for s in runs]),
            _mean([s.t if s else None for s in runs]),
            _mean([s.matched_count if s else 0 for s in runs]),
        )
    traj_ids = sorted(set().union(*(r.trajectories for r in results)))
    trajectories = {}
    for tid in traj_ids:
        runs = [r.trajectories.get(tid) for r in results]
        trajectories[tid] = TrajectoryScores(
            tid, *(_mean([getattr(s, m) if s else None for s in runs])
                   for m in ("k", "strict_k", "l", "t")))
    t_values = [s.t for s in areas.values() if s.t is not None]
    return ScoreResult(
        areas=areas,
        trajectories=trajectories,
        staircases=staircases_of(trajectories),
        unmatched_qi=_mean([r.unmatched_qi for r in results]),
        unmatched_sa=_mean([r.unmatched_sa for r in results]),
        self_loops=_mean([r.self_loops for r in results]),
        t_max=max(t_values) if t_values else None,
        n_trajectories=results[0].n_trajectories,
    )


def score_averaged(d: Dataset, areas, cfg: NoiseConfig, drop_self_loops: bool = False) -> ScoreResult:
    """Perturb ``cfg.repetitions`` times, score each run, and average the scores."""
    results = [score_area_set(pd, areas, drop_self_loops) for pd, _ in perturb_repetitions(d, cfg)]
    return average_results(results)
