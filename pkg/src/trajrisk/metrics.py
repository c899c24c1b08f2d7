"""Matching sets and privacy scores over equivalence areas.

A trajectory matches the area holding its quasi-identifier point (the
origin); the areas holding the sensitive-attribute points (destinations) of
the trajectories matched by an area form that area's inference set.

    k(A)  number of trajectories matched by A (the target included)
    l(A)  number of distinct destination areas of those trajectories
    t(A)  total variation distance between A's destination distribution
          and the destination distribution of the whole dataset
    strict_k(tau)  number of *other* trajectories sharing tau's
          (origin area, destination area) pair
"""
from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Mapping, Optional, Tuple

from .model import Dataset


@dataclass(frozen=True)
class MatchTable:
    area_ids: Tuple[str, ...]                    # every scored area, sorted
    qi_area: Mapping[str, Optional[str]]         # traj_id -> origin area
    sa_area: Mapping[str, Optional[str]]         # traj_id -> destination area
    members: Mapping[str, FrozenSet[str]]        # M_A
    inference: Mapping[str, FrozenSet[str]]      # I_A
    destinations: Mapping[str, Mapping[str, int]]  # per-area destination counts feeding l and t
    unmatched_qi: int = 0
    unmatched_sa: int = 0
    self_loops: int = 0
    drop_self_loops: bool = False


@dataclass(frozen=True)
class AreaScores:
    area_id: str
    k: float
    l: float
    t: Optional[float]
    matched_count: float


@dataclass(frozen=True)
class TrajectoryScores:
    traj_id: str
    k: Optional[float]
    strict_k: Optional[float]
    l: Optional[float]
    t: Optional[float]


@dataclass(frozen=True)
class Staircase:
    """Empirical CDF of a score: ``(fraction of scores < threshold, threshold)``."""

    points: Tuple[Tuple[float, float], ...]
    n: int


def build_match_table(d: Dataset, areas, drop_self_loops: bool = False) -> MatchTable:
    """Locate every trajectory's origin and destination and group by origin area.

    Trajectories whose destination lies in no area, and (with
    ``drop_self_loops``) those ending in their origin area, stay in their
    origin's matching set but add nothing to its inference set or destination
    distribution.
    """
    qi_area: Dict[str, Optional[str]] = {}
    sa_area: Dict[str, Optional[str]] = {}
    members = defaultdict(set)
    dest = defaultdict(Counter)
    touched = set()
    unmatched_qi = unmatched_sa = loops = 0
    for tr in d:
        qi, sa = tr.qi, tr.sa
        a = areas.locate(qi.t, qi.s)
        b = areas.locate(sa.t, sa.s)
        qi_area[tr.id] = a
        sa_area[tr.id] = b
        if b is None:
            unmatched_sa += 1
        else:
            touched.add(b)
        if a is None:
            unmatched_qi += 1
            continue
        touched.add(a)
        members[a].add(tr.id)
        if b is None:
            continue
        if a == b:
            loops += 1
            if drop_self_loops:
                continue
        dest[a][b] += 1

    if areas.kind == "grid":
        # grids are never materialised; untouched cells implicitly score k=l=0
        area_ids = tuple(sorted(touched))
    else:
        area_ids = tuple(sorted(areas.area_ids()))
    return MatchTable(
        area_ids=area_ids,
        qi_area=qi_area,
        sa_area=sa_area,
        members={a: frozenset(members.get(a, ())) for a in area_ids},
        inference={a: frozenset(dest[a]) if a in dest else frozenset() for a in area_ids},
        destinations={a: dict(sorted(dest[a].items())) for a in area_ids if a in dest},
        unmatched_qi=unmatched_qi,
        unmatched_sa=unmatched_sa,
        self_loops=loops,
        drop_self_loops=drop_self_loops,
    )


def k_anonymity(mt: MatchTable) -> Dict[str, int]:
    return {a: len(mt.members[a]) for a in mt.area_ids}


def l_diversity(mt: MatchTable) -> Dict[str, int]:
    return {a: len(mt.inference[a]) for a in mt.area_ids}


def total_variation(q: Mapping[str, int], p: Mapping[str, int]) -> float:
    """Half the L1 distance between two categorical distributions given as counts.

    Works in integers over the support of ``q`` only (the mass of ``p``
    outside it is ``1 - p(support q)``) and divides once at the end, so the
    result is the exact distance rounded to the nearest float.
    """
    nq = sum(q.values())
    n = sum(p.values())
    if nq <= 0 or n <= 0:
        raise ValueError("distributions must have positive mass")
    diff = 0
    covered = 0
    for z, c in q.items():
        g = p.get(z, 0)
        diff += abs(c * n - g * nq)
        covered += g
    diff += nq * (n - covered)
    return float(Fraction(diff, 2 * nq * n))


def t_closeness(mt: MatchTable) -> Tuple[Dict[str, Optional[float]], Optional[float]]:
    """Per-area distance to the global destination distribution, and its maximum."""
    global_counts: Counter = Counter()
    for counts in mt.destinations.values():
        global_counts.update(counts)
    out: Dict[str, Optional[float]] = {}
    for a in mt.area_ids:
        counts = mt.destinations.get(a)
        out[a] = total_variation(counts, global_counts) if counts else None
    defined = [v for v in out.values() if v is not None]
    return out, (max(defined) if defined else None)


def strict_k_from_table(mt: MatchTable) -> Dict[str, Optional[int]]:
    pairs = Counter()
    for tid, a in mt.qi_area.items():
        b = mt.sa_area[tid]
        if a is not None and b is not None:
            pairs[a, b] += 1
    out = {}
    for tid, a in mt.qi_area.items():
        b = mt.sa_area[tid]
        out[tid] = None if a is None or b is None else pairs[a, b] - 1
    return out


def strict_k(d: Dataset, areas) -> Dict[str, Optional[int]]:
    """Other trajectories sharing each trajectory's origin and destination areas.

    ``None`` where either endpoint falls outside every area.
    """
    return strict_k_from_table(build_match_table(d, areas))


def staircase(scores: Mapping[str, Optional[float]]) -> Staircase:
    """Empirical CDF points at each distinct defined score value.

    Missing (``None``) scores are ignored; raises ``ValueError`` when no
    score is defined.
    """
    values = sorted(v for v in scores.values() if v is not None)
    if not values:
        raise ValueError("staircase of an empty score set")
    n = len(values)
    points = []
    for i, v in enumerate(values):
        if i == 0 or v != values[i - 1]:
            points.append((i / n, v))
    return Staircase(tuple(points), n)


@dataclass(frozen=True)
class ScoreResult:
    areas: Dict[str, AreaScores]
    trajectories: Dict[str, TrajectoryScores]
    staircases: Dict[str, Staircase]
    unmatched_qi: float = 0
    unmatched_sa: float = 0
    self_loops: float = 0
    t_max: Optional[float] = None
    n_trajectories: int = 0


STAIRCASE_METRICS = ("k", "l", "strict_k", "t")


def staircases_of(trajectories: Mapping[str, TrajectoryScores]) -> Dict[str, Staircase]:
    out = {}
    for metric in STAIRCASE_METRICS:
        values = {tid: getattr(ts, metric) for tid, ts in trajectories.items()}
        if any(v is not None for v in values.values()):
            out[metric] = staircase(values)
    return out


def score_area_set(d: Dataset, areas, drop_self_loops: bool = False) -> ScoreResult:
    """Score every area and every trajectory; output keyed and sorted by id."""
    mt = build_match_table(d, areas, drop_self_loops)
    ks = k_anonymity(mt)
    ls = l_diversity(mt)
    ts, t_max = t_closeness(mt)
    sk = strict_k_from_table(mt)
    area_scores = {
        a: AreaScores(a, ks[a], ls[a], ts[a], sum(mt.destinations.get(a, {}).values()))
        for a in mt.area_ids
    }
    traj_scores = {}
    for tid in sorted(mt.qi_area):
        a = mt.qi_area[tid]
        if a is None:
            traj_scores[tid] = TrajectoryScores(tid, None, None, None, None)
        else:
            traj_scores[tid] = TrajectoryScores(tid, ks[a], sk[tid], ls[a], ts[a])
    return ScoreResult(
        areas=area_scores,
        trajectories=traj_scores,
        staircases=staircases_of(traj_scores),
        unmatched_qi=mt.unmatched_qi,
        unmatched_sa=mt.unmatched_sa,
        self_loops=mt.self_loops,
        t_max=t_max,
        n_trajectories=len(d),
    )
