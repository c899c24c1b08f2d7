"""Score reports and their GeoJSON / CSV / SVG emitters.

Numbers are written with at most 6 decimals (trailing zeros trimmed) and
missing scores as JSON ``null`` or an empty CSV cell, never as 0. Every
emitter sorts its output, so the same report always gives the same bytes.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

from .metrics import STAIRCASE_METRICS, AreaScores, ScoreResult, Staircase

AREA_METRICS = ("k", "l", "t")


@dataclass
class ScoreReport:
    result: ScoreResult
    areas: Any                              # the AreaSet the result was computed on
    config: Dict[str, Any] = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return self.areas.fingerprint()

    def staircase(self, metric: str) -> Staircase:
        try:
            return self.result.staircases[metric]
        except KeyError:
            raise ValueError(f"no defined {metric!r} scores: empty staircase") from None


def fmt(x) -> str:
    """CSV cell text for a score."""
    if x is None:
        return ""
    if isinstance(x, int):
        return str(x)
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


def num(x):
    """JSON value for a score, at the same precision as :func:`fmt`."""
    if x is None:
        return None
    if isinstance(x, int):
        return x
    r = round(x, 6)
    if r == int(r):
        return int(r)
    return r


def _dumps(obj) -> str:
    """Compact JSON; list-valued top-level members get one element per line."""
    enc = _enc
    parts = []
    for key, value in obj.items():
        if isinstance(value, list) and value:
            body = ",\n".join(enc(v) for v in value)
            parts.append(f"{enc(key)}:[\n{body}\n]")
        else:
            parts.append(f"{enc(key)}:{enc(value)}")
    return "{\n" + ",\n".join(parts) + "\n}\n"


def _write(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def report_to_dict(report: ScoreReport) -> Dict[str, Any]:
    r = report.result
    return {
        "config": report.config,
        "summary": {
            "trajectories": r.n_trajectories,
            "areas_scored": len(r.areas),
            "unmatched_qi": num(r.unmatched_qi),
            "unmatched_sa": num(r.unmatched_sa),
            "self_loops": num(r.self_loops),
            "t_max": num(r.t_max),
        },
        "areas": [
            {"area_id": s.area_id, "k": num(s.k), "l": num(s.l), "t": num(s.t),
             "matched_count": num(s.matched_count)}
            for s in (r.areas[a] for a in sorted(r.areas))
        ],
        "trajectories": [
            {"traj_id": s.traj_id, "k": num(s.k), "strict_k": num(s.strict_k),
             "l": num(s.l), "t": num(s.t)}
            for s in (r.trajectories[tid] for tid in sorted(r.trajectories))
        ],
        "staircases": {
            m: [[num(f), num(v)] for f, v in r.staircases[m].points]
            for m in STAIRCASE_METRICS if m in r.staircases
        },
    }


def write_report_json(report: ScoreReport, path: str) -> None:
    _write(path, _dumps(report_to_dict(report)))


def _check_metric(metric: str, allowed: Sequence[str]) -> None:
    if metric not in allowed:
        raise ValueError(f"metric must be one of {allowed}, got {metric!r}")


_enc = json.JSONEncoder(separators=(",", ":"), ensure_ascii=False).encode


def _collection(lines: List[str]) -> str:
    if not lines:
        return '{\n"type":"FeatureCollection",\n"features":[]\n}\n'
    return '{\n"type":"FeatureCollection",\n"features":[\n' + ",\n".join(lines) + "\n]\n}\n"


def _feature_line(areas, area_id: str, props: Dict[str, Any]) -> str:
    geometry, label, windows = areas.feature_parts(area_id)
    head = {"area_id": area_id, "label": label, "time_windows": windows}
    return ('{"type":"Feature","geometry":' + geometry + ',"properties":'
            + _enc({**head, **props}) + "}")


def area_geojson_text(report: ScoreReport, metric: str) -> str:
    _check_metric(metric, AREA_METRICS)
    lines = []
    for a in sorted(report.result.areas):
        s = report.result.areas[a]
        lines.append(_feature_line(report.areas, a, {
            "k": num(s.k), "l": num(s.l), "t": num(s.t),
            "metric": metric, "value": num(getattr(s, metric)),
        }))
    return _collection(lines)


def area_geojson(report: ScoreReport, metric: str) -> Dict[str, Any]:
    return json.loads(area_geojson_text(report, metric))


def emit_area_geojson(report: ScoreReport, metric: str, path: str) -> None:
    _write(path, area_geojson_text(report, metric))


def _implicit(report: ScoreReport, area_id: str, metric: str):
    s = report.result.areas.get(area_id)
    if s is not None:
        return getattr(s, metric)
    # an unlisted grid cell matched nothing
    return None if metric == "t" else 0


def diff_geojson_text(raw: ScoreReport, anon: ScoreReport, metric: str) -> str:
    _check_metric(metric, AREA_METRICS)
    if raw.fingerprint != anon.fingerprint:
        raise ValueError("reports were computed on different area sets")
    lines = []
    for a in sorted(set(raw.result.areas) | set(anon.result.areas)):
        before = _implicit(raw, a, metric)
        after = _implicit(anon, a, metric)
        delta = None if before is None or after is None else after - before
        lines.append(_feature_line(raw.areas, a, {
            "metric": metric, "raw": num(before), "anonymized": num(after), "delta": num(delta),
        }))
    return _collection(lines)


def diff_geojson(raw: ScoreReport, anon: ScoreReport, metric: str) -> Dict[str, Any]:
    return json.loads(diff_geojson_text(raw, anon, metric))


def emit_diff_geojson(raw: ScoreReport, anon: ScoreReport, metric: str, path: str) -> None:
    _write(path, diff_geojson_text(raw, anon, metric))


# -- staircases ----------------------------------------------------------------

def staircase_csv(st: Staircase) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "threshold"])
    for f, v in st.points:
        w.writerow([fmt(f), fmt(v)])
    return buf.getvalue()


def parse_staircase_csv(text: str) -> List[Tuple[float, float]]:
    rows = list(csv.reader(io.StringIO(text)))
    if rows[:1] != [["fraction", "threshold"]]:
        raise ValueError("not a staircase CSV")
    return [(float(f), float(v)) for f, v in rows[1:]]


def _step_path(st: Staircase, x0, y0, w, h, vmax) -> str:
    """SVG path for the sorted-score step curve of one staircase."""
    def sx(f):
        return x0 + f * w

    def sy(v):
        return y0 + h - (v / vmax) * h if vmax > 0 else y0 + h

    pts = list(st.points)
    cmds = []
    for i, (f, v) in enumerate(pts):
        nxt = pts[i + 1][0] if i + 1 < len(pts) else 1.0
        cmds.append(f"{'M' if i == 0 else 'L'}{sx(f):.2f},{sy(v):.2f}")
        cmds.append(f"L{sx(nxt):.2f},{sy(v):.2f}")
    return " ".join(cmds)


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


def _panel(out: List[str], series: Mapping[str, Staircase], x0, y0, w, h, title: str, ylabel: str):
    vmax = max((st.points[-1][1] for st in series.values()), default=0)
    vmax = vmax if vmax > 0 else 1
    out.append(f'<rect x="{x0:.2f}" y="{y0:.2f}" width="{w:.2f}" height="{h:.2f}" '
               f'fill="none" stroke="#888" stroke-width="0.5"/>')
    out.append(f'<text x="{x0 + w / 2:.2f}" y="{y0 - 6:.2f}" text-anchor="middle" '
               f'font-size="11">{title}</text>')
    for frac in (0.0, 0.5, 1.0):
        out.append(f'<text x="{x0 + frac * w:.2f}" y="{y0 + h + 12:.2f}" text-anchor="middle" '
                   f'font-size="9">{int(frac * 100)}%</text>')
    out.append(f'<text x="{x0 - 4:.2f}" y="{y0 + 4:.2f}" text-anchor="end" font-size="9">{fmt(vmax)}</text>')
    out.append(f'<text x="{x0 - 4:.2f}" y="{y0 + h:.2f}" text-anchor="end" font-size="9">0</text>')
    out.append(f'<text x="{x0 - 28:.2f}" y="{y0 + h / 2:.2f}" font-size="9" '
               f'transform="rotate(-90 {x0 - 28:.2f} {y0 + h / 2:.2f})" text-anchor="middle">{ylabel}</text>')
    for i, (label, st) in enumerate(sorted(series.items())):
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<path d="{_step_path(st, x0, y0, w, h, vmax)}" fill="none" '
                   f'stroke="{color}" stroke-width="1.2"><title>{label}</title></path>')


def _legend(out: List[str], labels: Sequence[str], x, y):
    for i, label in enumerate(sorted(labels)):
        color = _COLORS[i % len(_COLORS)]
        out.append(f'<line x1="{x:.2f}" y1="{y + i * 14:.2f}" x2="{x + 16:.2f}" y2="{y + i * 14:.2f}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x + 20:.2f}" y="{y + i * 14 + 4:.2f}" font-size="10">{label}</text>')


def _svg(width: float, height: float, body: List[str]) -> str:
    head = (f'<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
            f'width="{width:.0f}" height="{height:.0f}" viewBox="0 0 {width:.0f} {height:.0f}" '
            f'font-family="sans-serif">\n')
    return head + "\n".join(body) + "\n</svg>\n"


def staircase_svg(series: Mapping[str, Staircase], metric: str) -> str:
    body = ['<rect width="100%" height="100%" fill="white"/>']
    _panel(body, series, 60, 30, 380, 240, f"{metric} staircase", metric)
    _legend(body, list(series), 460, 40)
    return _svg(600, 310, body)


def staircase_panel_svg(cells: Mapping[Tuple[str, str], Mapping[str, Staircase]],
                        row_labels: Sequence[str], col_labels: Sequence[str], metric: str) -> str:
    """Grid of staircase plots: one row per spatial size, one column per temporal size."""
    pw, ph, mx, my = 200, 140, 70, 50
    body = ['<rect width="100%" height="100%" fill="white"/>']
    labels = set()
    for i, row in enumerate(row_labels):
        for j, col in enumerate(col_labels):
            series = cells.get((row, col))
            if not series:
                continue
            labels.update(series)
            _panel(body, series, mx + j * (pw + mx), my + i * (ph + my), pw, ph,
                   f"{row} / {col}", metric)
    width = mx + len(col_labels) * (pw + mx) + 100
    height = my + len(row_labels) * (ph + my)
    _legend(body, sorted(labels), width - 150, 20)
    return _svg(width, height, body)


def emit_staircase(report: ScoreReport, metric: str, path: str, format: str = "csv") -> None:
    _check_metric(metric, STAIRCASE_METRICS)
    st = report.staircase(metric)
    if format == "csv":
        _write(path, staircase_csv(st))
    elif format == "svg":
        _write(path, staircase_svg({"scores": st}, metric))
    else:
        raise ValueError(f"unknown staircase format {format!r}")


def staircase_table_csv(cells: Mapping[Tuple[str, str], Mapping[str, Staircase]]) -> str:
    """Long-format CSV of several staircases keyed by (row, column, series)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["spatial", "temporal", "series", "fraction", "threshold"])
    for (row, col) in sorted(cells):
        for label, st in sorted(cells[row, col].items()):
            for f, v in st.points:
                w.writerow([row, col, label, fmt(f), fmt(v)])
    return buf.getvalue()
