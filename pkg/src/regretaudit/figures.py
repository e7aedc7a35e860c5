"""CSV and self-contained SVG emission for the experiment figures.

Everything here is first-party string building: no plotting dependency, no
external references inside the SVG files.
"""

from __future__ import annotations

import csv
import json
import math
from typing import IO, Sequence, Union

import numpy as np

from .core import Transcript, TranscriptParseError
from .core import _fmt, _parse_header
from .oracles import GroundTruth

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")


# ---------------------------------------------------------------------------
# Ground-truth sidecar files (line-oriented JSON, like transcripts)
# ---------------------------------------------------------------------------


def write_truth(truth: GroundTruth, sink: Union[str, IO[str]]) -> None:
    if isinstance(sink, (str, bytes)):
        with open(sink, "w", encoding="utf-8") as fh:
            write_truth(truth, fh)
        return
    levels = ", ".join(_fmt(float(v)) for v in truth.levels)
    sink.write(f'{{"grid": [{levels}], "continuum_upper": null}}\n')
    for t in range(truth.rounds):
        row = ", ".join(_fmt(float(v)) for v in truth.row(t))
        sink.write(f'{{"t": {t + 1}, "x": [{row}]}}\n')


def read_truth(source: Union[str, IO[str]]) -> GroundTruth:
    if isinstance(source, (str, bytes)):
        with open(source, "r", encoding="utf-8") as fh:
            return read_truth(fh)
    lines = [ln for ln in (raw.rstrip("\n") for raw in source) if ln.strip()]
    if not lines:
        raise TranscriptParseError(1, "missing header line")
    grid = _parse_header(lines[0], 1)
    rows = []
    for i, ln in enumerate(lines[1:]):
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as e:
            raise TranscriptParseError(i + 2, f"bad JSON: {e.msg}") from e
        rows.append([float(v) for v in obj["x"]])
    return GroundTruth(grid.levels, np.asarray(rows, dtype=float))


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_csv(path: str, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------------
# SVG primitives
# ---------------------------------------------------------------------------

_W, _H = 640, 440
_ML, _MR, _MT, _MB = 70, 20, 40, 55


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = min(s * mag for s in (1, 2, 5, 10) if s * mag >= raw)
    first = math.ceil(lo / step) * step
    out = []
    v = first
    while v <= hi + 1e-12 * step:
        out.append(round(v, 12))
        v += step
    return out or [lo]


def _svg_open(title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{_W}" height="{_H}" fill="white"/>',
        f'<text x="{_W / 2}" y="22" text-anchor="middle" font-size="15">{title}</text>',
    ]


def svg_line_chart(
    series: Sequence[tuple[str, Sequence[float], Sequence[float]]],
    title: str,
    xlabel: str,
    ylabel: str,
    log_x: bool = False,
) -> str:
    """Self-contained line chart; series are (label, xs, ys)."""
    xs_all = [x for _, xs, _ in series for x in xs]
    ys_all = [y for _, _, ys in series for y in ys]
    fx = (lambda v: math.log10(v)) if log_x else (lambda v: v)
    x_lo, x_hi = min(map(fx, xs_all)), max(map(fx, xs_all))
    y_lo, y_hi = min(ys_all + [0.0]), max(ys_all)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pw, ph = _W - _ML - _MR, _H - _MT - _MB

    def px(x: float) -> float:
        return _ML + (fx(x) - x_lo) / (x_hi - x_lo) * pw

    def py(y: float) -> float:
        return _MT + (1.0 - (y - y_lo) / (y_hi - y_lo)) * ph

    out = _svg_open(title)
    out.append(
        f'<rect x="{_ML}" y="{_MT}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>'
    )
    if log_x:
        lo_exp, hi_exp = math.floor(x_lo), math.ceil(x_hi)
        xticks = [10.0**e for e in range(int(lo_exp), int(hi_exp) + 1) if x_lo <= e <= x_hi]
        xtick_labels = [f"1e{int(math.log10(v))}" for v in xticks]
    else:
        xticks = _ticks(x_lo, x_hi)
        xtick_labels = [f"{v:g}" for v in xticks]
    for v, lab in zip(xticks, xtick_labels):
        x = px(v)
        out.append(f'<line x1="{x:.1f}" y1="{_MT + ph}" x2="{x:.1f}" y2="{_MT + ph + 5}" stroke="#444"/>')
        out.append(f'<text x="{x:.1f}" y="{_MT + ph + 18}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y_lo, y_hi):
        y = py(v)
        out.append(f'<line x1="{_ML - 5}" y1="{y:.1f}" x2="{_ML}" y2="{y:.1f}" stroke="#444"/>')
        out.append(f'<text x="{_ML - 8}" y="{y + 4:.1f}" text-anchor="end">{v:g}</text>')
    out.append(
        f'<text x="{_ML + pw / 2}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>'
    )
    out.append(
        f'<text x="18" y="{_MT + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MT + ph / 2})">{ylabel}</text>'
    )
    for i, (label, xs, ys) in enumerate(series):
        color = _PALETTE[i % len(_PALETTE)]
        pts = " ".join(f"{px(x):.1f},{py(y):.1f}" for x, y in zip(xs, ys))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = _MT + 16 + 16 * i
        out.append(f'<line x1="{_ML + pw - 150}" y1="{ly - 4}" x2="{_ML + pw - 125}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{_ML + pw - 120}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out)


def svg_heatmap(
    counts: np.ndarray,
    levels: Sequence[float],
    title: str,
    xlabel: str = "price of seller 2",
    ylabel: str = "price of seller 1",
    highlight: tuple[int, int] | None = None,
) -> str:
    """Self-contained heatmap of pair counts; rows index seller 1's price."""
    k = len(levels)
    pw, ph = _W - _ML - _MR, _H - _MT - _MB
    cw, ch = pw / k, ph / k
    top = float(counts.max()) or 1.0
    out = _svg_open(title)
    for i in range(k):
        for j in range(k):
            frac = counts[i, j] / top
            # White through blue, darker = more frequent.
            shade = int(255 - 200 * frac)
            y = _MT + (k - 1 - i) * ch
            x = _ML + j * cw
            out.append(
                f'<rect x="{x:.1f}" y="{y:.1f}" width="{cw:.2f}" height="{ch:.2f}" '
                f'fill="rgb({shade},{shade},255)" stroke="#ddd" stroke-width="0.5"/>'
            )
    if highlight is not None:
        hi, hj = highlight
        out.append(
            f'<rect x="{_ML + hj * cw:.1f}" y="{_MT + (k - 1 - hi) * ch:.1f}" '
            f'width="{cw:.2f}" height="{ch:.2f}" fill="none" stroke="red" stroke-width="2"/>'
        )
    step = max(1, k // 10)
    for j in range(0, k, step):
        x = _ML + (j + 0.5) * cw
        out.append(f'<text x="{x:.1f}" y="{_MT + ph + 16}" text-anchor="middle">{levels[j]:g}</text>')
    for i in range(0, k, step):
        y = _MT + (k - 0.5 - i) * ch
        out.append(f'<text x="{_ML - 6}" y="{y + 4:.1f}" text-anchor="end">{levels[i]:g}</text>')
    out.append(f'<text x="{_ML + pw / 2}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>')
    out.append(
        f'<text x="18" y="{_MT + ph / 2}" text-anchor="middle" '
        f'transform="rotate(-90 18 {_MT + ph / 2})">{ylabel}</text>'
    )
    out.append("</svg>")
    return "\n".join(out)


# ---------------------------------------------------------------------------
# Figure builders
# ---------------------------------------------------------------------------


def pair_heatmap_counts(
    transcript_pairs: Sequence[tuple[Transcript, Transcript]], last_rounds: int = 10
) -> np.ndarray:
    """Tally of last-`last_rounds` strategy pairs across replications; the
    total count is replications * last_rounds."""
    k = len(transcript_pairs[0][0].grid)
    counts = np.zeros((k, k), dtype=np.int64)
    for t1, t2 in transcript_pairs:
        for r1, r2 in zip(t1.records[-last_rounds:], t2.records[-last_rounds:]):
            counts[r1.posted_index, r2.posted_index] += 1
    return counts


def cost_sweep_rows(
    curve,
    cost_lo: float,
    cost_hi: float,
    points: int,
    truth: GroundTruth | None = None,
    distributions: np.ndarray | None = None,
):
    """(cost, estimated regret[, true regret]) rows for a regret-vs-cost figure."""
    from .oracles import true_calibrated_regret

    cs = np.linspace(cost_lo, cost_hi, points)
    est = curve.values(cs)
    rows = []
    for i, c in enumerate(cs):
        row = [float(c), float(est[i])]
        if truth is not None:
            row.append(float(true_calibrated_regret(distributions, truth, float(c))))
        rows.append(row)
    return rows


def horizon_rows(
    transcript: Transcript,
    truth: GroundTruth,
    costs: Sequence[float],
    horizons: Sequence[int],
):
    """True regret at the given costs for truncated prefixes of a transcript."""
    from .audit import _densify
    from .oracles import true_calibrated_regret

    dense = _densify(transcript)
    rows = []
    values = truth.as_array()
    for h in horizons:
        tr = GroundTruth(truth.levels, values[:h])
        row = [int(h)]
        for c in costs:
            row.append(float(true_calibrated_regret(dense.probs[:h], tr, float(c))))
        rows.append(row)
    return rows


def log_spaced_horizons(total: int, points: int = 8, start: int = 1000) -> list[int]:
    if total <= start:
        return [total]
    out = np.unique(
        np.round(np.logspace(math.log10(start), math.log10(total), points)).astype(int)
    )
    return [int(v) for v in out]
