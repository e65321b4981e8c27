"""Self-contained SVG renderers for the three benchmark chart types.

No plotting dependency: output markup is deterministic and byte-stable,
so rendered charts can be compared against golden files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .errors import EvaluationError
from .reporting import BoxplotStats

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#ff7f0e",
    "#9467bd",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

FONT = "Helvetica, Arial, sans-serif"


class EmptySeries(EvaluationError):
    pass


@dataclass(frozen=True)
class ChartStyle:
    width: int = 640
    height: int = 420
    margin_left: int = 64
    margin_right: int = 150
    margin_top: int = 44
    margin_bottom: int = 56
    radar_clip: float = 3.0


def _f(value: float) -> str:
    text = f"{value:.2f}"
    return "0.00" if text == "-0.00" else text


def _color(index: int) -> str:
    return PALETTE[index % len(PALETTE)]


def _header(style: ChartStyle, title: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{style.width}" '
        f'height="{style.height}" viewBox="0 0 {style.width} {style.height}">',
        f'<rect width="{style.width}" height="{style.height}" fill="#ffffff"/>',
    ]
    if title:
        parts.append(
            f'<text x="{style.width // 2}" y="24" text-anchor="middle" '
            f'font-family="{FONT}" font-size="15" fill="#222222">{escape(title)}</text>'
        )
    return parts


def _legend(style: ChartStyle, labels: list[str]) -> list[str]:
    x = style.width - style.margin_right + 16
    parts = []
    for i, label in enumerate(labels):
        y = style.margin_top + 8 + 18 * i
        parts.append(
            f'<rect x="{x}" y="{y}" width="11" height="11" fill="{_color(i)}"/>'
        )
        parts.append(
            f'<text x="{x + 16}" y="{y + 10}" font-family="{FONT}" font-size="12" '
            f'fill="#222222">{escape(label)}</text>'
        )
    return parts


def _nice_ticks(high: float, count: int = 5) -> list[float]:
    if high <= 0.0:
        return [0.0, 1.0]
    raw = high / count
    power = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 2.5, 5.0, 10.0):
        step = mult * power
        if step >= raw:
            break
    ticks = []
    tick = 0.0
    while tick <= high + step * 0.5:
        ticks.append(tick)
        tick += step
    return ticks


def render_boxplot_svg(
    groups: list[tuple[str, list[tuple[str, BoxplotStats]]]],
    title: str = "ATE per sequence",
    style: ChartStyle = ChartStyle(),
) -> str:
    """Grouped boxes: one group per sequence, one box per method.

    ``groups`` is an ordered list of (group label, [(series label, stats)]).
    """
    if not groups or all(not boxes for _, boxes in groups):
        raise EmptySeries("no boxplot data")
    series_labels: list[str] = []
    for _, boxes in groups:
        for label, _ in boxes:
            if label not in series_labels:
                series_labels.append(label)

    top = max(
        max(max(s.whisker_high, *(s.outliers or (s.whisker_high,))) for _, s in boxes)
        for _, boxes in groups
        if boxes
    )
    top = top * 1.05 if top > 0 else 1.0
    plot_w = style.width - style.margin_left - style.margin_right
    plot_h = style.height - style.margin_top - style.margin_bottom

    def y_of(value: float) -> float:
        return style.margin_top + plot_h * (1.0 - value / top)

    parts = _header(style, title)
    parts.append(
        f'<rect x="{style.margin_left}" y="{style.margin_top}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#888888"/>'
    )
    for tick in _nice_ticks(top):
        y = y_of(tick)
        if y < style.margin_top - 0.5:
            continue
        parts.append(
            f'<line x1="{style.margin_left - 4}" y1="{_f(y)}" x2="{style.margin_left}" '
            f'y2="{_f(y)}" stroke="#888888"/>'
        )
        parts.append(
            f'<text x="{style.margin_left - 8}" y="{_f(y + 4)}" text-anchor="end" '
            f'font-family="{FONT}" font-size="11" fill="#444444">{tick:.3g}</text>'
        )
    parts.append(
        f'<text x="16" y="{style.margin_top - 10}" font-family="{FONT}" '
        f'font-size="11" fill="#444444">ATE rmse [m]</text>'
    )

    group_w = plot_w / len(groups)
    for gi, (group_label, boxes) in enumerate(groups):
        gx = style.margin_left + gi * group_w
        parts.append(
            f'<text x="{_f(gx + group_w / 2)}" y="{style.height - style.margin_bottom + 18}" '
            f'text-anchor="middle" font-family="{FONT}" font-size="12" '
            f'fill="#222222">{escape(group_label)}</text>'
        )
        if not boxes:
            continue
        slot = group_w / (len(boxes) + 1)
        box_w = min(26.0, slot * 0.6)
        for bi, (label, stats) in enumerate(boxes):
            color = _color(series_labels.index(label))
            cx = gx + slot * (bi + 1)
            x0 = cx - box_w / 2
            y_q1 = y_of(stats.q1)
            y_q3 = y_of(stats.q3)
            parts.append(
                f'<g class="box" stroke="{color}" fill="none">'
                f'<line x1="{_f(cx)}" y1="{_f(y_of(stats.whisker_low))}" '
                f'x2="{_f(cx)}" y2="{_f(y_q1)}"/>'
                f'<line x1="{_f(cx)}" y1="{_f(y_of(stats.whisker_high))}" '
                f'x2="{_f(cx)}" y2="{_f(y_q3)}"/>'
                f'<line x1="{_f(cx - box_w / 4)}" y1="{_f(y_of(stats.whisker_low))}" '
                f'x2="{_f(cx + box_w / 4)}" y2="{_f(y_of(stats.whisker_low))}"/>'
                f'<line x1="{_f(cx - box_w / 4)}" y1="{_f(y_of(stats.whisker_high))}" '
                f'x2="{_f(cx + box_w / 4)}" y2="{_f(y_of(stats.whisker_high))}"/>'
                f'<rect x="{_f(x0)}" y="{_f(y_q3)}" width="{_f(box_w)}" '
                f'height="{_f(y_q1 - y_q3)}" fill="{color}" fill-opacity="0.25"/>'
                f'<line x1="{_f(x0)}" y1="{_f(y_of(stats.median))}" '
                f'x2="{_f(x0 + box_w)}" y2="{_f(y_of(stats.median))}" stroke-width="2"/>'
                "</g>"
            )
            for outlier in stats.outliers:
                parts.append(
                    f'<circle class="outlier" cx="{_f(cx)}" cy="{_f(y_of(min(outlier, top)))}" '
                    f'r="2.5" fill="none" stroke="{color}"/>'
                )
    parts.extend(_legend(style, series_labels))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_cumulative_svg(
    series: list[tuple[str, list[int]]],
    thresholds,
    title: str = "Runs at or below ATE threshold",
    style: ChartStyle = ChartStyle(),
) -> str:
    """One step-free polyline per method over log-spaced thresholds."""
    th = np.asarray(thresholds, dtype=float).reshape(-1)
    if not series or th.size == 0:
        raise EmptySeries("no cumulative data")
    x_lo = math.log10(th[0])
    x_hi = math.log10(th[-1])
    y_top = max(max(counts) for _, counts in series)
    y_top = max(y_top, 1)
    plot_w = style.width - style.margin_left - style.margin_right
    plot_h = style.height - style.margin_top - style.margin_bottom

    def x_of(threshold: float) -> float:
        frac = (math.log10(threshold) - x_lo) / (x_hi - x_lo)
        return style.margin_left + frac * plot_w

    def y_of(count: float) -> float:
        return style.margin_top + plot_h * (1.0 - count / y_top)

    parts = _header(style, title)
    parts.append(
        f'<rect x="{style.margin_left}" y="{style.margin_top}" width="{plot_w}" '
        f'height="{plot_h}" fill="none" stroke="#888888"/>'
    )
    decade = math.ceil(x_lo)
    while decade <= math.floor(x_hi):
        x = x_of(10.0 ** decade)
        parts.append(
            f'<line x1="{_f(x)}" y1="{style.margin_top}" x2="{_f(x)}" '
            f'y2="{style.margin_top + plot_h}" stroke="#dddddd"/>'
        )
        parts.append(
            f'<text x="{_f(x)}" y="{style.height - style.margin_bottom + 18}" '
            f'text-anchor="middle" font-family="{FONT}" font-size="11" '
            f'fill="#444444">{10.0 ** decade:g}</text>'
        )
        decade += 1
    for count in range(0, y_top + 1, max(1, y_top // 5)):
        y = y_of(count)
        parts.append(
            f'<text x="{style.margin_left - 8}" y="{_f(y + 4)}" text-anchor="end" '
            f'font-family="{FONT}" font-size="11" fill="#444444">{count}</text>'
        )
    parts.append(
        f'<text x="{style.width // 2}" y="{style.height - 12}" text-anchor="middle" '
        f'font-family="{FONT}" font-size="11" fill="#444444">ATE threshold [m]</text>'
    )
    for i, (label, counts) in enumerate(series):
        points = " ".join(
            f"{_f(x_of(t))},{_f(y_of(c))}" for t, c in zip(th, counts)
        )
        parts.append(
            f'<polyline class="cumulative-series" points="{points}" fill="none" '
            f'stroke="{_color(i)}" stroke-width="1.5"/>'
        )
    parts.extend(_legend(style, [label for label, _ in series]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_radar_svg(
    axis_labels: list[str],
    series: list[tuple[str, list[float]]],
    title: str = "Median ATE relative to per-sequence median",
    style: ChartStyle = ChartStyle(),
) -> str:
    """One polygon per method over sequence axes.

    Radial values are normalized ATE (1.0 = pooled per-sequence median)
    clipped at ``style.radar_clip``.
    """
    if not axis_labels or not series:
        raise EmptySeries("no radar data")
    for label, values in series:
        if len(values) != len(axis_labels):
            raise ValueError(f"series {label!r} does not cover every axis")

    cx = style.margin_left + (style.width - style.margin_left - style.margin_right) / 2
    cy = style.margin_top + (style.height - style.margin_top - style.margin_bottom) / 2
    radius = min(
        (style.width - style.margin_left - style.margin_right),
        (style.height - style.margin_top - style.margin_bottom),
    ) / 2 - 10
    clip = style.radar_clip

    def point(axis: int, value: float) -> tuple[float, float]:
        angle = -math.pi / 2 + 2.0 * math.pi * axis / len(axis_labels)
        r = radius * min(value, clip) / clip
        return cx + r * math.cos(angle), cy + r * math.sin(angle)

    parts = _header(style, title)
    ring = 0.5
    while ring <= clip + 1e-9:
        r = radius * ring / clip
        stroke = "#aaaaaa" if abs(ring - 1.0) < 1e-9 else "#dddddd"
        parts.append(
            f'<circle class="radar-ring" cx="{_f(cx)}" cy="{_f(cy)}" r="{_f(r)}" '
            f'fill="none" stroke="{stroke}"/>'
        )
        parts.append(
            f'<text x="{_f(cx + 4)}" y="{_f(cy - r - 2)}" font-family="{FONT}" '
            f'font-size="10" fill="#888888">{ring:g}</text>'
        )
        ring += 0.5
    for i, label in enumerate(axis_labels):
        ex, ey = point(i, clip)
        parts.append(
            f'<line class="radar-axis" x1="{_f(cx)}" y1="{_f(cy)}" x2="{_f(ex)}" '
            f'y2="{_f(ey)}" stroke="#bbbbbb"/>'
        )
        lx, ly = point(i, clip * 1.12)
        anchor = "middle"
        if lx > cx + 1:
            anchor = "start"
        elif lx < cx - 1:
            anchor = "end"
        parts.append(
            f'<text x="{_f(lx)}" y="{_f(ly + 4)}" text-anchor="{anchor}" '
            f'font-family="{FONT}" font-size="11" fill="#222222">{escape(label)}</text>'
        )
    for i, (label, values) in enumerate(series):
        points = " ".join(_f(c) for v_i, v in enumerate(values) for c in point(v_i, v))
        parts.append(
            f'<polygon class="radar-series" points="{points}" fill="{_color(i)}" '
            f'fill-opacity="0.15" stroke="{_color(i)}" stroke-width="1.5"/>'
        )
    parts.extend(_legend(style, [label for label, _ in series]))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
