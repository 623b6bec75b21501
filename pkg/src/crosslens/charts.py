"""Chart selection by result shape, and a small deterministic SVG renderer.

Selection is a fixed rule cascade over the result's column roles:

1. one temporal or ordinal column and at least one numeric -> LINE
2. one categorical column (<= 30 distinct) and a numeric -> BAR
3. two or more numeric columns, nothing temporal -> SCATTER
4. two categoricals and a numeric, one value per cell -> HEATMAP
5. anything else -> TABLE

When several rules apply, a keyword in the question ("trend", "compare",
"correlat") may pick among them; otherwise the earliest rule wins.
"""

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional
from xml.sax.saxutils import escape

from .core import UnifiedType

MAX_CATEGORIES = 30

_TEMPORAL_NAME = re.compile(r"(^|_)(year|month|day|week|quarter|date|hour|period)s?($|_)", re.I)
_ID_NAME = re.compile(r"(^|_)id$", re.I)
_ORDINAL_TEXT = re.compile(r"^\d{4}(-\d{2}|-W\d{2}|-Q[1-4])$")


class ChartType(str, Enum):
    LINE = "LINE"
    BAR = "BAR"
    SCATTER = "SCATTER"
    HEATMAP = "HEATMAP"
    TABLE = "TABLE"


KEYWORDS = (("trend", ChartType.LINE), ("compare", ChartType.BAR), ("correlat", ChartType.SCATTER))


@dataclass(frozen=True)
class ChartSpec:
    chart_type: ChartType
    x: Optional[str]
    y: tuple
    series: Optional[str] = None
    title: str = ""
    notice: str = ""

    def columns(self):
        return [c for c in (self.x, *self.y, self.series) if c is not None]

    def validate(self, result):
        names = set(result.column_names)
        missing = [c for c in self.columns() if c not in names]
        if missing:
            raise ValueError(f"chart references unknown columns {missing}")
        if self.chart_type is ChartType.LINE and not is_temporal(result, self.x):
            raise ValueError(f"LINE needs a sortable temporal x; {self.x!r} is not")
        return self

    def to_dict(self):
        return {
            "chart_type": self.chart_type.value,
            "notice": self.notice,
            "series": self.series,
            "title": self.title,
            "x": self.x,
            "y": list(self.y),
        }


# -- column roles ---------------------------------------------------------


def _values(result, name):
    i = result.column_names.index(name)
    return [r[i] for r in result.rows if r[i] is not None]


def is_temporal(result, name):
    utype = result.column_type(name)
    if utype.is_temporal:
        return True
    if utype is UnifiedType.INT and _TEMPORAL_NAME.search(name):
        return True
    if utype is UnifiedType.TEXT:
        values = _values(result, name)
        return bool(values) and all(_ORDINAL_TEXT.match(str(v)) for v in values)
    return False


def column_roles(result):
    """Split result columns into (temporal, numeric, categorical) name lists."""
    temporal, numeric, categorical = [], [], []
    for name in result.column_names:
        utype = result.column_type(name)
        distinct = result.distinct.get(name, 0)
        if is_temporal(result, name):
            temporal.append(name)
        elif utype is UnifiedType.INT and _ID_NAME.search(name) and distinct <= MAX_CATEGORIES:
            categorical.append(name)
        elif utype.is_numeric:
            numeric.append(name)
        elif utype in (UnifiedType.TEXT, UnifiedType.BOOL) and distinct <= MAX_CATEGORIES:
            categorical.append(name)
    return temporal, numeric, categorical


def _pivotable(result, a, b):
    ia, ib = result.column_names.index(a), result.column_names.index(b)
    keys = [(r[ia], r[ib]) for r in result.rows]
    return len(keys) == len(set(keys))


def applicable_rules(result):
    """Every rule whose shape condition holds, in cascade order, with its spec fields."""
    temporal, numeric, categorical = column_roles(result)
    rules = []
    if len(temporal) == 1 and numeric:
        series = categorical[0] if len(categorical) == 1 else None
        rules.append((ChartType.LINE, temporal[0], tuple(numeric), series))
    if len(categorical) == 1 and numeric:
        rules.append((ChartType.BAR, categorical[0], tuple(numeric), None))
    if len(numeric) >= 2 and not temporal:
        rules.append((ChartType.SCATTER, numeric[0], (numeric[1],), None))
    if len(categorical) == 2 and numeric and _pivotable(result, *categorical):
        rules.append((ChartType.HEATMAP, categorical[0], (numeric[0],), categorical[1]))
    return rules


def _title(question, width=90):
    question = " ".join(question.split())
    return question if len(question) <= width else question[: width - 3] + "..."


def select_chart(result, question=""):
    title = _title(question)
    if result.row_count == 0:
        return ChartSpec(ChartType.TABLE, None, (), None, title, "no rows")
    rules = applicable_rules(result)
    if not rules:
        return ChartSpec(ChartType.TABLE, None, tuple(result.column_names), None, title)
    chosen = rules[0]
    if len(rules) > 1:
        lowered = question.lower()
        for word, ctype in KEYWORDS:
            match = next((r for r in rules if r[0] is ctype), None)
            if word in lowered and match is not None:
                chosen = match
                break
    ctype, x, y, series = chosen
    return ChartSpec(ctype, x, y, series, title)


# -- rendering ------------------------------------------------------------

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 150, 40, 60
PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _f(x):
    return f"{x:.2f}"


def _label(value, width=18):
    text = "" if value is None else (f"{value:.4g}" if isinstance(value, float) else str(value))
    return escape(text if len(text) <= width else text[: width - 1] + "~")


def _scale(lo, hi, a, b):
    if hi == lo:
        return lambda v: (a + b) / 2
    return lambda v: a + (v - lo) / (hi - lo) * (b - a)


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


@dataclass
class _Canvas:
    parts: list = field(default_factory=list)

    def add(self, text):
        self.parts.append(text)

    def axes(self, xname, yname):
        x0, y0, x1, y1 = LEFT, HEIGHT - BOTTOM, WIDTH - RIGHT, TOP
        self.add(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#333"/>')
        self.add(f'<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#333"/>')
        self.add(f'<text class="xlabel" x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">{escape(xname or "")}</text>')
        self.add(
            f'<text class="ylabel" x="15" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 15 {(y0 + y1) / 2:.1f})">{escape(yname or "")}</text>'
        )

    def yticks(self, lo, hi, sy):
        for v in (lo, hi):
            self.add(f'<text class="tick" x="{LEFT - 6}" y="{_f(sy(v))}" text-anchor="end">{_label(v)}</text>')

    def legend(self, entries):
        for i, (name, color) in enumerate(entries):
            y = TOP + 14 + i * 16
            self.add(
                f'<g class="legend"><rect x="{WIDTH - RIGHT + 12}" y="{y - 9}" width="10" height="10" fill="{color}"/>'
                f'<text x="{WIDTH - RIGHT + 27}" y="{y}">{_label(name)}</text></g>'
            )


def _sort_key(v):
    return (0, v, "") if _num(v) else (1, 0, str(v))


def _line(c, spec, result):
    ix = result.column_names.index(spec.x)
    iy = result.column_names.index(spec.y[0])
    groups = {}
    if spec.series is not None:
        isr = result.column_names.index(spec.series)
        for r in result.rows:
            groups.setdefault(r[isr], []).append(r)
    else:
        groups[spec.y[0]] = list(result.rows)
    xs = sorted({r[ix] for r in result.rows if r[ix] is not None}, key=_sort_key)
    pos = {v: i for i, v in enumerate(xs)}
    ys = [r[iy] for r in result.rows if _num(r[iy])]
    lo, hi = (min(ys), max(ys)) if ys else (0, 1)
    sx = _scale(0, max(len(xs) - 1, 1), LEFT + 10, WIDTH - RIGHT - 10)
    sy = _scale(lo, hi, HEIGHT - BOTTOM - 10, TOP + 10)
    c.axes(spec.x, spec.y[0])
    c.yticks(lo, hi, sy)
    if xs:
        c.add(f'<text class="tick" x="{LEFT}" y="{HEIGHT - BOTTOM + 16}">{_label(xs[0])}</text>')
        c.add(f'<text class="tick" x="{WIDTH - RIGHT}" y="{HEIGHT - BOTTOM + 16}" text-anchor="end">{_label(xs[-1])}</text>')
    legend = []
    for i, key in enumerate(sorted(groups, key=_sort_key)):
        color = PALETTE[i % len(PALETTE)]
        pts = sorted((pos[r[ix]], r[iy]) for r in groups[key] if r[ix] is not None and _num(r[iy]))
        coords = " ".join(f"{_f(sx(p))},{_f(sy(v))}" for p, v in pts)
        c.add(f'<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
        legend.append((key, color))
    c.legend(legend)


def _bar(c, spec, result):
    ix = result.column_names.index(spec.x)
    iy = result.column_names.index(spec.y[0])
    rows = [r for r in result.rows if _num(r[iy])]
    vals = [r[iy] for r in rows]
    lo, hi = min(0, *vals) if vals else 0, max(0, *vals) if vals else 1
    sy = _scale(lo, hi, HEIGHT - BOTTOM, TOP + 10)
    band = (WIDTH - RIGHT - LEFT) / max(len(rows), 1)
    c.axes(spec.x, spec.y[0])
    c.yticks(lo, hi, sy)
    for i, r in enumerate(rows):
        x = LEFT + i * band + band * 0.1
        top, base = sy(max(r[iy], 0)), sy(min(r[iy], 0))
        c.add(
            f'<rect class="bar" x="{_f(x)}" y="{_f(top)}" width="{_f(band * 0.8)}" '
            f'height="{_f(base - top)}" fill="{PALETTE[0]}"><title>{_label(r[ix])}: {_label(r[iy])}</title></rect>'
        )
        c.add(f'<text class="tick" x="{_f(x + band * 0.4)}" y="{HEIGHT - BOTTOM + 16}" text-anchor="middle">{_label(r[ix], 10)}</text>')
    c.legend([(spec.y[0], PALETTE[0])])


def _scatter(c, spec, result):
    ix = result.column_names.index(spec.x)
    iy = result.column_names.index(spec.y[0])
    pts = [(r[ix], r[iy]) for r in result.rows if _num(r[ix]) and _num(r[iy])]
    xs, ys = [p[0] for p in pts] or [0, 1], [p[1] for p in pts] or [0, 1]
    sx = _scale(min(xs), max(xs), LEFT + 10, WIDTH - RIGHT - 10)
    sy = _scale(min(ys), max(ys), HEIGHT - BOTTOM - 10, TOP + 10)
    c.axes(spec.x, spec.y[0])
    c.yticks(min(ys), max(ys), sy)
    for x, y in pts:
        c.add(f'<circle class="point" cx="{_f(sx(x))}" cy="{_f(sy(y))}" r="3" fill="{PALETTE[0]}" fill-opacity="0.6"/>')
    c.legend([(spec.y[0], PALETTE[0])])


def _heat(v, lo, hi):
    t = 0.5 if hi == lo else (v - lo) / (hi - lo)
    return "#%02x%02x%02x" % (255 - round(t * 224), 255 - round(t * 136), 255 - round(t * 75))


def _heatmap(c, spec, result):
    ix = result.column_names.index(spec.x)
    iser = result.column_names.index(spec.series)
    iv = result.column_names.index(spec.y[0])
    xs = sorted({r[ix] for r in result.rows}, key=_sort_key)
    ss = sorted({r[iser] for r in result.rows}, key=_sort_key)
    vals = [r[iv] for r in result.rows if _num(r[iv])]
    lo, hi = (min(vals), max(vals)) if vals else (0, 1)
    cw = (WIDTH - RIGHT - LEFT) / max(len(xs), 1)
    ch = (HEIGHT - BOTTOM - TOP) / max(len(ss), 1)
    c.axes(spec.x, spec.series)
    for r in result.rows:
        if not _num(r[iv]):
            continue
        x = LEFT + xs.index(r[ix]) * cw
        y = TOP + ss.index(r[iser]) * ch
        c.add(
            f'<rect class="cell" x="{_f(x)}" y="{_f(y)}" width="{_f(cw)}" height="{_f(ch)}" '
            f'fill="{_heat(r[iv], lo, hi)}"><title>{_label(r[ix])} / {_label(r[iser])}: {_label(r[iv])}</title></rect>'
        )
    for i, v in enumerate(xs):
        c.add(f'<text class="tick" x="{_f(LEFT + (i + 0.5) * cw)}" y="{HEIGHT - BOTTOM + 16}" text-anchor="middle">{_label(v, 10)}</text>')
    for i, v in enumerate(ss):
        c.add(f'<text class="tick" x="{LEFT - 6}" y="{_f(TOP + (i + 0.5) * ch)}" text-anchor="end">{_label(v, 10)}</text>')
    c.legend([(f"{spec.y[0]} min {_label(lo)}", _heat(lo, lo, hi)), (f"{spec.y[0]} max {_label(hi)}", _heat(hi, lo, hi))])


def _table(c, spec, result, max_rows=12):
    if result.row_count == 0:
        c.add(f'<text class="notice" x="{WIDTH / 2}" y="{HEIGHT / 2}" text-anchor="middle">{escape(spec.notice or "no rows")}</text>')
        return
    names = result.column_names
    colw = (WIDTH - 40) / max(len(names), 1)
    for j, name in enumerate(names):
        c.add(f'<text class="header" x="{_f(20 + j * colw)}" y="{TOP + 20}" font-weight="bold">{_label(name)}</text>')
    for i, r in enumerate(result.rows[:max_rows]):
        for j, v in enumerate(r):
            c.add(f'<text class="cell-text" x="{_f(20 + j * colw)}" y="{TOP + 40 + i * 18}">{_label(v)}</text>')
    if result.row_count > max_rows:
        c.add(f'<text class="notice" x="20" y="{TOP + 40 + max_rows * 18}">... {result.row_count - max_rows} more rows</text>')


_RENDERERS = {
    ChartType.LINE: _line,
    ChartType.BAR: _bar,
    ChartType.SCATTER: _scatter,
    ChartType.HEATMAP: _heatmap,
    ChartType.TABLE: _table,
}


def chart_svg(spec, result):
    spec.validate(result)
    c = _Canvas()
    c.add(f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" '
          f'font-family="sans-serif" font-size="11">')
    c.add(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
    c.add(f'<text class="title" x="{WIDTH / 2}" y="22" text-anchor="middle" font-size="13">{escape(spec.title)}</text>')
    _RENDERERS[spec.chart_type](c, spec, result)
    c.add("</svg>")
    return "\n".join(c.parts) + "\n"


def render_chart(spec, result, out_path):
    """Write the chart as a standalone SVG file; identical inputs give identical bytes."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(chart_svg(spec, result), encoding="utf-8")
    return out_path
