"""Sub-question execution: query generation, the self-correction loop and result summaries."""

import json
import logging
import statistics
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ._validation import check_positive_int
from .charts import ChartSpec, ChartType, render_chart, select_chart
from .core import UnifiedType
from .errors import ProgramValidationError, ProviderError, QueryError
from .prompts import extract_sql
from .staging import ResourceLimits, check_read_only, execute_query, referenced_tables

logger = logging.getLogger(__name__)

__all__ = [
    "ChartSpec",
    "ChartType",
    "CodeAttempt",
    "ExecutorConfig",
    "Outcome",
    "ResultSummary",
    "generate_program",
    "render_chart",
    "run_with_selfcorrection",
    "select_chart",
    "template_narrative",
    "validate_program",
]


class Outcome(str, Enum):
    OK = "OK"
    ERROR = "ERROR"


@dataclass(frozen=True)
class ExecutorConfig:
    max_retries: int = 3
    preview_cap: int = 20
    limits: ResourceLimits = field(default_factory=ResourceLimits)

    def __post_init__(self):
        check_positive_int(self.max_retries, "max_retries", minimum=0)
        check_positive_int(self.preview_cap, "preview_cap")


@dataclass(frozen=True)
class CodeAttempt:
    attempt_index: int
    program: str
    outcome: Outcome
    engine_message: str = ""
    duration: float = 0.0
    tier: Optional[str] = None
    model: Optional[str] = None

    def to_dict(self, with_timing=False):
        out = {
            "attempt_index": self.attempt_index,
            "engine_message": self.engine_message,
            "model": self.model,
            "outcome": self.outcome.value,
            "program": self.program,
            "tier": self.tier,
        }
        if with_timing:
            out["duration"] = self.duration
        return out


def _round(x):
    return float(f"{x:.6g}")


@dataclass
class ResultSummary:
    """What one sub-question's query returned, in prompt-sized form."""

    columns: list
    row_count: int
    rows: list
    stats: dict
    distinct: dict
    preview_cap: int = 20
    truncated: bool = False
    narrative: str = ""

    @classmethod
    def from_query(cls, result, preview_cap=20):
        columns = [(name, utype) for name, utype in zip(result.columns, result.types)]
        stats, distinct = {}, {}
        for i, (name, utype) in enumerate(columns):
            values = [r[i] for r in result.rows if r[i] is not None]
            distinct[name] = len(set(values))
            if utype.is_numeric:
                nums = [float(v) for v in values]
                stats[name] = (
                    {"max": _round(max(nums)), "mean": _round(statistics.fmean(nums)), "min": _round(min(nums))}
                    if nums
                    else {"max": None, "mean": None, "min": None}
                )
        return cls(columns, result.row_count, list(result.rows), stats, distinct, preview_cap, result.truncated)

    @property
    def column_names(self):
        return [name for name, _ in self.columns]

    def column_type(self, name):
        return dict(self.columns)[name]

    @property
    def rows_preview(self):
        return self.rows[: self.preview_cap]

    def to_dict(self):
        return {
            "columns": [{"name": n, "type": t.value} for n, t in self.columns],
            "distinct": self.distinct,
            "narrative": self.narrative,
            "row_count": self.row_count,
            "rows_preview": [list(r) for r in self.rows_preview],
            "stats": self.stats,
            "truncated": self.truncated,
        }

    @classmethod
    def from_dict(cls, data):
        columns = [(c["name"], UnifiedType(c["type"])) for c in data["columns"]]
        rows = [tuple(r) for r in data.get("rows_preview", [])]
        return cls(
            columns,
            data["row_count"],
            rows,
            data.get("stats", {}),
            data.get("distinct", {}),
            max(len(rows), 1),
            data.get("truncated", False),
            data.get("narrative", ""),
        )


# -- narrative --------------------------------------------------------------


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _index(summary, name):
    return summary.column_names.index(name)


def template_narrative(summary, question=""):
    """Deterministic one-paragraph observation built from the result shape and stats."""
    if summary.row_count == 0:
        return "The query returned no rows."
    spec = select_chart(summary, question)
    rows = summary.rows
    if spec.chart_type is ChartType.LINE:
        ix, iy = _index(summary, spec.x), _index(summary, spec.y[0])
        if spec.series is None:
            pts = sorted((r[ix], r[iy]) for r in rows if r[ix] is not None and r[iy] is not None)
        else:
            # average across series per x so the headline is about the overall series
            buckets = {}
            for r in rows:
                if r[ix] is not None and r[iy] is not None:
                    buckets.setdefault(r[ix], []).append(float(r[iy]))
            pts = sorted((k, statistics.fmean(v)) for k, v in buckets.items())
        if len(pts) < 2:
            return f"{spec.y[0]} has a single observation of {_fmt(pts[0][1]) if pts else 'none'}."
        ys = [float(v) for _, v in pts]
        slope = statistics.linear_regression(range(len(ys)), ys).slope
        direction = "an increasing" if slope > 0 else "a decreasing" if slope < 0 else "a flat"
        peak = max(pts, key=lambda p: p[1])
        return (
            f"{spec.y[0]} shows {direction} trend over {spec.x}, moving from {_fmt(pts[0][1])} at {pts[0][0]} "
            f"to {_fmt(pts[-1][1])} at {pts[-1][0]} (slope {slope:.4g} per step); "
            f"the peak is {_fmt(peak[1])} at {peak[0]}."
        )
    if spec.chart_type is ChartType.BAR:
        ix, iy = _index(summary, spec.x), _index(summary, spec.y[0])
        ranked = sorted((r for r in rows if r[iy] is not None), key=lambda r: (-float(r[iy]), str(r[ix])))
        top, bottom = ranked[0], ranked[-1]
        q = question.lower()
        if ("highest" in q or "lowest" in q) and "compar" not in q:
            # a top-n answer: the rows below the winner are runners-up, not the minimum
            lowest = "lowest" in q and "highest" not in q
            if lowest:
                ranked = ranked[::-1]
            top, word = ranked[0], "lowest" if lowest else "highest"
            text = f"The {word} {spec.y[0]} ({_fmt(top[iy])}) occurs at {top[ix]}"
            if len(ranked) > 1:
                nxt = ranked[1]
                gap = abs(float(top[iy]) - float(nxt[iy]))
                text += f", ahead of {nxt[ix]} ({_fmt(nxt[iy])}) by {_fmt(gap)}"
            return text + "."
        lead = f"Compared across {spec.x}, " if "compar" in question.lower() else ""
        text = (
            f"{lead}{spec.x} {top[ix]} has the highest {spec.y[0]} ({_fmt(top[iy])}) "
            f"and {bottom[ix]} the lowest ({_fmt(bottom[iy])})"
        )
        if len(ranked) > 1:
            text += f", a gap of {_fmt(float(top[iy]) - float(bottom[iy]))}"
        return text + "."
    if spec.chart_type is ChartType.SCATTER:
        ix, iy = _index(summary, spec.x), _index(summary, spec.y[0])
        pairs = [(float(r[ix]), float(r[iy])) for r in rows if r[ix] is not None and r[iy] is not None]
        if len(pairs) < 3 or len({p[0] for p in pairs}) < 2 or len({p[1] for p in pairs}) < 2:
            return f"Too few distinct points to relate {spec.y[0]} to {spec.x}."
        r = statistics.correlation([p[0] for p in pairs], [p[1] for p in pairs])
        sign = "positively" if r > 0 else "negatively"
        strength = "strongly" if abs(r) >= 0.7 else "moderately" if abs(r) >= 0.3 else "weakly"
        return f"{spec.y[0]} is {strength} {sign} correlated with {spec.x} (r = {r:.3f} over {len(pairs)} rows)."
    if spec.chart_type is ChartType.HEATMAP:
        ix, iser, iv = _index(summary, spec.x), _index(summary, spec.series), _index(summary, spec.y[0])
        best = max((r for r in rows if r[iv] is not None), key=lambda r: (float(r[iv]), str(r[ix]), str(r[iser])))
        return f"The highest {spec.y[0]} ({_fmt(best[iv])}) occurs at {spec.x} {best[ix]} and {spec.series} {best[iser]}."
    if summary.row_count == 1:
        cells = ", ".join(f"{n} = {_fmt(v)}" for n, v in zip(summary.column_names, rows[0]))
        return f"The query returned a single row: {cells}."
    parts = [f"The query returned {summary.row_count} rows"]
    for name, s in sorted(summary.stats.items()):
        if s["mean"] is not None:
            parts.append(f"{name} ranges from {_fmt(s['min'])} to {_fmt(s['max'])} (mean {_fmt(s['mean'])})")
    return "; ".join(parts) + "."


OBSERVE_SYSTEM = """You are a data analyst. Given a sub-question, the result of the query that answered it and
facts computed over the full result, write one short paragraph stating the concrete observation, quoting the
key numbers. No preamble."""


def observe_prompt(question, summary, facts):
    return (
        f"### Sub-question\n{question}\n\n"
        f"### Result\n```json\n{json.dumps(summary.to_dict(), sort_keys=True, default=str)}\n```\n\n"
        f"### Computed facts\n{facts}\n"
    )


def observe(question, summary, provider=None):
    """Narrative for a result: provider-written when possible, templated otherwise."""
    facts = template_narrative(summary, question)
    if provider is not None:
        try:
            text = provider.ask("observe", OBSERVE_SYSTEM, observe_prompt(question, summary, facts)).strip()
            if text:
                return text
        except ProviderError as exc:
            logger.warning("observation fell back to template: %s", exc)
    return facts


# -- program generation -------------------------------------------------------

CODEGEN_SYSTEM = """You write one read-only SQL query (DuckDB dialect) that answers a sub-question over the
staging tables listed below. Use only the listed tables and columns. When the question needs data from several
sources, join exactly on the columns named in the join hints, translated through the column mapping.
Reply with the query inside a ```sql fenced block and nothing else."""


def codegen_context(store, hints):
    """Staging schema plus the staging location of every aliased column a hint names."""
    mapping = []
    for a, b, _ in getattr(hints, "pairs", ()):
        for alias in (a, b):
            if alias in store.column_map:
                table, column = store.column_map[alias]
                mapping.append(f"{alias} -> {table}.{column}")
    text = store.schema_text()
    if mapping:
        text += "\n\nColumn mapping:\n" + "\n".join(dict.fromkeys(mapping))
    return text


def codegen_prompt(question, schema, hints, prior=None):
    out = (
        f"### Sub-question\n{question}\n\n"
        f"### Staging schema\n{schema}\n\n"
        f"### Join hints\n{hints}\n"
    )
    if prior is not None:
        out += (
            f"\n### Previous attempt\n```sql\n{prior.program}\n```\n\n"
            f"### Error\n{prior.engine_message}\n\n"
            "Fix the query so it runs and still answers the sub-question.\n"
        )
    return out


def validate_program(program, tables=None):
    """Static checks: one read-only statement over known tables."""
    if not program.strip():
        raise ProgramValidationError("empty program", program)
    try:
        check_read_only(program)
    except QueryError as exc:
        raise ProgramValidationError(str(exc), program) from exc
    if tables is not None:
        known = {t.lower() for t in tables}
        unknown = [t for t in referenced_tables(program) if t not in known]
        if unknown:
            raise ProgramValidationError(f"unknown table(s): {', '.join(unknown)}", program)
    return program


def _draft(node, schema, hints, prior, provider):
    request = provider.request("codegen", CODEGEN_SYSTEM, codegen_prompt(node.text, schema, hints, prior))
    text, route = provider.complete_routed(request)
    return extract_sql(text), route


def generate_program(node, schema, hints, prior, provider, config=None, tables=None):
    """A validated read-only query for ``node``; ``prior`` carries the failed attempt to correct."""
    program, _ = _draft(node, schema, hints, prior, provider)
    return validate_program(program, tables)


def run_with_selfcorrection(node, store, hints, provider, config=None):
    """Generate, execute and regenerate until success or ``max_retries`` is spent.

    Returns ``(summary, trail)``; ``summary`` is ``None`` when every attempt
    failed. Each failure, including static-validation failures, counts
    toward model escalation for the ``codegen`` tag.
    """
    config = config or ExecutorConfig()
    schema = codegen_context(store, hints)
    tables = store.table_names()
    trail = []
    prior = None
    for index in range(1, config.max_retries + 2):
        start = time.monotonic()
        route = None
        program = ""
        try:
            program, route = _draft(node, schema, hints, prior, provider)
            validate_program(program, tables)
            result = execute_query(store, program, config.limits)
        except ProviderError as exc:
            message = f"provider error: {exc}"
        except QueryError as exc:
            message = exc.engine_message
        else:
            trail.append(CodeAttempt(index, program, Outcome.OK, "", time.monotonic() - start, route.tier.value, route.model))
            provider.record_success("codegen")
            summary = ResultSummary.from_query(result, config.preview_cap)
            summary.narrative = observe(node.text, summary, provider)
            return summary, trail
        attempt = CodeAttempt(
            index,
            program,
            Outcome.ERROR,
            message,
            time.monotonic() - start,
            route.tier.value if route else None,
            route.model if route else None,
        )
        trail.append(attempt)
        provider.record_failure("codegen")
        logger.info("node %d attempt %d failed: %s", node.id, index, message)
        if program:
            prior = attempt
    return None, trail


def trail_json(node, trail):
    data = {"node_id": node.id, "question": node.text, "attempts": [a.to_dict() for a in trail]}
    return json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
