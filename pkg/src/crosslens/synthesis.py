"""Insight synthesis, the final report, and insight scoring against ground truth."""

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .charts import ChartType
from .errors import JudgeError, ProviderError
from .ingestion import STOPWORDS
from .planner import NodeStatus
from .prompts import extract_json

logger = logging.getLogger(__name__)


class InsightCategory(str, Enum):
    TREND = "TREND"
    COMPARISON = "COMPARISON"
    EXTREME = "EXTREME"
    ATTRIBUTION = "ATTRIBUTION"

    @property
    def heading(self):
        return {"TREND": "Trend", "COMPARISON": "Comparison", "EXTREME": "Extreme Value", "ATTRIBUTION": "Attribution"}[
            self.value
        ]


class Confidence(str, Enum):
    HIGH = "HIGH"
    MEDIUM = "MEDIUM"
    LOW = "LOW"


# checked in order; the first category with a matching cue wins
CATEGORY_CUES = (
    (InsightCategory.ATTRIBUTION, ("because", "driven by", "correlat", "attribut", "explained by")),
    (InsightCategory.TREND, ("trend", "increas", "decreas", "rose", "rising", "fell", "falling", "grew", "declin")),
    (InsightCategory.COMPARISON, ("versus", " vs ", "compared", "comparison")),
    (InsightCategory.EXTREME, ("highest", "lowest", "peak", "maximum", "minimum", "largest", "smallest")),
)

CHART_DEFAULT = {
    ChartType.LINE: InsightCategory.TREND,
    ChartType.SCATTER: InsightCategory.ATTRIBUTION,
    ChartType.BAR: InsightCategory.COMPARISON,
    ChartType.HEATMAP: InsightCategory.COMPARISON,
}


def classify_statement(text, chart_type=None):
    """Keyword category for a statement; the chart type decides when no cue matches."""
    lowered = f" {text.lower()} "
    for category, cues in CATEGORY_CUES:
        if any(cue in lowered for cue in cues):
            return category
    return CHART_DEFAULT.get(chart_type, InsightCategory.COMPARISON)


@dataclass(frozen=True)
class Insight:
    id: str
    category: InsightCategory
    statement: str
    evidence: tuple
    charts: tuple = ()
    confidence: Confidence = Confidence.MEDIUM

    def to_dict(self):
        return {
            "category": self.category.value,
            "charts": list(self.charts),
            "confidence": self.confidence.value,
            "evidence": list(self.evidence),
            "id": self.id,
            "statement": self.statement,
        }


@dataclass
class Report:
    goal: str
    insights: list
    summary: str
    recommendations: list
    trace_index: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    def to_dict(self):
        return {
            "diagnostics": list(self.diagnostics),
            "failures": list(self.failures),
            "goal": self.goal,
            "insights": [i.to_dict() for i in self.insights],
            "recommendations": list(self.recommendations),
            "summary": self.summary,
            "trace_index": self.trace_index,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def to_markdown(self):
        out = ["# Analysis report", "", f"**Goal:** {self.goal}", "", "## Overview", "", self.summary, ""]
        out += ["## Key Insights", ""]
        if not self.insights:
            out += ["No findings: no sub-question was answered.", ""]
        for category in InsightCategory:
            group = [i for i in self.insights if i.category is category]
            if not group:
                continue
            out += [f"### {category.heading}", ""]
            for i in group:
                out.append(f"- **{i.id}** {i.statement} _(confidence: {i.confidence.value.lower()})_")
            out.append("")
        out += ["## Evidence", ""]
        for i in self.insights:
            nodes = ", ".join(f"node {n}" for n in i.evidence)
            charts = ", ".join(f"![{i.id}]({c})" for c in i.charts) or "no chart"
            out.append(f"- **{i.id}**: {nodes}; {charts}")
        if not self.insights:
            out.append("- none")
        out += ["", "## Recommendations", ""]
        out += [f"- {r}" for r in self.recommendations] or ["- none"]
        out += ["", "## Appendix", "", "| insight | category | nodes | charts |", "| --- | --- | --- | --- |"]
        for i in self.insights:
            out.append(f"| {i.id} | {i.category.value} | {', '.join(map(str, i.evidence))} | {', '.join(i.charts)} |")
        if self.failures:
            out += ["", "Unanswered sub-questions:", ""]
            out += [f"- node {f['id']} ({f['status'].lower()}): {f['text']}" for f in self.failures]
        return "\n".join(out) + "\n"


@dataclass(frozen=True)
class SynthesisConfig:
    max_insights: int = 12


# -- prompt context and templated composition --------------------------------


def synthesis_context(plan, results, charts, chart_paths=None):
    chart_paths = chart_paths or {}
    nodes = []
    for node in plan.questions():
        if node.status is not NodeStatus.ANSWERED or node.id not in results:
            continue
        summary = results[node.id]
        spec = charts.get(node.id)
        nodes.append(
            {
                "chart": chart_paths.get(node.id),
                "chart_type": spec.chart_type.value if spec is not None else None,
                "id": node.id,
                "narrative": summary.narrative,
                "question": node.text,
                "row_count": summary.row_count,
            }
        )
    return {"goal": plan.goal, "answered": nodes, "total_questions": len(plan.questions())}


def _first_sentence(text):
    m = re.match(r"(.+?[.!?])(\s|$)", text.strip(), re.S)
    return (m.group(1) if m else text.strip()).strip()


def _confidence(item):
    if item["chart_type"] in (None, ChartType.TABLE.value):
        return Confidence.LOW
    return Confidence.HIGH if item["row_count"] >= 3 else Confidence.MEDIUM


RECOMMENDATION = {
    InsightCategory.TREND: "Monitor the trend behind {id} and investigate what changed around its turning points.",
    InsightCategory.COMPARISON: "Review the segment gap in {id} and target the under-performing segments.",
    InsightCategory.EXTREME: "Examine the outlier identified in {id} to decide whether it is an opportunity or a data issue.",
    InsightCategory.ATTRIBUTION: "Treat the driver relationship in {id} as a lever to test with a controlled experiment.",
}


def templated_payload(context, max_insights=12):
    """The reply a report writer would give, built only from narratives and chart types."""
    insights, seen = [], set()
    for item in context["answered"]:
        statement = _first_sentence(item["narrative"])
        if not statement or statement in seen or len(insights) >= max_insights:
            continue
        seen.add(statement)
        chart_type = ChartType(item["chart_type"]) if item["chart_type"] else None
        insights.append(
            {
                "category": classify_statement(statement, chart_type).value,
                "confidence": _confidence(item).value,
                "evidence": [item["id"]],
                "statement": statement,
            }
        )
    answered, total = len(context["answered"]), context["total_questions"]
    if insights:
        headline = " ".join(i["statement"] for i in insights[:3])
        summary = f"Analysis of \"{context['goal']}\" answered {answered} of {total} sub-questions. {headline}"
    else:
        summary = f"Analysis of \"{context['goal']}\" produced no findings: none of the {total} sub-questions was answered."
    recs, used = [], set()
    for n, ins in enumerate(insights, 1):
        cat = InsightCategory(ins["category"])
        if cat not in used:
            used.add(cat)
            recs.append(RECOMMENDATION[cat].format(id=f"I{n}"))
    return {"insights": insights, "recommendations": recs, "summary": summary}


REPORT_SYSTEM = """You are a senior data analyst writing the final report of an investigation.
From the answered sub-questions and their observations, extract the key insights. Tag each with one category
(TREND, COMPARISON, EXTREME, ATTRIBUTION), a confidence (HIGH, MEDIUM, LOW) and the ids of the sub-questions
that support it. Then write an executive summary and actionable recommendations. Reply with JSON only:
{"insights": [{"statement": "...", "category": "...", "confidence": "...", "evidence": [<id>, ...]}],
 "summary": "...", "recommendations": ["...", ...]}"""


def report_prompt(context):
    return f"### Findings\n```json\n{json.dumps(context, sort_keys=True, ensure_ascii=False)}\n```\n"


def _build_insights(payload, context, chart_paths, max_insights):
    answered = {item["id"]: item for item in context["answered"]}
    insights = []
    for raw in payload.get("insights", [])[:max_insights]:
        statement = " ".join(str(raw.get("statement", "")).split())
        evidence = tuple(sorted({int(e) for e in raw.get("evidence", []) if int(e) in answered}))
        if not statement or not evidence:
            continue
        first = answered[evidence[0]]
        chart_type = ChartType(first["chart_type"]) if first["chart_type"] else None
        try:
            category = InsightCategory(str(raw.get("category", "")).upper())
        except ValueError:
            category = classify_statement(statement, chart_type)
        try:
            confidence = Confidence(str(raw.get("confidence", "")).upper())
        except ValueError:
            confidence = Confidence.MEDIUM
        charts = tuple(chart_paths[e] for e in evidence if chart_paths.get(e))
        insights.append(Insight(f"I{len(insights) + 1}", category, statement, evidence, charts, confidence))
    return insights


def synthesize(plan, results, charts, provider=None, config=None, chart_paths=None):
    """Compose the report; falls back to a templated one if the provider fails or says nothing usable."""
    config = config or SynthesisConfig()
    chart_paths = chart_paths or {}
    if any(n.status is NodeStatus.PENDING for n in plan.questions()):
        raise ValueError("synthesize needs a finished plan; some sub-questions are still PENDING")
    context = synthesis_context(plan, results, charts, chart_paths)
    diagnostics = []
    payload = None
    if provider is not None and context["answered"]:
        try:
            payload = extract_json(provider.ask("report", REPORT_SYSTEM, report_prompt(context)))
            if not isinstance(payload, dict) or not _build_insights(payload, context, chart_paths, config.max_insights):
                raise ValueError("report reply has no insight backed by an answered sub-question")
        except (ProviderError, ValueError, TypeError) as exc:
            diagnostics.append(f"report writer failed, templated report used: {exc}")
            logger.warning(diagnostics[-1])
            payload = None
    if payload is None:
        payload = templated_payload(context, config.max_insights)
    insights = _build_insights(payload, context, chart_paths, config.max_insights)
    summary = str(payload.get("summary", "")).strip() or templated_payload(context)["summary"]
    recommendations = [str(r).strip() for r in payload.get("recommendations", []) if str(r).strip()]
    failures = [
        {"id": n.id, "status": n.status.value, "text": n.text}
        for n in plan.questions()
        if n.status is not NodeStatus.ANSWERED
    ]
    trace = {i.id: {"charts": list(i.charts), "nodes": list(i.evidence)} for i in insights}
    return Report(plan.goal, insights, summary, recommendations, trace, failures, diagnostics)


# -- scoring -----------------------------------------------------------------

_TOKEN = re.compile(r"[a-z0-9]+")


def _tokens(text):
    return [t for t in _TOKEN.findall(text.lower()) if t not in STOPWORDS]


class LexicalF1Judge:
    """Token-level F1 between two statements (lowercased, stopwords removed)."""

    def __call__(self, reference, candidate):
        ref, cand = _tokens(reference), _tokens(candidate)
        if not ref or not cand:
            return 1.0 if ref == cand else 0.0
        pool = {}
        for t in ref:
            pool[t] = pool.get(t, 0) + 1
        overlap = 0
        for t in cand:
            if pool.get(t, 0) > 0:
                pool[t] -= 1
                overlap += 1
        if overlap == 0:
            return 0.0
        precision, recall = overlap / len(cand), overlap / len(ref)
        return 2 * precision * recall / (precision + recall)


JUDGE_SYSTEM = """You grade how well a predicted insight matches a reference insight from an analysis report.
Score from 1 (unrelated) to 5 (same finding with the same direction and key numbers). Reply with the number only."""


class LlmJudge:
    """Judge backed by a provider; the 1-5 grade is mapped onto [0, 1]."""

    def __init__(self, provider, tag="judge"):
        self.provider = provider
        self.tag = tag

    def __call__(self, reference, candidate):
        reply = self.provider.ask(self.tag, JUDGE_SYSTEM, f"Reference: {reference}\nPrediction: {candidate}\n")
        m = re.search(r"\d+(\.\d+)?", reply)
        if not m or not 1.0 <= float(m.group()) <= 5.0:
            raise ValueError(f"judge reply is not a 1-5 grade: {reply!r}")
        return (float(m.group()) - 1.0) / 4.0


def score_insights(ground_truth, predicted, judge=None):
    """Per-reference best judge score and their mean.

    ``mean = (1/|G|) * sum over g in G of max over p of judge(g, p)``; an
    empty prediction list scores 0 for every reference.
    """
    ground_truth = list(ground_truth)
    if not ground_truth:
        raise ValueError("ground_truth must not be empty")
    judge = judge or LexicalF1Judge()
    maxima = []
    for g in ground_truth:
        best = 0.0
        for p in predicted:
            try:
                score = float(judge(g, p))
            except Exception as exc:
                raise JudgeError(f"judge failed on pair ({g!r}, {p!r}): {exc}", (g, p)) from exc
            if not 0.0 <= score <= 1.0:
                raise JudgeError(f"judge returned {score} outside [0, 1] for ({g!r}, {p!r})", (g, p))
            best = max(best, score)
        maxima.append(best)
    # exact sum of each score's shortest decimal form, rounded once: 0.8 and 0.4 average to 0.6
    # and the result cannot depend on order
    total = sum((Fraction(repr(m)) for m in maxima), Fraction(0))
    return maxima, float(total / len(maxima))


__all__ = [
    "Confidence",
    "Insight",
    "InsightCategory",
    "LexicalF1Judge",
    "LlmJudge",
    "Report",
    "SynthesisConfig",
    "classify_statement",
    "score_insights",
    "synthesize",
    "templated_payload",
]
