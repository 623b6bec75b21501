"""A deterministic, rule-based stand-in for the language model.

:class:`OfflineAnalyst` is a backend like any other: it receives the same
prompts a hosted model would and answers them with simple analyst
heuristics. It lets the whole pipeline run, and cassettes be recorded,
without network access. Its answers are only as good as its rules; the
questions it asks follow a small set of templates it can also translate
back into queries.
"""

import json
import re
from dataclasses import dataclass, field

from .core import UnifiedType, parse_alias
from .ingestion import extractive_summary
from .linkage import JOIN_PREFIX
from .prompts import json_block, section
from .staging import quote_ident, staging_names_for_alias

_PREVIEW_LINE = re.compile(r"^(\S+) ([A-Z]+) \[(\d+) distinct\](?:: (.*))?$")
_TEMPORAL_NAME = re.compile(r"(^|_)(year|month|day|week|quarter|date|time|ts)s?($|_)", re.I)
_KEY_NAME = re.compile(r"(^|_)(id|key|code|no)$|Id$", re.I)
_WORD = re.compile(r"[a-z0-9]+")
MAX_CATEGORIES = 30


@dataclass
class _Column:
    alias: str
    name: str
    utype: UnifiedType
    distinct: int
    examples: list


@dataclass
class _Table:
    name: str
    columns: list = field(default_factory=list)

    def of(self, predicate):
        return [c for c in self.columns if predicate(c)]


def parse_preview(preview):
    tables, terms = {}, []
    for line in (preview or "").splitlines():
        m = _PREVIEW_LINE.match(line.strip())
        if not m:
            continue
        alias, utype, distinct, examples = m.groups()
        try:
            fmt, _, _, column = parse_alias(alias)
        except ValueError:
            continue
        examples = [e.strip() for e in (examples or "").split(", ") if e.strip()]
        if fmt.alias_prefix == "txt":
            if column == "key_terms":
                terms.extend(examples)
            continue
        table, col = staging_names_for_alias(alias)
        tables.setdefault(table, _Table(table)).columns.append(
            _Column(alias, col, UnifiedType(utype), int(distinct), examples)
        )
    return tables, terms


def _tokens(text):
    return set(_WORD.findall(text.lower().replace("_", " ")))


def _is_time(c):
    return c.utype.is_temporal or (c.utype is UnifiedType.INT and bool(_TEMPORAL_NAME.search(c.name)))


def _is_key(c):
    return bool(_KEY_NAME.search(c.name))


def _is_metric(c):
    return c.utype.is_numeric and not _is_time(c) and not _is_key(c)


def _is_category(c):
    return c.utype is UnifiedType.TEXT and 2 <= c.distinct <= MAX_CATEGORIES and not _is_key(c)


def _overlap(words, vocab):
    score = 0
    for w in words:
        if w in vocab:
            score += 2
        elif len(w) >= 3 and any(f.startswith(w) or w.startswith(f) for f in vocab if len(f) >= 3):
            score += 1
    return score


def _relevance(column, focus):
    """Goal words count three times as much as key terms from text sources."""
    goal, terms = focus
    words = _tokens(column.name)
    return 3 * _overlap(words, goal) + _overlap(words, terms)


def _rank(columns, focus):
    # coarser categories first among equally relevant columns
    return sorted(columns, key=lambda c: (-_relevance(c, focus), c.distinct if _is_category(c) else 0))


def _hint_pairs(hints):
    pairs = []
    for line in (hints or "").splitlines():
        if line.startswith(JOIN_PREFIX):
            a, _, b = line[len(JOIN_PREFIX):].partition(" = ")
            try:
                pairs.append((staging_names_for_alias(a.strip()), staging_names_for_alias(b.strip())))
            except ValueError:
                continue
    return pairs


# -- question templates -------------------------------------------------------
# Every template has a regex that turns the question back into a query.

TREND_Q = "How does the average {m} change over {t} in table {T}{flt}?"
EXTREME_Q = "Which {c} and {t} combination has the highest {m} in table {T}?"
COMPARE_Q = "Compare the average {m} across {c} in table {T}."
JOIN_Q = "Compare the average {m} in table {T} across {c} of table {D}, joining {T}.{k1} to {D}.{k2}."
ATTRIB_Q = "Is {m} correlated with {x} in table {T}?"

_ID = r"([A-Za-z_][A-Za-z0-9_]*)"
PATTERNS = (
    ("trend", re.compile(rf"^How does the average {_ID} change over {_ID} in table {_ID}(?: for {_ID} = '((?:[^']|'')*)')?\?$")),
    ("extreme", re.compile(rf"^Which {_ID} and {_ID} combination has the highest {_ID} in table {_ID}\?$")),
    ("compare", re.compile(rf"^Compare the average {_ID} across {_ID} in table {_ID}\.$")),
    ("join", re.compile(
        rf"^Compare the average {_ID} in table {_ID} across {_ID} of table {_ID}, joining {_ID}\.{_ID} to {_ID}\.{_ID}\.$"
    )),
    ("attrib", re.compile(rf"^Is {_ID} correlated with {_ID} in table {_ID}\?$")),
)


def _sql_literal(text):
    return "'" + text.replace("'", "''") + "'"


def question_to_sql(question):
    """Query for a templated question, or ``None`` if no template matches."""
    q = " ".join(question.split())
    for kind, pattern in PATTERNS:
        m = pattern.match(q)
        if not m:
            continue
        g = [x for x in m.groups()]
        I = quote_ident  # noqa: E741
        if kind == "trend":
            m_, t, T, c, v = g
            where = f" WHERE {I(c)} = {_sql_literal(v.replace(chr(39) * 2, chr(39)))}" if c else ""
            return (
                f"SELECT {I(t)}, AVG({I(m_)}) AS {I('avg_' + m_)} FROM {I(T)}{where} "
                f"GROUP BY {I(t)} ORDER BY {I(t)}"
            )
        if kind == "extreme":
            c, t, m_, T = g
            return (
                f"SELECT CAST({I(c)} AS VARCHAR) || ' on ' || CAST({I(t)} AS VARCHAR) AS occurrence, {I(m_)} "
                f"FROM {I(T)} WHERE {I(m_)} IS NOT NULL ORDER BY {I(m_)} DESC, occurrence LIMIT 5"
            )
        if kind == "compare":
            m_, c, T = g
            return (
                f"SELECT {I(c)}, AVG({I(m_)}) AS {I('avg_' + m_)} FROM {I(T)} "
                f"GROUP BY {I(c)} ORDER BY {I('avg_' + m_)} DESC, {I(c)}"
            )
        if kind == "join":
            m_, T, c, D, _, k1, _, k2 = g
            return (
                f"SELECT d.{I(c)}, AVG(f.{I(m_)}) AS {I('avg_' + m_)} FROM {I(T)} AS f "
                f"JOIN {I(D)} AS d ON f.{I(k1)} = d.{I(k2)} "
                f"GROUP BY d.{I(c)} ORDER BY {I('avg_' + m_)} DESC, d.{I(c)}"
            )
        if kind == "attrib":
            m_, x, T = g
            return (
                f"SELECT {I(x)}, {I(m_)} FROM {I(T)} WHERE {I(x)} IS NOT NULL AND {I(m_)} IS NOT NULL "
                f"ORDER BY {I(x)}, {I(m_)}"
            )
    return None


def _fallback_sql(question, schema):
    """Row count of the first staging table the question names, if any."""
    tables = re.findall(r"^([A-Za-z_][A-Za-z0-9_]*)\(", schema or "", re.M)
    lowered = question.lower()
    for t in tables:
        if re.search(r"(?<![a-z0-9_])" + re.escape(t.lower()) + r"(?![a-z0-9_])", lowered):
            return f"SELECT COUNT(*) AS row_count FROM {quote_ident(t)}"
    return ""


# -- planning -----------------------------------------------------------------


def _limit(prompt, key, default):
    m = re.search(rf"^{key}: (\d+)$", section(prompt, "Limits") or "", re.M)
    return int(m.group(1)) if m else default


def _best_fact(tables, focus):
    """Table with a time column and the most relevant metric."""
    best = None
    for t in sorted(tables.values(), key=lambda t: t.name):
        metrics = _rank(t.of(_is_metric), focus)
        if not metrics:
            continue
        score = (bool(t.of(_is_time)), _relevance(metrics[0], focus), len(t.columns))
        if best is None or score > best[0]:
            best = (score, t, metrics)
    return best


def plan_reply(prompt, max_questions=None):
    goal = section(prompt, "Goal") or ""
    tables, terms = parse_preview(section(prompt, "Data preview"))
    q = max_questions or _limit(prompt, "max_questions_per_subgoal", 3)
    focus = (_tokens(goal), _tokens(" ".join(terms)))
    best = _best_fact(tables, focus)
    if best is None:
        return json.dumps({"subgoals": []})
    _, fact, metrics = best
    m = metrics[0]
    times = fact.of(_is_time)
    cats = _rank(fact.of(_is_category), focus)
    drivers = [c for c in metrics[1:] if _relevance(c, focus) > 0] or metrics[1:2]
    T = fact.name
    subgoals = []
    if times:
        qs = [TREND_Q.format(m=m.name, t=times[0].name, T=T, flt="")]
        if cats:
            qs.append(EXTREME_Q.format(c=cats[0].name, t=times[0].name, m=m.name, T=T))
        subgoals.append({"goal": f"Describe how {m.name} evolves over time", "questions": qs})
    qs = []
    if cats:
        qs.append(COMPARE_Q.format(m=m.name, c=cats[0].name, T=T))
    for (ta, ka), (tb, kb) in _hint_pairs(section(prompt, "Join hints")):
        if T not in (ta, tb) or ta == tb:
            continue
        (k1, D, k2) = (ka, tb, kb) if ta == T else (kb, ta, ka)
        dim_cats = _rank(tables[D].of(_is_category), focus) if D in tables else []
        if dim_cats:
            qs.append(JOIN_Q.format(m=m.name, T=T, c=dim_cats[0].name, D=D, k1=k1, k2=k2))
            break
    if qs:
        subgoals.append({"goal": f"Compare {m.name} across segments", "questions": qs})
    if drivers:
        subgoals.append(
            {
                "goal": f"Identify what drives {m.name}",
                "questions": [ATTRIB_Q.format(m=m.name, x=d.name, T=T) for d in drivers],
            }
        )
    for sg in subgoals:
        sg["questions"] = sg["questions"][:q]
    return json.dumps({"subgoals": subgoals[:q]}, sort_keys=True)


def followup_reply(prompt):
    question = " ".join((section(prompt, "Sub-question") or "").split())
    room = _limit(prompt, "max_questions", 1)
    result = json_block(prompt, "Result") or {}
    tables, _ = parse_preview(section(prompt, "Data preview"))
    m = PATTERNS[2][1].match(question)
    rows = result.get("rows_preview") or []
    if not m or room < 1 or not rows:
        return json.dumps({"questions": []})
    metric, cat, T = m.groups()
    times = tables[T].of(_is_time) if T in tables else []
    if not times:
        return json.dumps({"questions": []})
    top = str(rows[0][0])
    text = TREND_Q.format(m=metric, t=times[0].name, T=T, flt=f" for {cat} = '{top.replace(chr(39), chr(39) * 2)}'")
    return json.dumps({"questions": [text]})


# -- the backend ----------------------------------------------------------------


def _judge_reply(prompt):
    from .synthesis import LexicalF1Judge

    m = re.match(r"Reference: (.*)\nPrediction: (.*)", prompt.strip(), re.S)
    if not m:
        return "1"
    return f"{1 + 4 * LexicalF1Judge()(m.group(1), m.group(2)):.2f}"


class OfflineAnalyst:
    """Callable backend ``(model, request) -> text`` answering by rule."""

    def __call__(self, model, request):
        handler = getattr(self, f"_on_{request.request_tag}", None)
        if handler is None:
            return ""
        return handler(request.user_prompt)

    def _on_summary(self, prompt):
        text = prompt.split("\n\n", 1)[1] if "\n\n" in prompt else prompt
        sentences, terms = extractive_summary(text)
        return json.dumps({"key_terms": terms, "summary": sentences}, ensure_ascii=False)

    def _on_plan(self, prompt):
        return plan_reply(prompt)

    def _on_followup(self, prompt):
        return followup_reply(prompt)

    def _on_codegen(self, prompt):
        question = section(prompt, "Sub-question") or ""
        sql = question_to_sql(question) or _fallback_sql(question, section(prompt, "Staging schema"))
        return f"```sql\n{sql}\n```"

    def _on_observe(self, prompt):
        return section(prompt, "Computed facts") or ""

    def _on_report(self, prompt):
        from .synthesis import templated_payload

        return json.dumps(templated_payload(json_block(prompt, "Findings")), sort_keys=True, ensure_ascii=False)

    def _on_judge(self, prompt):
        return _judge_reply(prompt)
