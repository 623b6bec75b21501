"""Acceptance suite: one test (or group) per criterion, summarized as PASS/FAIL lines."""

import dis
import random
import sys
import tempfile
import time

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosslens import charts
from crosslens.charts import ChartType, select_chart
from crosslens.cli import main
from crosslens.core import ColumnMeta, SampleSet, SourceDescriptor, SourceFormat, UnifiedType
from crosslens.errors import PolicyViolationError, QueryError
from crosslens.executor import ExecutorConfig, Outcome, run_with_selfcorrection
from crosslens.fixtures import (
    demo_paths,
    generate_workspace,
    load_spec,
    shipped_specs,
    shuffle_column,
    verify_workspace,
)
from crosslens.ingestion import discover_sources
from crosslens.linkage import SimilarityConfig, build_entity_graph, formulate_hints, score_pair
from crosslens.metagraph import MetaGraph, build_metagraph
from crosslens.planner import AnalysisPlan
from crosslens.provider import LlmProvider, ScriptedBackend
from crosslens.staging import execute_query, materialize
from crosslens.synthesis import score_insights

import oracles
from test_charts import RULE_KEYWORD, SHAPES, oracle_rules, shaped_results, summary

NAME_TOKENS = ["user", "customer", "client", "id", "code", "order", "date", "amount", "region", "store", "sku",
               "product", "prod", "campaign", "cmp", "key", "no", "num", "ref", "total", "price"]


def random_name(rnd):
    parts = [rnd.choice(NAME_TOKENS) for _ in range(rnd.randint(1, 3))]
    style = rnd.randrange(4)
    if style == 0:
        name = "_".join(parts)
    elif style == 1:
        name = parts[0] + "".join(p.title() for p in parts[1:])
    elif style == 2:
        name = "".join(p.upper() for p in parts)
    else:
        name = "-".join(parts) + rnd.choice(["", "s", "2", "_x"])
    return name


def random_column(rnd, alias_prefix, index, utype=None, pool=60):
    name = random_name(rnd)
    utype = utype or rnd.choice([UnifiedType.TEXT, UnifiedType.INT])
    values = frozenset(f"v{rnd.randrange(pool)}" for _ in range(rnd.randint(0, 40)))
    src = SourceDescriptor(f"{alias_prefix}{index}", SourceFormat.CSV, None)
    return ColumnMeta(f"csv.{alias_prefix}{index}.{name}", utype, SampleSet(values, len(values)), src, name=name)


# -- 1 ---------------------------------------------------------------------------


@pytest.mark.criterion(1, "Sim equals brute-force w_n*name + w_v*Jaccard within 1e-9 on >= 200 random pairs in < 5 s")
def test_c1_similarity_matches_brute_force(criterion_detail):
    rnd = random.Random(1)
    start = time.perf_counter()
    worst, n = 0.0, 0
    for i in range(500):
        w_n = rnd.choice([0.6, rnd.random()])
        config = SimilarityConfig(w_n=w_n, w_v=1.0 - w_n)
        a, b = random_column(rnd, "a", i), random_column(rnd, "b", i)
        if rnd.random() < 0.2:
            b = ColumnMeta(b.alias, b.unified_type, b.samples, b.origin, name=a.name.upper())
        got = score_pair(a, b, config).weight
        want = oracles.combined(a.name, a.samples.values, b.name, b.samples.values, config.w_n, config.w_v)
        worst = max(worst, abs(got - want))
        n += 1
    elapsed = time.perf_counter() - start
    criterion_detail(f"{n} pairs, max |diff| {worst:.1e}, {elapsed:.2f}s")
    assert n >= 200
    assert worst <= 1e-9
    assert elapsed < 5.0


# -- 2 ---------------------------------------------------------------------------


@pytest.mark.criterion(2, "linkage recall over seeds 1-20: planted pair top-1 in >= 18/20 and top-5 in 20/20, < 30 s")
def test_c2_linkage_recall(criterion_detail):
    spec = load_spec("linkage_recall")
    assert spec.planted_joins[0]["overlap_fraction"] >= 0.8
    assert spec.distractor_count >= 10
    top1 = top5 = 0
    start = time.perf_counter()
    for seed in range(1, 21):
        with tempfile.TemporaryDirectory() as d:
            truth = generate_workspace(spec.with_seed(seed), d)
            entity = build_entity_graph(build_metagraph(discover_sources(d)))
        want = tuple(sorted(truth.join_pairs()[0]))
        ranked = [tuple(sorted((e.a, e.b))) for e in entity.ranked()]
        top1 += bool(ranked) and ranked[0] == want
        top5 += want in ranked[:5]
    elapsed = time.perf_counter() - start
    criterion_detail(f"top-1 {top1}/20, top-5 {top5}/20, {elapsed:.1f}s")
    assert top1 >= 18
    assert top5 == 20
    assert elapsed < 30.0


# -- 3 ---------------------------------------------------------------------------


@pytest.mark.criterion(3, 'hint golden test with the literal prefix "You must JOIN ON: "')
def test_c3_hint_golden(workspace):
    hint = formulate_hints(build_entity_graph(build_metagraph(discover_sources(workspace))))
    assert hint.rendered.splitlines()[0] == "You must JOIN ON: csv.sales.user_id = sqlite.users.users.customer_id"
    assert all(line.startswith("You must JOIN ON: ") for line in hint.rendered.splitlines()
               if not line.startswith("Context sources: "))


# -- 4 ---------------------------------------------------------------------------


def assert_graph_matches_oracle(graph, config):
    got = {(e.a, e.b): e.weight for e in build_entity_graph(graph, config).edges}
    want = oracles.all_pairs_edges(graph.columns, config.w_n, config.w_v, config.theta)
    for key in got.keys() & want.keys():
        assert abs(got[key] - want[key]) <= 1e-9, key
    # only a float-rounding tie at the threshold may differ between the two
    for key in got.keys() ^ want.keys():
        weight = got.get(key, want.get(key))
        assert abs(weight - config.theta) <= 1e-12, (key, weight)
    return len(got)


@st.composite
def random_graphs(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    n = draw(st.integers(0, 50))
    rnd = random.Random(seed)
    pool = rnd.choice([10, 40, 200])
    columns = tuple(random_column(rnd, "s", i, pool=pool) for i in range(n))
    theta = draw(st.sampled_from([0.55, 0.3, 0.8, 0.0]))
    w_n = draw(st.sampled_from([0.6, 0.5, 0.0, 1.0]))
    return MetaGraph(columns, "fuzz"), SimilarityConfig(w_n=w_n, w_v=1.0 - w_n, theta=theta)


@pytest.mark.criterion(4, "EntityGraph equals a naive all-pairs scorer for every workspace with <= 50 columns")
@settings(max_examples=150, deadline=None)
@given(random_graphs())
def test_c4_entity_graph_random(case):
    graph, config = case
    assert len(graph.columns) <= 50
    assert_graph_matches_oracle(graph, config)


@pytest.mark.criterion(4, "EntityGraph equals a naive all-pairs scorer for every workspace with <= 50 columns")
@pytest.mark.parametrize("name", ["conftest", "demo", "linkage_recall", "retail"])
def test_c4_entity_graph_real_workspaces(name, tmp_path, criterion_detail):
    if name == "conftest":
        from conftest import make_workspace

        root = make_workspace(tmp_path)
    else:
        generate_workspace(load_spec(name), tmp_path)
        root = tmp_path
    graph = build_metagraph(discover_sources(root))
    assert len(graph.columns) <= 50
    edges = assert_graph_matches_oracle(graph, SimilarityConfig())
    assert edges >= 1


# -- 5 ---------------------------------------------------------------------------


@pytest.mark.criterion(5, "scripted fail, fail, success with max_retries=3: trail 3, OK, third attempt STRONG")
def test_c5_selfcorrection_escalation(workspace, criterion_detail):
    sources = discover_sources(workspace)
    graph = build_metagraph(sources)
    hints = formulate_hints(build_entity_graph(graph))
    bad_column = "```sql\nSELECT usr_id FROM csv_sales\n```"
    bad_table = "```sql\nSELECT * FROM sales\n```"
    good = "```sql\nSELECT COUNT(*) AS n FROM csv_sales\n```"
    provider = LlmProvider(ScriptedBackend({"codegen": [bad_column, bad_table, good], "observe": ["four sales"]}))
    assert provider.policy.escalation_failure_count == 2
    plan = AnalysisPlan("g")
    node = plan.add_question("How many rows are in csv_sales?", plan.add_subgoal("s").id)
    with materialize(sources, graph) as store:
        result, trail = run_with_selfcorrection(node, store, hints, provider, ExecutorConfig(max_retries=3))
    criterion_detail(" -> ".join(f"{a.outcome.value}/{a.tier}" for a in trail))
    assert len(trail) == 3
    assert trail[-1].outcome is Outcome.OK
    assert [a.outcome for a in trail[:2]] == [Outcome.ERROR, Outcome.ERROR]
    assert [a.tier for a in trail] == ["CHEAP", "CHEAP", "STRONG"]
    assert result.rows == [(4,)]


# -- 6 ---------------------------------------------------------------------------

WRITE_TEMPLATES = [
    "INSERT INTO {t} SELECT * FROM {t}",
    "insert into {t} values (1)",
    "UPDATE {t} SET {c} = NULL",
    "DELETE FROM {t}",
    "DROP TABLE {t}",
    "drop view if exists {t}",
    "CREATE TABLE x AS SELECT * FROM {t}",
    "CREATE OR REPLACE TABLE {t} AS SELECT 1",
    "ALTER TABLE {t} ADD COLUMN z INT",
    "TRUNCATE {t}",
    "ATTACH 'other.db' AS other",
    "DETACH DATABASE staging",
    "COPY {t} TO 'leak.csv'",
    "EXPORT DATABASE 'dump'",
    "PRAGMA table_info('{t}')",
    "INSTALL httpfs",
    "LOAD httpfs",
    "CHECKPOINT",
    "BEGIN TRANSACTION",
    "SELECT 1; DROP TABLE {t}",
    "SELECT * FROM {t}; DELETE FROM {t}",
    "WITH x AS (SELECT 1) DELETE FROM {t}",
    "WITH x AS (SELECT 1) INSERT INTO {t} SELECT * FROM {t}",
    "/* harmless */ DROP TABLE {t}",
    "-- note\nUPDATE {t} SET {c} = {c}",
    "SELECT '--'; DROP TABLE {t}",
    "SELECT E'\\''; DELETE FROM {t} --'",
    "SELECT $$x$$; DROP TABLE {t}",
    "MERGE INTO {t} USING {t} s ON true WHEN MATCHED THEN DELETE",
    "VACUUM",
    "SET memory_limit = '1GB'",
    "CALL pragma_version()",
    "SELECT * FROM {t} WHERE 1 = 1; INSERT INTO {t} SELECT * FROM {t}",
    "  \n  ",
]

READ_TEMPLATES = [
    "SELECT COUNT(*) FROM {t}",
    "SELECT * FROM {t} LIMIT 5",
    "SELECT {c}, COUNT(*) FROM {t} GROUP BY {c} ORDER BY 2 DESC",
    "WITH s AS (SELECT * FROM {t}) SELECT COUNT(*) FROM s",
    "SELECT 'DROP TABLE {t}; DELETE' AS s",
    "SELECT 1 AS a -- DELETE FROM {t}",
    "select max({c}) from {t}",
    "SELECT * FROM {t} /* UPDATE {t} SET x = 1 */ LIMIT 1",
    "VALUES (1), (2)",
    "SELECT no_such_column FROM {t}",
]


@pytest.mark.criterion(6, "fuzz suite of 100 queries with writes leaves the dump byte-identical; writes rejected pre-execution")
def test_c6_read_only_fuzz(criterion_detail, monkeypatch):
    ws = demo_paths()["workspace"]
    sources = discover_sources(ws)
    rnd = random.Random(6)
    with materialize(sources, build_metagraph(sources)) as store:
        tables = sorted(store.table_names())
        columns = {t: [c.name for c in store.tables[t].columns] for t in tables if t in store.tables}
        before = store.dump()
        queries = []
        for i in range(100):
            is_write = i % 2 == 0
            template = rnd.choice(WRITE_TEMPLATES if is_write else READ_TEMPLATES)
            t = rnd.choice([t for t in tables if t in columns])
            c = rnd.choice(columns[t])
            queries.append((is_write, template.format(t=t, c=c)))
        real_cursor = store.conn.cursor
        opened = []

        class Spy:
            def cursor(self):
                opened.append(1)
                return real_cursor()

        writes = reads_ok = 0
        for is_write, program in queries:
            opened.clear()
            monkeypatch.setattr(store, "conn", Spy())
            try:
                if is_write:
                    with pytest.raises(PolicyViolationError):
                        execute_query(store, program)
                    assert opened == [], f"write reached the engine: {program!r}"
                    writes += 1
                else:
                    try:
                        execute_query(store, program)
                        reads_ok += 1
                    except PolicyViolationError:
                        raise AssertionError(f"read rejected: {program!r}")
                    except QueryError:
                        pass
            finally:
                monkeypatch.undo()
        after = store.dump()
    criterion_detail(f"{writes} writes rejected, {reads_ok} reads ran, dump {len(before)} bytes unchanged")
    assert writes == 50 and len(queries) == 100
    assert after == before


# -- 7 ---------------------------------------------------------------------------


@pytest.mark.criterion(7, "analyze on the demo plus cassette gives byte-identical report.md, plan.json and charts over 3 runs")
def test_c7_demo_replay_is_deterministic(tmp_path, capsys, criterion_detail):
    outputs = []
    for i in range(3):
        out = tmp_path / f"run{i}"
        assert main(["analyze", "--demo", "--out", str(out)]) == 0
        files = {"report.md": (out / "report.md").read_bytes(), "plan.json": (out / "plan.json").read_bytes()}
        files.update({f"charts/{p.name}": p.read_bytes() for p in sorted((out / "charts").glob("*.svg"))})
        outputs.append(files)
    capsys.readouterr()
    charts_count = sum(k.startswith("charts/") for k in outputs[0])
    criterion_detail(f"{len(outputs[0])} files incl. {charts_count} charts")
    assert charts_count >= 1
    assert outputs[0] == outputs[1] == outputs[2]


# -- 8 ---------------------------------------------------------------------------


class StubJudge:
    def __init__(self, table):
        self.table = table

    def __call__(self, g, p):
        return self.table[(g, p)]


@pytest.mark.criterion(8, "score_insights with a stub judge: maxima {0.8, 0.4} give exactly 0.6; mean invariant over 1,000 shuffles")
def test_c8_scoring(criterion_detail):
    table = {("g1", "p1"): 0.8, ("g1", "p2"): 0.3, ("g1", "p3"): 0.0,
             ("g2", "p1"): 0.1, ("g2", "p2"): 0.4, ("g2", "p3"): 0.25}
    judge = StubJudge(table)
    maxima, mean = score_insights(["g1", "g2"], ["p1", "p2", "p3"], judge)
    assert sorted(maxima) == [0.4, 0.8]
    assert mean == 0.6

    rnd = random.Random(8)
    gts = [f"g{i}" for i in range(7)]
    preds = [f"p{j}" for j in range(9)]
    big = StubJudge({(g, p): rnd.choice([rnd.random(), 0.1, 0.7, 0.3]) for g in gts for p in preds})
    reference = score_insights(gts, preds, big)[1]
    distinct = set()
    for _ in range(1000):
        rnd.shuffle(preds)
        rnd.shuffle(gts)
        distinct.add(score_insights(gts, preds, big)[1])
    criterion_detail(f"mean {mean!r}; {len(distinct)} distinct mean over 1000 shuffles")
    assert distinct == {reference}


# -- 9 ---------------------------------------------------------------------------


@pytest.mark.criterion(9, "every shipped FixtureSpec passes verify_workspace; shuffling the target column flips it to fail")
@pytest.mark.parametrize("name", shipped_specs())
def test_c9_fixture_closure(name, tmp_path, criterion_detail):
    truth = generate_workspace(load_spec(name), tmp_path)
    report = verify_workspace(tmp_path, truth)
    assert report.passed, report.render()
    target = truth.insights[0]["check"]
    shuffle_column(tmp_path, target["file"], target["table"], target["column"], seed=0)
    shuffled = verify_workspace(tmp_path, truth)
    flipped = sorted(c.name for c in shuffled.checks if not c.passed)
    criterion_detail(f"{name}: {len(report.checks)} checks pass, shuffle fails {','.join(flipped)}")
    assert not shuffled.passed


# -- 10 --------------------------------------------------------------------------

CASCADE = (charts.select_chart, charts.applicable_rules, charts._pivotable)


def _body_lines(fn):
    code = fn.__code__
    lines = {line for _, line in dis.findlinestarts(code) if line is not None}
    return lines - {code.co_firstlineno}


def _traced(fn, *args):
    targets = {f.__code__ for f in CASCADE}
    hit = set()

    def tracer(frame, event, arg):
        if frame.f_code in targets:
            def local(frame, event, arg):
                if event == "line":
                    hit.add((frame.f_code, frame.f_lineno))
                return local
            return local
        return None

    old = sys.gettrace()
    sys.settrace(tracer)
    try:
        return fn(*args), hit
    finally:
        sys.settrace(old)


@pytest.mark.criterion(10, "select_chart maps the four canonical shapes to LINE/BAR/SCATTER/HEATMAP with full rule-cascade coverage")
@pytest.mark.parametrize("shape", sorted(SHAPES))
def test_c10_canonical_shapes(shape):
    columns, rows, expected = SHAPES[shape]
    assert select_chart(summary(columns, rows)).chart_type is expected


_cascade_hits = set()


@settings(max_examples=400, deadline=None, database=None)
@given(shaped_results())
def _cascade_property(case):
    res, roles, keyword = case
    spec, hit = _traced(select_chart, res, keyword)
    _cascade_hits.update(hit)
    rules = oracle_rules(*roles)
    expected = rules[0] if rules else ChartType.TABLE
    for ctype, word in RULE_KEYWORD.items():
        if keyword == word and ctype in rules and len(rules) > 1:
            expected = ctype
    assert spec.chart_type is expected


@pytest.mark.criterion(10, "select_chart maps the four canonical shapes to LINE/BAR/SCATTER/HEATMAP with full rule-cascade coverage")
def test_c10_property_coverage_of_cascade(criterion_detail):
    _cascade_hits.clear()
    _cascade_property()
    empty = summary([("x", UnifiedType.FLOAT)], [])
    _, hit = _traced(select_chart, empty, "")
    _cascade_hits.update(hit)
    missing = []
    total = 0
    for fn in CASCADE:
        lines = _body_lines(fn)
        total += len(lines)
        covered = {line for code, line in _cascade_hits if code is fn.__code__}
        missing += [f"{fn.__name__}:{line}" for line in sorted(lines - covered)]
    criterion_detail(f"{total - len(missing)}/{total} cascade lines covered")
    assert not missing, missing
