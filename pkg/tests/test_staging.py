import json

import pytest

from crosslens.core import UnifiedType
from crosslens.errors import PolicyViolationError, QueryError, QueryTimeoutError
from crosslens.fixtures import generate_workspace, load_spec
from crosslens.ingestion import discover_sources, read_tables
from crosslens.metagraph import build_metagraph
from crosslens.staging import (
    ResourceLimits,
    check_read_only,
    execute_query,
    materialize,
    referenced_tables,
    sanitize_identifier,
    staging_names_for_alias,
)


def stage(root):
    sources = discover_sources(root)
    return materialize(sources, build_metagraph(sources))


def test_csv_is_staged_with_types(tmp_path):
    (tmp_path / "sales.csv").write_text("user_id,amount\nu1,3.5\nu2,4.0\n", encoding="utf-8")
    with stage(tmp_path) as store:
        table = store.tables["csv_sales"]
        assert table.row_count == 2
        assert [(c.name, c.unified_type) for c in table.columns] == [
            ("user_id", UnifiedType.TEXT), ("amount", UnifiedType.FLOAT)]
        assert execute_query(store, "SELECT COUNT(*) FROM csv_sales").rows == [(2,)]


def test_nested_json_is_flattened(tmp_path):
    (tmp_path / "doc.json").write_text(json.dumps([{"a": {"b": i}} for i in range(3)]), encoding="utf-8")
    with stage(tmp_path) as store:
        res = execute_query(store, "SELECT a_b FROM json_doc ORDER BY a_b")
        assert res.rows == [(0,), (1,), (2,)]
        assert store.column_map["json.doc.a\\u002eb"] == ("json_doc", "a_b")


def test_malformed_row_goes_to_rejects(tmp_path):
    lines = ["a,b"] + [f"{i},{i}" for i in range(99)] + ["1,2,3"]
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    with stage(tmp_path) as store:
        assert store.tables["csv_m"].row_count == 99
        (reject,) = store.rejects()
        assert reject[0] == "csv_m" and "expected 2 fields" in reject[2]


def test_workspace_tables_and_text(workspace):
    with stage(workspace) as store:
        assert {"csv_sales", "sqlite_users_users", "json_events", "text_documents"} <= store.table_names()
        assert "csv_sales(" in store.schema_text()
        docs = execute_query(store, "SELECT * FROM text_documents").rows
        assert {d[0] for d in docs} == {"notes"}
        assert [d[1] for d in docs] == list(range(len(docs)))


def test_join_matches_nested_loop_oracle(tmp_path):
    truth = generate_workspace(load_spec("demo"), tmp_path)
    join = truth.joins[0]
    sources = discover_sources(tmp_path)
    by_file = {s.path.name: s for s in sources}

    def values(loc):
        (table,) = [t for t in read_tables(by_file[loc["file"]]) if t.name == loc["table"]]
        i = table.columns.index(loc["column"])
        return [r[i] for r in table.rows]

    left, right = values(join["left"]), values(join["right"])
    expected = sum(1 for x in left for y in right if x == y)
    with materialize(sources, build_metagraph(sources)) as store:
        lt, lc = staging_names_for_alias(join["aliases"][0])
        rt, rc = staging_names_for_alias(join["aliases"][1])
        sql = f"SELECT COUNT(*) FROM {lt} JOIN {rt} ON {lt}.{lc} = {rt}.{rc}"
        assert execute_query(store, sql).rows == [(expected,)]
        shared = truth.parameters["join"]["shared"]
        distinct = execute_query(store, f"SELECT COUNT(DISTINCT {lt}.{lc}) FROM {lt} JOIN {rt} ON {lt}.{lc} = {rt}.{rc}")
        assert distinct.rows == [(shared,)]


@pytest.mark.parametrize(
    "program",
    [
        "DROP TABLE csv_sales",
        "DELETE FROM csv_sales",
        "INSERT INTO csv_sales VALUES ('x', 1)",
        "UPDATE csv_sales SET amount = 0",
        "SELECT 1; DROP TABLE csv_sales",
        "CREATE TABLE t AS SELECT 1",
        "ATTACH 'x.db' AS x",
        "COPY csv_sales TO 'out.csv'",
        "PRAGMA table_info(csv_sales)",
        "WITH x AS (SELECT 1) DELETE FROM csv_sales",
        "",
    ],
)
def test_writes_rejected_and_store_unchanged(workspace, program):
    with stage(workspace) as store:
        before = store.dump()
        with pytest.raises(PolicyViolationError):
            execute_query(store, program)
        assert store.dump() == before


def test_keywords_inside_strings_are_fine(workspace):
    with stage(workspace) as store:
        res = execute_query(store, "SELECT 'DROP TABLE x; DELETE' AS s -- UPDATE\n")
        assert res.rows == [("DROP TABLE x; DELETE",)]


def test_engine_errors_carry_message(workspace):
    with stage(workspace) as store:
        with pytest.raises(QueryError) as info:
            execute_query(store, "SELECT usr_id FROM csv_sales")
        assert "usr_id" in info.value.engine_message


def test_external_file_access_is_blocked(workspace):
    with stage(workspace) as store:
        with pytest.raises(QueryError):
            execute_query(store, f"SELECT * FROM read_csv_auto('{workspace / 'sales.csv'}')")


def test_row_limit_truncates(workspace):
    with stage(workspace) as store:
        res = execute_query(store, "SELECT * FROM range(100)", ResourceLimits(max_rows=10))
        assert res.row_count == 10 and res.truncated


def test_timeout(workspace):
    with stage(workspace) as store:
        with pytest.raises(QueryTimeoutError):
            execute_query(
                store,
                "SELECT COUNT(*) FROM range(100000000) a, range(100000) b",
                ResourceLimits(timeout_s=0.2),
            )


def test_referenced_tables_skips_ctes():
    sql = 'WITH t AS (SELECT * FROM csv_sales) SELECT * FROM t JOIN "sqlite_users_users" u ON 1=1'
    assert referenced_tables(sql) == ["csv_sales", "sqlite_users_users"]


def test_check_read_only_accepts_select_and_with():
    check_read_only("SELECT 1")
    check_read_only("WITH a AS (SELECT 1) SELECT * FROM a;")


@pytest.mark.parametrize("raw, expected", [("a.b", "a_b"), ("1st", "_1st"), ("ok_name", "ok_name"), ("", "_")])
def test_sanitize_identifier(raw, expected):
    assert sanitize_identifier(raw) == expected


@pytest.mark.parametrize(
    "program",
    [
        "SELECT '--'; DROP TABLE csv_sales",
        "SELECT '/*'; DROP TABLE csv_sales --*/",
        "SELECT E'\\''; DROP TABLE csv_sales --'",
        "SELECT $$ ' $$; DROP TABLE csv_sales",
        "SELECT $t$ x $t$; DELETE FROM csv_sales",
        "SELECT 1 /* a /* b */ ; DROP TABLE csv_sales */ ; DROP TABLE csv_sales",
        'SELECT "a--"; DROP TABLE csv_sales',
        "SELECT 'unterminated",
        "SELECT 1 /* open",
        'SELECT "open',
        "SELECT $$ open",
    ],
)
def test_quoting_tricks_are_rejected_before_execution(workspace, program, monkeypatch):
    with stage(workspace) as store:
        before = store.dump()
        calls = []
        real_cursor = store.conn.cursor
        monkeypatch.setattr(store, "conn", type("C", (), {"cursor": lambda self: calls.append(1) or real_cursor()})())
        with pytest.raises(PolicyViolationError):
            execute_query(store, program)
        assert calls == []
        monkeypatch.undo()
        assert store.dump() == before


@pytest.mark.parametrize(
    "program, rows",
    [
        ("SELECT '--x' AS a", [("--x",)]),
        ("SELECT E'it\\'s; DROP' AS a", [("it's; DROP",)]),
        ("SELECT $$; DELETE$$ AS a", [("; DELETE",)]),
        ("SELECT 1 AS a /* DROP /* nested */ TABLE */", [(1,)]),
        ('SELECT 2 AS "DROP"', [(2,)]),
    ],
)
def test_quoted_keywords_are_allowed(workspace, program, rows):
    with stage(workspace) as store:
        assert execute_query(store, program).rows == rows
