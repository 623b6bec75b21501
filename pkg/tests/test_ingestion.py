import json
import sqlite3

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crosslens.core import SourceFormat, UnifiedType
from crosslens.errors import ContentMismatchError
from crosslens.ingestion import (
    IngestionConfig,
    canonicalize,
    discover_sources,
    extract_columns,
    infer_type,
    key_terms,
    read_csv,
    reservoir_sample,
    summarize_text,
)
from crosslens.provider import LlmProvider, ScriptedBackend


def by_name(metas):
    return {m.name: m for m in metas}


def test_discover_four_formats(workspace):
    sources = discover_sources(workspace)
    assert {s.format for s in sources} == set(SourceFormat)
    assert len({s.source_id for s in sources}) == 4


def test_discover_empty_directory(tmp_path):
    assert discover_sources(tmp_path) == []


def test_binary_csv_is_a_content_mismatch(tmp_path):
    (tmp_path / "sales.csv").write_bytes(b"\x00\xff\xfe garbage \x00")
    with pytest.raises(ContentMismatchError, match="sales.csv"):
        discover_sources(tmp_path)


def test_stem_collision_gets_distinct_ids(tmp_path):
    (tmp_path / "sales.csv").write_text("a\n1\n", encoding="utf-8")
    (tmp_path / "sales.json").write_text('[{"a": 1}]', encoding="utf-8")
    ids = [s.source_id for s in discover_sources(tmp_path)]
    assert len(set(ids)) == 2


def test_extract_csv_columns(tmp_path):
    (tmp_path / "t.csv").write_text("user_id,amount\nu1,3.5\nu2,4.0\n", encoding="utf-8")
    (src,) = discover_sources(tmp_path)
    cols = by_name(extract_columns(src))
    assert cols["user_id"].unified_type is UnifiedType.TEXT
    assert cols["user_id"].samples.values == {"u1", "u2"}
    assert cols["amount"].unified_type is UnifiedType.FLOAT
    assert cols["amount"].samples.values == {"3.5", "4"}


def test_extract_nested_json(tmp_path):
    (tmp_path / "doc.json").write_text(json.dumps([{"a": {"b": 1}}, {"a": {"b": 2}}]), encoding="utf-8")
    (src,) = discover_sources(tmp_path)
    (col,) = extract_columns(src)
    assert col.name == "a.b"
    assert col.unified_type is UnifiedType.INT
    assert col.samples.values == {"1", "2"}


def test_sampling_cap_is_exact_and_reproducible(tmp_path):
    con = sqlite3.connect(tmp_path / "big.db")
    con.execute("CREATE TABLE ids (id INTEGER)")
    con.executemany("INSERT INTO ids VALUES (?)", [(i,) for i in range(10_000)])
    con.commit()
    con.close()
    (src,) = discover_sources(tmp_path)
    a = extract_columns(src, sample_cap=1000, seed=7)[0].samples
    b = extract_columns(src, sample_cap=1000, seed=7)[0].samples
    assert len(a) == 1000 and a == b
    assert a.sampled_from == 10_000


def test_sql_declared_types_win(tmp_path):
    con = sqlite3.connect(tmp_path / "d.db")
    con.execute("CREATE TABLE t (n INTEGER, r REAL, s VARCHAR(10), flag BOOLEAN, ts TIMESTAMP)")
    con.execute("INSERT INTO t VALUES (1, 2.5, '3', 1, '2024-01-01 10:00:00')")
    con.commit()
    con.close()
    (src,) = discover_sources(tmp_path)
    types = {m.name: m.unified_type for m in extract_columns(src)}
    assert types == {
        "n": UnifiedType.INT, "r": UnifiedType.FLOAT, "s": UnifiedType.TEXT,
        "flag": UnifiedType.BOOL, "ts": UnifiedType.DATETIME,
    }


@pytest.mark.parametrize(
    "cells, expected",
    [
        (["1", "2"], UnifiedType.INT),
        (["1", "2.5"], UnifiedType.FLOAT),
        (["TRUE", "false"], UnifiedType.BOOL),
        (["2024-01-01", "2024-02-29"], UnifiedType.DATE),
        (["2024-01-01T10:00:00", "2024-01-02 11:30"], UnifiedType.DATETIME),
        (["a", "1"], UnifiedType.TEXT),
        ([], UnifiedType.TEXT),
    ],
)
def test_infer_type(cells, expected):
    assert infer_type(cells) is expected


def test_infer_type_tolerates_one_percent_outliers():
    cells = [str(i) for i in range(199)] + ["n/a"]
    assert infer_type(cells) is UnifiedType.INT
    assert infer_type(cells[:98] + ["x", "y"]) is UnifiedType.TEXT


def test_malformed_csv_rows_are_rejected(tmp_path):
    lines = ["a,b"] + [f"{i},{i}" for i in range(99)] + ["1,2,3"]
    (tmp_path / "m.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    table = read_csv(tmp_path / "m.csv")
    assert len(table.rows) == 99
    assert len(table.rejects) == 1 and "expected 2 fields" in table.rejects[0][1]


def test_key_terms_from_metric_definition():
    terms = key_terms("Lead Rate = CTR * CVR")
    assert {"lead rate", "ctr", "cvr"} <= set(terms)


def test_empty_text_gives_empty_pseudo_columns(tmp_path, caplog):
    (tmp_path / "empty.txt").write_text("", encoding="utf-8")
    (src,) = discover_sources(tmp_path)
    metas = summarize_text(src)
    assert [m.name for m in metas] == ["summary", "key_terms"]
    assert all(len(m.samples) == 0 and m.pseudo for m in metas)
    assert "empty text document" in caplog.text


def test_summarizer_uses_provider_and_falls_back(tmp_path):
    (tmp_path / "n.txt").write_text("Lead Rate = CTR * CVR.", encoding="utf-8")
    (src,) = discover_sources(tmp_path)
    reply = '{"summary": ["Lead rate is CTR times CVR."], "key_terms": ["lead rate", "click-through rate"]}'
    provider = LlmProvider(ScriptedBackend({"summary": [reply]}))
    metas = by_name(summarize_text(src, provider))
    assert "click-through rate" in metas["key_terms"].samples.values
    broken = LlmProvider(ScriptedBackend({"summary": ["not json"]}))
    metas = by_name(summarize_text(src, broken))
    assert "cvr" in metas["key_terms"].samples.values


def test_ingestion_config_validates():
    with pytest.raises(ValueError):
        IngestionConfig(sample_cap=0)


values = st.one_of(
    st.integers(-10**6, 10**6), st.floats(allow_nan=False, allow_infinity=False, width=32),
    st.text(max_size=8), st.booleans(), st.none(),
)


@settings(max_examples=300, deadline=None)
@given(values, st.sampled_from(list(UnifiedType)))
def test_canonicalize_is_idempotent(value, utype):
    once = canonicalize(value, utype)
    assert canonicalize(once, utype) == once


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 500)), st.integers(1, 50), st.integers(0, 10))
def test_reservoir_sample_properties(items, cap, seed):
    sample = reservoir_sample(items, cap, seed)
    assert sample <= set(items)
    assert len(sample) == min(cap, len(set(items)))
    assert sample == reservoir_sample(items, cap, seed)
