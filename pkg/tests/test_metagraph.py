import pytest
from sklearn.base import clone

from crosslens.core import SampleSet, SourceDescriptor, SourceFormat, format_alias, parse_alias
from crosslens.errors import IngestionError
from crosslens.ingestion import discover_sources
from crosslens.metagraph import ColumnProfiler, MetaGraph, build_metagraph, render_preview

from conftest import write_sqlite


@pytest.fixture
def two_sources(tmp_path):
    (tmp_path / "sales.csv").write_text("user_id,amount\nu1,3.5\nu2,4.0\n", encoding="utf-8")
    write_sqlite(tmp_path / "users.db", "users", "customer_id TEXT, name TEXT", [("u1", "Ann"), ("u3", "Cy")])
    return tmp_path


def test_aliases_for_csv_and_sqlite(two_sources):
    graph = build_metagraph(discover_sources(two_sources))
    assert graph.aliases == [
        "csv.sales.amount",
        "csv.sales.user_id",
        "sqlite.users.users.customer_id",
        "sqlite.users.users.name",
    ]


def test_preview_golden(two_sources):
    graph = build_metagraph(discover_sources(two_sources))
    assert render_preview(graph, max_examples=2) == (
        "csv.sales.amount FLOAT [2 distinct]: 3.5, 4\n"
        "csv.sales.user_id TEXT [2 distinct]: u1, u2\n"
        "sqlite.users.users.customer_id TEXT [2 distinct]: u1, u3\n"
        "sqlite.users.users.name TEXT [2 distinct]: ann, cy"
    )
    assert render_preview(graph, max_examples=0).splitlines()[0] == "csv.sales.amount FLOAT [2 distinct]"


def test_header_only_csv_has_empty_samples(tmp_path):
    (tmp_path / "empty.csv").write_text("a,b\n", encoding="utf-8")
    graph = build_metagraph(discover_sources(tmp_path))
    assert len(graph) == 2
    assert all(len(c.samples) == 0 for c in graph)


def test_same_stem_different_format_no_collision(tmp_path):
    (tmp_path / "sales.csv").write_text("id\n1\n", encoding="utf-8")
    (tmp_path / "sales.json").write_text('[{"id": 1}]', encoding="utf-8")
    graph = build_metagraph(discover_sources(tmp_path))
    assert graph.aliases == ["csv.sales.id", "json.sales.id"]


def test_no_sources_is_an_error():
    with pytest.raises(IngestionError):
        build_metagraph([])


def test_parallel_build_matches_serial(workspace):
    sources = discover_sources(workspace)
    assert build_metagraph(sources, n_jobs=4) == build_metagraph(sources)


def test_json_roundtrip(workspace):
    graph = build_metagraph(discover_sources(workspace))
    back = MetaGraph.from_json(graph.to_json(), workspace)
    assert back == graph
    assert back.to_json() == graph.to_json()


def test_text_source_becomes_pseudo_columns(metagraph):
    pseudo = [c.alias for c in metagraph if c.pseudo]
    assert pseudo == ["txt.notes.key_terms", "txt.notes.summary"]


@pytest.mark.parametrize(
    "stem, table, column",
    [("a.b", "t", "c"), ("x\\y", "t.u", "c.d"), ("plain", "plain", "col")],
)
def test_alias_escaping_roundtrip(stem, table, column):
    source = SourceDescriptor(stem, SourceFormat.SQL_DB, None, (table,), stem=stem)
    alias = format_alias(source, table, column)
    assert len(alias.split(".")) == 4
    assert parse_alias(alias) == (SourceFormat.SQL_DB, stem, table, column)


def test_json_alias_has_table_segment_only_with_several_collections():
    one = SourceDescriptor("doc", SourceFormat.JSON_DOC, None, ("doc",))
    two = SourceDescriptor("doc", SourceFormat.JSON_DOC, None, ("a", "b"))
    assert format_alias(one, "doc", "x") == "json.doc.x"
    assert format_alias(two, "a", "x") == "json.doc.a.x"


def test_sample_set_respects_cap():
    with pytest.raises(ValueError):
        SampleSet(frozenset({"a", "b"}), 2, cap=1)


def test_column_profiler_estimator(workspace):
    profiler = ColumnProfiler(sample_cap=10)
    preview = profiler.fit_transform(workspace)
    assert profiler.n_columns_ == len(preview.splitlines())
    assert clone(profiler).get_params() == profiler.get_params()
