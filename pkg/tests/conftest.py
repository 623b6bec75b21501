import json
import sqlite3
from pathlib import Path

import pytest

from crosslens.ingestion import discover_sources
from crosslens.metagraph import build_metagraph


def write_sqlite(path, table, ddl, rows):
    con = sqlite3.connect(path)
    con.execute(f'CREATE TABLE "{table}" ({ddl})')
    if rows:
        marks = ", ".join("?" for _ in rows[0])
        con.executemany(f'INSERT INTO "{table}" VALUES ({marks})', rows)
    con.commit()
    con.close()


def make_workspace(root):
    """sales.csv, users.db, events.json and notes.txt with one planted join."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / "sales.csv").write_text(
        "user_id,amount,sale_date,category\n"
        "u1,3.5,2024-01-01,books\n"
        "u2,4.0,2024-01-02,games\n"
        "u3,2.5,2024-01-03,books\n"
        "u4,7.0,2024-01-04,music\n",
        encoding="utf-8",
    )
    write_sqlite(
        root / "users.db",
        "users",
        "customer_id TEXT, name TEXT, signup_year INTEGER",
        [("u1", "Ann", 2020), ("u2", "Bob", 2021), ("u3", "Cy", 2022), ("u9", "Di", 2023)],
    )
    (root / "events.json").write_text(
        json.dumps([{"event": "launch", "meta": {"weight": 1}}, {"event": "sale", "meta": {"weight": 2}}]),
        encoding="utf-8",
    )
    (root / "notes.txt").write_text(
        "Lead Rate = CTR * CVR. The lead rate is tracked weekly.\n\nCTR and CVR come from the ads platform.\n",
        encoding="utf-8",
    )
    return root


@pytest.fixture
def workspace(tmp_path):
    return make_workspace(tmp_path / "ws")


@pytest.fixture
def metagraph(workspace):
    return build_metagraph(discover_sources(workspace))


def snapshot(root):
    """Bytes of every file under ``root``; used to prove nothing was written."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- acceptance summary ----------------------------------------------------------
#
# Tests marked ``@pytest.mark.criterion(n, "title")`` contribute one PASS/FAIL
# line to the terminal summary; a test may add measurements through the
# ``criterion_detail`` fixture.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion verified by this test")


@pytest.fixture
def criterion_detail(request):
    def add(text):
        request.node.user_properties.append(("criterion_detail", text))

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or rep.failed or rep.skipped):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "details": []})
    entry["ok"] = entry["ok"] and rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "criterion_detail" and v not in entry["details"]]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        detail = f" ({'; '.join(entry['details'])})" if entry["details"] else ""
        terminalreporter.write_line(f"{'PASS' if entry['ok'] else 'FAIL'} criterion {number}: {entry['title']}{detail}")
