"""Unified relational staging of all sources, and sandboxed read-only querying.

Every CSV table, SQL table and flattened JSON collection becomes one table in
an embedded DuckDB database named after its alias prefix (``csv_sales``,
``sqlite_users_users``). Text sources share ``text_documents``. Once loaded,
the database is reopened read-only with file-system access disabled; queries
run on that connection. Statements that could modify anything are also
rejected lexically, before they reach the engine.
"""

import logging
import re
import shutil
import tempfile
import threading
import time
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from decimal import Decimal
from pathlib import Path

import duckdb
import pandas as pd

from .core import SourceFormat, UnifiedType, format_alias, parse_alias
from .errors import PolicyViolationError, QueryError, QueryTimeoutError
from .ingestion import chunk_text, parse_typed, raw_text, read_tables, read_text

logger = logging.getLogger(__name__)

TEXT_TABLE = "text_documents"
REJECTS_TABLE = "_rejects"

SQL_TYPES = {
    UnifiedType.INT: "BIGINT",
    UnifiedType.FLOAT: "DOUBLE",
    UnifiedType.TEXT: "VARCHAR",
    UnifiedType.BOOL: "BOOLEAN",
    UnifiedType.DATE: "DATE",
    UnifiedType.DATETIME: "TIMESTAMP",
}


@dataclass(frozen=True)
class ResourceLimits:
    max_rows: int = 10_000
    timeout_s: float = 10.0
    memory_bytes: int = 256 * 1024 * 1024


@dataclass(frozen=True)
class StagedColumn:
    name: str
    unified_type: UnifiedType
    alias: str


@dataclass
class StagedTable:
    name: str
    columns: list
    source_id: str
    source_table: str
    row_count: int = 0
    rejected: int = 0


@dataclass
class QueryResult:
    columns: list
    types: list
    rows: list
    truncated: bool = False
    diagnostics: list = field(default_factory=list)
    elapsed_s: float = 0.0

    @property
    def row_count(self):
        return len(self.rows)


def quote_ident(name):
    return '"' + name.replace('"', '""') + '"'


def sanitize_identifier(raw):
    name = re.sub(r"[^0-9A-Za-z_]", "_", raw)
    if not name or name[0].isdigit():
        name = "_" + name
    return name


def staging_table_name(source, table):
    parts = [source.format.alias_prefix, source.stem]
    if source.uses_table_segment:
        parts.append(table)
    return "_".join(sanitize_identifier(p).strip("_") or "_" for p in parts)


def staging_names_for_alias(alias):
    """Expected ``(table, column)`` staging names for an alias, ignoring collision suffixes."""
    fmt, source, table, column = parse_alias(alias)
    parts = [fmt.alias_prefix, source] + ([table] if table is not None else [])
    return "_".join(sanitize_identifier(p).strip("_") or "_" for p in parts), sanitize_identifier(column)


def _unique(name, taken):
    if name.lower() not in taken:
        taken.add(name.lower())
        return name
    i = 2
    while f"{name}_{i}".lower() in taken:
        i += 1
    logger.warning("staging name collision on %r; using %s_%d", name, name, i)
    taken.add(f"{name}_{i}".lower())
    return f"{name}_{i}"


def _cell_text(value, utype):
    """Text form of a cell that casts cleanly to the column type; ok=False on failure."""
    text = raw_text(value)
    if text is None:
        return None, True
    if utype is UnifiedType.TEXT:
        return (value if isinstance(value, str) else text), True
    parsed = parse_typed(text, utype)
    if parsed is None:
        return None, False
    if utype is UnifiedType.BOOL:
        return ("true" if parsed else "false"), True
    if utype is UnifiedType.DATETIME and parsed.tzinfo is not None:
        parsed = parsed.astimezone(timezone.utc).replace(tzinfo=None)
    if isinstance(parsed, (date, datetime)):
        return parsed.isoformat(), True
    return (str(parsed) if isinstance(parsed, int) else repr(parsed)), True


class StagingStore:
    """File-backed DuckDB store; build with :func:`materialize`."""

    def __init__(self, path=None):
        self._tmpdir = None
        if path is None:
            self._tmpdir = tempfile.mkdtemp(prefix="crosslens-staging-")
            path = Path(self._tmpdir) / "staging.duckdb"
        self.path = Path(path)
        self._writer = duckdb.connect(str(self.path))
        self.conn = None
        self.tables = {}
        self.provenance = {}
        self.column_map = {}
        self._lock = threading.Lock()
        self._taken = {REJECTS_TABLE}
        self._rejects = []

    # -- construction ---------------------------------------------------

    def _load(self, name, columns, rows):
        ddl = ", ".join(f"{quote_ident(c.name)} {SQL_TYPES[c.unified_type]}" for c in columns)
        self._writer.execute(f"CREATE TABLE {quote_ident(name)} ({ddl})")
        if not rows:
            return
        frame = pd.DataFrame(rows, columns=[f"c{i}" for i in range(len(columns))], dtype=object)
        casts = ", ".join(f"CAST(c{i} AS {SQL_TYPES[c.unified_type]})" for i, c in enumerate(columns))
        self._writer.register("_frame", frame)
        try:
            self._writer.execute(f"INSERT INTO {quote_ident(name)} SELECT {casts} FROM _frame")
        finally:
            self._writer.unregister("_frame")

    def _add_table(self, source, table, graph):
        name = _unique(staging_table_name(source, table.name), self._taken)
        taken_cols = set()
        columns = []
        for raw in table.columns:
            alias = format_alias(source, table.name, raw)
            utype = graph[alias].unified_type if alias in graph else UnifiedType.TEXT
            col = StagedColumn(_unique(sanitize_identifier(raw), taken_cols), utype, alias)
            columns.append(col)
            self.column_map[alias] = (name, col.name)
        good, bad = [], list(table.rejects)
        first = 2 if source.format is SourceFormat.CSV else 1
        for row_number, row in enumerate(table.rows, start=first):
            out = []
            for col, cell in zip(columns, row):
                value, ok = _cell_text(cell, col.unified_type)
                if not ok:
                    reason = f"column {col.name}: cannot parse {raw_text(cell)!r} as {col.unified_type.value}"
                    bad.append((row_number, reason, ",".join("" if c is None else str(c) for c in row)))
                    break
                out.append(value)
            else:
                good.append(out)
        self._load(name, columns, good)
        self._rejects.extend((name, n, reason, rawrow) for n, reason, rawrow in sorted(bad, key=lambda r: r[0]))
        if bad:
            logger.warning("%s: quarantined %d of %d rows", name, len(bad), table.row_count)
        self.tables[name] = StagedTable(name, columns, source.source_id, table.name, len(good), len(bad))
        self.provenance[name] = source

    def _add_text(self, sources, graph):
        self._taken.add(TEXT_TABLE)
        cols = [
            StagedColumn("source_id", UnifiedType.TEXT, ""),
            StagedColumn("chunk_index", UnifiedType.INT, ""),
            StagedColumn("content", UnifiedType.TEXT, ""),
            StagedColumn("summary", UnifiedType.TEXT, ""),
            StagedColumn("key_terms", UnifiedType.TEXT, ""),
        ]
        rows = []
        for source in sources:
            summary_alias = format_alias(source, source.stem, "summary")
            terms_alias = format_alias(source, source.stem, "key_terms")
            summary = " | ".join(graph[summary_alias].samples.sorted_values()) if summary_alias in graph else ""
            terms = ", ".join(graph[terms_alias].samples.sorted_values()) if terms_alias in graph else ""
            self.column_map[summary_alias] = (TEXT_TABLE, "summary")
            self.column_map[terms_alias] = (TEXT_TABLE, "key_terms")
            rows.extend(
                [source.source_id, str(i), chunk, summary, terms]
                for i, chunk in enumerate(chunk_text(read_text(source.path)))
            )
        self._load(TEXT_TABLE, cols, rows)
        self.tables[TEXT_TABLE] = StagedTable(TEXT_TABLE, cols, ",".join(s.source_id for s in sources), TEXT_TABLE, len(rows))
        self.provenance[TEXT_TABLE] = sources[0]

    def _seal(self):
        cols = [
            StagedColumn("staging_table", UnifiedType.TEXT, ""),
            StagedColumn("row_number", UnifiedType.INT, ""),
            StagedColumn("reason", UnifiedType.TEXT, ""),
            StagedColumn("raw", UnifiedType.TEXT, ""),
        ]
        self._load(REJECTS_TABLE, cols, [[t, str(n), r, raw] for t, n, r, raw in self._rejects])
        self._writer.close()
        self._writer = None
        self.conn = duckdb.connect(
            str(self.path),
            read_only=True,
            config={"enable_external_access": False, "threads": 1},
        )

    # -- inspection -----------------------------------------------------

    def schema_text(self):
        """``table(col TYPE, ...)`` lines for prompts, in table order."""
        lines = []
        for name in sorted(self.tables):
            t = self.tables[name]
            cols = ", ".join(f"{c.name} {c.unified_type.value}" for c in t.columns)
            lines.append(f"{name}({cols})  -- {t.row_count} rows")
        return "\n".join(lines)

    def alias_mapping_text(self):
        return "\n".join(f"{alias} -> {t}.{c}" for alias, (t, c) in sorted(self.column_map.items()))

    def staging_column(self, alias):
        return self.column_map[alias]

    def table_names(self):
        return set(self.tables) | {REJECTS_TABLE}

    def rejects(self):
        with self._lock:
            cur = self.conn.cursor()
            return cur.execute(f"SELECT staging_table, row_number, reason FROM {REJECTS_TABLE}").fetchall()

    def dump(self):
        """Every table's schema and rows as bytes; proves the store is unchanged."""
        out = []
        with self._lock:
            cur = self.conn.cursor()
            names = [r[0] for r in cur.execute(
                "SELECT table_name FROM information_schema.tables ORDER BY table_name").fetchall()]
            for name in names:
                cols = cur.execute(
                    "SELECT column_name, data_type FROM information_schema.columns "
                    "WHERE table_name = ? ORDER BY ordinal_position", [name]).fetchall()
                out.append(f"TABLE {name} {cols!r}")
                for row in cur.execute(f"SELECT * FROM {quote_ident(name)} ORDER BY ALL").fetchall():
                    out.append(repr(row))
        return "\n".join(out).encode("utf-8")

    def persist(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(self.path, path)
        return path

    def close(self):
        if self.conn is not None:
            self.conn.close()
            self.conn = None
        if self._tmpdir:
            shutil.rmtree(self._tmpdir, ignore_errors=True)
            self._tmpdir = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def materialize(sources, graph, path=None):
    """Load every source into a fresh, sealed :class:`StagingStore`.

    Row-level parse failures go to the ``_rejects`` table; unreadable
    sources raise.
    """
    store = StagingStore(path)
    texts = []
    for source in sorted(sources, key=lambda s: s.source_id):
        if source.format is SourceFormat.TEXT:
            texts.append(source)
            continue
        for table in read_tables(source):
            store._add_table(source, table, graph)
    if texts:
        store._add_text(texts, graph)
    store._seal()
    return store


# -- read-only policy -----------------------------------------------------

_WORD = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_DOLLAR_TAG = re.compile(r"\$([A-Za-z_][A-Za-z0-9_]*)?\$")

FORBIDDEN = frozenset(
    """INSERT UPDATE DELETE DROP CREATE ALTER ATTACH DETACH PRAGMA VACUUM REINDEX ANALYZE
    BEGIN COMMIT ROLLBACK SAVEPOINT TRUNCATE GRANT REVOKE COPY EXPORT IMPORT INSTALL
    LOAD CHECKPOINT MERGE""".split()
)


def _ident_char(ch):
    return ch.isalnum() or ch == "_"


def _mask(program, keep_idents=False):
    """Blank out comments, string literals and (optionally) quoted identifiers.

    One left-to-right pass, so a quote inside a comment or a comment marker
    inside a string is never misread. Covers nested block comments, E-strings
    and dollar quoting; anything unterminated is a policy violation.
    """
    out, i, n = [], 0, len(program)
    while i < n:
        ch = program[i]
        two = program[i:i + 2]
        prev = program[i - 1] if i else ""
        if two == "--":
            end = program.find("\n", i)
            i = n if end < 0 else end
            out.append(" ")
        elif two == "/*":
            depth, i = 1, i + 2
            while depth:
                if i >= n:
                    raise PolicyViolationError("unterminated block comment")
                if program.startswith("/*", i):
                    depth, i = depth + 1, i + 2
                elif program.startswith("*/", i):
                    depth, i = depth - 1, i + 2
                else:
                    i += 1
            out.append(" ")
        elif ch == "'":
            escapes = prev in "eE" and not _ident_char(program[i - 2] if i > 1 else "")
            i += 1
            while True:
                if i >= n:
                    raise PolicyViolationError("unterminated string literal")
                if escapes and program[i] == "\\":
                    i += 2
                elif program.startswith("''", i):
                    i += 2
                elif program[i] == "'":
                    i += 1
                    break
                else:
                    i += 1
            out.append("''")
        elif ch == '"':
            end = i + 1
            while True:
                end = program.find('"', end)
                if end < 0:
                    raise PolicyViolationError("unterminated quoted identifier")
                if program.startswith('""', end):
                    end += 2
                    continue
                break
            out.append(program[i:end + 1] if keep_idents else "_q")
            i = end + 1
        elif ch == "$" and not _ident_char(prev) and (m := _DOLLAR_TAG.match(program, i)):
            end = program.find(m.group(0), m.end())
            if end < 0:
                raise PolicyViolationError("unterminated dollar-quoted string")
            i = end + len(m.group(0))
            out.append("''")
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def split_statements(program):
    masked = _mask(program)
    return [s for s in masked.split(";") if s.strip()]


def check_read_only(program):
    """Raise PolicyViolationError unless ``program`` is one read-only query."""
    statements = split_statements(program)
    if not statements:
        raise PolicyViolationError("empty program")
    if len(statements) > 1:
        raise PolicyViolationError(f"expected a single statement, found {len(statements)}")
    words = [w.upper() for w in _WORD.findall(statements[0])]
    if not words or words[0] not in ("SELECT", "WITH", "VALUES"):
        raise PolicyViolationError(f"only SELECT queries are allowed, got {words[0] if words else 'nothing'}")
    bad = sorted(set(words) & FORBIDDEN)
    if bad:
        raise PolicyViolationError(f"write or DDL keyword not allowed: {', '.join(bad)}")
    if re.search(r"\bREPLACE\s+INTO\b", statements[0], re.I):
        raise PolicyViolationError("write or DDL keyword not allowed: REPLACE INTO")


_TABLE_REF = re.compile(r'\b(?:FROM|JOIN)\s+("(?:[^"]|"")+"|[A-Za-z_][A-Za-z0-9_]*)', re.I)
_CTE_NAME = re.compile(r'(?:\bWITH\s+(?:RECURSIVE\s+)?|,\s*)("?[A-Za-z_][A-Za-z0-9_]*"?)\s*(?:\([^)]*\)\s*)?AS\s*\(', re.I)


def referenced_tables(program):
    text = _mask(program, keep_idents=True)
    ctes = {m.group(1).strip('"').lower() for m in _CTE_NAME.finditer(text)}
    names = []
    for m in _TABLE_REF.finditer(text):
        name = m.group(1)
        name = name[1:-1].replace('""', '"') if name.startswith('"') else name
        if name.lower() not in ctes and name.lower() not in names:
            names.append(name.lower())
    return names


def _value_type(values):
    seen = [v for v in values if v is not None]
    if not seen:
        return UnifiedType.TEXT
    if all(isinstance(v, bool) for v in seen):
        return UnifiedType.BOOL
    if all(isinstance(v, int) and not isinstance(v, bool) for v in seen):
        return UnifiedType.INT
    if all(isinstance(v, (int, float, Decimal)) and not isinstance(v, bool) for v in seen):
        return UnifiedType.FLOAT
    if all(isinstance(v, datetime) for v in seen):
        return UnifiedType.DATETIME
    if all(isinstance(v, date) for v in seen):
        return UnifiedType.DATE
    if all(isinstance(v, str) for v in seen):
        for utype in (UnifiedType.DATE, UnifiedType.DATETIME):
            if all(parse_typed(v, utype) is not None for v in seen):
                return utype
    return UnifiedType.TEXT


def _plain(value):
    if isinstance(value, Decimal):
        return float(value)
    if isinstance(value, (date, datetime)):
        return value.isoformat()
    return value


def execute_query(store, program, limits=None):
    """Run one read-only query under ``limits``; never mutates ``store``.

    Raises PolicyViolationError for anything but a single SELECT,
    QueryTimeoutError past the deadline and QueryError with the engine's
    own message for everything else.
    """
    limits = limits or ResourceLimits()
    check_read_only(program)
    start = time.monotonic()
    with store._lock:
        cur = store.conn.cursor()
    try:
        cur.execute(f"SET memory_limit = '{max(1, limits.memory_bytes // (1024 * 1024))}MB'")
        timer = threading.Timer(limits.timeout_s, cur.interrupt)
        timer.start()
        try:
            cur.execute(program)
            columns = [d[0] for d in cur.description or ()]
            rows = cur.fetchmany(limits.max_rows + 1)
        finally:
            timer.cancel()
    except duckdb.InterruptException as exc:
        raise QueryTimeoutError(f"query exceeded {limits.timeout_s}s timeout", "interrupted: query timed out") from exc
    except duckdb.Error as exc:
        message = str(exc)
        if "read-only" in message or isinstance(exc, duckdb.PermissionException):
            raise PolicyViolationError(f"engine refused statement: {message}", message) from exc
        raise QueryError(message, message) from exc
    finally:
        cur.close()
    truncated = len(rows) > limits.max_rows
    diagnostics = []
    if truncated:
        rows = rows[: limits.max_rows]
        diagnostics.append(f"result truncated to {limits.max_rows} rows")
    types = [_value_type([r[i] for r in rows]) for i in range(len(columns))]
    rows = [tuple(_plain(v) for v in r) for r in rows]
    return QueryResult(columns, types, rows, truncated, diagnostics, time.monotonic() - start)
