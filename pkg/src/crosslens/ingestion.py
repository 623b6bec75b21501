"""Source discovery, reading, type inference and value sampling.

Supported sources live directly inside a workspace directory:

========================  ==========  =============
extension                 format      alias prefix
========================  ==========  =============
``.csv``                  CSV         ``csv``
``.db .sqlite .sqlite3``  SQL_DB      ``sqlite``
``.json``                 JSON_DOC    ``json``
``.txt``                  TEXT        ``txt``
========================  ==========  =============

Raw SQL declared types map to unified tags as follows (first match wins):
``BOOL`` -> BOOL, ``DATETIME``/``TIMESTAMP`` -> DATETIME, ``DATE`` -> DATE,
``INT`` -> INT, ``CHAR``/``CLOB``/``TEXT`` -> TEXT,
``REAL``/``FLOA``/``DOUB`` -> FLOAT; anything else is inferred from values
the same way CSV cells are.
"""

import codecs
import csv
import io
import json
import logging
import math
import random
import re
import sqlite3
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path

from ._validation import check_directory, check_positive_int, check_unit_interval
from .core import ColumnMeta, SampleSet, SourceDescriptor, SourceFormat, UnifiedType, format_alias
from .errors import ContentMismatchError, CorruptSourceError, IngestionError, ProviderError
from .prompts import extract_json

logger = logging.getLogger(__name__)

EXTENSIONS = {
    ".csv": SourceFormat.CSV,
    ".db": SourceFormat.SQL_DB,
    ".sqlite": SourceFormat.SQL_DB,
    ".sqlite3": SourceFormat.SQL_DB,
    ".json": SourceFormat.JSON_DOC,
    ".txt": SourceFormat.TEXT,
}

SQLITE_MAGIC = b"SQLite format 3\x00"
SNIFF_BYTES = 64 * 1024

DEFAULT_SAMPLE_CAP = 1000
DEFAULT_SEED = 42
DEFAULT_TYPE_THRESHOLD = 0.99


@dataclass(frozen=True)
class IngestionConfig:
    sample_cap: int = DEFAULT_SAMPLE_CAP
    seed: int = DEFAULT_SEED
    type_inference_threshold: float = DEFAULT_TYPE_THRESHOLD

    def __post_init__(self):
        check_positive_int(self.sample_cap, "sample_cap")
        check_unit_interval(self.type_inference_threshold, "type_inference_threshold")
        if self.type_inference_threshold == 0:
            raise IngestionError("type_inference_threshold must be positive")


@dataclass
class TableData:
    """A source table read into memory, before typing.

    ``rows`` hold raw cell values (strings for CSV, Python scalars for SQL
    and JSON). ``rejects`` hold ``(row_number, reason, raw_text)`` for rows
    that could not be split into the header's columns.
    """

    name: str
    columns: list
    rows: list = field(default_factory=list)
    rejects: list = field(default_factory=list)
    declared: dict = field(default_factory=dict)

    @property
    def row_count(self):
        return len(self.rows) + len(self.rejects)


# -- value parsing and canonicalization ---------------------------------

_INT_RE = re.compile(r"^[+-]?\d+$")
_FLOAT_RE = re.compile(r"^[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?$")
_DATE_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")
_DATETIME_RE = re.compile(r"^\d{4}-\d{2}-\d{2}[T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?$")


def raw_text(value):
    """Render a raw cell (any source) as text, or None when empty."""
    if value is None:
        return None
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return None
        return repr(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, bytes):
        return value.hex()
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True, ensure_ascii=False)
    text = str(value).strip()
    return text or None


def parse_int(text):
    return int(text) if _INT_RE.match(text) else None


def parse_float(text):
    return float(text) if _FLOAT_RE.match(text) else None


def parse_bool(text):
    low = text.lower()
    if low == "true":
        return True
    if low == "false":
        return False
    return None


def parse_date(text):
    if not _DATE_RE.match(text):
        return None
    try:
        return date.fromisoformat(text)
    except ValueError:
        return None


def parse_datetime(text):
    if _DATE_RE.match(text):
        d = parse_date(text)
        return datetime(d.year, d.month, d.day) if d else None
    if not _DATETIME_RE.match(text):
        return None
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    try:
        return datetime.fromisoformat(text)
    except ValueError:
        return None


_PARSERS = {
    UnifiedType.INT: parse_int,
    UnifiedType.FLOAT: parse_float,
    UnifiedType.BOOL: parse_bool,
    UnifiedType.DATE: parse_date,
    UnifiedType.DATETIME: parse_datetime,
}

INFERENCE_ORDER = (
    UnifiedType.INT,
    UnifiedType.FLOAT,
    UnifiedType.BOOL,
    UnifiedType.DATE,
    UnifiedType.DATETIME,
)


def parse_typed(text, utype):
    """Parse ``text`` as ``utype``; None when it does not fit."""
    if utype is UnifiedType.TEXT:
        return text
    return _PARSERS[utype](text)


def _render_number(x):
    if isinstance(x, int):
        return str(x)
    if x == 0:
        return "0"
    if x.is_integer() and abs(x) < 1e16:
        return str(int(x))
    return repr(x)


def canonicalize(value, utype):
    """Canonical string form of a cell under the column's unified type.

    Idempotent: ``canonicalize(canonicalize(v, t), t) == canonicalize(v, t)``.
    Cells that do not parse as ``utype`` fall back to the TEXT rule.
    """
    text = raw_text(value)
    if text is None:
        return None
    if isinstance(value, bool) and utype is UnifiedType.BOOL:
        return text
    if utype is UnifiedType.INT or utype is UnifiedType.FLOAT:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return _render_number(value)
        parsed = parse_float(text)
        if parsed is not None:
            as_int = parse_int(text)
            return str(as_int) if as_int is not None else _render_number(parsed)
    elif utype is UnifiedType.BOOL:
        parsed = parse_bool(text)
        if parsed is not None:
            return "true" if parsed else "false"
    elif utype is UnifiedType.DATE:
        parsed = parse_date(text)
        if parsed is not None:
            return parsed.isoformat()
    elif utype is UnifiedType.DATETIME:
        parsed = parse_datetime(text)
        if parsed is not None:
            return parsed.isoformat()
    return text.lower()


def infer_type(cells, threshold=DEFAULT_TYPE_THRESHOLD, label=None):
    """Narrowest unified type that fits at least ``threshold`` of non-empty cells."""
    texts = [t for t in (raw_text(c) for c in cells) if t is not None]
    if not texts:
        return UnifiedType.TEXT
    pythonic = [c for c in cells if c is not None]
    if pythonic and all(isinstance(c, bool) for c in pythonic):
        return UnifiedType.BOOL
    n = len(texts)
    for utype in INFERENCE_ORDER:
        parser = _PARSERS[utype]
        misses = sum(1 for t in texts if parser(t) is None)
        if misses == 0:
            return utype
        if (n - misses) / n >= threshold:
            logger.warning(
                "%s: typed %s with %d/%d outlier cells",
                label or "column", utype.value, misses, n,
            )
            return utype
    return UnifiedType.TEXT


def sql_declared_type(declared):
    """Unified type for a SQL declared type, or None to infer from values."""
    d = (declared or "").upper()
    if "BOOL" in d:
        return UnifiedType.BOOL
    if "DATETIME" in d or "TIMESTAMP" in d:
        return UnifiedType.DATETIME
    if "DATE" in d:
        return UnifiedType.DATE
    if "INT" in d:
        return UnifiedType.INT
    if any(k in d for k in ("CHAR", "CLOB", "TEXT")):
        return UnifiedType.TEXT
    if any(k in d for k in ("REAL", "FLOA", "DOUB")):
        return UnifiedType.FLOAT
    return None


def reservoir_sample(values, cap, seed):
    """Seeded reservoir sample over the distinct items of ``values``."""
    rng = random.Random(seed)
    seen = set()
    reservoir = []
    for v in values:
        if v is None or v in seen:
            continue
        i = len(seen)
        seen.add(v)
        if i < cap:
            reservoir.append(v)
        else:
            j = rng.randint(0, i)
            if j < cap:
                reservoir[j] = v
    return frozenset(reservoir)


# -- discovery ------------------------------------------------------------


def _decodes_as_text(head):
    if b"\x00" in head:
        return False
    decoder = codecs.getincrementaldecoder("utf-8")()
    try:
        decoder.decode(head, final=False)
    except UnicodeDecodeError:
        return False
    return True


def sniff(path, fmt):
    """Raise ContentMismatchError when the file content contradicts ``fmt``."""
    with open(path, "rb") as fh:
        head = fh.read(SNIFF_BYTES)
    if fmt is SourceFormat.SQL_DB:
        if not head.startswith(SQLITE_MAGIC):
            raise ContentMismatchError(f"{path.name}: extension says SQLite database but header does not match", path)
        return
    if not _decodes_as_text(head):
        raise ContentMismatchError(f"{path.name}: extension says {fmt.value} but content is not UTF-8 text", path)
    if fmt is SourceFormat.JSON_DOC:
        stripped = head.decode("utf-8", errors="ignore").lstrip("\ufeff \t\r\n")
        if not stripped[:1] in ("[", "{"):
            raise ContentMismatchError(f"{path.name}: extension says JSON but content does not start a JSON value", path)


def _list_tables(path, fmt):
    if fmt is SourceFormat.SQL_DB:
        with _open_sqlite(path) as conn:
            rows = conn.execute(
                "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
            ).fetchall()
        return [r[0] for r in rows]
    if fmt is SourceFormat.JSON_DOC:
        return sorted(flatten_json_document(_load_json(path), path.stem))
    return [path.stem]


def discover_sources(workspace_path):
    """One descriptor per recognized file, ordered by path.

    Unrecognized files are reported in a warning rather than dropped
    silently.
    """
    root = check_directory(workspace_path)
    try:
        entries = sorted(p for p in root.iterdir() if p.is_file())
    except PermissionError as exc:
        raise IngestionError(f"cannot read workspace directory {root}: {exc}", root) from exc
    found, skipped = [], []
    for path in entries:
        fmt = EXTENSIONS.get(path.suffix.lower())
        if fmt is None:
            skipped.append(path.name)
            continue
        sniff(path, fmt)
        found.append((path, fmt))
    if skipped:
        logger.warning("skipped unrecognized files: %s", ", ".join(skipped))
    stems = Counter(p.stem for p, _ in found)
    descriptors = []
    for path, fmt in found:
        source_id = path.stem if stems[path.stem] == 1 else f"{path.stem}_{path.suffix.lstrip('.').lower()}"
        descriptors.append(SourceDescriptor(source_id, fmt, path, tuple(_list_tables(path, fmt)), stem=path.stem))
    return descriptors


# -- readers --------------------------------------------------------------


def _open_sqlite(path):
    uri = f"file:{Path(path).resolve().as_posix()}?mode=ro&immutable=1"
    try:
        return sqlite3.connect(uri, uri=True)
    except sqlite3.Error as exc:
        raise CorruptSourceError(f"{Path(path).name}: cannot open database: {exc}", path) from exc


def _load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8-sig"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise CorruptSourceError(f"{Path(path).name}: invalid JSON: {exc}", path) from exc


def read_csv(path):
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise CorruptSourceError(f"{Path(path).name}: not UTF-8: {exc}", path) from exc
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise CorruptSourceError(f"{Path(path).name}: missing header row", path) from None
    except csv.Error as exc:
        raise CorruptSourceError(f"{Path(path).name}: {exc}", path) from exc
    header = [h.strip() for h in header]
    if not any(header):
        raise CorruptSourceError(f"{Path(path).name}: empty header row", path)
    table = TableData(Path(path).stem, header)
    line = 1
    while True:
        try:
            row = next(reader)
        except StopIteration:
            break
        except csv.Error as exc:
            line += 1
            table.rejects.append((line, f"csv parse error: {exc}", ""))
            continue
        line += 1
        if not row:
            continue
        if len(row) != len(header):
            table.rejects.append((line, f"expected {len(header)} fields, got {len(row)}", ",".join(row)))
            continue
        table.rows.append(tuple(c if c.strip() else None for c in row))
    return table


def read_sqlite(path):
    tables = []
    with _open_sqlite(path) as conn:
        try:
            names = [
                r[0]
                for r in conn.execute(
                    "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY name"
                )
            ]
            for name in names:
                quoted = '"' + name.replace('"', '""') + '"'
                info = conn.execute(f"PRAGMA table_info({quoted})").fetchall()
                columns = [r[1] for r in info]
                declared = {r[1]: r[2] for r in info}
                try:
                    rows = conn.execute(f"SELECT * FROM {quoted} ORDER BY rowid").fetchall()
                except sqlite3.OperationalError:
                    rows = conn.execute(f"SELECT * FROM {quoted}").fetchall()
                tables.append(TableData(name, columns, [tuple(r) for r in rows], declared=declared))
        except sqlite3.DatabaseError as exc:
            raise CorruptSourceError(f"{Path(path).name}: {exc}", path) from exc
    return tables


def _split_record(record, prefix=""):
    """Separate one JSON object into scalars, scalar arrays and object arrays."""
    scalars, arrays, children = {}, {}, {}
    for key, value in record.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            s, a, c = _split_record(value, prefix=f"{path}.")
            scalars.update(s)
            arrays.update(a)
            children.update(c)
        elif isinstance(value, list):
            if value and all(isinstance(v, dict) for v in value):
                children[path] = value
            else:
                arrays[path] = value
        else:
            scalars[path] = value
    return scalars, arrays, children


def _explode(scalars, arrays):
    rows = [dict(scalars)]
    for path, values in arrays.items():
        values = values or [None]
        rows = [{**row, path: v} for row in rows for v in values]
    return rows


def _flatten_collection(name, records, out, parent_index=None):
    columns, rows, children = [], [], {}

    def touch(key):
        if key not in seen:
            seen.add(key)
            columns.append(key)

    seen = set()
    if parent_index is not None:
        touch("parent_index")
    for i, record in enumerate(records):
        if not isinstance(record, dict):
            record = {"value": record}
        scalars, arrays, kids = _split_record(record)
        for flat in _explode(scalars, arrays):
            if parent_index is not None:
                flat = {"parent_index": parent_index[i], **flat}
            for key in flat:
                touch(key)
            rows.append(flat)
        for path, items in kids.items():
            bucket = children.setdefault(path, ([], []))
            bucket[0].extend(items)
            bucket[1].extend([i] * len(items))
    out[name] = TableData(name, columns, [tuple(r.get(c) for c in columns) for r in rows])
    for path, (items, parents) in children.items():
        _flatten_collection(f"{name}[]{path}", items, out, parent_index=parents)
    return out


def flatten_json_document(doc, stem):
    """Flatten a JSON document into named tables.

    A top-level array becomes one collection named ``stem``; an object of
    named arrays becomes one collection per key. Nested objects become
    dot-path columns, arrays of objects become child collections named
    ``parent[]child`` with a ``parent_index`` column, and scalar arrays are
    exploded into one row per element.
    """
    out = {}
    if isinstance(doc, list):
        _flatten_collection(stem, doc, out)
    elif isinstance(doc, dict):
        for key, value in doc.items():
            if not isinstance(value, list):
                raise CorruptSourceError(f"{stem}: top-level key {key!r} is not an array")
            _flatten_collection(key, value, out)
    else:
        raise CorruptSourceError(f"{stem}: JSON must be an array of objects or an object of named arrays")
    return out


def read_json(path):
    tables = flatten_json_document(_load_json(path), Path(path).stem)
    return [tables[name] for name in sorted(tables)]


def read_text(path):
    try:
        return Path(path).read_text(encoding="utf-8-sig")
    except UnicodeDecodeError as exc:
        raise CorruptSourceError(f"{Path(path).name}: not UTF-8: {exc}", path) from exc


def read_tables(source):
    """All tables of a structured or semi-structured source."""
    if source.format is SourceFormat.CSV:
        return [read_csv(source.path)]
    if source.format is SourceFormat.SQL_DB:
        return read_sqlite(source.path)
    if source.format is SourceFormat.JSON_DOC:
        return read_json(source.path)
    raise IngestionError(f"{source.source_id}: {source.format.value} sources have no tables", source.path)


def column_type(table, column_index, threshold=DEFAULT_TYPE_THRESHOLD, label=None):
    name = table.columns[column_index]
    declared = sql_declared_type(table.declared.get(name)) if table.declared else None
    if declared is not None:
        return declared
    return infer_type([row[column_index] for row in table.rows], threshold, label=label)


def extract_columns(source, sample_cap=DEFAULT_SAMPLE_CAP, seed=DEFAULT_SEED, provider=None,
                    type_inference_threshold=DEFAULT_TYPE_THRESHOLD):
    """Column metadata for every column of every table in ``source``."""
    check_positive_int(sample_cap, "sample_cap")
    if source.format is SourceFormat.TEXT:
        return summarize_text(source, provider, sample_cap=sample_cap)
    metas = []
    for table in read_tables(source):
        if not table.rows:
            logger.warning("%s: table %r has no readable rows", source.source_id, table.name)
        for idx, name in enumerate(table.columns):
            label = f"{source.source_id}.{table.name}.{name}"
            utype = column_type(table, idx, type_inference_threshold, label=label)
            canon = (canonicalize(row[idx], utype) for row in table.rows)
            samples = SampleSet(reservoir_sample(canon, sample_cap, seed), table.row_count, sample_cap)
            metas.append(
                ColumnMeta(
                    alias=format_alias(source, table.name, name),
                    unified_type=utype,
                    samples=samples,
                    origin=source,
                    name=name,
                    table=table.name,
                )
            )
    return metas


# -- unstructured text ----------------------------------------------------

STOPWORDS = frozenset(
    """a about above after again against all also am an and any are as at be because been before
    being below between both but by can could did do does doing down during each either else for
    from further had has have having he her here hers him his how i if in into is it its itself
    just may me might more most must my no nor not of off on once only or other our ours out over
    own per same shall she should so some such than that the their theirs them then there these
    they this those through to too under until up upon very via was we were what when where which
    while who whom why will with within would you your yours""".split()
)

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+|\n+")
_SEGMENT_SPLIT = re.compile(r"[^\w\s]+|\n")
_WORD = re.compile(r"[^\W\d]\w*", re.UNICODE)

SUMMARY_SENTENCES = 3
KEY_TERMS = 10


def split_sentences(text):
    return [s.strip() for s in _SENTENCE_SPLIT.split(text) if s and s.strip()]


def key_terms(text, limit=KEY_TERMS):
    """Top terms by frequency; adjacent non-stopword pairs count as phrases."""
    counts = Counter()
    first = {}
    position = 0
    for segment in _SEGMENT_SPLIT.split(text.lower()):
        words = _WORD.findall(segment)
        prev = None
        for word in words:
            if word in STOPWORDS or len(word) < 2:
                prev = None
                continue
            for term in (word,) if prev is None else (word, f"{prev} {word}"):
                counts[term] += 1
                first.setdefault(term, position)
                position += 1
            prev = word
    ranked = sorted(counts, key=lambda t: (-counts[t], first[t]))
    return ranked[:limit]


def extractive_summary(text):
    """First sentences plus top terms: the offline summarizer."""
    return split_sentences(text)[:SUMMARY_SENTENCES], key_terms(text)


def chunk_text(text):
    return [p.strip() for p in re.split(r"\n\s*\n", text) if p.strip()]


SUMMARY_SYSTEM = (
    "You summarize business documents for a data analyst. Reply with JSON only: "
    '{"summary": [up to 3 sentences], "key_terms": [up to 10 lowercase terms or metric names]}. '
    "Expand abbreviations and metric definitions where the document implies them."
)

MAX_DOCUMENT_CHARS = 12000


def _parse_summary_response(text):
    data = extract_json(text)
    summary = data["summary"]
    terms = data["key_terms"]
    if not isinstance(summary, list) or not isinstance(terms, list):
        raise ValueError("summary and key_terms must be lists")
    return [str(s) for s in summary], [str(t) for t in terms]


def summarize_text(source, provider=None, sample_cap=DEFAULT_SAMPLE_CAP):
    """Pseudo-schema for a text source: ``summary`` and ``key_terms`` columns.

    Falls back to :func:`extractive_summary` when no provider is given or
    the provider fails; ingestion never aborts on a summarizer error.
    """
    if source.format is not SourceFormat.TEXT:
        raise IngestionError(f"{source.source_id}: summarize_text needs a TEXT source", source.path)
    text = read_text(source.path)
    if not text.strip():
        logger.warning("%s: empty text document", source.source_id)
        sentences, terms = [], []
    elif provider is None:
        sentences, terms = extractive_summary(text)
    else:
        user = f"Document `{source.stem}`:\n\n{text[:MAX_DOCUMENT_CHARS]}"
        try:
            sentences, terms = _parse_summary_response(provider.ask("summary", SUMMARY_SYSTEM, user))
        except (ProviderError, ValueError, KeyError, TypeError) as exc:
            logger.warning("%s: summarizer failed (%s); using extractive fallback", source.source_id, exc)
            sentences, terms = extractive_summary(text)
    row_count = len(chunk_text(text))
    metas = []
    for name, values in (("summary", sentences), ("key_terms", terms)):
        canon = (canonicalize(v, UnifiedType.TEXT) for v in values)
        metas.append(
            ColumnMeta(
                alias=format_alias(source, source.stem, name),
                unified_type=UnifiedType.TEXT,
                samples=SampleSet(reservoir_sample(canon, sample_cap, DEFAULT_SEED), row_count, sample_cap),
                origin=source,
                name=name,
                table=source.stem,
                pseudo=True,
            )
        )
    return metas
