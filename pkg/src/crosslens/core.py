"""Value types shared across stages: source formats, unified types, column metadata."""

import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

from .errors import CrosslensError


class SourceFormat(str, Enum):
    CSV = "CSV"
    SQL_DB = "SQL_DB"
    JSON_DOC = "JSON_DOC"
    TEXT = "TEXT"

    @property
    def alias_prefix(self):
        return _ALIAS_PREFIX[self]

    @classmethod
    def from_prefix(cls, prefix):
        for fmt, p in _ALIAS_PREFIX.items():
            if p == prefix:
                return fmt
        raise ValueError(f"unknown alias format segment {prefix!r}")


_ALIAS_PREFIX = {
    SourceFormat.CSV: "csv",
    SourceFormat.SQL_DB: "sqlite",
    SourceFormat.JSON_DOC: "json",
    SourceFormat.TEXT: "txt",
}


class UnifiedType(str, Enum):
    INT = "INT"
    FLOAT = "FLOAT"
    TEXT = "TEXT"
    BOOL = "BOOL"
    DATE = "DATE"
    DATETIME = "DATETIME"

    @property
    def is_numeric(self):
        return self in (UnifiedType.INT, UnifiedType.FLOAT)

    @property
    def is_temporal(self):
        return self in (UnifiedType.DATE, UnifiedType.DATETIME)


@dataclass(frozen=True)
class SourceDescriptor:
    """One data file in a workspace.

    ``stem`` is the file stem used in aliases; ``source_id`` equals the stem
    unless two files share it, in which case the extension is appended.
    """

    source_id: str
    format: SourceFormat
    path: Path
    tables: tuple = ()
    stem: str = ""

    def __post_init__(self):
        if not self.stem:
            object.__setattr__(self, "stem", self.source_id)
        object.__setattr__(self, "tables", tuple(self.tables))

    @property
    def uses_table_segment(self):
        if self.format is SourceFormat.SQL_DB:
            return True
        if self.format is SourceFormat.JSON_DOC:
            return len(self.tables) > 1
        return False


@dataclass(frozen=True)
class SampleSet:
    values: frozenset = frozenset()
    sampled_from: int = 0
    cap: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "values", frozenset(self.values))
        if len(self.values) > self.cap:
            raise ValueError(f"sample set holds {len(self.values)} values, cap is {self.cap}")

    def __len__(self):
        return len(self.values)

    def sorted_values(self):
        return sorted(self.values)


@dataclass(frozen=True)
class ColumnMeta:
    """One column of one table of one source: alias, unified type and samples."""

    alias: str
    unified_type: UnifiedType
    samples: SampleSet
    origin: SourceDescriptor = field(compare=False, repr=False)
    name: str = ""
    table: Optional[str] = None
    pseudo: bool = False

    @property
    def source_id(self):
        return self.origin.source_id


class AliasError(CrosslensError, ValueError):
    pass


_ESCAPES = (("\\", "\\u005c"), (".", "\\u002e"))


def escape_segment(raw):
    out = str(raw)
    for plain, coded in _ESCAPES:
        out = out.replace(plain, coded)
    return out


_UNESCAPE = re.compile(r"\\u(005c|002e)")


def unescape_segment(segment):
    return _UNESCAPE.sub(lambda m: "\\" if m.group(1) == "005c" else ".", segment)


def format_alias(source, table, column):
    parts = [source.format.alias_prefix, escape_segment(source.stem)]
    if source.uses_table_segment:
        parts.append(escape_segment(table))
    parts.append(escape_segment(column))
    return ".".join(parts)


def parse_alias(alias):
    """Split an alias into ``(format, source, table, column)``; table may be None."""
    parts = alias.split(".")
    if len(parts) not in (3, 4):
        raise AliasError(f"alias must have 3 or 4 segments: {alias!r}")
    fmt = SourceFormat.from_prefix(parts[0])
    parts = [unescape_segment(p) for p in parts[1:]]
    if len(parts) == 2:
        return fmt, parts[0], None, parts[1]
    return fmt, parts[0], parts[1], parts[2]
