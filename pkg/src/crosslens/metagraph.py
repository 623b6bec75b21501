"""The unified column catalog: every column of every source under a unique alias."""

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .core import ColumnMeta, SampleSet, SourceDescriptor, SourceFormat, UnifiedType, parse_alias
from .errors import AliasCollisionError, IngestionError
from .ingestion import IngestionConfig, discover_sources, extract_columns

__all__ = [
    "ColumnMeta",
    "ColumnProfiler",
    "MetaGraph",
    "build_metagraph",
    "parse_alias",
    "render_preview",
    "workspace_fingerprint",
]

logger = logging.getLogger(__name__)


def workspace_fingerprint(sources):
    """sha256 over every source's file name and bytes, in alias order."""
    digest = hashlib.sha256()
    for source in sorted(sources, key=lambda s: s.path.name):
        digest.update(source.path.name.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(hashlib.sha256(Path(source.path).read_bytes()).digest())
    return digest.hexdigest()


@dataclass(frozen=True)
class MetaGraph:
    columns: tuple
    workspace_fingerprint: str
    built_at: datetime = field(default_factory=lambda: datetime.now(timezone.utc), compare=False)

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(sorted(self.columns, key=lambda c: c.alias)))
        object.__setattr__(self, "_by_alias", {c.alias: c for c in self.columns})
        if len(self._by_alias) != len(self.columns):
            raise AliasCollisionError("duplicate alias in MetaGraph")

    def __len__(self):
        return len(self.columns)

    def __iter__(self):
        return iter(self.columns)

    def __getitem__(self, alias):
        return self._by_alias[alias]

    def __contains__(self, alias):
        return alias in self._by_alias

    @property
    def aliases(self):
        return [c.alias for c in self.columns]

    @property
    def sources(self):
        seen = {}
        for c in self.columns:
            seen.setdefault(c.origin.source_id, c.origin)
        return [seen[k] for k in sorted(seen)]

    def to_dict(self):
        return {
            "built_at": self.built_at.isoformat(),
            "columns": [
                {
                    "alias": c.alias,
                    "name": c.name,
                    "pseudo": c.pseudo,
                    "samples": {
                        "cap": c.samples.cap,
                        "sampled_from": c.samples.sampled_from,
                        "values": c.samples.sorted_values(),
                    },
                    "source": {
                        "file": c.origin.path.name,
                        "format": c.origin.format.value,
                        "source_id": c.origin.source_id,
                        "stem": c.origin.stem,
                        "tables": list(c.origin.tables),
                    },
                    "table": c.table,
                    "type": c.unified_type.value,
                }
                for c in self.columns
            ],
            "workspace_fingerprint": self.workspace_fingerprint,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_json(cls, text, workspace=None):
        data = json.loads(text)
        base = Path(workspace) if workspace is not None else Path(".")
        origins = {}
        columns = []
        for item in data["columns"]:
            src = item["source"]
            origin = origins.get(src["source_id"])
            if origin is None:
                origin = SourceDescriptor(
                    src["source_id"], SourceFormat(src["format"]), base / src["file"], tuple(src["tables"]), stem=src["stem"]
                )
                origins[src["source_id"]] = origin
            s = item["samples"]
            columns.append(
                ColumnMeta(
                    alias=item["alias"],
                    unified_type=UnifiedType(item["type"]),
                    samples=SampleSet(frozenset(s["values"]), s["sampled_from"], s["cap"]),
                    origin=origin,
                    name=item["name"],
                    table=item["table"],
                    pseudo=item["pseudo"],
                )
            )
        return cls(tuple(columns), data["workspace_fingerprint"], datetime.fromisoformat(data["built_at"]))


def build_metagraph(sources, config=None, provider=None, n_jobs=1):
    """Union of :func:`extract_columns` over ``sources``.

    Per-source extraction may fan out over threads; the result is the same
    for any ``n_jobs`` because columns are ordered by alias.
    """
    if not sources:
        raise IngestionError("build_metagraph needs at least one source")
    config = config or IngestionConfig()

    def extract(source):
        try:
            return extract_columns(
                source,
                sample_cap=config.sample_cap,
                seed=config.seed,
                provider=provider,
                type_inference_threshold=config.type_inference_threshold,
            )
        except IngestionError as exc:
            raise type(exc)(f"[{source.source_id}] {exc}", source.path) from exc

    if n_jobs == 1:
        per_source = [extract(s) for s in sources]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None) as pool:
            per_source = list(pool.map(extract, sources))
    columns = [c for cols in per_source for c in cols]
    aliases = [c.alias for c in columns]
    if len(set(aliases)) != len(aliases):
        dupes = sorted({a for a in aliases if aliases.count(a) > 1})
        raise AliasCollisionError(f"duplicate aliases after escaping: {dupes}")
    return MetaGraph(tuple(columns), workspace_fingerprint(sources))


def render_preview(graph, max_examples=3):
    """One line per column: alias, type tag, distinct count and example values."""
    lines = []
    for c in graph.columns:
        line = f"{c.alias} {c.unified_type.value} [{len(c.samples)} distinct]"
        if max_examples > 0:
            examples = c.samples.sorted_values()[:max_examples]
            if examples:
                line += ": " + ", ".join(_clip(v) for v in examples)
        lines.append(line)
    return "\n".join(lines)


def _clip(value, width=60):
    value = value.replace("\n", " ")
    return value if len(value) <= width else value[: width - 3] + "..."


class ColumnProfiler(TransformerMixin, BaseEstimator):
    """Estimator wrapper around discovery and MetaGraph construction.

    ``fit`` takes a workspace directory (or a list of source descriptors)
    and stores ``metagraph_``; ``transform`` returns the preview text.
    """

    def __init__(self, sample_cap=1000, seed=42, type_inference_threshold=0.99, n_jobs=1, provider=None):
        self.sample_cap = sample_cap
        self.seed = seed
        self.type_inference_threshold = type_inference_threshold
        self.n_jobs = n_jobs
        self.provider = provider

    def _sources(self, X):
        if isinstance(X, (str, Path)):
            return discover_sources(X)
        return list(X)

    def fit(self, X, y=None):
        config = IngestionConfig(self.sample_cap, self.seed, self.type_inference_threshold)
        self.sources_ = self._sources(X)
        self.metagraph_ = build_metagraph(self.sources_, config, provider=self.provider, n_jobs=self.n_jobs)
        self.n_columns_ = len(self.metagraph_)
        return self

    def transform(self, X=None, max_examples=3):
        check_is_fitted(self, "metagraph_")
        return render_preview(self.metagraph_, max_examples=max_examples)
