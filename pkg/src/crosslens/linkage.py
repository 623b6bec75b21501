"""Join-key discovery: pairwise column similarity, the linkage graph and join hints.

Two columns are compared only when their unified types agree. Their score is

    weight = w_n * name_similarity + w_v * value_similarity

where value similarity is the Jaccard coefficient of the sampled value sets.
Pairs scoring strictly above ``theta`` become edges; the ``k`` heaviest
edges are rendered as join instructions for query generation.
"""

import json
import logging
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum

from rapidfuzz.distance import JaroWinkler, Levenshtein
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_metagraph, check_positive_int, check_unit_interval, check_weights
from .errors import ConfigError

logger = logging.getLogger(__name__)

JOIN_PREFIX = "You must JOIN ON: "
NO_JOINS_LINE = "No cross-source joins discovered."
CONTEXT_PREFIX = "Context sources: "


class NameMetric(str, Enum):
    EXACT = "EXACT"
    LEVENSHTEIN = "LEVENSHTEIN"
    JARO_WINKLER = "JARO_WINKLER"


@dataclass(frozen=True)
class SimilarityConfig:
    w_n: float = 0.6
    w_v: float = 0.4
    theta: float = 0.55
    k: int = 5
    name_metric: NameMetric = NameMetric.JARO_WINKLER

    def __post_init__(self):
        w_n, w_v = check_weights(self.w_n, self.w_v)
        object.__setattr__(self, "w_n", w_n)
        object.__setattr__(self, "w_v", w_v)
        object.__setattr__(self, "theta", check_unit_interval(self.theta, "theta"))
        check_positive_int(self.k, "k")
        try:
            object.__setattr__(self, "name_metric", NameMetric(self.name_metric))
        except ValueError:
            raise ConfigError(f"unknown name_metric {self.name_metric!r}") from None


# -- name similarity --------------------------------------------------------

_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])|(?<=[A-Z])(?=[A-Z][a-z])")
_NON_ALNUM = re.compile(r"[^0-9a-z]+")


def canonical_name(name):
    """Split camelCase, lowercase, drop separators: ``userId`` -> ``userid``."""
    return _NON_ALNUM.sub("", _CAMEL.sub(" ", name).lower())


def name_similarity(a, b, metric=NameMetric.JARO_WINKLER):
    """Lexical similarity in [0, 1] of two column names, after canonicalization."""
    metric = NameMetric(metric)
    ca, cb = canonical_name(a), canonical_name(b)
    if not ca or not cb:
        logger.warning("empty canonical column name in pair (%r, %r)", a, b)
        return 0.0
    if ca == cb:
        return 1.0
    if metric is NameMetric.EXACT:
        return 0.0
    if metric is NameMetric.LEVENSHTEIN:
        return 1.0 - Levenshtein.distance(ca, cb) / max(len(ca), len(cb))
    # fix the argument order so the score is symmetric to the last bit
    lo, hi = sorted((ca, cb))
    return min(1.0, JaroWinkler.similarity(lo, hi, prefix_weight=0.1))


def value_similarity(a, b):
    """Jaccard coefficient of two sample sets (or plain sets of canonical values)."""
    va = getattr(a, "values", a)
    vb = getattr(b, "values", b)
    union = len(va | vb) if isinstance(va, (set, frozenset)) else len(set(va) | set(vb))
    if union == 0:
        logger.debug("both sample sets empty; value similarity is 0")
        return 0.0
    return len(set(va) & set(vb)) / union


# -- the linkage graph --------------------------------------------------------


@dataclass(frozen=True, order=True)
class LinkEdge:
    a: str
    b: str
    weight: float = field(compare=False)
    name_component: float = field(compare=False)
    value_component: float = field(compare=False)

    def as_dict(self):
        return {
            "a": self.a,
            "b": self.b,
            "name_component": self.name_component,
            "value_component": self.value_component,
            "weight": self.weight,
        }


def score_pair(ca, cb, config):
    """Build the canonical edge for two columns, regardless of threshold."""
    if cb.alias < ca.alias:
        ca, cb = cb, ca
    s_name = name_similarity(ca.name, cb.name, config.name_metric)
    s_val = value_similarity(ca.samples, cb.samples)
    weight = config.w_n * s_name + config.w_v * s_val
    return LinkEdge(ca.alias, cb.alias, weight, s_name, s_val)


@dataclass(frozen=True)
class EntityGraph:
    vertices: object
    edges: tuple
    config: SimilarityConfig

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(sorted(self.edges)))

    def ranked(self):
        return sorted(self.edges, key=lambda e: (-e.weight, e.a, e.b))

    def to_dict(self):
        cfg = self.config
        return {
            "config": {"k": cfg.k, "name_metric": cfg.name_metric.value, "theta": cfg.theta, "w_n": cfg.w_n, "w_v": cfg.w_v},
            "edges": [e.as_dict() for e in self.edges],
            "vertices": [c.alias for c in self.vertices],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def build_entity_graph(graph, config=None):
    """Score every type-compatible column pair; keep those above ``theta``.

    Columns are bucketed by unified type first so incompatible pairs are
    never scored.
    """
    check_metagraph(graph)
    config = config or SimilarityConfig()
    buckets = defaultdict(list)
    for column in graph.columns:
        buckets[column.unified_type].append(column)
    edges = []
    for bucket in buckets.values():
        for i, ca in enumerate(bucket):
            for cb in bucket[i + 1:]:
                edge = score_pair(ca, cb, config)
                if edge.weight > config.theta:
                    edges.append(edge)
    return EntityGraph(graph, tuple(edges), config)


@dataclass(frozen=True)
class JoinHint:
    pairs: tuple
    rendered: str
    context: tuple = ()

    def __str__(self):
        return self.rendered


def _pseudo_aliases(entity):
    return {c.alias for c in entity.vertices if c.pseudo}


def formulate_hints(entity, k=None):
    """Top-``k`` joinable edges rendered one per line.

    Edges touching text pseudo-schema columns are never offered as joins;
    their aliases are listed on a trailing context line instead.
    """
    k = check_positive_int(entity.config.k if k is None else k, "k")
    pseudo = _pseudo_aliases(entity)
    joinable, context = [], set()
    for edge in entity.ranked():
        if edge.a in pseudo or edge.b in pseudo:
            context.update(x for x in (edge.a, edge.b) if x in pseudo)
        else:
            joinable.append(edge)
    top = joinable[:k]
    pairs = tuple((e.a, e.b, e.weight) for e in top)
    lines = [f"{JOIN_PREFIX}{a} = {b}" for a, b, _ in pairs] or [NO_JOINS_LINE]
    if context:
        lines.append(CONTEXT_PREFIX + ", ".join(sorted(context)))
    return JoinHint(pairs, "\n".join(lines), tuple(sorted(context)))


class JoinKeyLinker(BaseEstimator):
    """Estimator front-end for join-key discovery.

    Examples
    --------
    >>> linker = JoinKeyLinker(theta=0.5, k=3).fit(metagraph)   # doctest: +SKIP
    >>> print(linker.hint_)                                        # doctest: +SKIP
    You must JOIN ON: csv.sales.user_id = sqlite.users.users.customer_id
    """

    def __init__(self, w_n=0.6, w_v=0.4, theta=0.55, k=5, name_metric="JARO_WINKLER"):
        self.w_n = w_n
        self.w_v = w_v
        self.theta = theta
        self.k = k
        self.name_metric = name_metric

    def _config(self):
        return SimilarityConfig(self.w_n, self.w_v, self.theta, self.k, self.name_metric)

    def fit(self, X, y=None):
        self.config_ = self._config()
        self.entity_graph_ = build_entity_graph(check_metagraph(X), self.config_)
        self.hint_ = formulate_hints(self.entity_graph_, self.k)
        return self

    def predict(self, X=None):
        """Ranked ``(alias_a, alias_b, weight)`` join pairs."""
        check_is_fitted(self, "hint_")
        if X is not None:
            return formulate_hints(build_entity_graph(check_metagraph(X), self.config_), self.k).pairs
        return self.hint_.pairs

    def transform(self, X=None):
        """Rendered hint text."""
        check_is_fitted(self, "hint_")
        if X is not None:
            return formulate_hints(build_entity_graph(check_metagraph(X), self.config_), self.k).rendered
        return self.hint_.rendered

    def score_pairs(self, X):
        """All type-compatible pairs with their components, thresholded or not."""
        check_is_fitted(self, "config_")
        graph = check_metagraph(X)
        cols = graph.columns
        return [
            score_pair(ca, cb, self.config_)
            for i, ca in enumerate(cols)
            for cb in cols[i + 1:]
            if ca.unified_type is cb.unified_type
        ]
