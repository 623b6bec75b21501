"""Cross-source data analysis: catalog heterogeneous files, discover join keys,
plan and answer sub-questions with self-correcting SQL, and write a report."""

from .core import ColumnMeta, SourceDescriptor, SourceFormat, UnifiedType, format_alias, parse_alias
from .errors import (
    ConfigError,
    CrosslensError,
    FixtureSpecError,
    IngestionError,
    PlanningError,
    PolicyViolationError,
    ProviderError,
    QueryError,
)
from .executor import ExecutorConfig, ResultSummary, run_with_selfcorrection
from .fixtures import FixtureSpec, GroundTruth, generate_workspace, load_spec, verify_workspace
from .ingestion import IngestionConfig, discover_sources
from .linkage import JoinKeyLinker, SimilarityConfig, build_entity_graph, formulate_hints
from .metagraph import ColumnProfiler, MetaGraph, build_metagraph, render_preview
from .pipeline import ProviderMode, RunConfig, run_analysis
from .planner import AnalysisPlan, PlannerConfig, decompose_goal
from .provider import Cassette, CascadePolicy, LlmProvider
from .staging import materialize
from .synthesis import Report, score_insights, synthesize
from .charts import ChartType, select_chart

__version__ = "0.1.0"

__all__ = [
    "AnalysisPlan",
    "Cassette",
    "CascadePolicy",
    "ChartType",
    "ColumnMeta",
    "ColumnProfiler",
    "ConfigError",
    "CrosslensError",
    "ExecutorConfig",
    "FixtureSpec",
    "FixtureSpecError",
    "GroundTruth",
    "IngestionConfig",
    "IngestionError",
    "JoinKeyLinker",
    "LlmProvider",
    "MetaGraph",
    "PlannerConfig",
    "PlanningError",
    "PolicyViolationError",
    "ProviderError",
    "ProviderMode",
    "QueryError",
    "Report",
    "ResultSummary",
    "RunConfig",
    "SimilarityConfig",
    "SourceDescriptor",
    "SourceFormat",
    "UnifiedType",
    "build_entity_graph",
    "build_metagraph",
    "decompose_goal",
    "discover_sources",
    "format_alias",
    "formulate_hints",
    "generate_workspace",
    "load_spec",
    "materialize",
    "parse_alias",
    "render_preview",
    "run_analysis",
    "run_with_selfcorrection",
    "score_insights",
    "select_chart",
    "synthesize",
    "verify_workspace",
]
