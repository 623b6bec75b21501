"""End-to-end analysis run: ingest, link, stage, plan, execute, synthesize, write artifacts."""

import logging
import os
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Optional

from .charts import render_chart, select_chart
from .errors import ConfigError
from .executor import ExecutorConfig, run_with_selfcorrection, trail_json
from .ingestion import IngestionConfig, discover_sources
from .linkage import SimilarityConfig, build_entity_graph, formulate_hints
from .metagraph import build_metagraph, render_preview
from .offline import OfflineAnalyst
from .planner import NodeStatus, PlannerConfig, decompose_goal, next_pending, propose_followups
from .provider import (
    API_KEY_ENV,
    BASE_URL_ENV,
    Cassette,
    CascadePolicy,
    CassetteMode,
    HttpChatBackend,
    LlmProvider,
    ProviderConfig,
)
from .staging import materialize
from .synthesis import synthesize

logger = logging.getLogger(__name__)


class ProviderMode(str, Enum):
    LIVE = "LIVE"
    REPLAY = "REPLAY"
    RECORD = "RECORD"
    OFFLINE = "OFFLINE"


PRESETS = {
    "insight-max": {"temperature": 1.0, "max_questions": 4, "branch_depth": 4, "samples": 1},
    "summary-max": {"temperature": 0.3, "max_questions": 3, "branch_depth": 3, "samples": 5},
}

PREVIEW_EXAMPLES = 5


@dataclass
class RunConfig:
    workspace: Path
    out_dir: Optional[Path] = None
    goal: str = ""
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    executor: ExecutorConfig = field(default_factory=ExecutorConfig)
    ingestion: IngestionConfig = field(default_factory=IngestionConfig)
    provider_mode: ProviderMode = ProviderMode.OFFLINE
    cassette: Optional[Path] = None
    upstream: ProviderMode = ProviderMode.OFFLINE
    cheap_model: str = CascadePolicy.cheap_model
    strong_model: str = CascadePolicy.strong_model
    temperature: float = 0.0
    preset: Optional[str] = None
    persist_staging: Optional[Path] = None

    def __post_init__(self):
        self.workspace = Path(self.workspace)
        self.out_dir = Path(self.out_dir) if self.out_dir is not None else None
        self.provider_mode = ProviderMode(self.provider_mode)
        self.upstream = ProviderMode(self.upstream)
        if self.cassette is not None:
            self.cassette = Path(self.cassette)
        if self.provider_mode is ProviderMode.REPLAY:
            if self.cassette is None or not self.cassette.is_file():
                raise ConfigError(f"REPLAY mode needs an existing cassette file, got {self.cassette}")
        if self.provider_mode is ProviderMode.RECORD:
            if self.cassette is None:
                raise ConfigError("RECORD mode needs a --cassette path to write")
            if self.upstream not in (ProviderMode.LIVE, ProviderMode.OFFLINE):
                raise ConfigError("RECORD upstream must be LIVE or OFFLINE")
        live = self.provider_mode is ProviderMode.LIVE or (
            self.provider_mode is ProviderMode.RECORD and self.upstream is ProviderMode.LIVE
        )
        if live:
            for var in (API_KEY_ENV, BASE_URL_ENV):
                if not os.environ.get(var):
                    raise ConfigError(f"LIVE provider mode requires the {var} environment variable")

    def with_preset(self, name):
        """Copy with a named preset's temperature and planner bounds applied."""
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        p = PRESETS[name]
        planner = PlannerConfig(p["max_questions"], p["branch_depth"], p["samples"])
        return replace(self, temperature=p["temperature"], planner=planner, preset=name)


def build_backend(mode):
    if mode is ProviderMode.LIVE:
        return HttpChatBackend.from_env()
    if mode is ProviderMode.OFFLINE:
        return OfflineAnalyst()
    raise ConfigError(f"no backend for mode {mode.value}")


def build_provider(config):
    """Provider for a run; raises ConfigError before any request is made."""
    pconf = ProviderConfig(default_temperature=config.temperature)
    policy = CascadePolicy(cheap_model=config.cheap_model, strong_model=config.strong_model)
    mode = config.provider_mode
    if mode is ProviderMode.REPLAY:
        cassette = Cassette.load(config.cassette, CassetteMode.REPLAY)
        return LlmProvider(None, policy=policy, cassette=cassette, config=pconf)
    if mode is ProviderMode.RECORD:
        cassette = Cassette(mode=CassetteMode.RECORD, path=config.cassette)
        return LlmProvider(build_backend(config.upstream), policy=policy, cassette=cassette, config=pconf)
    return LlmProvider(build_backend(mode), policy=policy, config=pconf)


@dataclass
class AnalysisOutcome:
    plan: object
    report: object
    results: dict
    charts: dict
    trails: dict
    out_dir: Path
    hints: object

    @property
    def failed_nodes(self):
        return [n for n in self.plan.questions() if n.status is NodeStatus.FAILED]

    @property
    def exit_code(self):
        return 1 if self.failed_nodes else 0


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def run_analysis(config, provider=None):
    """Run every stage and write report.md, report.json, plan.json, charts/ and trace/."""
    if not config.goal.strip():
        raise ConfigError("an analysis goal is required")
    if config.out_dir is None:
        raise ConfigError("an output directory is required")
    provider = provider or build_provider(config)
    sources = discover_sources(config.workspace)
    if not sources:
        raise ConfigError(f"no sources found in {config.workspace}")
    graph = build_metagraph(sources, config.ingestion, provider=provider)
    hints = formulate_hints(build_entity_graph(graph, config.similarity))
    preview = render_preview(graph, max_examples=PREVIEW_EXAMPLES)
    out = config.out_dir
    store = materialize(sources, graph)
    try:
        if config.persist_staging is not None:
            store.persist(config.persist_staging)
        plan = decompose_goal(config.goal, preview, hints, provider, config.planner)
        results, charts, trails, chart_paths = {}, {}, {}, {}
        while (node := next_pending(plan)) is not None:
            summary, trail = run_with_selfcorrection(node, store, hints, provider, config.executor)
            trails[node.id] = trail
            _write(out / "trace" / f"{node.id}.json", trail_json(node, trail))
            if summary is None:
                node.settle(NodeStatus.FAILED)
                continue
            node.settle(NodeStatus.ANSWERED, summary)
            results[node.id] = summary
            spec = select_chart(summary, node.text)
            charts[node.id] = spec
            rel = f"charts/{node.id}.svg"
            render_chart(spec, summary, out / rel)
            chart_paths[node.id] = rel
            propose_followups(node, summary, plan, provider, config.planner, preview)
    finally:
        store.close()
    plan.settle_subgoals()
    report = synthesize(plan, results, charts, provider, chart_paths=chart_paths)
    _write(out / "plan.json", plan.to_json())
    _write(out / "report.json", report.to_json())
    _write(out / "report.md", report.to_markdown())
    if provider.cassette is not None and provider.cassette.mode is CassetteMode.RECORD:
        provider.cassette.save()
    return AnalysisOutcome(plan, report, results, charts, trails, out, hints)
