"""Command-line entry point: ``crosslens <command> [flags]``.

Exit codes: 0 success, 1 analysis completed with failed nodes (or a
verification found failing checks), 2 configuration or input error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError, CrosslensError, FixtureSpecError, IngestionError, JudgeError
from .executor import ExecutorConfig
from .fixtures import GroundTruth, demo_paths, generate_workspace, load_spec, verify_workspace
from .ingestion import IngestionConfig, discover_sources
from .linkage import SimilarityConfig, build_entity_graph, formulate_hints
from .metagraph import build_metagraph, render_preview
from .pipeline import PRESETS, ProviderMode, RunConfig, build_provider, run_analysis
from .planner import PlannerConfig
from .provider import CascadePolicy
from .synthesis import LexicalF1Judge, LlmJudge, score_insights

logger = logging.getLogger("crosslens")

EXIT_OK, EXIT_FAILED, EXIT_INPUT = 0, 1, 2

# built-in values applied when neither a flag nor the config file sets one
DEFAULTS = {
    "provider_mode": "OFFLINE",
    "upstream": "OFFLINE",
    "cheap_model": CascadePolicy.cheap_model,
    "strong_model": CascadePolicy.strong_model,
    "theta": SimilarityConfig.theta,
    "k": SimilarityConfig.k,
    "max_retries": ExecutorConfig.max_retries,
    "max_examples": 3,
    "judge": "lexical",
}


class UsageError(ConfigError):
    pass


def _common(p, *names):
    adders = {
        "workspace": lambda: p.add_argument("--workspace", type=Path, help="directory of source files"),
        "out": lambda: p.add_argument("--out", type=Path, help="output directory"),
        "seed": lambda: p.add_argument("--seed", type=int, help="sampling or generation seed"),
        "similarity": lambda: (
            p.add_argument("--theta", type=float, help="edge threshold (default 0.55)"),
            p.add_argument("--wn", type=float, help="name-similarity weight (default 0.6)"),
            p.add_argument("--wv", type=float, help="value-similarity weight (default 0.4)"),
            p.add_argument("--k", type=int, help="number of join hints (default 5)"),
        ),
        "provider": lambda: (
            p.add_argument("--provider-mode", choices=[m.value for m in ProviderMode], type=str.upper),
            p.add_argument("--cassette", type=Path, help="cassette file to replay or record"),
            p.add_argument("--upstream", choices=["LIVE", "OFFLINE"], type=str.upper,
                           help="backend used while recording (default OFFLINE)"),
            p.add_argument("--cheap-model", help="model name for the cheap tier"),
            p.add_argument("--strong-model", help="model name for the strong tier"),
        ),
    }
    for name in names:
        adders[name]()


def build_parser():
    parser = argparse.ArgumentParser(prog="crosslens", description="Cross-source analysis from the command line.")
    parser.add_argument("--config", type=Path, help="JSON file supplying values for flags not given")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", help="print the column catalog preview")
    _common(p, "workspace", "seed")
    p.add_argument("--max-examples", type=int)

    p = sub.add_parser("link", help="print join hints")
    _common(p, "workspace", "seed", "similarity")
    p.add_argument("--dump-graph", type=Path, help="write the entity graph as JSON")

    p = sub.add_parser("analyze", help="run the full analysis and write a report")
    _common(p, "workspace", "out", "seed", "similarity", "provider")
    p.add_argument("--goal", help="analysis goal in natural language")
    p.add_argument("--demo", action="store_true", default=None,
                   help="use the shipped demo workspace and goal, replaying the shipped cassette unless --cassette is given")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--max-retries", type=int)
    p.add_argument("--max-questions", type=int)
    p.add_argument("--branch-depth", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--dump-plan", action="store_true", default=None, help="also print plan.json to stdout")
    p.add_argument("--persist-staging", type=Path, help="save the staging database to this file")

    p = sub.add_parser("synth", help="generate a fixture workspace and its ground truth")
    p.add_argument("--spec", help="fixture spec file or shipped spec name")
    _common(p, "out", "seed")

    p = sub.add_parser("verify", help="check a generated workspace against its ground truth")
    _common(p, "workspace")
    p.add_argument("--ground-truth", type=Path)

    p = sub.add_parser("score", help="score predicted insights against ground-truth statements")
    p.add_argument("--ground-truth", type=Path)
    p.add_argument("--predicted", type=Path)
    p.add_argument("--judge", choices=["lexical", "llm"])
    _common(p, "provider")
    return parser


def _load_config(path):
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except ValueError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a JSON object")
    return {k.replace("-", "_"): v for k, v in data.items()}


def resolve(args):
    """Merge flags over config-file values over built-in defaults."""
    config = _load_config(args.config)
    merged = dict(vars(args))
    for key, value in merged.items():
        if value is None:
            if key in config:
                merged[key] = config[key]
            elif key in DEFAULTS:
                merged[key] = DEFAULTS[key]
    for key in ("workspace", "out", "cassette", "ground_truth", "predicted", "persist_staging", "dump_graph"):
        if merged.get(key) is not None:
            merged[key] = Path(merged[key])
    return argparse.Namespace(**merged)


def _require(args, *names):
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required")


def _similarity(args):
    wn, wv = args.wn, args.wv
    if wn is None and wv is None:
        wn, wv = SimilarityConfig.w_n, SimilarityConfig.w_v
    elif wv is None:
        wv = 1.0 - wn
    elif wn is None:
        wn = 1.0 - wv
    return SimilarityConfig(w_n=wn, w_v=wv, theta=args.theta, k=args.k)


def _ingestion(args):
    return IngestionConfig(seed=IngestionConfig.seed if args.seed is None else args.seed)


def _inside(path, root):
    try:
        Path(path).resolve().relative_to(Path(root).resolve())
        return True
    except ValueError:
        return False


def cmd_inspect(args):
    _require(args, "workspace")
    sources = discover_sources(args.workspace)
    if not sources:
        print("no sources found")
        return EXIT_OK
    graph = build_metagraph(sources, _ingestion(args))
    print(render_preview(graph, max_examples=args.max_examples))
    return EXIT_OK


def cmd_link(args):
    _require(args, "workspace")
    similarity = _similarity(args)
    if args.dump_graph is not None and _inside(args.dump_graph, args.workspace):
        raise UsageError("--dump-graph must not point inside the workspace")
    sources = discover_sources(args.workspace)
    if not sources:
        print("no sources found")
        return EXIT_OK
    entity = build_entity_graph(build_metagraph(sources, _ingestion(args)), similarity)
    print(formulate_hints(entity).rendered)
    if args.dump_graph is not None:
        args.dump_graph.parent.mkdir(parents=True, exist_ok=True)
        args.dump_graph.write_text(entity.to_json(), encoding="utf-8")
    return EXIT_OK


def _apply_demo(args):
    demo = demo_paths()
    args.workspace = args.workspace or demo["workspace"]
    args.goal = args.goal or demo["goal"]
    if args.cassette is None:
        args.cassette = demo["cassette"]
        if args.provider_mode == DEFAULTS["provider_mode"]:
            args.provider_mode = "REPLAY"


def run_config(args):
    if args.demo:
        _apply_demo(args)
    _require(args, "workspace", "out", "goal")
    if _inside(args.out, args.workspace):
        raise UsageError("--out must not be inside the workspace; commands never write to it")
    planner = PlannerConfig(
        args.max_questions or PlannerConfig.max_questions,
        args.branch_depth or PlannerConfig.branch_depth,
        args.samples or PlannerConfig.samples,
    )
    config = RunConfig(
        workspace=args.workspace,
        out_dir=args.out,
        goal=args.goal,
        similarity=_similarity(args),
        planner=planner,
        executor=ExecutorConfig(max_retries=args.max_retries),
        ingestion=_ingestion(args),
        provider_mode=args.provider_mode,
        cassette=args.cassette,
        upstream=args.upstream,
        cheap_model=args.cheap_model,
        strong_model=args.strong_model,
        persist_staging=args.persist_staging,
    )
    if args.preset:
        config = config.with_preset(args.preset)
    overrides = {}
    if any(v is not None for v in (args.max_questions, args.branch_depth, args.samples)):
        p = config.planner
        overrides["planner"] = PlannerConfig(
            args.max_questions or p.max_questions, args.branch_depth or p.branch_depth, args.samples or p.samples
        )
    if args.temperature is not None:
        overrides["temperature"] = args.temperature
    if overrides:
        config = replace(config, **overrides)
    return config


def cmd_analyze(args):
    config = run_config(args)
    outcome = run_analysis(config)
    if args.dump_plan:
        print(outcome.plan.to_json(), end="")
    answered = len(outcome.results)
    total = len(outcome.plan.questions())
    print(f"wrote {config.out_dir / 'report.md'} ({answered}/{total} sub-questions answered)", file=sys.stderr)
    for node in outcome.failed_nodes:
        print(f"failed node {node.id}: {node.text}", file=sys.stderr)
    return outcome.exit_code


def cmd_synth(args):
    _require(args, "spec", "out")
    try:
        spec = load_spec(args.spec)
    except FileNotFoundError as exc:
        raise UsageError(str(exc)) from None
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    workspace = args.out / "workspace"
    truth = generate_workspace(spec, workspace)
    path = truth.save(args.out / "ground_truth.json")
    print(f"wrote workspace {workspace} and {path}")
    for statement in truth.statements():
        print(f"- {statement}")
    return EXIT_OK


def cmd_verify(args):
    _require(args, "workspace", "ground_truth")
    try:
        truth = GroundTruth.load(args.ground_truth)
    except FileNotFoundError:
        raise UsageError(f"ground truth file not found: {args.ground_truth}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"malformed ground truth {args.ground_truth}: {exc}") from None
    report = verify_workspace(args.workspace, truth)
    print(report.render())
    return EXIT_OK if report.passed else EXIT_FAILED


def load_statements(path):
    """Statements from a JSON list, a report or ground-truth JSON, or a text file with one per line."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise UsageError(f"file not found: {path}") from None
    if path.suffix.lower() != ".json":
        return [line.strip() for line in text.splitlines() if line.strip()]
    try:
        data = json.loads(text)
    except ValueError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}") from None
    if isinstance(data, dict):
        data = data.get("insights", data.get("statements", []))
    if not isinstance(data, list):
        raise UsageError(f"{path}: expected a list of statements")
    out = []
    for item in data:
        if isinstance(item, str):
            out.append(item)
        elif isinstance(item, dict) and isinstance(item.get("statement"), str):
            out.append(item["statement"])
        else:
            raise UsageError(f"{path}: cannot read a statement from {item!r}")
    return out


def cmd_score(args):
    _require(args, "ground_truth", "predicted")
    truth = load_statements(args.ground_truth)
    if not truth:
        raise UsageError(f"{args.ground_truth} holds no ground-truth statements")
    predicted = load_statements(args.predicted)
    if args.judge == "llm":
        config = RunConfig(workspace=".", provider_mode=args.provider_mode, cassette=args.cassette,
                           upstream=args.upstream, cheap_model=args.cheap_model, strong_model=args.strong_model)
        judge = LlmJudge(build_provider(config))
    else:
        judge = LexicalF1Judge()
    maxima, mean = score_insights(truth, predicted, judge)
    for statement, best in zip(truth, maxima):
        print(f"{best:.4f}  {statement}")
    print(f"mean: {mean}")
    return EXIT_OK


COMMANDS = {
    "inspect": cmd_inspect,
    "link": cmd_link,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
    "verify": cmd_verify,
    "score": cmd_score,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args = resolve(args)
        return COMMANDS[args.command](args)
    except (ConfigError, IngestionError, FixtureSpecError, FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (CrosslensError, JudgeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
