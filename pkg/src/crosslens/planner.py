"""Hierarchical planning: goal -> sub-goals -> answerable sub-questions -> follow-ups."""

import json
import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from ._validation import check_positive_int
from .core import parse_alias
from .errors import PlanningError, ProviderError
from .prompts import extract_json
from .staging import staging_names_for_alias

logger = logging.getLogger(__name__)


class NodeKind(str, Enum):
    SUBGOAL = "SUBGOAL"
    SUBQUESTION = "SUBQUESTION"


class NodeStatus(str, Enum):
    PENDING = "PENDING"
    ANSWERED = "ANSWERED"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class PlannerConfig:
    max_questions: int = 3
    branch_depth: int = 3
    samples: int = 1

    def __post_init__(self):
        check_positive_int(self.max_questions, "max_questions")
        check_positive_int(self.branch_depth, "branch_depth")
        check_positive_int(self.samples, "samples")


@dataclass
class PlanNode:
    id: int
    kind: NodeKind
    text: str
    status: NodeStatus = NodeStatus.PENDING
    parent: Optional[int] = None
    depth: int = 0
    answer: object = None

    def settle(self, status, answer=None):
        status = NodeStatus(status)
        if self.status is not NodeStatus.PENDING:
            raise ValueError(f"node {self.id} already settled as {self.status.value}")
        if status is NodeStatus.PENDING:
            raise ValueError("cannot settle a node back to PENDING")
        if answer is not None and self.kind is NodeKind.SUBGOAL:
            raise ValueError("sub-goals never carry answers")
        self.status = status
        self.answer = answer

    def to_dict(self):
        return {
            "depth": self.depth,
            "id": self.id,
            "kind": self.kind.value,
            "parent": self.parent,
            "status": self.status.value,
            "text": self.text,
        }


def question_budget(max_questions, branch_depth):
    return sum(max_questions ** d for d in range(1, branch_depth + 1))


@dataclass
class AnalysisPlan:
    """Tree of sub-goals and sub-questions.

    Sub-goals sit at depth 0; their sub-questions at depth 1; each follow-up
    one level below its parent. The total number of sub-questions never
    exceeds ``sum(max_questions ** d for d in 1..branch_depth)``.
    """

    goal: str
    max_questions: int = 3
    branch_depth: int = 3
    nodes: dict = field(default_factory=dict)

    @property
    def budget(self):
        return question_budget(self.max_questions, self.branch_depth)

    def _next_id(self):
        return max(self.nodes, default=0) + 1

    def children(self, node_id):
        return [n for n in self.nodes.values() if n.parent == node_id]

    def questions(self):
        return [n for n in self.nodes.values() if n.kind is NodeKind.SUBQUESTION]

    def subgoals(self):
        return [n for n in self.nodes.values() if n.kind is NodeKind.SUBGOAL]

    def remaining_budget(self):
        return self.budget - len(self.questions())

    def add_subgoal(self, text):
        if len(self.subgoals()) >= self.max_questions:
            raise ValueError("sub-goal fan-out exceeds max_questions")
        node = PlanNode(self._next_id(), NodeKind.SUBGOAL, text)
        self.nodes[node.id] = node
        return node

    def add_question(self, text, parent_id):
        parent = self.nodes[parent_id]
        depth = parent.depth + 1
        if depth > self.branch_depth:
            raise ValueError(f"depth {depth} exceeds branch_depth {self.branch_depth}")
        if len(self.children(parent_id)) >= self.max_questions:
            raise ValueError(f"node {parent_id} already has {self.max_questions} children")
        if self.remaining_budget() <= 0:
            raise ValueError("sub-question budget exhausted")
        node = PlanNode(self._next_id(), NodeKind.SUBQUESTION, text, parent=parent_id, depth=depth)
        self.nodes[node.id] = node
        return node

    def settle_subgoals(self):
        for goal in self.subgoals():
            if goal.status is not NodeStatus.PENDING:
                continue
            statuses = {c.status for c in self._descendants(goal.id)}
            if NodeStatus.PENDING in statuses:
                continue
            goal.settle(NodeStatus.ANSWERED if NodeStatus.ANSWERED in statuses else NodeStatus.FAILED)

    def _descendants(self, node_id):
        out = []
        for child in self.children(node_id):
            out.append(child)
            out.extend(self._descendants(child.id))
        return out

    def to_dict(self):
        return {
            "branch_depth": self.branch_depth,
            "goal": self.goal,
            "max_questions": self.max_questions,
            "nodes": [self.nodes[i].to_dict() for i in sorted(self.nodes)],
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def next_pending(plan):
    """Earliest PENDING sub-question, skipping those under failed parents."""
    for node_id in sorted(plan.nodes):
        node = plan.nodes[node_id]
        if node.kind is not NodeKind.SUBQUESTION or node.status is not NodeStatus.PENDING:
            continue
        parent = plan.nodes.get(node.parent)
        if parent is not None and parent.kind is NodeKind.SUBQUESTION and parent.status in (
            NodeStatus.FAILED,
            NodeStatus.SKIPPED,
        ):
            node.settle(NodeStatus.SKIPPED)
            continue
        return node
    return None


# -- vocabulary check -----------------------------------------------------


def preview_vocabulary(preview):
    """Column, table and source names mentioned in a MetaGraph preview."""
    vocab = set()
    for line in preview.splitlines():
        alias = line.split(" ", 1)[0]
        try:
            _, source, table, column = parse_alias(alias)
        except ValueError:
            continue
        vocab.update(x.lower() for x in (source, table, column) if x)
        vocab.update(x.lower() for x in staging_names_for_alias(alias))
    return {v for v in vocab if len(v) >= 2}


def is_self_contained(question, vocabulary):
    text = question.lower()
    for name in vocabulary:
        for form in {name, name.replace("_", " ")}:
            if re.search(r"(?<![0-9a-z_])" + re.escape(form) + r"(?![0-9a-z_])", text):
                return True
    return False


# -- prompts ----------------------------------------------------------------

PLAN_SYSTEM = """You are a senior data analyst planning an investigation over several data sources.
Break the goal into logical sub-goals, then break each sub-goal into specific, directly answerable
sub-questions. Every sub-question must be self-contained: name the concrete tables and columns it needs.
Reply with JSON only:
{"subgoals": [{"goal": "<sub-goal>", "questions": ["<sub-question>", ...]}, ...]}"""

FOLLOWUP_SYSTEM = """You are a senior data analyst. Given a sub-question and the observed result,
propose follow-up sub-questions that drill into what the result revealed. Each must be self-contained
and name concrete tables and columns. Reply with JSON only: {"questions": ["<sub-question>", ...]}
Reply {"questions": []} when nothing needs a follow-up."""


def plan_prompt(goal, preview, hints, config):
    return (
        f"### Goal\n{goal}\n\n"
        f"### Data preview\n{preview}\n\n"
        f"### Join hints\n{hints}\n\n"
        f"### Limits\nmax_subgoals: {config.max_questions}\nmax_questions_per_subgoal: {config.max_questions}\n"
    )


def _validate_plan(payload, vocabulary, config):
    data = extract_json(payload)
    subgoals = data.get("subgoals") if isinstance(data, dict) else None
    if not isinstance(subgoals, list) or not subgoals:
        raise ValueError("reply must contain a non-empty 'subgoals' list")
    cleaned = []
    for item in subgoals[: config.max_questions]:
        if not isinstance(item, dict) or not str(item.get("goal", "")).strip():
            raise ValueError("each sub-goal needs a non-empty 'goal'")
        questions = item.get("questions")
        if not isinstance(questions, list) or not questions:
            raise ValueError(f"sub-goal {item['goal']!r} has no questions")
        questions = [str(q).strip() for q in questions[: config.max_questions]]
        for q in questions:
            if not q:
                raise ValueError("empty sub-question")
            if not is_self_contained(q, vocabulary):
                raise ValueError(f"sub-question does not name any table or column from the preview: {q!r}")
        cleaned.append((str(item["goal"]).strip(), questions))
    return cleaned


def decompose_goal(goal, preview, hints, provider, config=None):
    """Ask the provider for a two-level plan; one reprompt on invalid output."""
    config = config or PlannerConfig()
    vocabulary = preview_vocabulary(preview)
    user = plan_prompt(goal, preview, str(hints), config)
    raw = None
    error = None
    for round_ in range(2):
        prompt = user if error is None else f"{user}\n### Previous reply was invalid\n{error}\nReply again with valid JSON.\n"
        best = None
        for i in range(config.samples):
            system = PLAN_SYSTEM if config.samples == 1 else f"{PLAN_SYSTEM}\n(candidate {i + 1} of {config.samples})"
            try:
                raw = provider.complete(provider.request("plan", system, prompt))
            except ProviderError as exc:
                raise PlanningError(f"provider failed while planning: {exc}") from exc
            try:
                candidate = _validate_plan(raw, vocabulary, config)
            except ValueError as exc:
                error = str(exc)
                provider.record_failure("plan")
                continue
            size = sum(len(q) for _, q in candidate)
            if best is None or size > best[0]:
                best = (size, candidate)
        if best is not None:
            provider.record_success("plan")
            plan = AnalysisPlan(goal, config.max_questions, config.branch_depth)
            for goal_text, questions in best[1]:
                parent = plan.add_subgoal(goal_text)
                for q in questions:
                    if plan.remaining_budget() <= 0:
                        break
                    plan.add_question(q, parent.id)
            return plan
    raise PlanningError(f"could not obtain a valid plan: {error}", raw_response=raw)


def followup_prompt(node, result, plan, preview):
    summary = result.to_dict() if hasattr(result, "to_dict") else result
    room = min(plan.max_questions, plan.remaining_budget())
    return (
        f"### Goal\n{plan.goal}\n\n"
        f"### Sub-question\n{node.text}\n\n"
        f"### Data preview\n{preview}\n\n"
        f"### Limits\nmax_questions: {room}\n\n"
        f"### Result\n```json\n{json.dumps(summary, sort_keys=True, default=str)}\n```\n"
    )


def propose_followups(node, result, plan, provider, config=None, preview=""):
    """Follow-up sub-questions for an answered node, attached to the plan.

    The depth and budget bounds are enforced here regardless of what the
    provider returns; provider failures yield an empty list.
    """
    config = config or PlannerConfig()
    if node.status is not NodeStatus.ANSWERED:
        raise ValueError(f"node {node.id} is not answered")
    if node.depth >= plan.branch_depth or plan.remaining_budget() <= 0:
        return []
    try:
        raw = provider.complete(provider.request("followup", FOLLOWUP_SYSTEM, followup_prompt(node, result, plan, preview)))
        data = extract_json(raw)
        questions = data.get("questions", []) if isinstance(data, dict) else []
    except (ProviderError, ValueError) as exc:
        logger.warning("follow-ups for node %d skipped: %s", node.id, exc)
        return []
    vocabulary = preview_vocabulary(preview) if preview else None
    added = []
    for q in questions:
        q = str(q).strip()
        if not q or (vocabulary and not is_self_contained(q, vocabulary)):
            logger.warning("dropping follow-up that is not self-contained: %r", q)
            continue
        if len(added) >= config.max_questions or plan.remaining_budget() <= 0:
            break
        try:
            added.append(plan.add_question(q, node.id))
        except ValueError as exc:
            logger.warning("dropping follow-up: %s", exc)
            break
    return added


__all__ = [
    "AnalysisPlan",
    "NodeKind",
    "NodeStatus",
    "PlanNode",
    "PlannerConfig",
    "decompose_goal",
    "is_self_contained",
    "next_pending",
    "preview_vocabulary",
    "propose_followups",
    "question_budget",
]
