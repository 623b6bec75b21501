"""Language-model boundary: request types, cascade routing, cassettes and backends.

Every stage talks to a model through :class:`LlmProvider`. The provider picks a
model tier per request (cheap by default, strong after repeated failures or for
tags that always need it), looks the request up in a cassette when replaying,
and otherwise forwards it to a backend.
"""

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import httpx

from ._validation import check_positive_int
from .errors import (
    ConfigError,
    ProviderError,
    ReplayMissError,
    TokenLimitError,
    TransportError,
)

logger = logging.getLogger(__name__)

MAX_TEMPERATURE = 2.0
MAX_TOKENS_LIMIT = 32768

API_KEY_ENV = "LLM_API_KEY"
BASE_URL_ENV = "LLM_BASE_URL"


class Tier(str, Enum):
    CHEAP = "CHEAP"
    STRONG = "STRONG"


class CassetteMode(str, Enum):
    RECORD = "RECORD"
    REPLAY = "REPLAY"


@dataclass(frozen=True)
class LlmRequest:
    request_tag: str
    system_prompt: str
    user_prompt: str
    temperature: float = 0.0
    max_tokens: int = 1024
    tier_hint: Tier = Tier.CHEAP

    def __post_init__(self):
        if not 0.0 <= self.temperature <= MAX_TEMPERATURE:
            raise ConfigError(f"temperature must lie in [0, {MAX_TEMPERATURE}], got {self.temperature}")
        if not 1 <= self.max_tokens <= MAX_TOKENS_LIMIT:
            raise ConfigError(f"max_tokens must lie in [1, {MAX_TOKENS_LIMIT}], got {self.max_tokens}")
        object.__setattr__(self, "tier_hint", Tier(self.tier_hint))


@dataclass(frozen=True)
class CascadePolicy:
    cheap_model: str = "cheap-model"
    strong_model: str = "strong-model"
    escalation_failure_count: int = 2
    always_strong_tags: frozenset = frozenset({"report"})
    max_context_tokens: int = 128_000

    def __post_init__(self):
        check_positive_int(self.escalation_failure_count, "escalation_failure_count")
        object.__setattr__(self, "always_strong_tags", frozenset(self.always_strong_tags))

    def model_for(self, tier):
        return self.strong_model if tier is Tier.STRONG else self.cheap_model


@dataclass(frozen=True)
class RouteRecord:
    request_tag: str
    tier: Tier
    model: str
    fingerprint: str


class CascadeSession:
    """Per-run routing state: consecutive failures and escalations per tag."""

    def __init__(self):
        self._lock = threading.Lock()
        self._failures = {}
        self._escalated = set()
        self.log = []

    def resolve_tier(self, request, policy):
        with self._lock:
            if request.request_tag in policy.always_strong_tags or request.tier_hint is Tier.STRONG:
                return Tier.STRONG
            if request.request_tag in self._escalated:
                return Tier.STRONG
            if self._failures.get(request.request_tag, 0) >= policy.escalation_failure_count:
                self._escalated.add(request.request_tag)
                return Tier.STRONG
            return Tier.CHEAP

    def record_failure(self, tag):
        with self._lock:
            self._failures[tag] = self._failures.get(tag, 0) + 1

    def record_success(self, tag):
        # escalation is sticky; only the consecutive counter resets
        with self._lock:
            self._failures[tag] = 0

    def failures(self, tag):
        with self._lock:
            return self._failures.get(tag, 0)

    def is_escalated(self, tag):
        with self._lock:
            return tag in self._escalated

    def append(self, record):
        with self._lock:
            self.log.append(record)

    def reset(self):
        with self._lock:
            self._failures.clear()
            self._escalated.clear()
            self.log.clear()


def _normalize_prompt(text):
    lines = [line.rstrip() for line in text.replace("\r\n", "\n").split("\n")]
    return "\n".join(lines).strip()


def fingerprint(request, model):
    """Stable sha256 digest identifying ``request`` sent to ``model``."""
    payload = {
        "model": model,
        "request_tag": request.request_tag,
        "system_prompt": _normalize_prompt(request.system_prompt),
        "temperature": float(request.temperature),
        "user_prompt": _normalize_prompt(request.user_prompt),
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def estimate_tokens(text):
    return (len(text) + 3) // 4


class Cassette:
    """Recorded request/response exchanges keyed by request fingerprint."""

    def __init__(self, entries=None, mode=CassetteMode.REPLAY, path=None):
        self.mode = CassetteMode(mode)
        self.path = Path(path) if path is not None else None
        self.entries = list(entries or [])
        self._index = {e["fingerprint"]: e for e in self.entries}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path, mode=CassetteMode.REPLAY):
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"cassette not found: {path}")
        data = json.loads(path.read_text(encoding="utf-8"))
        return cls(data.get("entries", []), mode=mode, path=path)

    def lookup(self, fp):
        with self._lock:
            entry = self._index.get(fp)
        if entry is None:
            raise ReplayMissError(fp)
        return entry["response"]

    def __contains__(self, fp):
        return fp in self._index

    def __len__(self):
        return len(self.entries)

    def record(self, fp, request, model, response):
        with self._lock:
            if fp in self._index:
                return
            entry = {
                "fingerprint": fp,
                "model": model,
                "request_tag": request.request_tag,
                "response": response,
            }
            self.entries.append(entry)
            self._index[fp] = entry

    def to_json(self):
        return json.dumps({"entries": self.entries, "version": 1}, indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    def save(self, path=None):
        path = Path(path or self.path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json(), encoding="utf-8")
        return path


class HttpChatBackend:
    """OpenAI-compatible chat-completion client with retry and backoff."""

    def __init__(self, base_url, api_key, timeout=60.0, max_retries=3, backoff=1.0, transport=None, sleep=time.sleep):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.max_retries = max_retries
        self.backoff = backoff
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs):
        api_key = os.environ.get(API_KEY_ENV)
        base_url = os.environ.get(BASE_URL_ENV)
        if not api_key:
            raise ConfigError(f"live provider mode requires the {API_KEY_ENV} environment variable")
        if not base_url:
            raise ConfigError(f"live provider mode requires the {BASE_URL_ENV} environment variable")
        return cls(base_url, api_key, **kwargs)

    def __call__(self, model, request):
        body = {
            "model": model,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        headers = {"Authorization": f"Bearer {self.api_key}"}
        last_error = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(f"{self.base_url}/chat/completions", json=body, headers=headers)
            except httpx.TransportError as exc:
                last_error = f"{type(exc).__name__}: {exc}"
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = f"HTTP {resp.status_code}"
                continue
            if resp.status_code >= 400:
                raise ProviderError(f"chat endpoint returned HTTP {resp.status_code}: {resp.text[:200]}")
            choice = resp.json()["choices"][0]
            if choice.get("finish_reason") == "length":
                raise TokenLimitError(f"response truncated at max_tokens={request.max_tokens}")
            return choice["message"]["content"]
        raise TransportError(f"chat endpoint failed after {self.max_retries} retries: {last_error}")


class ScriptedBackend:
    """Return canned responses per request tag, in order.

    ``script`` maps a tag to a list of responses; an item that is an
    exception instance is raised instead of returned. Handy for building
    cassettes that exercise failure paths.
    """

    def __init__(self, script, default=None):
        self._script = {tag: list(items) for tag, items in script.items()}
        self._default = default
        self.calls = []

    def __call__(self, model, request):
        self.calls.append((model, request))
        queue = self._script.get(request.request_tag)
        if queue:
            item = queue.pop(0)
        elif self._default is not None:
            item = self._default(model, request) if callable(self._default) else self._default
        else:
            raise ProviderError(f"script exhausted for tag {request.request_tag!r}")
        if isinstance(item, BaseException):
            raise item
        return item


def complete(request, policy, session, backend=None, cassette=None):
    """Route ``request`` to a tier and return ``(text, route)``.

    In replay mode the backend is never called.
    """
    tier = session.resolve_tier(request, policy)
    model = policy.model_for(tier)
    fp = fingerprint(request, model)
    needed = estimate_tokens(request.system_prompt) + estimate_tokens(request.user_prompt) + request.max_tokens
    if needed > policy.max_context_tokens:
        raise TokenLimitError(f"request needs ~{needed} tokens, limit is {policy.max_context_tokens}")
    route = RouteRecord(request.request_tag, tier, model, fp)
    session.append(route)
    if cassette is not None and cassette.mode is CassetteMode.REPLAY:
        return cassette.lookup(fp), route
    if backend is None:
        raise ProviderError("no backend configured")
    text = backend(model, request)
    if cassette is not None:
        cassette.record(fp, request, model, text)
    return text, route


@dataclass
class ProviderConfig:
    """Per-tag sampling settings."""

    default_temperature: float = 0.0
    temperatures: dict = field(default_factory=dict)
    max_tokens: dict = field(default_factory=dict)
    default_max_tokens: int = 1024

    def temperature_for(self, tag):
        return float(self.temperatures.get(tag, self.default_temperature))

    def max_tokens_for(self, tag):
        return int(self.max_tokens.get(tag, self.default_max_tokens))


class LlmProvider:
    """Facade bundling a backend, an optional cassette and the cascade state."""

    def __init__(self, backend=None, policy=None, session=None, cassette=None, config=None):
        if backend is None and (cassette is None or cassette.mode is not CassetteMode.REPLAY):
            raise ConfigError("a backend is required unless replaying a cassette")
        self.backend = backend
        self.policy = policy or CascadePolicy()
        self.session = session or CascadeSession()
        self.cassette = cassette
        self.config = config or ProviderConfig()

    def request(self, tag, system_prompt, user_prompt, tier_hint=Tier.CHEAP):
        return LlmRequest(
            request_tag=tag,
            system_prompt=system_prompt,
            user_prompt=user_prompt,
            temperature=self.config.temperature_for(tag),
            max_tokens=self.config.max_tokens_for(tag),
            tier_hint=tier_hint,
        )

    def complete_routed(self, request):
        return complete(request, self.policy, self.session, self.backend, self.cassette)

    def complete(self, request):
        return self.complete_routed(request)[0]

    def ask(self, tag, system_prompt, user_prompt):
        return self.complete(self.request(tag, system_prompt, user_prompt))

    def record_failure(self, tag):
        self.session.record_failure(tag)

    def record_success(self, tag):
        self.session.record_success(tag)
