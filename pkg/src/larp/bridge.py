"""Backend-agnostic LLM access.

Every pipeline stage talks to a model through :class:`LLMBridge`, tagging the
request with its role. The role tag routes to a configured model name, which
is how a cluster of specialised models is simulated without running any model
in-process. Two backends exist: a scripted transcript replayer used by every
test and scenario, and an HTTP chat-completion client for live use.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import httpx

from .errors import (
    BackendRejected,
    BackendTimeout,
    BackendUnreachable,
    BridgeError,
    TranscriptExhausted,
)

logger = logging.getLogger(__name__)

ROLE_TAGS = frozenset(
    {
        "self_ask",
        "logic_gen",
        "keyword_extract",
        "cot_answer",
        "reconstruct",
        "importance",
        "unit_order",
        "intent",
        "format",
        "decompose",
        "codegen",
        "reflect_code",
        "conflict",
        "qa_gen",
        "reflect_memory",
    }
)
SPEAKERS = frozenset({"system", "user", "assistant"})

TRANSCRIPT_MAGIC = "#larp-transcript v1"


@dataclass(frozen=True)
class Message:
    speaker: str
    text: str

    def __post_init__(self):
        if self.speaker not in SPEAKERS:
            raise ValueError(f"unknown speaker {self.speaker!r}")


@dataclass(frozen=True)
class ChatRequest:
    role_tag: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role tag {self.role_tag!r}")
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        object.__setattr__(self, "messages", tuple(self.messages))
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")

    @property
    def last_user_text(self) -> str:
        for m in reversed(self.messages):
            if m.speaker == "user":
                return m.text
        return ""

    @property
    def prompt_text(self) -> str:
        return "\n\n".join(m.text for m in self.messages)


@dataclass(frozen=True)
class ChatResponse:
    text: str
    backend_id: str
    prompt_tokens: int = 0
    response_tokens: int = 0


@dataclass
class BackendConfig:
    """How to reach a model. ``models`` maps role tag (or ``"default"``) to a model name."""

    kind: str = "scripted"
    models: dict[str, str] = field(default_factory=dict)
    endpoint: str | None = None
    auth_token: str | None = None
    transcript_path: str | None = None
    timeout: float = 30.0
    max_retries: int = 2
    temperatures: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("scripted", "http"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "scripted" and not self.transcript_path:
            raise ValueError("scripted backend requires a transcript path")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def model_for(self, role_tag: str) -> str:
        return self.models.get(role_tag) or self.models.get("default") or "default"

    def temperature_for(self, role_tag: str) -> float:
        return float(self.temperatures.get(role_tag, self.temperatures.get("default", 0.0)))


class Backend(Protocol):
    def complete(self, request: ChatRequest, model: str) -> ChatResponse: ...


def _count_tokens(text: str) -> int:
    return len(text.split())


# ---------------------------------------------------------------------------
# scripted transcript replay


@dataclass
class TranscriptEntry:
    role_tag: str
    reply: str
    match: str | None = None
    times: int = 1  # 0 = never exhausted

    def matches(self, request: ChatRequest) -> bool:
        if self.role_tag != request.role_tag:
            return False
        return self.match is None or self.match in request.last_user_text


def parse_transcript(text: str, source: str = "<transcript>") -> list[TranscriptEntry]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != TRANSCRIPT_MAGIC:
        raise BridgeError(f"{source}: first line must be {TRANSCRIPT_MAGIC!r}")
    entries = []
    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise BridgeError(f"{source}:{lineno}: invalid record: {exc}") from None
        if not isinstance(obj, dict):
            raise BridgeError(f"{source}:{lineno}: record must be an object")
        unknown = set(obj) - {"role", "match", "reply", "times"}
        if unknown:
            raise BridgeError(f"{source}:{lineno}: unknown fields {sorted(unknown)}")
        role = obj.get("role")
        if role not in ROLE_TAGS:
            raise BridgeError(f"{source}:{lineno}: unknown role {role!r}")
        reply = obj.get("reply")
        if not isinstance(reply, str):
            raise BridgeError(f"{source}:{lineno}: reply must be a string")
        match = obj.get("match")
        if match is not None and not isinstance(match, str):
            raise BridgeError(f"{source}:{lineno}: match must be a string or null")
        times = obj.get("times", 1)
        if not isinstance(times, int) or isinstance(times, bool) or times < 0:
            raise BridgeError(f"{source}:{lineno}: times must be an integer >= 0")
        entries.append(TranscriptEntry(role, reply, match, times))
    return entries


def format_transcript(entries: list[TranscriptEntry]) -> str:
    out = [TRANSCRIPT_MAGIC]
    for e in entries:
        rec: dict = {"role": e.role_tag}
        if e.match is not None:
            rec["match"] = e.match
        rec["reply"] = e.reply
        if e.times != 1:
            rec["times"] = e.times
        out.append(json.dumps(rec, ensure_ascii=False))
    return "\n".join(out) + "\n"


class ScriptedBackend:
    """Replays canned replies. Entries are consumed in file order among those that match."""

    def __init__(self, entries: list[TranscriptEntry]):
        self.entries = list(entries)
        self._used = [0] * len(self.entries)
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "ScriptedBackend":
        p = Path(path)
        return cls(parse_transcript(p.read_text(encoding="utf-8"), source=str(p)))

    def complete(self, request: ChatRequest, model: str) -> ChatResponse:
        with self._lock:
            for i, entry in enumerate(self.entries):
                if entry.times and self._used[i] >= entry.times:
                    continue
                if entry.matches(request):
                    self._used[i] += 1
                    return ChatResponse(
                        text=entry.reply,
                        backend_id=f"scripted:{model}",
                        prompt_tokens=_count_tokens(request.prompt_text),
                        response_tokens=_count_tokens(entry.reply),
                    )
        snippet = request.last_user_text.strip().splitlines()[:1]
        raise TranscriptExhausted(request.role_tag, snippet[0][:80] if snippet else "")

    def remaining(self) -> int:
        return sum(
            e.times - u for e, u in zip(self.entries, self._used) if e.times
        )

    # consumption state travels with save bundles so split runs resume exactly
    def get_state(self) -> list[int]:
        return list(self._used)

    def set_state(self, used: list[int]) -> None:
        if len(used) != len(self.entries):
            raise BridgeError("transcript state does not match the loaded transcript")
        self._used = list(used)


# ---------------------------------------------------------------------------
# HTTP chat-completion client


class HttpBackend:
    """Chat-completion client with exponential backoff on transport errors, 429 and 5xx."""

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        timeout: float = 30.0,
        max_retries: int = 2,
        backoff_base: float = 0.5,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.auth_token = auth_token
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._sleep = sleep
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def _payload(self, request: ChatRequest, model: str) -> dict:
        body = {
            "model": model,
            "messages": [{"role": m.speaker, "content": m.text} for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        if request.seed is not None:
            body["seed"] = request.seed
        return body

    def complete(self, request: ChatRequest, model: str) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        payload = self._payload(request, model)
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                self._sleep(self.backoff_base * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.endpoint, json=payload, headers=headers)
            except httpx.TimeoutException as exc:
                last_exc = BackendTimeout(f"request timed out after {self.timeout}s")
                logger.warning("llm timeout (attempt %d): %s", attempt + 1, exc)
                continue
            except httpx.TransportError as exc:
                last_exc = BackendUnreachable(str(exc) or type(exc).__name__)
                logger.warning("llm transport error (attempt %d): %s", attempt + 1, exc)
                continue
            if resp.status_code == 429 or resp.status_code >= 500:
                last_exc = BackendRejected(resp.status_code, resp.text)
                logger.warning("llm http %d (attempt %d)", resp.status_code, attempt + 1)
                continue
            if not 200 <= resp.status_code < 300:
                raise BackendRejected(resp.status_code, resp.text)
            try:
                data = resp.json()
                text = data["choices"][0]["message"].get("content") or ""
            except (ValueError, KeyError, IndexError, TypeError, AttributeError):
                raise BackendRejected(resp.status_code, "malformed response body") from None
            usage = data.get("usage") or {}
            return ChatResponse(
                text=text,
                backend_id=f"http:{model}",
                prompt_tokens=int(usage.get("prompt_tokens", 0) or 0),
                response_tokens=int(usage.get("completion_tokens", 0) or 0),
            )
        assert last_exc is not None
        raise last_exc

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Exchange:
    request: ChatRequest
    response: ChatResponse


class LLMBridge:
    """Routes role-tagged requests to a backend and keeps per-role call counts."""

    def __init__(self, backend: Backend, config: BackendConfig | None = None):
        self.backend = backend
        self.config = config
        self._counts: Counter[str] = Counter()
        self.history: list[Exchange] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        model = self.config.model_for(request.role_tag) if self.config else "default"
        response = self.backend.complete(request, model)
        with self._lock:
            self._counts[request.role_tag] += 1
            self.history.append(Exchange(request, response))
        logger.debug("llm %s -> %r", request.role_tag, response.text[:80])
        return response

    def ask(self, role_tag: str, user: str, system: str | None = None, **kwargs) -> str:
        messages = []
        if system:
            messages.append(Message("system", system))
        messages.append(Message("user", user))
        if "temperature" not in kwargs and self.config is not None:
            kwargs["temperature"] = self.config.temperature_for(role_tag)
        return self.complete(ChatRequest(role_tag, tuple(messages), **kwargs)).text

    def call_count(self, role_tag: str) -> int:
        return self._counts[role_tag]

    def prompts_for(self, role_tag: str) -> list[str]:
        return [ex.request.prompt_text for ex in self.history if ex.request.role_tag == role_tag]


def build_bridge(config: BackendConfig, base_dir: str | os.PathLike | None = None) -> LLMBridge:
    if config.kind == "scripted":
        path = Path(config.transcript_path)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return LLMBridge(ScriptedBackend.from_file(path), config)
    token = config.auth_token or os.environ.get("LARP_LLM_TOKEN")
    backend = HttpBackend(
        config.endpoint, token, timeout=config.timeout, max_retries=config.max_retries
    )
    return LLMBridge(backend, config)


def scripted_bridge(entries: list[TranscriptEntry] | str) -> LLMBridge:
    """Convenience for tests: build a bridge from entries or transcript text."""
    if isinstance(entries, str):
        entries = parse_transcript(entries)
    return LLMBridge(ScriptedBackend(entries))
