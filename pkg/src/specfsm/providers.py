"""LLM provider clients, replay fixtures and token/latency accounting.

All real providers speak the OpenAI-compatible chat-completions wire format.
The replay provider serves stored responses keyed by the SHA-256 of the
prompt so tests and fixture runs never touch the network.
"""

from __future__ import annotations

import json
import logging
import os
import random
import threading
import time
from collections import defaultdict
from contextlib import ExitStack
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import httpx

from .errors import AuthFailure, FixtureMiss, ProviderError, ProviderUnavailable, Timeout
from .prompting import PromptBundle

log = logging.getLogger(__name__)

DEFAULT_TEMPERATURE = 0.2
DEFAULT_MAX_RETRIES = 4
BACKOFF_BASE = 1.0
BACKOFF_FACTOR = 2.0
BACKOFF_JITTER = 0.2

_RETRY_STATUS = {408, 409, 425, 429}


@dataclass(frozen=True)
class ProviderConfig:
    name: str
    endpoint_url: str = ""
    model_id: str = ""
    api_key_env: str = ""
    temperature: float = DEFAULT_TEMPERATURE
    max_retries: int = DEFAULT_MAX_RETRIES
    timeout_seconds: float = 120.0

    def __post_init__(self):
        if not self.name:
            raise ValueError("provider name must not be empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 1]")
        if self.timeout_seconds <= 0:
            raise ValueError("timeout_seconds must be positive")

    @classmethod
    def from_dict(cls, data: dict) -> "ProviderConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in data.items() if k in known})


@dataclass(frozen=True)
class LlmExchange:
    provider: str
    prompt_sha256: str
    response_text: str
    input_tokens: int
    output_tokens: int
    latency_ms: int
    attempt: int
    phase: str = ""
    window_id: int = -1
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "LlmExchange":
        return cls(**data)


class ExchangeLog:
    """Append-only exchange sink, optionally mirrored to a JSON Lines file."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self.records: list[LlmExchange] = []
        self._lock = threading.Lock()

    def append(self, exchange: LlmExchange) -> None:
        with self._lock:
            self.records.append(exchange)
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(exchange.to_json() + "\n")


def read_exchange_log(path: str | Path) -> list[LlmExchange]:
    with open(path, encoding="utf-8") as fh:
        return [LlmExchange.from_dict(json.loads(line)) for line in fh if line.strip()]


def _whitespace_tokens(text: str) -> int:
    return len(text.split())


class Provider:
    """Base class: subclasses implement ``_complete``; logging lives here."""

    name: str

    def complete(self, bundle: PromptBundle, log_sink: ExchangeLog | None = None) -> LlmExchange:
        try:
            exchange = self._complete(bundle)
        except ProviderError as exc:
            if exc.exchange is None:
                exc.exchange = self._failed(bundle, type(exc).__name__)
            if log_sink is not None:
                log_sink.append(exc.exchange)
            raise
        if log_sink is not None:
            log_sink.append(exchange)
        return exchange

    def _complete(self, bundle: PromptBundle) -> LlmExchange:
        raise NotImplementedError

    def _failed(self, bundle: PromptBundle, error: str, attempt: int = 1, latency_ms: int = 0):
        return LlmExchange(
            provider=self.name,
            prompt_sha256=bundle.sha256,
            response_text="",
            input_tokens=0,
            output_tokens=0,
            latency_ms=latency_ms,
            attempt=attempt,
            phase=bundle.phase.value,
            window_id=bundle.window_id,
            error=error,
        )


class ChatCompletionsProvider(Provider):
    """OpenAI-compatible ``/chat/completions`` client with retry and backoff."""

    def __init__(
        self,
        cfg: ProviderConfig,
        *,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self.cfg = cfg
        self.name = cfg.name
        self._transport = transport
        self._sleep = sleep
        self._rng = rng or random.Random()

    @property
    def url(self) -> str:
        url = self.cfg.endpoint_url.rstrip("/")
        return url if url.endswith("/chat/completions") else url + "/chat/completions"

    def backoff(self, attempt: int) -> float:
        jitter = self._rng.uniform(1 - BACKOFF_JITTER, 1 + BACKOFF_JITTER)
        return BACKOFF_BASE * BACKOFF_FACTOR ** (attempt - 1) * jitter

    def _complete(self, bundle: PromptBundle) -> LlmExchange:
        key = os.environ.get(self.cfg.api_key_env, "") if self.cfg.api_key_env else ""
        if not key:
            raise AuthFailure(
                f"{self.name}: environment variable {self.cfg.api_key_env or '<unset>'} is empty"
            )
        payload = {
            "model": self.cfg.model_id,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": bundle.user_text},
            ],
            "temperature": self.cfg.temperature,
        }
        headers = {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

        started = time.monotonic()

        def elapsed() -> int:
            return int((time.monotonic() - started) * 1000)

        last_error: ProviderError | None = None
        attempts = self.cfg.max_retries + 1
        with httpx.Client(timeout=self.cfg.timeout_seconds, transport=self._transport) as client:
            for attempt in range(1, attempts + 1):
                if attempt > 1:
                    self._sleep(self.backoff(attempt - 1))
                try:
                    resp = client.post(self.url, json=payload, headers=headers)
                except httpx.TimeoutException as exc:
                    last_error = Timeout(f"{self.name}: request timed out ({exc})")
                    log.warning("%s attempt %d timed out", self.name, attempt)
                    continue
                except httpx.TransportError as exc:
                    last_error = ProviderUnavailable(f"{self.name}: transport error {exc!r}")
                    log.warning("%s attempt %d transport error: %s", self.name, attempt, exc)
                    continue

                if resp.status_code in (401, 403):
                    raise AuthFailure(
                        f"{self.name}: HTTP {resp.status_code}",
                        self._failed(bundle, f"AuthFailure: HTTP {resp.status_code}", attempt, elapsed()),
                    )
                if resp.status_code >= 500 or resp.status_code in _RETRY_STATUS:
                    last_error = ProviderUnavailable(f"{self.name}: HTTP {resp.status_code}")
                    log.warning("%s attempt %d got HTTP %d", self.name, attempt, resp.status_code)
                    continue
                if resp.status_code >= 400:
                    raise ProviderUnavailable(
                        f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}",
                        self._failed(bundle, f"HTTP {resp.status_code}", attempt, elapsed()),
                    )

                try:
                    body = resp.json()
                    text = body["choices"][0]["message"]["content"] or ""
                except (ValueError, KeyError, IndexError, TypeError) as exc:
                    raise ProviderUnavailable(
                        f"{self.name}: unexpected response body ({exc!r})",
                        self._failed(bundle, "BadResponse", attempt, elapsed()),
                    ) from exc
                usage = body.get("usage") or {}
                return LlmExchange(
                    provider=self.name,
                    prompt_sha256=bundle.sha256,
                    response_text=text,
                    input_tokens=int(usage.get("prompt_tokens", _whitespace_tokens(bundle.prompt_text))),
                    output_tokens=int(usage.get("completion_tokens", _whitespace_tokens(text))),
                    latency_ms=elapsed(),
                    attempt=attempt,
                    phase=bundle.phase.value,
                    window_id=bundle.window_id,
                )

        assert last_error is not None
        last_error.exchange = self._failed(bundle, type(last_error).__name__, attempts, elapsed())
        raise last_error


class ReplayProvider(Provider):
    """Serves ``{fixture_dir}/{prompt_sha256}.json`` instead of calling a model."""

    def __init__(self, fixture_dir: str | Path, name: str = "replay"):
        self.fixture_dir = Path(fixture_dir)
        self.name = name

    def fixture_path(self, sha: str) -> Path:
        return self.fixture_dir / f"{sha}.json"

    def _complete(self, bundle: PromptBundle) -> LlmExchange:
        sha = bundle.sha256
        path = self.fixture_path(sha)
        if not path.is_file():
            raise FixtureMiss(sha, str(path), self._failed(bundle, f"FixtureMiss: {sha}"))
        data = json.loads(path.read_text(encoding="utf-8"))
        text = data["response_text"]
        return LlmExchange(
            provider=self.name,
            prompt_sha256=sha,
            response_text=text,
            input_tokens=int(data.get("input_tokens", _whitespace_tokens(bundle.prompt_text))),
            output_tokens=int(data.get("output_tokens", _whitespace_tokens(text))),
            latency_ms=0,
            attempt=1,
            phase=bundle.phase.value,
            window_id=bundle.window_id,
        )


class RecordingProvider(Provider):
    """Wraps another provider and stores each response as a replay fixture."""

    def __init__(self, inner: Provider, fixture_dir: str | Path):
        self.inner = inner
        self.name = inner.name
        self.fixture_dir = Path(fixture_dir)
        self.fixture_dir.mkdir(parents=True, exist_ok=True)

    def _complete(self, bundle: PromptBundle) -> LlmExchange:
        exchange = self.inner._complete(bundle)
        record = {
            "response_text": exchange.response_text,
            "input_tokens": exchange.input_tokens,
            "output_tokens": exchange.output_tokens,
        }
        path = self.fixture_dir / f"{exchange.prompt_sha256}.json"
        path.write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return exchange


class CallbackProvider(Provider):
    """Answers prompts with a Python function; handy for tests and fixture authoring."""

    def __init__(self, name: str, respond: Callable[[PromptBundle], str]):
        self.name = name
        self.respond = respond

    def _complete(self, bundle: PromptBundle) -> LlmExchange:
        text = self.respond(bundle)
        return LlmExchange(
            provider=self.name,
            prompt_sha256=bundle.sha256,
            response_text=text,
            input_tokens=_whitespace_tokens(bundle.prompt_text),
            output_tokens=_whitespace_tokens(text),
            latency_ms=0,
            attempt=1,
            phase=bundle.phase.value,
            window_id=bundle.window_id,
        )


class Limiter:
    """Global and per-provider caps on in-flight calls."""

    def __init__(self, global_cap: int = 4, per_provider_cap: int = 2):
        self._global = threading.BoundedSemaphore(global_cap)
        self._per_cap = per_provider_cap
        self._per: dict[str, threading.BoundedSemaphore] = {}
        self._lock = threading.Lock()

    def _provider_sem(self, name: str) -> threading.BoundedSemaphore:
        with self._lock:
            if name not in self._per:
                self._per[name] = threading.BoundedSemaphore(self._per_cap)
            return self._per[name]

    def call(self, provider: Provider, bundle: PromptBundle, log_sink: ExchangeLog | None = None):
        with ExitStack() as stack:
            stack.enter_context(self._provider_sem(provider.name))
            stack.enter_context(self._global)
            return provider.complete(bundle, log_sink)


def make_provider(cfg: ProviderConfig, replay_dir: str | Path | None = None, **kwargs) -> Provider:
    """Real client for ``cfg``, or a replay provider reading ``replay_dir``.

    A per-provider subdirectory ``replay_dir/<name>`` is used when present so
    one fixture tree can hold several simulated models.
    """
    if replay_dir is not None:
        base = Path(replay_dir)
        sub = base / cfg.name
        return ReplayProvider(sub if sub.is_dir() else base, name=cfg.name)
    return ChatCompletionsProvider(cfg, **kwargs)


def replay_provider(fixture_dir: str | Path, name: str = "replay") -> ReplayProvider:
    return ReplayProvider(fixture_dir, name)


def complete(
    cfg: ProviderConfig,
    bundle: PromptBundle,
    log_sink: ExchangeLog | None = None,
    **kwargs,
) -> LlmExchange:
    """Send ``bundle`` to the provider described by ``cfg``."""
    return ChatCompletionsProvider(cfg, **kwargs).complete(bundle, log_sink)


# ---------------------------------------------------------------- costs


@dataclass(frozen=True)
class CostRow:
    provider: str
    input_tokens: int
    output_tokens: int
    wall_minutes: float
    calls: int = 0


def cost_report(exchanges: Iterable[LlmExchange]) -> list[CostRow]:
    totals: dict[str, list[int]] = defaultdict(lambda: [0, 0, 0, 0])
    for ex in exchanges:
        row = totals[ex.provider]
        row[0] += ex.input_tokens
        row[1] += ex.output_tokens
        row[2] += ex.latency_ms
        row[3] += 1
    return [
        CostRow(name, inp, out, latency / 60000.0, calls)
        for name, (inp, out, latency, calls) in sorted(totals.items())
    ]


def format_cost_table(rows: list[CostRow]) -> str:
    header = ("Model", "# Input Tokens", "# Output Tokens", "Time (minute)")
    body = [
        (r.provider, f"{r.input_tokens:,}", f"{r.output_tokens:,}", f"{r.wall_minutes:.2f}")
        for r in rows
    ]
    widths = [max(len(row[i]) for row in [header, *body]) for i in range(4)]
    lines = ["  ".join(cell.ljust(w) if i == 0 else cell.rjust(w) for i, (cell, w) in enumerate(zip(row, widths)))
             for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
