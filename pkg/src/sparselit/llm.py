"""Completion gateway over a remote messages endpoint or a scripted offline mock."""

from __future__ import annotations

import json
import logging
import math
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from string import Template
from typing import Callable, Iterable, Protocol, Union

import httpx

logger = logging.getLogger(__name__)


class LLMError(RuntimeError):
    """Base class for gateway failures."""


class TransientError(LLMError):
    """Rate limiting, timeouts and server errors; retried with backoff."""


class AuthenticationError(LLMError):
    """Missing or rejected credentials; never retried."""


class ProtocolError(LLMError):
    """The provider answered with something that is not a completion."""


class UnmatchedPromptError(LLMError):
    """The mock script has no entry for a prompt."""


@dataclass(frozen=True)
class Prompt:
    user: str
    system: str = ""
    max_output_tokens: int = 4096
    deterministic: bool = True

    def __post_init__(self):
        if not self.user:
            raise ValueError("prompt user text must be non-empty")

    @property
    def text(self) -> str:
        return f"{self.system}\n\n{self.user}" if self.system else self.user


@dataclass(frozen=True)
class Usage:
    input_tokens: int
    output_tokens: int


@dataclass(frozen=True)
class Completion:
    text: str
    usage: Usage
    provider_id: str


@dataclass(frozen=True)
class ProviderConfig:
    endpoint: str = "https://api.anthropic.com/v1/messages"
    model: str = "claude-3-5-sonnet-20240620"
    credential_env: str = "ANTHROPIC_API_KEY"
    api_version: str = "2023-06-01"
    max_retries: int = 3
    backoff_base: float = 1.0
    request_timeout: float = 120.0
    max_concurrent_requests: int = 4
    # whitespace tokens are scaled by this when a provider omits usage
    token_factor: float = 1.3

    def __post_init__(self):
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.max_concurrent_requests < 1:
            raise ValueError("max_concurrent_requests must be >= 1")


def estimate_tokens(text: str, factor: float = 1.3) -> int:
    return int(math.ceil(len(text.split()) * factor))


class Provider(Protocol):
    provider_id: str

    def send(self, prompt: Prompt, timeout: float) -> Completion: ...


# -- mock ---------------------------------------------------------------------

Responder = Union[str, Callable[[Prompt, "re.Match | None"], str]]


@dataclass(frozen=True)
class MockRule:
    """One script entry.

    The rule fires when every ``contains`` substring occurs in the prompt and
    ``regex`` (if any) matches it. String responses may reference named regex
    groups as ``$name`` or ``${name}``.
    """

    response: Responder
    contains: tuple[str, ...] = ()
    regex: str | None = None
    flags: int = re.DOTALL
    _compiled: re.Pattern | None = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.contains and self.regex is None:
            raise ValueError("a mock rule needs a substring or a regex matcher")
        if self.regex is not None:
            object.__setattr__(self, "_compiled", re.compile(self.regex, self.flags))

    def match(self, text: str) -> tuple[bool, re.Match | None]:
        if not all(s in text for s in self.contains):
            return False, None
        if self._compiled is None:
            return True, None
        m = self._compiled.search(text)
        return m is not None, m

    def render(self, prompt: Prompt, m: re.Match | None) -> str:
        if callable(self.response):
            return self.response(prompt, m)
        if m is None:
            return self.response
        groups = {k: v for k, v in m.groupdict().items() if v is not None}
        return Template(self.response).safe_substitute(groups)


class MockProvider:
    """Deterministic scripted provider; rules are tried in order, first match wins."""

    provider_id = "mock"

    def __init__(self, rules: Iterable[MockRule], token_factor: float = 1.3):
        self.rules = list(rules)
        self.token_factor = token_factor
        self.calls = 0
        self._lock = threading.Lock()

    def send(self, prompt: Prompt, timeout: float = 0.0) -> Completion:
        with self._lock:
            self.calls += 1
        text = prompt.text
        for rule in self.rules:
            ok, m = rule.match(text)
            if ok:
                out = rule.render(prompt, m)
                return Completion(
                    out,
                    Usage(estimate_tokens(text, self.token_factor), estimate_tokens(out, self.token_factor)),
                    self.provider_id,
                )
        head = prompt.user[:120].replace("\n", " ")
        raise UnmatchedPromptError(f"no mock script entry matches prompt starting {head!r}")


def mock_provider(script) -> MockProvider:
    """Build a mock from rules, ``(matcher, response)`` pairs or a substring mapping."""
    if isinstance(script, MockProvider):
        return script
    if isinstance(script, dict):
        script = list(script.items())
    rules = []
    for entry in script:
        if isinstance(entry, MockRule):
            rules.append(entry)
        else:
            matcher, response = entry
            contains = (matcher,) if isinstance(matcher, str) else tuple(matcher)
            rules.append(MockRule(response=response, contains=contains))
    return MockProvider(rules)


def _flags(spec: str) -> int:
    flags = 0
    for ch in spec:
        flags |= {"i": re.IGNORECASE, "s": re.DOTALL, "m": re.MULTILINE}[ch]
    return flags


def rule_from_record(rec: dict) -> MockRule:
    contains = rec.get("contains", ())
    if isinstance(contains, str):
        contains = (contains,)
    return MockRule(
        response=rec["response"],
        contains=tuple(contains),
        regex=rec.get("regex"),
        flags=_flags(rec.get("flags", "s")),
    )


def rule_to_record(rule: MockRule) -> dict:
    if callable(rule.response):
        raise TypeError("callable responses cannot be written to a script file")
    rec: dict = {"response": rule.response}
    if rule.contains:
        rec["contains"] = list(rule.contains)
    if rule.regex is not None:
        rec["regex"] = rule.regex
        names = {re.IGNORECASE: "i", re.DOTALL: "s", re.MULTILINE: "m"}
        rec["flags"] = "".join(v for k, v in names.items() if rule.flags & k)
    return rec


def load_mock_script(path: str | Path) -> MockProvider:
    """Read a JSON-lines script: ``{"contains": [...], "regex": ..., "response": ...}``."""
    rules = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rules.append(rule_from_record(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError, re.error) as exc:
                raise ValueError(f"{path}: line {lineno}: bad script entry ({exc})") from exc
    return MockProvider(rules)


def write_mock_script(provider: MockProvider, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in provider.rules:
            fh.write(json.dumps(rule_to_record(rule), ensure_ascii=False) + "\n")


# -- remote -------------------------------------------------------------------


class MessagesProvider:
    """HTTP provider for a messages-style completion endpoint."""

    provider_id = "messages"

    def __init__(self, cfg: ProviderConfig, transport: httpx.BaseTransport | None = None):
        key = os.environ.get(cfg.credential_env)
        if not key:
            raise AuthenticationError(
                f"environment variable {cfg.credential_env} is not set; it must hold the provider API key"
            )
        self.cfg = cfg
        self._client = httpx.Client(
            transport=transport,
            headers={
                "x-api-key": key,
                "anthropic-version": cfg.api_version,
                "content-type": "application/json",
            },
        )

    def send(self, prompt: Prompt, timeout: float) -> Completion:
        body = {
            "model": self.cfg.model,
            "max_tokens": prompt.max_output_tokens,
            "messages": [{"role": "user", "content": prompt.user}],
        }
        if prompt.system:
            body["system"] = prompt.system
        if prompt.deterministic:
            body["temperature"] = 0.0
        try:
            resp = self._client.post(self.cfg.endpoint, json=body, timeout=timeout)
        except httpx.TimeoutException as exc:
            raise TransientError(f"request timed out after {timeout}s") from exc
        except httpx.TransportError as exc:
            raise TransientError(f"transport failure: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"provider returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise ProtocolError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            payload = resp.json()
            text = "".join(block["text"] for block in payload["content"] if block.get("type") == "text")
        except (ValueError, KeyError, TypeError) as exc:
            raise ProtocolError(f"malformed completion body: {exc}") from exc
        usage = payload.get("usage") or {}
        factor = self.cfg.token_factor
        return Completion(
            text,
            Usage(
                int(usage.get("input_tokens", estimate_tokens(prompt.text, factor))),
                int(usage.get("output_tokens", estimate_tokens(text, factor))),
            ),
            f"{self.provider_id}:{self.cfg.model}",
        )


# -- gateway ------------------------------------------------------------------


class Gateway:
    """Shared entry point for agents: retries, backoff, in-flight ceiling, usage totals."""

    def __init__(
        self,
        provider: Provider,
        cfg: ProviderConfig | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.provider = provider
        self.cfg = cfg or ProviderConfig()
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(self.cfg.max_concurrent_requests)
        self._lock = threading.Lock()
        self.requests = 0
        self.input_tokens = 0
        self.output_tokens = 0
        self.backoffs: list[float] = []

    @property
    def max_concurrent(self) -> int:
        return self.cfg.max_concurrent_requests

    def _send(self, prompt: Prompt) -> Completion:
        with self._slots:
            with self._lock:
                self.requests += 1
            return self.provider.send(prompt, self.cfg.request_timeout)

    def complete(self, prompt: Prompt) -> Completion:
        attempt = 0
        while True:
            try:
                completion = self._send(prompt)
            except TransientError as exc:
                if attempt >= self.cfg.max_retries:
                    raise TransientError(f"giving up after {attempt + 1} attempt(s): {exc}") from exc
                delay = self.cfg.backoff_base * 2.0**attempt
                logger.warning("transient provider failure (%s); retrying in %.1fs", exc, delay)
                with self._lock:
                    self.backoffs.append(delay)
                self._sleep(delay)
                attempt += 1
                continue
            with self._lock:
                self.input_tokens += completion.usage.input_tokens
                self.output_tokens += completion.usage.output_tokens
            return completion


def provider_from_config(cfg: ProviderConfig, mock_script: str | Path | None = None) -> Provider:
    if mock_script is not None:
        return load_mock_script(mock_script)
    return MessagesProvider(cfg)


def complete(prompt: Prompt, cfg: ProviderConfig | None = None, provider: Provider | None = None) -> Completion:
    """One-off completion through a fresh gateway."""
    cfg = cfg or ProviderConfig()
    return Gateway(provider or MessagesProvider(cfg), cfg).complete(prompt)
