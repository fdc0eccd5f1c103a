"""Local model backends.

``HttpBackend`` talks to a locally hosted chat-completions server::

    POST {endpoint}/chat/completions
    {"model": ..., "messages": [{"role": "user", "content": <serialized prompt>}],
     "temperature": ..., "max_tokens": ...}

and reads ``choices[0].message.content`` from the reply. Endpoints outside
loopback/private address space are refused unless ``force_remote`` is set,
and the refusal happens before any socket is opened.

``MockBackend`` answers prompts from a dictionary, deterministically
corrupting or blocking chosen instances. It stands in for a model in tests
and dry runs.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import logging
import math
import os
import random
import re
import sys
import threading
import time
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Protocol
from urllib.parse import urlsplit

import requests

from .corpus import Corpus, extract_acronyms
from .prompting import PromptError, PromptTemplate, prompt_kind

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

logger = logging.getLogger(__name__)

ENV_ENDPOINT = "ACROLOCAL_ENDPOINT"
ENV_MODEL = "ACROLOCAL_MODEL"

PRIVATE_SUFFIXES = (".local", ".lan", ".internal", ".home.arpa", ".localhost")
MOCK_CONFIDENCE = 0.98
WRONG_EXPANSION = "unrelated sense"


class BackendError(RuntimeError):
    """A completion could not be obtained."""

    def __init__(self, message: str, attempts: int = 0, cause: BaseException | None = None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


class PrivacyError(BackendError):
    """The configured endpoint is not on a local or private network."""


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    endpoint: str = "http://127.0.0.1:8080/v1"
    model_name: str = "local-model"
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 120.0
    retries: int = 2
    parallelism: int = 1
    backoff: float = 0.5
    force_remote: bool = False

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ConfigError("temperature must be >= 0")
        if self.retries < 0:
            raise ConfigError("retries must be >= 0")
        if self.max_tokens < 1 or self.parallelism < 1:
            raise ConfigError("max_tokens and parallelism must be >= 1")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")

    @property
    def backend_id(self) -> str:
        return f"http:{self.model_name}@{self.endpoint}"


@dataclass(frozen=True)
class CompletionRecord:
    prompt: str
    response: str
    latency: float
    attempt: int
    backend_id: str

    def to_dict(self) -> dict:
        return asdict(self)


class Backend(Protocol):
    backend_id: str
    parallelism: int

    def complete(self, prompt: str | PromptTemplate, instance_id: str | None = None) -> CompletionRecord: ...


def _as_text(prompt: str | PromptTemplate) -> str:
    return prompt.serialize() if isinstance(prompt, PromptTemplate) else prompt


# --------------------------------------------------------------------------
# Privacy guard
# --------------------------------------------------------------------------


def is_private_host(host: str) -> bool:
    """Loopback, RFC 1918/4193, link-local, or an obviously local host name.

    Host names are judged by their shape only; nothing is resolved.
    """
    host = host.strip("[]").lower().rstrip(".")
    if not host:
        return False
    try:
        addr = ipaddress.ip_address(host)
    except ValueError:
        return host == "localhost" or "." not in host or host.endswith(PRIVATE_SUFFIXES)
    return addr.is_loopback or addr.is_private or addr.is_link_local


def check_endpoint(config: BackendConfig) -> None:
    parts = urlsplit(config.endpoint)
    if parts.scheme not in ("http", "https") or not parts.hostname:
        raise ConfigError(f"endpoint must be an http(s) URL, got {config.endpoint!r}")
    if not config.force_remote and not is_private_host(parts.hostname):
        raise PrivacyError(
            f"refusing non-local endpoint {config.endpoint!r}; pass --force-remote to override"
        )


# --------------------------------------------------------------------------
# HTTP backend
# --------------------------------------------------------------------------


class HttpBackend:
    def __init__(self, config: BackendConfig, session: requests.Session | None = None):
        check_endpoint(config)
        self.config = config
        self.backend_id = config.backend_id
        self.parallelism = config.parallelism
        self._local = threading.local()
        self._session = session

    def _get_session(self) -> requests.Session:
        if self._session is not None:
            return self._session
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            session.trust_env = False  # never route through a proxy from the environment
            self._local.session = session
        return session

    def _url(self, path: str) -> str:
        return self.config.endpoint.rstrip("/") + path

    def request_body(self, prompt: str) -> dict[str, Any]:
        return {
            "model": self.config.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
        }

    def complete(self, prompt: str | PromptTemplate, instance_id: str | None = None) -> CompletionRecord:
        # instance_id is accepted for interface parity and never sent.
        check_endpoint(self.config)
        text = _as_text(prompt)
        body = self.request_body(text)
        last_error: BaseException | None = None
        start = time.perf_counter()
        for attempt in range(1, self.config.retries + 2):
            try:
                resp = self._get_session().post(
                    self._url("/chat/completions"), json=body, timeout=self.config.timeout
                )
                if resp.status_code >= 500:
                    raise requests.HTTPError(f"server error {resp.status_code}", response=resp)
                if resp.status_code >= 400:
                    raise BackendError(
                        f"request rejected with HTTP {resp.status_code}: {resp.text[:200]}", attempts=attempt
                    )
                content = _extract_content(resp)
                return CompletionRecord(text, content, time.perf_counter() - start, attempt, self.backend_id)
            except (requests.ConnectionError, requests.Timeout, requests.HTTPError) as exc:
                last_error = exc
                logger.debug("attempt %d against %s failed: %s", attempt, self.config.endpoint, exc)
                if attempt <= self.config.retries and self.config.backoff > 0:
                    time.sleep(self.config.backoff * 2 ** (attempt - 1))
        raise BackendError(
            f"{self.config.endpoint}: giving up after {self.config.retries + 1} attempts: {last_error}",
            attempts=self.config.retries + 1,
            cause=last_error,
        )

    def probe(self) -> dict[str, Any]:
        return probe(self.config, session=self._get_session())


def _extract_content(resp: requests.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise BackendError(f"malformed completion response: {exc}") from exc
    return "" if content is None else str(content)


def complete(prompt: str | PromptTemplate, config: BackendConfig) -> CompletionRecord:
    return HttpBackend(config).complete(prompt)


def probe(config: BackendConfig, session: requests.Session | None = None) -> dict[str, Any]:
    """Check the server is reachable and serves ``config.model_name``.

    Only ``GET {endpoint}/models`` is issued; no corpus text is sent.
    """
    check_endpoint(config)
    report: dict[str, Any] = {"endpoint": config.endpoint, "model": config.model_name}
    own_session = session is None
    if own_session:
        session = requests.Session()
        session.trust_env = False
    try:
        resp = session.get(config.endpoint.rstrip("/") + "/models", timeout=min(config.timeout, 10.0))
    except (requests.ConnectionError, requests.Timeout) as exc:
        report.update(healthy=False, status="unreachable", detail=str(exc))
        return report
    finally:
        if own_session:
            session.close()

    models: list[str] | None = None
    if resp.ok:
        try:
            models = [str(m.get("id")) for m in resp.json().get("data", []) if isinstance(m, dict)]
        except (ValueError, AttributeError):
            models = None
    report["available_models"] = models
    if models is None:
        report.update(healthy=True, status="reachable", detail=f"model list unavailable (HTTP {resp.status_code})")
    elif config.model_name in models:
        report.update(healthy=True, status="ok", detail="model available")
    else:
        report.update(healthy=False, status="model unavailable", detail=f"{config.model_name!r} not in {models}")
    return report


# --------------------------------------------------------------------------
# Mock backend
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MockBehavior:
    """Deterministic stand-in for a model.

    ``answers`` maps an instance id to its (acronym, expansion) and takes
    precedence over the acronym-keyed ``dictionary``. When ``universe`` is
    given, exactly ``error_rate * len(universe)`` (rounded half up) of its ids are
    corrupted; otherwise each id is corrupted independently by a seeded hash.
    """

    dictionary: Mapping[str, str] = field(default_factory=dict)
    error_rate: float = 0.0
    seed: int = 0
    block_ids: frozenset[str] = frozenset()
    universe: tuple[str, ...] = ()
    answers: Mapping[str, tuple[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.error_rate <= 1.0:
            raise ConfigError("error_rate must lie in [0, 1]")
        object.__setattr__(self, "block_ids", frozenset(self.block_ids))
        object.__setattr__(self, "universe", tuple(self.universe))

    @cached_property
    def corrupted_ids(self) -> frozenset[str]:
        if not self.universe:
            return frozenset()
        population = sorted(set(self.universe))
        k = math.floor(self.error_rate * len(population) + 0.5)
        return frozenset(random.Random(self.seed).sample(population, k))

    def is_corrupted(self, instance_id: str | None) -> bool:
        if instance_id is None or self.error_rate == 0.0:
            return False
        if self.universe:
            return instance_id in self.corrupted_ids
        digest = hashlib.sha256(f"{self.seed}:{instance_id}".encode()).digest()
        return int.from_bytes(digest[:8], "big") / 2**64 < self.error_rate

    @classmethod
    def from_corpus(cls, corpus: Corpus, **kwargs: Any) -> "MockBehavior":
        answers = {inst.id: (inst.acronym, inst.expansion) for inst in corpus}
        kwargs.setdefault("universe", tuple(corpus.ids))
        return cls(answers=answers, **kwargs)


_EQUATION_TOKEN = r"\S*[=<>]\S*"
_ALNUM_TOKEN = r"\b(?=\w*\d)(?=\w*[A-Za-z])\w+\b"


def _annotation_items(text: str) -> list[str]:
    items = extract_acronyms(text)
    items += re.findall(_EQUATION_TOKEN, text)
    items += re.findall(_ALNUM_TOKEN, text)
    return list(dict.fromkeys(items))


def _corrupt_acronym(acronym: str) -> str:
    swapped = acronym.swapcase()
    return swapped if swapped != acronym else acronym + "X"


def mock_complete(
    prompt: str | PromptTemplate, behavior: MockBehavior, instance_id: str | None = None
) -> CompletionRecord:
    """Answer a serialized prompt the way a well-behaved (or sabotaged) model would."""
    start = time.perf_counter()
    text = _as_text(prompt)
    backend_id = f"mock:seed={behavior.seed}"

    def record(body: str) -> CompletionRecord:
        return CompletionRecord(text, body, time.perf_counter() - start, 1, backend_id)

    if instance_id is not None and instance_id in behavior.block_ids:
        return record("")
    try:
        kind, obj = prompt_kind(text)
    except (ValueError, PromptError):
        return record("I can only help with acronym prompts.")
    input_text = obj.get("Text", "")

    if kind == "detection":
        acronyms = list(dict.fromkeys(extract_acronyms(input_text)))
        return record(json.dumps({"acronyms": acronyms}, ensure_ascii=False))
    if kind == "annotation":
        return record(json.dumps({"items": _annotation_items(input_text)}, ensure_ascii=False))

    gold = behavior.answers.get(instance_id) if instance_id is not None else None
    if kind == "expansion":
        acronym = obj.get("Acronym", "")
    elif gold is not None:
        acronym = gold[0]
    else:
        found = extract_acronyms(input_text)
        acronym = found[0] if found else ""

    if gold is not None and gold[0] == acronym:
        expansion: str | None = gold[1]
    else:
        expansion = behavior.dictionary.get(acronym)

    if expansion is None:
        payload = {"acronym": acronym, "expansion": "unknown", "confidence": 0.0, "rationale": "not in dictionary"}
    elif behavior.is_corrupted(instance_id):
        if kind == "single_pass":
            acronym = _corrupt_acronym(acronym)
        payload = {
            "acronym": acronym,
            "expansion": WRONG_EXPANSION,
            "confidence": MOCK_CONFIDENCE,
            "rationale": "mock corruption",
        }
    else:
        payload = {"acronym": acronym, "expansion": expansion, "confidence": MOCK_CONFIDENCE, "rationale": "dictionary"}
    return record(json.dumps(payload, ensure_ascii=False))


class MockBackend:
    parallelism = 4

    def __init__(self, behavior: MockBehavior, parallelism: int | None = None):
        self.behavior = behavior
        self.backend_id = f"mock:seed={behavior.seed}"
        if parallelism is not None:
            self.parallelism = parallelism

    def complete(self, prompt: str | PromptTemplate, instance_id: str | None = None) -> CompletionRecord:
        return mock_complete(prompt, self.behavior, instance_id)


# --------------------------------------------------------------------------
# Configuration files
# --------------------------------------------------------------------------


def read_config_file(path: str | Path) -> dict[str, Any]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


_CONFIG_KEYS = {f for f in BackendConfig.__dataclass_fields__}


def backend_config_from(
    section: Mapping[str, Any] | None = None,
    env: Mapping[str, str] | None = None,
    **overrides: Any,
) -> BackendConfig:
    """Build a config with precedence: explicit overrides > environment > file section."""
    values: dict[str, Any] = {}
    for key, value in (section or {}).items():
        key = {"model": "model_name"}.get(key, key)
        if key not in _CONFIG_KEYS:
            raise ConfigError(f"unknown backend setting {key!r}")
        values[key] = value
    env = os.environ if env is None else env
    if env.get(ENV_ENDPOINT):
        values["endpoint"] = env[ENV_ENDPOINT]
    if env.get(ENV_MODEL):
        values["model_name"] = env[ENV_MODEL]
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return replace(BackendConfig(), **values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
