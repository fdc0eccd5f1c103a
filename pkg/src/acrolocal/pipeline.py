"""Single-pass and cascaded runs over a corpus, recorded as append-only run logs.

Run-log files are JSONL: a header object first, then one entry per line::

    {"schema": "acrolocal-runlog", "version": 1, "run_id": ..., "created": ..., "config": {...}}
    {"instance_id": ..., "iteration": 1, "stage": "single_pass", "status": "ok", ...}

A run directory is laid out as ``runs/<run-id>/{config.json, log.jsonl}``.
"""

from __future__ import annotations

import json
import logging
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable

from .corpus import Corpus, Instance, contains_token
from .inference import Backend, BackendError, CompletionRecord
from .prompting import (
    ParseOutcome,
    PromptTemplate,
    parse_output,
    render_cascaded_detection,
    render_cascaded_expansion,
    render_single_pass,
)

logger = logging.getLogger(__name__)

LOG_SCHEMA = "acrolocal-runlog"
LOG_VERSION = 1

# Entry statuses on top of the parse statuses.
BACKEND_ERROR = "backend_error"
DETECTION_FAILURE = "detection_failure"

STAGES = ("single_pass", "detection", "expansion")


class RunError(Exception):
    """Corpus or configuration problems that stop a run before it starts."""


class RunLogError(Exception):
    """A run log on disk is unreadable or has the wrong schema."""


@dataclass(frozen=True)
class RunConfig:
    mode: str = "single_pass"
    iterations: int = 5
    detector_backend: str = ""
    expander_backend: str | None = None
    assume_perfect_detection: bool = False
    corpus_path: str = ""
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("single_pass", "cascaded"):
            raise RunError(f"unknown mode {self.mode!r}")
        if self.iterations < 1:
            raise RunError("iterations must be >= 1")
        if self.mode == "cascaded" and not self.expander_backend:
            raise RunError("cascaded mode needs an expander backend")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        return cls(**data)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


@dataclass(frozen=True)
class LogEntry:
    instance_id: str
    iteration: int
    stage: str
    status: str
    acronym: str | None = None
    record: CompletionRecord | None = None
    outcome: ParseOutcome | None = None
    error: str | None = None
    timestamp: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "iteration": self.iteration,
            "stage": self.stage,
            "status": self.status,
            "acronym": self.acronym,
            "record": None if self.record is None else self.record.to_dict(),
            "outcome": None if self.outcome is None else self.outcome.to_dict(),
            "error": self.error,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LogEntry":
        expected = "detection" if data["stage"] == "detection" else "expansion"
        record = data.get("record")
        outcome = data.get("outcome")
        return cls(
            instance_id=data["instance_id"],
            iteration=int(data["iteration"]),
            stage=data["stage"],
            status=data["status"],
            acronym=data.get("acronym"),
            record=None if record is None else CompletionRecord(**record),
            outcome=None if outcome is None else ParseOutcome.from_dict(outcome, expected),
            error=data.get("error"),
            timestamp=data.get("timestamp", ""),
        )


@dataclass
class RunLog:
    run_id: str
    config: RunConfig
    created: str = ""
    entries: list[LogEntry] = field(default_factory=list)

    def append(self, entry: LogEntry) -> None:
        self.entries.append(entry)

    def header(self) -> dict[str, Any]:
        return {
            "schema": LOG_SCHEMA,
            "version": LOG_VERSION,
            "run_id": self.run_id,
            "created": self.created,
            "config": self.config.to_dict(),
        }

    def for_stage(self, stage: str) -> list[LogEntry]:
        return [e for e in self.entries if e.stage == stage]

    @property
    def backend_ids(self) -> list[str]:
        return list(dict.fromkeys(e.record.backend_id for e in self.entries if e.record is not None))


def new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return f"{stamp}-{uuid.uuid4().hex[:8]}"


def stable_payload(log: RunLog) -> list[dict[str, Any]]:
    """Entries with timestamps and latencies removed, for reproducibility checks."""
    payload = []
    for entry in log.entries:
        data = entry.to_dict()
        data.pop("timestamp")
        if data["record"] is not None:
            data["record"].pop("latency")
        payload.append(data)
    return payload


# --------------------------------------------------------------------------
# Running
# --------------------------------------------------------------------------


def _call(
    backend: Backend, prompt: PromptTemplate, expected: str, instance_id: str
) -> tuple[str, CompletionRecord | None, ParseOutcome | None, str | None]:
    try:
        record = backend.complete(prompt, instance_id=instance_id)
    except BackendError as exc:
        logger.warning("backend error on %s: %s", instance_id, exc)
        return BACKEND_ERROR, None, None, str(exc)
    outcome = parse_output(record.response, expected)
    return outcome.status.value, record, outcome, None


def _single_pass_entries(inst: Instance, iteration: int, backend: Backend) -> list[LogEntry]:
    status, record, outcome, error = _call(backend, render_single_pass(inst.text), "expansion", inst.id)
    acronym = outcome.payload.acronym if outcome is not None and outcome.payload is not None else None
    return [LogEntry(inst.id, iteration, "single_pass", status, acronym, record, outcome, error, _now())]


def _cascaded_entries(
    inst: Instance, iteration: int, detector: Backend | None, expander: Backend, perfect: bool
) -> list[LogEntry]:
    entries: list[LogEntry] = []
    if perfect:
        acronyms = [inst.acronym]
    else:
        assert detector is not None
        status, record, outcome, error = _call(detector, render_cascaded_detection(inst.text), "detection", inst.id)
        if outcome is None or outcome.payload is None:
            entries.append(
                LogEntry(inst.id, iteration, "detection", DETECTION_FAILURE, None, record, outcome,
                         error or f"stage 1 {status}", _now())
            )
            return entries
        entries.append(LogEntry(inst.id, iteration, "detection", status, None, record, outcome, None, _now()))
        acronyms = list(outcome.payload.acronyms)

    for acronym in acronyms:
        if not contains_token(inst.text, acronym):
            # A hallucinated detection cannot be routed to a well-formed expansion prompt.
            entries.append(
                LogEntry(inst.id, iteration, "expansion", "skipped", acronym, None, None,
                         "detected acronym not in text", _now())
            )
            continue
        prompt = render_cascaded_expansion(inst.text, acronym)
        status, record, outcome, error = _call(expander, prompt, "expansion", inst.id)
        entries.append(LogEntry(inst.id, iteration, "expansion", status, acronym, record, outcome, error, _now()))
    return entries


def _run(
    corpus: Corpus,
    config: RunConfig,
    work: Callable[[Instance, int], list[LogEntry]],
    parallelism: int,
    on_entry: Callable[[LogEntry], None] | None,
    run_id: str | None,
) -> RunLog:
    log = RunLog(run_id or new_run_id(), config, _now())
    workers = max(1, parallelism)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for iteration in range(1, config.iterations + 1):
            # map() yields in submission order, so the log order is deterministic.
            for entries in pool.map(lambda inst: work(inst, iteration), corpus.instances):
                for entry in entries:
                    log.append(entry)
                    if on_entry is not None:
                        on_entry(entry)
    return log


def run_single_pass(
    corpus: Corpus,
    backend: Backend,
    config: RunConfig,
    *,
    on_entry: Callable[[LogEntry], None] | None = None,
    run_id: str | None = None,
) -> RunLog:
    """One completion per instance per iteration."""
    if config.mode != "single_pass":
        raise RunError("run_single_pass needs a single_pass RunConfig")
    if corpus.mode_label != "single_pass":
        raise RunError("single-pass runs need a single_pass corpus (see filter_single_acronym)")
    return _run(
        corpus,
        config,
        lambda inst, it: _single_pass_entries(inst, it, backend),
        getattr(backend, "parallelism", 1),
        on_entry,
        run_id,
    )


def run_cascaded(
    corpus: Corpus,
    detector: Backend | None,
    expander: Backend,
    config: RunConfig,
    *,
    on_entry: Callable[[LogEntry], None] | None = None,
    run_id: str | None = None,
) -> RunLog:
    """Detection then per-acronym expansion, or expansion of the gold acronym only.

    With ``assume_perfect_detection`` the detector is never called.
    """
    if config.mode != "cascaded":
        raise RunError("run_cascaded needs a cascaded RunConfig")
    perfect = config.assume_perfect_detection
    if not perfect and detector is None:
        raise RunError("cascaded detection needs a detector backend")
    parallelism = min(
        getattr(expander, "parallelism", 1),
        getattr(detector, "parallelism", 1) if detector is not None and not perfect else 1 << 30,
    )
    return _run(
        corpus,
        config,
        lambda inst, it: _cascaded_entries(inst, it, detector, expander, perfect),
        parallelism,
        on_entry,
        run_id,
    )


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------


class JsonlLogWriter:
    """Serialises appends from one run to a JSONL file, header first."""

    def __init__(self, path: str | Path, log_header: dict[str, Any]):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._fh = self.path.open("w", encoding="utf-8")
        self._write(log_header)

    def _write(self, obj: dict[str, Any]) -> None:
        self._fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
        self._fh.flush()

    def __call__(self, entry: LogEntry) -> None:
        with self._lock:
            self._write(entry.to_dict())

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "JsonlLogWriter":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def persist_log(log: RunLog, path: str | Path) -> None:
    with JsonlLogWriter(path, log.header()) as writer:
        for entry in log.entries:
            writer(entry)


def load_log(path: str | Path) -> RunLog:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise RunLogError(f"cannot read run log {path}: {exc}") from exc
    if not lines:
        raise RunLogError(f"{path}: empty run log")

    def parse(lineno: int, line: str) -> dict[str, Any]:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise RunLogError(f"{path}: line {lineno} is not valid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise RunLogError(f"{path}: line {lineno} is not a JSON object")
        return obj

    header = parse(1, lines[0])
    if header.get("schema") != LOG_SCHEMA:
        raise RunLogError(f"{path}: line 1 is not a run-log header")
    if header.get("version") != LOG_VERSION:
        raise RunLogError(
            f"{path}: run-log schema version {header.get('version')!r} is not supported (expected {LOG_VERSION})"
        )
    log = RunLog(header["run_id"], RunConfig.from_dict(header["config"]), header.get("created", ""))
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        obj = parse(lineno, line)
        try:
            log.append(LogEntry.from_dict(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise RunLogError(f"{path}: line {lineno} is not a valid log entry ({exc})") from None
    return log


def run_dir(root: str | Path, run_id: str) -> Path:
    return Path(root) / run_id


def write_run_config(directory: Path, log: RunLog) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.json").write_text(json.dumps(log.header(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def save_run(log: RunLog, root: str | Path) -> Path:
    directory = run_dir(root, log.run_id)
    if (directory / "log.jsonl").exists():
        raise RunLogError(f"run directory {directory} already holds a log")
    write_run_config(directory, log)
    persist_log(log, directory / "log.jsonl")
    return directory


def resolve_run(ref: str | Path, root: str | Path = "runs") -> Path:
    """Accept a run id, a run directory, or a log file path; return the log file."""
    candidates = [Path(ref), Path(root) / str(ref)]
    for cand in candidates:
        if cand.is_file():
            return cand
        if (cand / "log.jsonl").is_file():
            return cand / "log.jsonl"
    raise RunLogError(f"no run log found for {ref!r} (looked in {root})")


def count_completions(log: RunLog) -> int:
    return sum(1 for e in log.entries if e.record is not None or e.status == BACKEND_ERROR)


def entries_by_key(entries: Iterable[LogEntry]) -> dict[tuple[str, int], list[LogEntry]]:
    grouped: dict[tuple[str, int], list[LogEntry]] = {}
    for entry in entries:
        grouped.setdefault((entry.instance_id, entry.iteration), []).append(entry)
    return grouped

