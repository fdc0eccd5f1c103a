"""Zero-shot prompt templates and tolerant parsing of strict-JSON replies.

Prompts are serialized as one JSON object sent as the user message, e.g.::

    {"Task": "...", "Text": "...", "Acronym": "SP", "Rules": ["Output strict JSON on one line", ...]}

``Acronym`` is present only for expansion prompts. Keys appear in exactly
that order and the object is dumped with ``ensure_ascii=False`` and the
default separators, so rendering is byte-stable.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Union

from .corpus import contains_token

SINGLE_PASS_TASK = "Find the acronym in the text and expand the meaning of the acronym in the given text."
EXPANSION_TASK = (
    "Read the input text carefully, understand the context and expand the meaning of the acronym in the given text."
)
DETECTION_TASK = "List every acronym present in the text."
ANNOTATION_TASK = "Detect and list all possible acronyms, equations, and alphanumeric terms in the text."

STRICT_JSON_RULE = "Output strict JSON on one line"
EXPANSION_SCHEMA_RULE = (
    'Use the keys "acronym", "expansion", "confidence" (a number from 0 to 1) and "rationale"'
)
DETECTION_SCHEMA_RULE = 'Use the schema {"acronyms": ["..."]}'
ANNOTATION_SCHEMA_RULE = 'Use the schema {"items": ["..."]}'

TASKS = {
    "single_pass": SINGLE_PASS_TASK,
    "expansion": EXPANSION_TASK,
    "detection": DETECTION_TASK,
    "annotation": ANNOTATION_TASK,
}


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    kind: str
    task_text: str
    rules: tuple[str, ...]
    input_text: str
    acronym: str | None = None

    def as_object(self) -> dict[str, Any]:
        obj: dict[str, Any] = {"Task": self.task_text, "Text": self.input_text}
        if self.acronym is not None:
            obj["Acronym"] = self.acronym
        obj["Rules"] = list(self.rules)
        return obj

    def serialize(self) -> str:
        return json.dumps(self.as_object(), ensure_ascii=False)


def _require_text(input_text: str) -> None:
    if not input_text or not input_text.strip():
        raise PromptError("input text must be non-empty")


def render_single_pass(input_text: str) -> PromptTemplate:
    _require_text(input_text)
    return PromptTemplate("single_pass", SINGLE_PASS_TASK, (STRICT_JSON_RULE, EXPANSION_SCHEMA_RULE), input_text)


def render_cascaded_expansion(input_text: str, acronym: str) -> PromptTemplate:
    _require_text(input_text)
    if not acronym or not acronym.strip():
        raise PromptError("acronym must be non-empty")
    if not contains_token(input_text, acronym):
        raise PromptError(f"acronym {acronym!r} does not occur in the input text")
    return PromptTemplate(
        "expansion", EXPANSION_TASK, (STRICT_JSON_RULE, EXPANSION_SCHEMA_RULE), input_text, acronym
    )


def render_cascaded_detection(input_text: str) -> PromptTemplate:
    _require_text(input_text)
    return PromptTemplate("detection", DETECTION_TASK, (STRICT_JSON_RULE, DETECTION_SCHEMA_RULE), input_text)


def render_annotation(input_text: str) -> PromptTemplate:
    _require_text(input_text)
    return PromptTemplate("annotation", ANNOTATION_TASK, (STRICT_JSON_RULE, ANNOTATION_SCHEMA_RULE), input_text)


def prompt_kind(serialized: str) -> tuple[str, dict[str, Any]]:
    """Recover (kind, object) from a serialized prompt."""
    obj = json.loads(serialized)
    task = obj.get("Task")
    for kind, text in TASKS.items():
        if task == text:
            return kind, obj
    raise PromptError(f"unrecognised task text: {task!r}")


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------


class ParseStatus(str, Enum):
    OK = "ok"
    REPAIRED = "repaired"
    BLOCKED = "blocked"
    PARSE_FAILURE = "parse_failure"


@dataclass(frozen=True)
class DetectionResult:
    acronyms: tuple[str, ...]

    def to_dict(self) -> dict:
        return {"acronyms": list(self.acronyms)}


@dataclass(frozen=True)
class ExpansionResult:
    acronym: str
    expansion: str
    confidence: float | None
    rationale: str = ""

    def to_dict(self) -> dict:
        return {
            "acronym": self.acronym,
            "expansion": self.expansion,
            "confidence": self.confidence,
            "rationale": self.rationale,
        }


Payload = Union[DetectionResult, ExpansionResult]


@dataclass(frozen=True)
class ParseOutcome:
    status: ParseStatus
    payload: Payload | None
    raw: str
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def succeeded(self) -> bool:
        return self.status in (ParseStatus.OK, ParseStatus.REPAIRED)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "payload": None if self.payload is None else self.payload.to_dict(),
            "raw": self.raw,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: dict, expected: str) -> "ParseOutcome":
        payload = data.get("payload")
        if payload is None:
            parsed = None
        elif expected == "detection":
            parsed = DetectionResult(tuple(payload["acronyms"]))
        else:
            parsed = ExpansionResult(
                payload["acronym"], payload["expansion"], payload["confidence"], payload.get("rationale", "")
            )
        return cls(ParseStatus(data["status"]), parsed, data.get("raw", ""), tuple(data.get("notes", ())))


class _SchemaError(ValueError):
    pass


_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*\s*(.*?)\s*```", re.DOTALL)


def _fence_body(text: str) -> str | None:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else None


MAX_SPAN_STARTS = 32


def _balanced_spans(text: str):
    """Yield candidate substrings that start at an opening bracket and end at its match."""
    starts = [i for i, ch in enumerate(text) if ch in "{["][:MAX_SPAN_STARTS]
    for start in starts:
        stack = []
        in_string = escaped = False
        for end in range(start, len(text)):
            c = text[end]
            if in_string:
                if escaped:
                    escaped = False
                elif c == "\\":
                    escaped = True
                elif c == '"':
                    in_string = False
                continue
            if c == '"':
                in_string = True
            elif c in "{[":
                stack.append("}" if c == "{" else "]")
            elif c in "}]":
                if not stack or stack.pop() != c:
                    break
                if not stack:
                    yield text[start : end + 1]
                    break


def _coerce_detection(value: Any) -> tuple[DetectionResult, list[str]]:
    if isinstance(value, dict):
        for key in ("acronyms", "items", "acronym"):
            if key in value:
                value = value[key]
                break
        else:
            raise _SchemaError("no acronyms key")
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list):
        raise _SchemaError("acronyms must be a list")
    items = [str(v).strip() for v in value if isinstance(v, (str, int, float)) and str(v).strip()]
    return DetectionResult(tuple(dict.fromkeys(items))), []


def _coerce_expansion(value: Any) -> tuple[ExpansionResult, list[str]]:
    if isinstance(value, list):
        value = next((v for v in value if isinstance(v, dict)), None)
    if not isinstance(value, dict):
        raise _SchemaError("expected a JSON object")
    expansion = value.get("expansion")
    if not isinstance(expansion, str) or not expansion.strip():
        raise _SchemaError("missing or empty expansion")
    acronym = value.get("acronym")
    acronym = acronym.strip() if isinstance(acronym, str) else ""
    rationale = value.get("rationale")
    rationale = rationale if isinstance(rationale, str) else ("" if rationale is None else json.dumps(rationale))

    notes: list[str] = []
    confidence = value.get("confidence")
    if isinstance(confidence, str):
        try:
            confidence = float(confidence.strip().rstrip("%"))
        except ValueError:
            confidence = None
            notes.append("non-numeric confidence dropped")
    if isinstance(confidence, bool) or (confidence is not None and not isinstance(confidence, (int, float))):
        confidence = None
        notes.append("non-numeric confidence dropped")
    if confidence is not None:
        confidence = float(confidence)
        if math.isnan(confidence):
            confidence = None
            notes.append("NaN confidence dropped")
        elif not 0.0 <= confidence <= 1.0:
            notes.append(f"confidence {confidence} clamped")
            confidence = min(1.0, max(0.0, confidence))
    return ExpansionResult(acronym, expansion.strip(), confidence, rationale), notes


def parse_output(raw: str | None, expected: str) -> ParseOutcome:
    """Parse a model reply into a typed payload.

    The recovery ladder is strict JSON, then the body of a code fence,
    then the first balanced JSON object or array in the text. Empty replies
    and prose without any JSON are treated as blocked.
    """
    if expected not in ("detection", "expansion"):
        raise ValueError(f"expected must be 'detection' or 'expansion', got {expected!r}")
    raw = "" if raw is None else raw
    coerce = _coerce_detection if expected == "detection" else _coerce_expansion
    text = raw.strip()
    if not text:
        return ParseOutcome(ParseStatus.BLOCKED, None, raw, ("empty response",))

    attempts: list[tuple[str, str]] = [("strict", text)]
    fenced = _fence_body(text)
    if fenced is not None:
        attempts.append(("fence", fenced))
    attempts.extend(("balanced", span) for span in _balanced_spans(text))

    schema_problem = None
    for rung, candidate in attempts:
        try:
            value = json.loads(candidate)
        except (json.JSONDecodeError, RecursionError):
            continue
        try:
            payload, notes = coerce(value)
        except _SchemaError as exc:
            schema_problem = str(exc)
            continue
        status = ParseStatus.OK if rung == "strict" and not notes else ParseStatus.REPAIRED
        if rung != "strict":
            notes = [f"recovered via {rung}"] + notes
        return ParseOutcome(status, payload, raw, tuple(notes))

    if "{" not in text and "[" not in text:
        return ParseOutcome(ParseStatus.BLOCKED, None, raw, ("no JSON in response",))
    note = schema_problem or "no parseable JSON"
    return ParseOutcome(ParseStatus.PARSE_FAILURE, None, raw, (note,))
