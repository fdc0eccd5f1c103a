"""Raw and Clean text normalization plus the whitespace tokenizer used by all metrics.

Raw keeps punctuation and only lowercases and collapses whitespace. Clean
additionally drops markup remnants, turns hyphens and underscores into
spaces and keeps only alphanumerics.
"""

from __future__ import annotations

import re
import unicodedata
from enum import Enum
from typing import Iterable, Pattern


class NormalizationMode(str, Enum):
    RAW = "raw"
    CLEAN = "clean"


# Canonical composition applied before and after lowercasing.
UNICODE_FORM = "NFC"

DEFAULT_MARKUP_PATTERNS: tuple[Pattern[str], ...] = (
    re.compile(r"```[^\s`]*"),  # code fences, with optional language tag
    re.compile(r"</?[a-z][^<>]*>"),  # angle-bracket tags (input is already lowercase)
    re.compile(r"\*+"),  # asterisk emphasis
)


def _collapse(text: str) -> str:
    return " ".join(text.split())


def normalize_raw(text: str) -> str:
    text = unicodedata.normalize(UNICODE_FORM, text)
    text = unicodedata.normalize(UNICODE_FORM, text.lower())
    return _collapse(text)


def normalize_clean(text: str, markup_patterns: Iterable[Pattern[str]] = DEFAULT_MARKUP_PATTERNS) -> str:
    text = normalize_raw(text)
    for pattern in markup_patterns:
        text = pattern.sub(" ", text)
    text = text.replace("-", " ").replace("_", " ")
    text = "".join(ch for ch in text if ch.isalnum() or ch.isspace())
    return _collapse(text)


def normalize(text: str, mode: NormalizationMode | str) -> str:
    mode = NormalizationMode(mode)
    if mode is NormalizationMode.RAW:
        return normalize_raw(text)
    return normalize_clean(text)


def tokenize(text: str) -> list[str]:
    """Split normalized text on single spaces, dropping empties."""
    return [tok for tok in text.split(" ") if tok]


def normalized_tokens(text: str | None, mode: NormalizationMode | str) -> list[str]:
    if not text:
        return []
    return tokenize(normalize(text, mode))
