"""Detection and expansion scoring.

Detection is exact string match. Expansions are scored with sentence-level
BLEU, LCS-based ROUGE-L and METEOR on token lists produced by one of the
two normalization pipelines. Scores are banded high/medium/low and
aggregated over rows x iterations.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Mapping, Sequence

import numpy as np

from .stemmer import stem as porter_stem
from .textnorm import NormalizationMode

METRIC_NAMES = ("bleu", "meteor", "rouge_l")


class Band(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


@dataclass(frozen=True)
class BandConfig:
    high_threshold: float = 0.7
    low_threshold: float = 0.3

    def __post_init__(self) -> None:
        if not 0.0 <= self.low_threshold < self.high_threshold <= 1.0:
            raise ValueError(
                f"band thresholds must satisfy 0 <= low < high <= 1, got "
                f"low={self.low_threshold} high={self.high_threshold}"
            )


@dataclass(frozen=True)
class MetricScore:
    bleu: float
    meteor: float
    rouge_l: float
    mode: NormalizationMode

    def __post_init__(self) -> None:
        for name in METRIC_NAMES:
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")

    @classmethod
    def zero(cls, mode: NormalizationMode) -> "MetricScore":
        return cls(0.0, 0.0, 0.0, NormalizationMode(mode))


def detection_match(detected: str | None, gold: str) -> int:
    """1 iff the trimmed strings are identical (case-sensitive). None scores 0."""
    if detected is None:
        return 0
    return int(detected.strip() == gold.strip())


# --------------------------------------------------------------------------
# BLEU
# --------------------------------------------------------------------------


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(candidate: Sequence[str], reference: Sequence[str], max_order: int = 4) -> float:
    """Smoothed sentence BLEU.

    The n-gram order is capped at the shorter of the two sequences so that
    two-token expansions are not zeroed out by missing 3/4-grams. Orders
    above 1 get add-one smoothing; unigram precision is unsmoothed.
    """
    order = min(max_order, len(candidate), len(reference))
    if order == 0:
        return 0.0

    log_sum = 0.0
    for n in range(1, order + 1):
        cand_counts = _ngrams(candidate, n)
        ref_counts = _ngrams(reference, n)
        matched = sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
        total = sum(cand_counts.values())
        if n == 1:
            if matched == 0:
                return 0.0
            precision = matched / total
        else:
            precision = (matched + 1) / (total + 1)
        log_sum += math.log(precision) / order

    if len(candidate) < len(reference):
        brevity = math.exp(1.0 - len(reference) / len(candidate))
    else:
        brevity = 1.0
    return min(1.0, brevity * math.exp(log_sum))


# --------------------------------------------------------------------------
# ROUGE-L
# --------------------------------------------------------------------------


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        curr = [0]
        for j, y in enumerate(b):
            if x == y:
                curr.append(prev[j] + 1)
            else:
                curr.append(max(prev[j + 1], curr[j]))
        prev = curr
    return prev[-1]


def rouge_l(candidate: Sequence[str], reference: Sequence[str]) -> float:
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate)
    recall = lcs / len(reference)
    return 2 * precision * recall / (precision + recall)


# --------------------------------------------------------------------------
# METEOR
# --------------------------------------------------------------------------

SynonymTable = Mapping[str, "frozenset[str] | set[str] | Sequence[str]"]


@dataclass(frozen=True)
class MeteorParams:
    alpha: float = 0.9
    gamma: float = 0.5
    beta: float = 3.0


def _synonymous(a: str, b: str, table: SynonymTable) -> bool:
    return b in table.get(a, ()) or a in table.get(b, ())


def meteor_alignment(
    candidate: Sequence[str],
    reference: Sequence[str],
    *,
    stemmer: Callable[[str], str] | None = porter_stem,
    synonyms: SynonymTable | None = None,
) -> list[tuple[int, int]]:
    """Staged unigram alignment: exact, then stem, then synonym.

    Within a stage each candidate token (left to right) takes the reference
    position right after its predecessor's match when that position is
    eligible, otherwise the leftmost eligible one. Returns (cand, ref) index
    pairs sorted by candidate index.
    """
    stages: list[Callable[[str, str], bool]] = [lambda a, b: a == b]
    if stemmer is not None:
        stages.append(lambda a, b: stemmer(a) == stemmer(b))
    if synonyms:
        stages.append(lambda a, b: _synonymous(a, b, synonyms))

    cand_to_ref: dict[int, int] = {}
    used_ref: set[int] = set()
    for same in stages:
        for i, tok in enumerate(candidate):
            if i in cand_to_ref:
                continue
            eligible = [j for j, ref in enumerate(reference) if j not in used_ref and same(tok, ref)]
            if not eligible:
                continue
            preferred = cand_to_ref.get(i - 1, -2) + 1
            j = preferred if preferred in eligible else eligible[0]
            cand_to_ref[i] = j
            used_ref.add(j)
    return sorted(cand_to_ref.items())


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev: tuple[int, int] | None = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor(
    candidate: Sequence[str],
    reference: Sequence[str],
    *,
    params: MeteorParams = MeteorParams(),
    stemmer: Callable[[str], str] | None = porter_stem,
    synonyms: SynonymTable | None = None,
) -> float:
    """METEOR with the usual defaults (alpha 0.9, gamma 0.5, beta 3).

    Note the fragmentation penalty never vanishes: a perfect match of m
    tokens scores 1 - 0.5 / m**3, not 1.
    """
    if not candidate or not reference:
        return 0.0
    alignment = meteor_alignment(candidate, reference, stemmer=stemmer, synonyms=synonyms)
    matches = len(alignment)
    if matches == 0:
        return 0.0
    precision = matches / len(candidate)
    recall = matches / len(reference)
    fmean = precision * recall / (params.alpha * precision + (1 - params.alpha) * recall)
    penalty = params.gamma * (count_chunks(alignment) / matches) ** params.beta
    return fmean * (1 - penalty)


def score_expansion(
    candidate: Sequence[str],
    reference: Sequence[str],
    mode: NormalizationMode | str,
    synonyms: SynonymTable | None = None,
) -> MetricScore:
    return MetricScore(
        bleu=bleu(candidate, reference),
        meteor=meteor(candidate, reference, synonyms=synonyms),
        rouge_l=rouge_l(candidate, reference),
        mode=NormalizationMode(mode),
    )


# --------------------------------------------------------------------------
# Banding and aggregation
# --------------------------------------------------------------------------


def stratify_band(score: float, config: BandConfig = BandConfig()) -> Band:
    if score >= config.high_threshold:
        return Band.HIGH
    if score <= config.low_threshold:
        return Band.LOW
    return Band.MEDIUM


@dataclass
class AggregateReport:
    per_row_means: list[float]
    overall_mean: float
    overall_std: float
    band_counts: dict[str, int] = field(default_factory=dict)
    iterations: int = 5

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping) -> "AggregateReport":
        return cls(
            per_row_means=[float(v) for v in data["per_row_means"]],
            overall_mean=float(data["overall_mean"]),
            overall_std=float(data["overall_std"]),
            band_counts={str(k): int(v) for k, v in data["band_counts"].items()},
            iterations=int(data["iterations"]),
        )


def aggregate(run_scores: Sequence[Sequence[float]], config: BandConfig = BandConfig()) -> AggregateReport:
    """Aggregate a rows x iterations score matrix.

    Mean and population standard deviation are taken over every
    (row, iteration) value; bands are assigned from per-row means.
    """
    if len(run_scores) == 0:
        raise ValueError("cannot aggregate an empty score matrix")
    widths = {len(row) for row in run_scores}
    if len(widths) != 1:
        raise ValueError(f"ragged iteration counts: {sorted(widths)}")
    iterations = widths.pop()
    if iterations < 1:
        raise ValueError("every row needs at least one iteration")

    matrix = np.asarray(run_scores, dtype=np.float64)
    per_row = matrix.mean(axis=1)
    counts = {band.value: 0 for band in Band}
    for value in per_row:
        counts[stratify_band(float(value), config).value] += 1
    return AggregateReport(
        per_row_means=[float(v) for v in per_row],
        overall_mean=float(matrix.mean()),
        overall_std=float(matrix.std(ddof=0)),
        band_counts=counts,
        iterations=iterations,
    )
