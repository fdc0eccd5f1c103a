"""Loading, filtering and characterising acronym-disambiguation corpora.

A corpus file is CSV (header ``id,text,acronym,expansion,domain``) or JSONL
with the same keys. Each row links one context sentence to its target short
form and gold long form.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .textnorm import normalize_clean

if TYPE_CHECKING:
    from .inference import Backend

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
COLUMNS = ("id", "text", "acronym", "expansion", "domain")
DOMAINS = ("biomedical", "general")
MODE_LABELS = ("single_pass", "cascaded")


class CorpusError(Exception):
    """Raised for unreadable or invalid corpus data."""


class CorpusLoadError(CorpusError):
    def __init__(self, path: str | Path, problems: Sequence[tuple[int | None, str]]):
        self.path = str(path)
        self.problems = list(problems)
        lines = [f"row {row}: {msg}" if row is not None else msg for row, msg in self.problems]
        super().__init__(f"{self.path}: " + "; ".join(lines))


@dataclass(frozen=True)
class Instance:
    id: str
    text: str
    acronym: str
    expansion: str
    domain: str = "biomedical"

    def to_dict(self) -> dict[str, str]:
        return asdict(self)


@dataclass(frozen=True)
class Corpus:
    instances: tuple[Instance, ...]
    mode_label: str = "cascaded"
    source: str = ""
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self) -> None:
        if self.mode_label not in MODE_LABELS:
            raise CorpusError(f"unknown mode label {self.mode_label!r}")
        dupes = [k for k, n in Counter(i.id for i in self.instances).items() if n > 1]
        if dupes:
            raise CorpusError(f"duplicate ids: {', '.join(sorted(dupes))}")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def ids(self) -> list[str]:
        return [inst.id for inst in self.instances]

    def by_id(self) -> dict[str, Instance]:
        return {inst.id: inst for inst in self.instances}


@dataclass(frozen=True)
class ExtractionRule:
    """Token-bounded run of ``min_length``+ ASCII capitals.

    ``overrides`` maps an instance id to the acronym list a reviewer
    confirmed for it; it replaces the rule's output for that id.
    """

    min_length: int = 2
    overrides: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.min_length < 2:
            raise ValueError("minimum acronym length must be at least 2")

    @property
    def pattern(self) -> str:
        return rf"\b[A-Z]{{{self.min_length},}}\b"

    def check_overrides(self, ids: Iterable[str]) -> None:
        unknown = set(self.overrides) - set(ids)
        if unknown:
            raise CorpusError(f"overrides reference unknown ids: {', '.join(sorted(unknown))}")


@dataclass(frozen=True)
class AnnotationFlags:
    id: str
    detected_items: tuple[str, ...]
    needs_review: bool
    rule_items: tuple[str, ...] = ()
    note: str = ""

    def to_dict(self) -> dict:
        data = asdict(self)
        data["detected_items"] = list(self.detected_items)
        data["rule_items"] = list(self.rule_items)
        return data


@dataclass(frozen=True)
class CorpusStats:
    total_instances: int
    average_tokens: float
    unique_acronyms: int
    unique_expansions: int
    overshadowed_instances: int
    overshadowed_ratio: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterResult:
    corpus: Corpus
    rejected: tuple[tuple[str, str], ...]  # (id, reason)


# --------------------------------------------------------------------------
# Extraction
# --------------------------------------------------------------------------


def _is_word_char(ch: str) -> bool:
    # Same class as the regex \w on str patterns.
    return ch.isalnum() or ch == "_"


def extract_acronyms(text: str, rule: ExtractionRule = ExtractionRule()) -> list[str]:
    """All token-bounded uppercase runs of at least ``rule.min_length`` letters.

    A match must cover a whole run of word characters, so "IL6", "mRNA" and
    "COVIDs" yield nothing while "COVID-19" yields "COVID". Order and
    duplicates are preserved.
    """
    found: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if not _is_word_char(text[i]):
            i += 1
            continue
        j = i
        while j < n and _is_word_char(text[j]):
            j += 1
        word = text[i:j]
        if len(word) >= rule.min_length and all("A" <= ch <= "Z" for ch in word):
            found.append(word)
        i = j
    return found


def candidate_acronyms(inst: Instance, rule: ExtractionRule) -> list[str]:
    if inst.id in rule.overrides:
        return list(rule.overrides[inst.id])
    return extract_acronyms(inst.text, rule)


def contains_token(text: str, token: str) -> bool:
    return re.search(rf"(?<!\w){re.escape(token)}(?!\w)", text) is not None


# --------------------------------------------------------------------------
# Loading
# --------------------------------------------------------------------------


def _read_rows(path: Path) -> list[tuple[int, dict]]:
    """Return (row number, record) pairs; row numbers are 1-based data rows."""
    suffix = path.suffix.lower()
    with path.open(encoding="utf-8", newline="") as fh:
        if suffix in (".jsonl", ".ndjson"):
            rows = []
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise CorpusLoadError(path, [(lineno, f"invalid JSON: {exc.msg}")]) from None
                if not isinstance(record, dict):
                    raise CorpusLoadError(path, [(lineno, "expected a JSON object")])
                missing = [c for c in COLUMNS if c not in record]
                if missing:
                    raise CorpusLoadError(path, [(lineno, f"missing keys: {', '.join(missing)}")])
                rows.append((lineno, record))
            return rows

        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if header is None:
            return []
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise CorpusLoadError(path, [(None, f"missing column(s): {', '.join(missing)}")])
        return [(n, row) for n, row in enumerate(reader, start=1)]


def load_corpus(
    path: str | Path,
    mode_label: str = "cascaded",
    rule: ExtractionRule = ExtractionRule(),
) -> Corpus:
    path = Path(path)
    if not path.is_file():
        raise CorpusError(f"corpus file not found: {path}")
    rows = _read_rows(path)
    if not rows:
        raise CorpusLoadError(path, [(None, "empty file")])

    problems: list[tuple[int | None, str]] = []
    seen: dict[str, int] = {}
    instances: list[Instance] = []
    for rowno, record in rows:
        values = {c: "" if record.get(c) is None else str(record[c]) for c in COLUMNS}
        inst = Instance(
            id=values["id"].strip(),
            text=values["text"],
            acronym=values["acronym"].strip(),
            expansion=values["expansion"].strip(),
            domain=values["domain"].strip() or "biomedical",
        )
        row_problems = []
        for name in ("id", "text", "acronym", "expansion"):
            if not getattr(inst, name).strip():
                row_problems.append(f"empty {name}")
        if inst.domain not in DOMAINS:
            row_problems.append(f"unknown domain {inst.domain!r}")
        if inst.id in seen:
            row_problems.append(f"duplicate id {inst.id!r} (first at row {seen[inst.id]})")
        if inst.acronym and inst.text and not contains_token(inst.text, inst.acronym):
            row_problems.append(f"acronym {inst.acronym!r} not found in text")
        if mode_label == "single_pass" and inst.id not in rule.overrides:
            distinct = set(extract_acronyms(inst.text, rule))
            if len(distinct) > 1:
                row_problems.append(f"single-pass row has {len(distinct)} acronyms: {sorted(distinct)}")
        problems.extend((rowno, msg) for msg in row_problems)
        seen.setdefault(inst.id, rowno)
        instances.append(inst)

    if problems:
        raise CorpusLoadError(path, problems)
    return Corpus(tuple(instances), mode_label=mode_label, source=str(path))


def write_corpus(corpus: Corpus | Iterable[Instance], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    instances = corpus.instances if isinstance(corpus, Corpus) else tuple(corpus)
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        with path.open("w", encoding="utf-8") as fh:
            for inst in instances:
                fh.write(json.dumps(inst.to_dict(), ensure_ascii=False) + "\n")
        return
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=COLUMNS)
        writer.writeheader()
        for inst in instances:
            writer.writerow(inst.to_dict())


# --------------------------------------------------------------------------
# Filtering
# --------------------------------------------------------------------------


def filter_single_acronym(
    corpus: Corpus,
    rule: ExtractionRule = ExtractionRule(),
    flags: Sequence[AnnotationFlags] | None = None,
) -> FilterResult:
    """Keep rows whose text carries exactly one distinct acronym.

    Reviewer overrides in ``rule`` take precedence. Without an override, a
    row flagged for review by the annotator is rejected, since nobody has
    confirmed that it really holds a single acronym.
    """
    rule.check_overrides(corpus.ids)
    flag_by_id = {f.id: f for f in flags or ()}
    kept: list[Instance] = []
    rejected: list[tuple[str, str]] = []
    for inst in corpus:
        candidates = candidate_acronyms(inst, rule)
        distinct = list(dict.fromkeys(candidates))
        flag = flag_by_id.get(inst.id)
        if inst.id not in rule.overrides and flag is not None and flag.needs_review:
            rejected.append((inst.id, f"flagged for review: annotator listed {list(flag.detected_items)}"))
        elif len(distinct) != 1:
            rejected.append((inst.id, f"{len(distinct)} distinct acronyms: {distinct}"))
        else:
            kept.append(inst)
    result = Corpus(tuple(kept), mode_label="single_pass", source=corpus.source)
    return FilterResult(result, tuple(rejected))


# --------------------------------------------------------------------------
# Overshadowing and statistics
# --------------------------------------------------------------------------


def _sense_counts(corpus: Corpus) -> dict[str, Counter]:
    senses: dict[str, Counter] = defaultdict(Counter)
    for inst in corpus:
        senses[inst.acronym][normalize_clean(inst.expansion)] += 1
    return senses


def _overshadowed(inst: Instance, senses: Mapping[str, Counter]) -> bool:
    counts = senses[inst.acronym]
    return counts[normalize_clean(inst.expansion)] < max(counts.values())


def is_overshadowed(instance: Instance, corpus: Corpus) -> bool:
    """True iff the row's gold sense is strictly rarer than its acronym's top sense.

    Ties with the top sense do not count as overshadowed.
    """
    if instance not in corpus.instances:
        raise CorpusError(f"instance {instance.id!r} is not part of the corpus")
    return _overshadowed(instance, _sense_counts(corpus))


def compute_stats(corpus: Corpus) -> CorpusStats:
    total = len(corpus)
    if total == 0:
        raise CorpusError("cannot compute statistics of an empty corpus")
    senses = _sense_counts(corpus)
    overshadowed = sum(_overshadowed(inst, senses) for inst in corpus)
    tokens = sum(len(inst.text.split()) for inst in corpus)
    return CorpusStats(
        total_instances=total,
        average_tokens=tokens / total,
        unique_acronyms=len(senses),
        unique_expansions=len({normalize_clean(inst.expansion) for inst in corpus}),
        overshadowed_instances=overshadowed,
        overshadowed_ratio=overshadowed / total,
    )


STATS_HEADER = (
    "Dataset",
    "Mode",
    "Total Instances",
    "Average Tokens",
    "Unique Acronym",
    "Unique Expansion",
    "Overshadowed Instances",
    "Overshadowed Ratio (%)",
)


def stats_row(stats: CorpusStats, dataset: str, mode: str) -> list[str]:
    return [
        dataset,
        mode,
        f"{stats.total_instances:,}",
        f"{stats.average_tokens:.2f}",
        f"{stats.unique_acronyms:,}",
        f"{stats.unique_expansions:,}",
        f"{stats.overshadowed_instances:,}",
        f"{100 * stats.overshadowed_ratio:.2f}",
    ]


def stats_markdown(rows: Sequence[tuple[CorpusStats, str, str]]) -> str:
    lines = ["| " + " | ".join(STATS_HEADER) + " |", "|" + "---|" * len(STATS_HEADER)]
    for stats, dataset, mode in rows:
        lines.append("| " + " | ".join(stats_row(stats, dataset, mode)) + " |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# LLM-assisted annotation
# --------------------------------------------------------------------------


def annotate_candidates(instance: Instance, annotator: "Backend", rule: ExtractionRule = ExtractionRule()) -> AnnotationFlags:
    """Ask an annotator model to list acronyms/equations/alphanumerics.

    The instance is flagged for human review whenever the annotator's set
    of items differs from the rule-based extraction. Backend errors and
    unparseable replies are flagged with no items.
    """
    from .inference import BackendError
    from .prompting import parse_output, render_annotation

    rule_items = tuple(dict.fromkeys(extract_acronyms(instance.text, rule)))
    prompt = render_annotation(instance.text)
    try:
        record = annotator.complete(prompt, instance_id=instance.id)
    except BackendError as exc:
        logger.warning("annotation failed for %s: %s", instance.id, exc)
        return AnnotationFlags(instance.id, (), True, rule_items, note=f"backend error: {exc}")

    outcome = parse_output(record.response, "detection")
    if outcome.payload is None:
        return AnnotationFlags(instance.id, (), True, rule_items, note=f"annotator output {outcome.status.value}")
    detected = tuple(outcome.payload.acronyms)
    needs_review = set(detected) != set(rule_items)
    return AnnotationFlags(instance.id, detected, needs_review, rule_items)


def annotate_corpus(
    corpus: Corpus,
    annotator: "Backend",
    rule: ExtractionRule = ExtractionRule(),
    parallelism: int | None = None,
) -> list[AnnotationFlags]:
    workers = max(1, parallelism or getattr(annotator, "parallelism", 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda inst: annotate_candidates(inst, annotator, rule), corpus.instances))
