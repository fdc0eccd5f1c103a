"""Scoring of run logs and table/CSV/JSON reporting.

Every (instance, iteration) pair of the corpus gets one scored row per
normalization mode. Blocked, unparseable, failed or missing outputs score
zero instead of being dropped, so denominators always equal the corpus
size times the iteration count.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping, Sequence

from .corpus import Corpus
from .metrics import (
    METRIC_NAMES,
    AggregateReport,
    Band,
    BandConfig,
    SynonymTable,
    aggregate,
    detection_match,
    score_expansion,
    stratify_band,
)
from .pipeline import RunLog, entries_by_key
from .prompting import ParseOutcome
from .textnorm import NormalizationMode, normalized_tokens

REPORT_SCHEMA = "acrolocal-scores"
REPORT_VERSION = 1
MODES = (NormalizationMode.RAW.value, NormalizationMode.CLEAN.value)


class ReportError(Exception):
    pass


@dataclass(frozen=True)
class RowScore:
    instance_id: str
    iteration: int
    mode: str
    status: str
    detection: int | None
    bleu: float
    meteor: float
    rouge_l: float
    confidence: float | None = None
    candidate: str | None = None


@dataclass
class ScoreReport:
    run_id: str
    model: str
    pipeline_mode: str
    iterations: int
    n_instances: int
    rows: list[RowScore]
    detection: AggregateReport | None
    metrics: dict[str, dict[str, AggregateReport]]
    band_config: BandConfig = field(default_factory=BandConfig)

    def rows_for(self, mode: str) -> list[RowScore]:
        return [r for r in self.rows if r.mode == mode]

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema": REPORT_SCHEMA,
            "version": REPORT_VERSION,
            "run_id": self.run_id,
            "model": self.model,
            "pipeline_mode": self.pipeline_mode,
            "iterations": self.iterations,
            "n_instances": self.n_instances,
            "band_config": asdict(self.band_config),
            "detection": None if self.detection is None else self.detection.to_dict(),
            "metrics": {m: {k: v.to_dict() for k, v in by.items()} for m, by in self.metrics.items()},
            "rows": [asdict(r) for r in self.rows],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ScoreReport":
        if data.get("schema") != REPORT_SCHEMA:
            raise ReportError("not a score report")
        if data.get("version") != REPORT_VERSION:
            raise ReportError(f"unsupported score-report version {data.get('version')!r}")
        detection = data.get("detection")
        return cls(
            run_id=data["run_id"],
            model=data["model"],
            pipeline_mode=data["pipeline_mode"],
            iterations=int(data["iterations"]),
            n_instances=int(data["n_instances"]),
            rows=[RowScore(**r) for r in data["rows"]],
            detection=None if detection is None else AggregateReport.from_dict(detection),
            metrics={
                m: {k: AggregateReport.from_dict(v) for k, v in by.items()} for m, by in data["metrics"].items()
            },
            band_config=BandConfig(**data.get("band_config", {})),
        )


def _expansion_of(outcome: ParseOutcome | None) -> tuple[str | None, float | None, str | None]:
    """(expansion, confidence, acronym) from a successful expansion parse."""
    if outcome is None or not outcome.succeeded or outcome.payload is None:
        return None, None, None
    payload = outcome.payload
    return payload.expansion, payload.confidence, payload.acronym


def score_run(
    log: RunLog,
    corpus: Corpus,
    *,
    model: str | None = None,
    band_config: BandConfig = BandConfig(),
    synonyms: SynonymTable | None = None,
) -> ScoreReport:
    """Score every instance-iteration of ``corpus`` from the entries in ``log``.

    Single-pass detection compares the model's acronym to the gold short
    form. Cascaded detection counts a hit when the gold acronym is among the
    detected ones, and only the expansion produced for the gold acronym is
    scored. With perfect detection assumed there is no detection column.
    """
    gold = corpus.by_id()
    unknown = sorted({e.instance_id for e in log.entries} - gold.keys())
    if unknown:
        raise ReportError(f"run log references ids not in the corpus: {', '.join(unknown[:5])}")

    if not len(corpus):
        raise ReportError("cannot score against an empty corpus")

    config = log.config
    iterations = config.iterations
    cascaded = config.mode == "cascaded"
    has_detection = not (cascaded and config.assume_perfect_detection)
    grouped = entries_by_key(log.entries)

    rows: list[RowScore] = []
    det_matrix: list[list[float]] = []
    score_matrix = {mode: {name: [] for name in METRIC_NAMES} for mode in MODES}

    for inst in corpus:
        det_row: list[float] = []
        per_mode = {mode: {name: [] for name in METRIC_NAMES} for mode in MODES}
        for iteration in range(1, iterations + 1):
            entries = grouped.get((inst.id, iteration), [])
            detection: int | None = None
            candidate = confidence = None
            status = "missing"

            if not cascaded:
                entry = next((e for e in entries if e.stage == "single_pass"), None)
                if entry is not None:
                    status = entry.status
                    candidate, confidence, acronym = _expansion_of(entry.outcome)
                    detection = detection_match(acronym, inst.acronym)
                else:
                    detection = 0
            else:
                if has_detection:
                    det_entry = next((e for e in entries if e.stage == "detection"), None)
                    detection = 0
                    if det_entry is not None:
                        status = det_entry.status
                        out = det_entry.outcome
                        if out is not None and out.succeeded and out.payload is not None:
                            detection = int(any(detection_match(a, inst.acronym) for a in out.payload.acronyms))
                exp_entry = next(
                    (e for e in entries if e.stage == "expansion" and e.acronym == inst.acronym), None
                )
                if exp_entry is not None:
                    status = exp_entry.status
                    candidate, confidence, _ = _expansion_of(exp_entry.outcome)
                elif status in ("ok", "repaired"):
                    status = "no_expansion"

            if detection is not None:
                det_row.append(float(detection))
            for mode in MODES:
                score = score_expansion(
                    normalized_tokens(candidate, mode), normalized_tokens(inst.expansion, mode), mode, synonyms
                )
                rows.append(
                    RowScore(
                        inst.id, iteration, mode, status, detection,
                        score.bleu, score.meteor, score.rouge_l, confidence, candidate,
                    )
                )
                for name in METRIC_NAMES:
                    per_mode[mode][name].append(getattr(score, name))
        if has_detection:
            det_matrix.append(det_row)
        for mode in MODES:
            for name in METRIC_NAMES:
                score_matrix[mode][name].append(per_mode[mode][name])

    metrics = {
        mode: {name: aggregate(score_matrix[mode][name], band_config) for name in METRIC_NAMES} for mode in MODES
    }
    if model is None:
        model = (config.expander_backend if cascaded else config.detector_backend) or "unknown"
    return ScoreReport(
        run_id=log.run_id,
        model=model,
        pipeline_mode=config.mode,
        iterations=iterations,
        n_instances=len(corpus),
        rows=rows,
        detection=aggregate(det_matrix, band_config) if has_detection else None,
        metrics=metrics,
        band_config=band_config,
    )


# --------------------------------------------------------------------------
# Calibration
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationBin:
    lo: float
    hi: float
    count: int
    empirical_accuracy: float | None


@dataclass(frozen=True)
class CalibrationReport:
    bins: tuple[CalibrationBin, ...]
    overconfident: bool
    metric: str = "rouge_l"
    mode: str = "clean"

    def to_dict(self) -> dict[str, Any]:
        return {
            "metric": self.metric,
            "mode": self.mode,
            "overconfident": self.overconfident,
            "bins": [asdict(b) for b in self.bins],
        }


def calibration_report(
    report: ScoreReport,
    *,
    metric: str = "rouge_l",
    mode: str = "clean",
    n_bins: int = 10,
    flag_from: float = 0.9,
    min_accuracy: float = 0.5,
) -> CalibrationReport:
    """Bin self-reported confidences and compare them with correctness.

    A row counts as correct when its score on ``metric`` falls in the high
    band. The overconfidence flag is raised when any bin starting at or
    above ``flag_from`` holds rows with accuracy below ``min_accuracy``.
    """
    rows = [r for r in report.rows_for(mode) if r.confidence is not None]
    if not rows:
        return CalibrationReport((), False, metric, mode)

    hits = [[0, 0] for _ in range(n_bins)]
    for row in rows:
        idx = min(int(row.confidence * n_bins), n_bins - 1)
        correct = stratify_band(getattr(row, metric), report.band_config) is Band.HIGH
        hits[idx][0] += 1
        hits[idx][1] += int(correct)

    bins = []
    for i, (count, good) in enumerate(hits):
        bins.append(CalibrationBin(i / n_bins, (i + 1) / n_bins, count, good / count if count else None))
    overconfident = any(
        b.lo >= flag_from - 1e-12 and b.count and b.empirical_accuracy < min_accuracy for b in bins
    )
    return CalibrationReport(tuple(bins), overconfident, metric, mode)


# --------------------------------------------------------------------------
# Tables
# --------------------------------------------------------------------------

TABLE_HEADER = (
    "Model", "Text", "Det. Acc.", "BLEU", "METEOR", "ROUGE-L",
    "BLEU H/M/L", "METEOR H/M/L", "ROUGE-L H/M/L",
)  # fmt: skip
SUMMARY_HEADER = ("Model", "Pipeline", "Text", "BLEU", "METEOR", "ROUGE-L", "Mean")


def _bands(agg: AggregateReport) -> str:
    c = agg.band_counts
    return f"{c.get('high', 0)}/{c.get('medium', 0)}/{c.get('low', 0)}"


def table_rows(reports: Sequence[ScoreReport]) -> list[list[str]]:
    out = []
    for report in reports:
        det = "n/a"
        if report.detection is not None:
            det = f"{report.detection.overall_mean:.3f} ± {report.detection.overall_std:.3f}"
        for mode in MODES:
            by = report.metrics[mode]
            out.append(
                [report.model, mode.capitalize(), det]
                + [f"{by[name].overall_mean:.3f}" for name in METRIC_NAMES]
                + [_bands(by[name]) for name in METRIC_NAMES]
            )
    return out


def summary_rows(reports: Sequence[ScoreReport], mode: str = "clean") -> list[list[str]]:
    out = []
    for report in reports:
        by = report.metrics[mode]
        means = [by[name].overall_mean for name in METRIC_NAMES]
        out.append(
            [report.model, report.pipeline_mode, mode.capitalize()]
            + [f"{m:.3f}" for m in means]
            + [f"{sum(means) / len(means):.3f}"]
        )
    return out


def _render(header: Sequence[str], rows: Sequence[Sequence[str]], fmt: str) -> str:
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(header)
        writer.writerows(rows)
        return buf.getvalue()
    raise ValueError(f"unknown table format {fmt!r}")


def emit_tables(reports: ScoreReport | Sequence[ScoreReport], fmt: str = "markdown") -> str:
    """Results table with Raw and Clean rows per model.

    Metric columns hold overall means; the detection column is mean ± population std.
    """
    if isinstance(reports, ScoreReport):
        reports = [reports]
    return _render(TABLE_HEADER, table_rows(reports), fmt)


def emit_summary(reports: ScoreReport | Sequence[ScoreReport], fmt: str = "csv", mode: str = "clean") -> str:
    """One row per model with mean expansion scores, ready for plotting."""
    if isinstance(reports, ScoreReport):
        reports = [reports]
    return _render(SUMMARY_HEADER, summary_rows(reports, mode), fmt)


SCORES_CSV_HEADER = (
    "instance_id", "iteration", "mode", "status", "detection", "bleu", "meteor", "rouge_l", "confidence",
)  # fmt: skip


def emit_scores_csv(report: ScoreReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(SCORES_CSV_HEADER)
    for r in report.rows:
        writer.writerow([
            r.instance_id, r.iteration, r.mode, r.status,
            "" if r.detection is None else r.detection,
            repr(r.bleu), repr(r.meteor), repr(r.rouge_l),
            "" if r.confidence is None else repr(r.confidence),
        ])  # fmt: skip
    return buf.getvalue()
