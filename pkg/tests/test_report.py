import csv
import io
import json

import pytest

from acrolocal.corpus import Corpus
from acrolocal.inference import CompletionRecord
from acrolocal.metrics import BandConfig
from acrolocal.pipeline import LogEntry, RunConfig, RunLog, run_cascaded, run_single_pass
from acrolocal.prompting import parse_output
from acrolocal.report import (
    ReportError,
    ScoreReport,
    calibration_report,
    emit_scores_csv,
    emit_summary,
    emit_tables,
    score_run,
)

from conftest import make_corpus, synthetic_corpus
from helpers import mock_for


def run_sp(corpus, iterations=1, **mock_kwargs):
    config = RunConfig(iterations=iterations, detector_backend="mock")
    return run_single_pass(corpus, mock_for(corpus, **mock_kwargs), config)


def handmade_log(corpus, replies, mode="single_pass"):
    """One single-pass entry per (id, reply) with the given raw model reply."""
    log = RunLog("hand", RunConfig(mode=mode, iterations=1, detector_backend="hand"))
    for instance_id, reply in replies.items():
        outcome = parse_output(reply, "expansion")
        acronym = outcome.payload.acronym if outcome.payload else None
        record = CompletionRecord("p", reply, 0.0, 1, "hand")
        log.append(LogEntry(instance_id, 1, "single_pass", outcome.status.value, acronym, record, outcome))
    return log


def test_perfect_run_scores():
    corpus = synthetic_corpus(3)
    report = score_run(run_sp(corpus, iterations=2), corpus, model="mock")
    assert report.n_instances == 3 and report.iterations == 2
    assert report.detection.overall_mean == 1.0
    for mode in ("raw", "clean"):
        assert report.metrics[mode]["bleu"].overall_mean == pytest.approx(1.0)
        assert report.metrics[mode]["meteor"].overall_mean == pytest.approx(1 - 0.5 / 27)
    assert len(report.rows) == 3 * 2 * 2


def test_blocked_row_scores_zero_and_keeps_denominator():
    corpus = synthetic_corpus(4)
    report = score_run(run_sp(corpus, block_ids={"s-002"}), corpus, model="mock")
    assert report.detection.overall_mean == pytest.approx(0.75)
    assert report.metrics["clean"]["rouge_l"].overall_mean == pytest.approx(0.75)
    blocked = [r for r in report.rows if r.instance_id == "s-002"]
    assert all(r.status == "blocked" and r.bleu == r.meteor == r.rouge_l == 0 and r.detection == 0 for r in blocked)


def test_missing_entries_score_zero():
    corpus = synthetic_corpus(2)
    log = handmade_log(corpus, {"s-000": '{"acronym": "ABAA", "expansion": "sense number 0", "confidence": 1}'})
    report = score_run(log, corpus, model="m")
    missing = [r for r in report.rows if r.instance_id == "s-001"]
    assert {r.status for r in missing} == {"missing"}
    assert report.detection.overall_mean == 0.5


def test_raw_and_clean_differ_on_punctuation():
    corpus = make_corpus([("a", "The BCR pathway", "BCR", "B-cell receptor")], "single_pass")
    log = handmade_log(corpus, {"a": '{"acronym": "BCR", "expansion": "B cell receptor", "confidence": 0.9}'})
    report = score_run(log, corpus, model="m")
    raw, clean = report.rows_for("raw")[0], report.rows_for("clean")[0]
    assert clean.rouge_l == 1.0
    assert raw.rouge_l < clean.rouge_l


def test_unknown_ids_and_empty_corpus_rejected():
    corpus = synthetic_corpus(2)
    log = run_sp(corpus)
    with pytest.raises(ReportError):
        score_run(log, make_corpus([("zz", "AB", "AB", "x")], "single_pass"))
    with pytest.raises(ReportError):
        score_run(RunLog("x", RunConfig()), Corpus((), mode_label="single_pass"))


def test_cascaded_scoring_uses_gold_acronym(mini_corpus):
    config = RunConfig(mode="cascaded", iterations=1, detector_backend="det", expander_backend="exp")
    log = run_cascaded(mini_corpus, mock_for(mini_corpus), mock_for(mini_corpus), config)
    report = score_run(log, mini_corpus)
    assert report.model == "exp"
    assert report.detection.overall_mean == 1.0
    assert report.metrics["clean"]["bleu"].overall_mean == pytest.approx(1.0)
    perfect = RunConfig(mode="cascaded", iterations=1, expander_backend="exp", assume_perfect_detection=True)
    log = run_cascaded(mini_corpus, None, mock_for(mini_corpus), perfect)
    report = score_run(log, mini_corpus)
    assert report.detection is None
    assert "n/a" in emit_tables(report)


def test_report_json_round_trip():
    corpus = synthetic_corpus(3)
    report = score_run(run_sp(corpus, iterations=2, block_ids={"s-001"}), corpus, model="mock")
    again = ScoreReport.from_dict(json.loads(report.to_json()))
    assert again.rows == report.rows
    assert again.metrics == report.metrics
    assert again.detection == report.detection
    with pytest.raises(ReportError):
        ScoreReport.from_dict({"schema": "other"})


def test_calibration_flags_confident_errors():
    corpus = synthetic_corpus(10)
    wrong = score_run(run_sp(corpus, error_rate=1.0), corpus, model="m")
    calib = calibration_report(wrong)
    assert calib.overconfident
    top = calib.bins[-1]
    assert top.count == 10 and top.empirical_accuracy == 0.0
    right = score_run(run_sp(corpus), corpus, model="m")
    assert not calibration_report(right).overconfident
    assert calibration_report(right, mode="raw").bins[-1].empirical_accuracy == 1.0


def test_calibration_without_confidences():
    corpus = synthetic_corpus(2)
    report = score_run(run_sp(corpus, block_ids=set(corpus.ids)), corpus, model="m")
    calib = calibration_report(report)
    assert calib.bins == () and not calib.overconfident


def test_golden_markdown_table():
    corpus = synthetic_corpus(4)
    report = score_run(run_sp(corpus, block_ids={"s-002"}), corpus, model="mock")
    expected = (
        "| Model | Text | Det. Acc. | BLEU | METEOR | ROUGE-L | BLEU H/M/L | METEOR H/M/L | ROUGE-L H/M/L |\n"
        "|---|---|---|---|---|---|---|---|---|\n"
        "| mock | Raw | 0.750 ± 0.433 | 0.750 | 0.736 | 0.750 | 3/0/1 | 3/0/1 | 3/0/1 |\n"
        "| mock | Clean | 0.750 ± 0.433 | 0.750 | 0.736 | 0.750 | 3/0/1 | 3/0/1 | 3/0/1 |\n"
    )
    assert emit_tables(report) == expected


def test_csv_outputs_and_summary():
    corpus = synthetic_corpus(4)
    a = score_run(run_sp(corpus), corpus, model="alpha")
    b = score_run(run_sp(corpus, block_ids={"s-000", "s-001"}), corpus, model="beta")
    table = list(csv.reader(io.StringIO(emit_tables([a, b], "csv"))))
    assert len(table) == 5 and table[0][0] == "Model"
    summary = list(csv.reader(io.StringIO(emit_summary([a, b]))))
    assert [row[0] for row in summary[1:]] == ["alpha", "beta"]
    assert summary[2][3] == "0.500"
    scores = list(csv.DictReader(io.StringIO(emit_scores_csv(b))))
    assert len(scores) == 8
    assert float(scores[0]["bleu"]) == 0.0
    with pytest.raises(ValueError):
        emit_tables(a, "html")


def test_custom_band_config_is_used():
    corpus = synthetic_corpus(2)
    report = score_run(run_sp(corpus), corpus, model="m", band_config=BandConfig(0.99, 0.5))
    assert report.metrics["clean"]["meteor"].band_counts == {"high": 0, "medium": 2, "low": 0}
