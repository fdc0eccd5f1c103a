"""Command-line entry point.

Subcommands::

    acrolocal prepare   --input corpus.csv --out prepared/ [--annotate mock]
    acrolocal stats     --corpus prepared/cascaded.csv
    acrolocal run       --corpus prepared/single_pass.csv --mode single-pass --backend mock
    acrolocal evaluate  --run <run-id>
    acrolocal report    --run <run-id> [--run <run-id> ...] --format markdown
    acrolocal normalize --mode clean < lines.txt
    acrolocal probe     --backend http

Exit codes: 0 success, 2 configuration, 3 data, 4 backend, 5 internal error.
Backend settings come from command-line flags, then ACROLOCAL_ENDPOINT /
ACROLOCAL_MODEL, then the config file (--config, ACROLOCAL_CONFIG, or
./acrolocal.toml).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections import Counter
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .corpus import (
    CorpusError,
    ExtractionRule,
    annotate_corpus,
    compute_stats,
    filter_single_acronym,
    load_corpus,
    stats_markdown,
    write_corpus,
)
from .inference import (
    BackendError,
    ConfigError,
    HttpBackend,
    MockBackend,
    MockBehavior,
    PrivacyError,
    backend_config_from,
    read_config_file,
)
from .inference import probe as probe_backend
from .metrics import BandConfig
from .pipeline import (
    JsonlLogWriter,
    RunConfig,
    RunError,
    RunLog,
    RunLogError,
    load_log,
    new_run_id,
    resolve_run,
    run_cascaded,
    run_dir,
    run_single_pass,
    write_run_config,
)
from .prompting import PromptError
from .report import (
    ReportError,
    ScoreReport,
    calibration_report,
    emit_scores_csv,
    emit_summary,
    emit_tables,
    score_run,
)
from .textnorm import normalize

logger = logging.getLogger("acrolocal")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5

ENV_CONFIG = "ACROLOCAL_CONFIG"
DEFAULT_CONFIG = "acrolocal.toml"


def _emit(args: argparse.Namespace, payload: Any, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, indent=2, ensure_ascii=False))
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


# --------------------------------------------------------------------------
# Backend resolution
# --------------------------------------------------------------------------


def _config_file(args: argparse.Namespace) -> dict[str, Any]:
    path = getattr(args, "config", None) or os.environ.get(ENV_CONFIG)
    if path:
        return read_config_file(path)
    if Path(DEFAULT_CONFIG).is_file():
        return read_config_file(DEFAULT_CONFIG)
    return {}


def _http_backend(name: str, args: argparse.Namespace) -> HttpBackend:
    sections = _config_file(args).get("backends", {})
    if name != "http" and name not in sections:
        known = ", ".join(["mock", "http", *sorted(sections)])
        raise ConfigError(f"unknown backend {name!r} (known: {known})")
    config = backend_config_from(
        sections.get(name),
        endpoint=getattr(args, "endpoint", None),
        model_name=getattr(args, "model", None),
        force_remote=True if getattr(args, "force_remote", False) else None,
    )
    return HttpBackend(config)


def _backend(name: str, args: argparse.Namespace, corpus=None):
    if name == "mock":
        if corpus is None:
            return MockBackend(MockBehavior(seed=getattr(args, "seed", 0)))
        block = frozenset(b for b in (getattr(args, "block_ids", "") or "").split(",") if b)
        behavior = MockBehavior.from_corpus(
            corpus, error_rate=getattr(args, "error_rate", 0.0), seed=getattr(args, "seed", 0), block_ids=block
        )
        return MockBackend(behavior)
    return _http_backend(name, args)


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------


def _read_overrides(path: str | None) -> dict[str, tuple[str, ...]]:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise CorpusError(f"cannot read overrides {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise CorpusError("overrides file must map instance ids to acronym lists")
    return {str(k): tuple(v) for k, v in data.items()}


def cmd_prepare(args: argparse.Namespace) -> int:
    rule = ExtractionRule(min_length=args.rule_min_len, overrides=_read_overrides(args.overrides))
    corpus = load_corpus(args.input, mode_label="cascaded", rule=rule)
    flags = None
    if args.annotate:
        annotator = _backend(args.annotate, args)
        flags = annotate_corpus(corpus, annotator, rule)
    result = filter_single_acronym(corpus, rule, flags)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    suffix = ".jsonl" if args.format == "jsonl" else ".csv"
    write_corpus(corpus, out / f"cascaded{suffix}")
    write_corpus(result.corpus, out / f"single_pass{suffix}")
    by_id = corpus.by_id()
    review = [f for f in flags or () if f.needs_review]
    with (out / "review.jsonl").open("w", encoding="utf-8") as fh:
        for flag in review:
            record = flag.to_dict() | {"text": by_id[flag.id].text}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")

    payload = {
        "cascaded": len(corpus),
        "single_pass": len(result.corpus),
        "flagged_for_review": len(review),
        "rejected": [{"id": i, "reason": r} for i, r in result.rejected],
        "out": str(out),
    }
    text = (
        f"cascaded: {len(corpus)} rows -> {out / ('cascaded' + suffix)}\n"
        f"single-pass: {len(result.corpus)} rows -> {out / ('single_pass' + suffix)}\n"
        f"flagged for review: {len(review)} -> {out / 'review.jsonl'}\n"
    )
    _emit(args, payload, text)
    return EXIT_OK


def cmd_stats(args: argparse.Namespace) -> int:
    rule = ExtractionRule(min_length=args.rule_min_len)
    corpus = load_corpus(args.corpus, mode_label=args.mode_label, rule=rule)
    stats = compute_stats(corpus)
    dataset = args.dataset or Counter(i.domain for i in corpus).most_common(1)[0][0].capitalize()
    mode = "Single-pass" if args.mode_label == "single_pass" else "Cascaded"
    payload = {"dataset": dataset, "mode": args.mode_label, "source": str(args.corpus), **stats.to_dict()}
    if args.json:
        _emit(args, payload)
    else:
        sys.stdout.write(stats_markdown([(stats, dataset, mode)]))
        sys.stdout.write("\n" + json.dumps(payload, indent=2) + "\n")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    mode = args.mode.replace("-", "_")
    detector_name = args.detector or args.backend
    expander_name = args.expander or args.backend
    if mode == "single_pass" and not detector_name:
        raise ConfigError("single-pass runs need --backend")
    if mode == "cascaded" and not expander_name:
        raise ConfigError("cascaded runs need --backend or --expander")
    if mode == "cascaded" and not args.assume_perfect_detection and not detector_name:
        raise ConfigError("cascaded detection needs --backend or --detector")

    corpus = load_corpus(args.corpus, mode_label=mode)
    config = RunConfig(
        mode=mode,
        iterations=args.iterations,
        detector_backend=detector_name or "",
        expander_backend=expander_name if mode == "cascaded" else None,
        assume_perfect_detection=args.assume_perfect_detection,
        corpus_path=str(Path(args.corpus).resolve()),
        extra={"seed": args.seed, "error_rate": args.error_rate, "block_ids": args.block_ids or ""},
    )
    run_id = args.run_id or new_run_id()
    directory = run_dir(args.runs_dir, run_id)
    if (directory / "log.jsonl").exists():
        raise RunLogError(f"run directory {directory} already exists")

    if mode == "single_pass":
        backend = _backend(detector_name, args, corpus)
        backends = [backend]
    else:
        expander = _backend(expander_name, args, corpus)
        detector = None if args.assume_perfect_detection else _backend(detector_name, args, corpus)
        backends = [b for b in (detector, expander) if b is not None]

    header = RunLog(run_id, config, "").header()
    with JsonlLogWriter(directory / "log.jsonl", header) as writer:
        if mode == "single_pass":
            log = run_single_pass(corpus, backends[0], config, on_entry=writer, run_id=run_id)
        else:
            log = run_cascaded(corpus, detector, expander, config, on_entry=writer, run_id=run_id)
    write_run_config(directory, log)

    statuses = Counter(e.status for e in log.entries)
    payload = {
        "run_id": run_id,
        "path": str(directory),
        "entries": len(log.entries),
        "statuses": dict(sorted(statuses.items())),
        "backends": [b.backend_id for b in backends],
    }
    text = f"run {run_id}: {len(log.entries)} entries -> {directory}\n" + "".join(
        f"  {k}: {v}\n" for k, v in sorted(statuses.items())
    )
    _emit(args, payload, text)
    return EXIT_OK


def _score(args: argparse.Namespace, ref: str) -> tuple[ScoreReport, Path]:
    log_path = resolve_run(ref, args.runs_dir)
    log = load_log(log_path)
    corpus_path = getattr(args, "corpus", None) or log.config.corpus_path
    if not corpus_path:
        raise ConfigError("run log does not record its corpus; pass --corpus")
    corpus = load_corpus(corpus_path, mode_label=log.config.mode)
    try:
        band = BandConfig(args.high, args.low)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return score_run(log, corpus, model=getattr(args, "label", None), band_config=band), log_path.parent


def cmd_evaluate(args: argparse.Namespace) -> int:
    report, directory = _score(args, args.run)
    (directory / "scores.json").write_text(report.to_json(), encoding="utf-8")
    (directory / "scores.csv").write_text(emit_scores_csv(report), encoding="utf-8", newline="")
    summary = report.to_dict()
    summary.pop("rows")
    for by in summary["metrics"].values():
        for agg in by.values():
            agg.pop("per_row_means")
    if summary["detection"] is not None:
        summary["detection"].pop("per_row_means")
    _emit(args, summary, emit_tables(report, "markdown"))
    return EXIT_OK


def _load_or_score(args: argparse.Namespace, ref: str) -> ScoreReport:
    log_path = resolve_run(ref, args.runs_dir)
    scores = log_path.parent / "scores.json"
    if scores.is_file() and not getattr(args, "corpus", None):
        try:
            return ScoreReport.from_dict(json.loads(scores.read_text(encoding="utf-8")))
        except (ValueError, KeyError) as exc:
            raise ReportError(f"{scores}: {exc}") from exc
    return _score(args, ref)[0]


def cmd_report(args: argparse.Namespace) -> int:
    reports = [_load_or_score(args, ref) for ref in args.run]
    if args.calibration:
        cal = {r.run_id: calibration_report(r).to_dict() for r in reports}
        lines = []
        for run_id, data in cal.items():
            lines.append(f"{run_id}: overconfident={data['overconfident']}")
            for b in data["bins"]:
                acc = "-" if b["empirical_accuracy"] is None else f"{b['empirical_accuracy']:.3f}"
                lines.append(f"  [{b['lo']:.1f}, {b['hi']:.1f}) n={b['count']} acc={acc}")
        _emit(args, cal, "\n".join(lines) + "\n")
        return EXIT_OK
    if args.summary:
        text = emit_summary(reports, args.format)
    else:
        text = emit_tables(reports, args.format)
    if args.json:
        _emit(args, {"format": args.format, "document": text})
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_normalize(args: argparse.Namespace) -> int:
    lines = sys.stdin.read().splitlines()
    outputs = [normalize(line, args.mode) for line in lines]
    if args.json:
        _emit(args, [{"input": i, "output": o} for i, o in zip(lines, outputs)])
    else:
        sys.stdout.write("".join(o + "\n" for o in outputs))
    return EXIT_OK


def cmd_probe(args: argparse.Namespace) -> int:
    if args.backend == "mock":
        report = {"backend": "mock", "healthy": True, "status": "ok", "detail": "in-process mock"}
    else:
        backend = _http_backend(args.backend, args)
        report = probe_backend(backend.config)
    text = f"{report.get('endpoint', report.get('backend'))}: {report['status']} ({report.get('detail', '')})\n"
    _emit(args, report, text)
    return EXIT_OK if report["healthy"] else EXIT_BACKEND


# --------------------------------------------------------------------------
# Parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable JSON output")

    backend_opts = argparse.ArgumentParser(add_help=False)
    backend_opts.add_argument("--config", help="TOML or JSON file with [backends.<name>] sections")
    backend_opts.add_argument("--endpoint", help="override the backend endpoint URL")
    backend_opts.add_argument("--model", help="override the backend model name")
    backend_opts.add_argument(
        "--force-remote", action="store_true", help="allow endpoints outside loopback/private networks"
    )

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--runs-dir", default="runs")
    scoring.add_argument("--corpus", help="corpus to score against (default: the one recorded in the run)")
    scoring.add_argument("--label", help="model label for tables (default: backend name)")
    scoring.add_argument("--high", type=float, default=0.7, help="high-band threshold (inclusive)")
    scoring.add_argument("--low", type=float, default=0.3, help="low-band threshold (inclusive)")

    parser = argparse.ArgumentParser(prog="acrolocal", description="Local clinical acronym disambiguation harness")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common, backend_opts], help="split a corpus into cascaded/single-pass files")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--rule-min-len", type=int, default=2)
    p.add_argument("--annotate", metavar="BACKEND", help="flag rows with an annotator model (e.g. mock)")
    p.add_argument("--overrides", help="JSON mapping instance id -> reviewer-confirmed acronyms")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("stats", parents=[common], help="corpus statistics table")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode-label", choices=("cascaded", "single_pass"), default="cascaded")
    p.add_argument("--dataset", help="dataset label for the table (default: majority domain)")
    p.add_argument("--rule-min-len", type=int, default=2)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("run", parents=[common, backend_opts], help="run inference over a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--mode", choices=("single-pass", "cascaded"), required=True)
    p.add_argument("--backend", help="backend for every stage (mock, http, or a config section)")
    p.add_argument("--detector", help="stage-1 backend (cascaded)")
    p.add_argument("--expander", help="stage-2 backend (cascaded)")
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--assume-perfect-detection", action="store_true", help="route the gold acronym to stage 2")
    p.add_argument("--runs-dir", default="runs")
    p.add_argument("--run-id")
    p.add_argument("--seed", type=int, default=0, help="mock backend seed")
    p.add_argument("--error-rate", type=float, default=0.0, help="mock backend corruption rate")
    p.add_argument("--block-ids", default="", help="comma-separated ids the mock backend refuses")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", parents=[common, scoring], help="score a run")
    p.add_argument("--run", required=True, help="run id, run directory or log path")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", parents=[common, scoring], help="results tables for one or more runs")
    p.add_argument("--run", required=True, action="append", help="repeat for a multi-model table")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--summary", action="store_true", help="per-model mean expansion scores")
    p.add_argument("--calibration", action="store_true", help="confidence calibration bins")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("normalize", parents=[common], help="normalize stdin lines")
    p.add_argument("--mode", choices=("raw", "clean"), default="clean")
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("probe", parents=[common, backend_opts], help="check a backend is reachable")
    p.add_argument("--backend", default="http")
    p.set_defaults(func=cmd_probe)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, PrivacyError, RunError, PromptError) as exc:
        code, message = EXIT_CONFIG, str(exc)
    except (CorpusError, RunLogError, ReportError, OSError) as exc:
        code, message = EXIT_DATA, str(exc)
    except BackendError as exc:
        code, message = EXIT_BACKEND, str(exc)
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        code, message = EXIT_INTERNAL, f"internal error: {exc!r}"
    print(f"acrolocal: error: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
