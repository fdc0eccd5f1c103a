from __future__ import annotations

from importlib import resources

import pytest

from acrolocal.corpus import Corpus, Instance, load_corpus


def mini_corpus_path():
    return resources.files("acrolocal") / "data" / "mini_corpus.csv"


@pytest.fixture
def mini_path():
    return str(mini_corpus_path())


@pytest.fixture
def mini_corpus():
    return load_corpus(str(mini_corpus_path()))


def make_corpus(rows, mode_label="cascaded"):
    """Build a corpus from (id, text, acronym, expansion) tuples."""
    return Corpus(tuple(Instance(*row) for row in rows), mode_label=mode_label)


def synthetic_corpus(n, mode_label="single_pass"):
    rows = []
    for i in range(n):
        acronym = "AB" + chr(ord("A") + i % 26) + chr(ord("A") + (i // 26) % 26)
        rows.append((f"s-{i:03d}", f"Result {i} for {acronym} was recorded.", acronym, f"sense number {i}"))
    return make_corpus(rows, mode_label)


# Acceptance results, printed as one line per criterion at the end of the run.
ACCEPTANCE_RESULTS: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS, key=lambda k: [int(p) if p.isdigit() else p for p in k.split(".")]):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
