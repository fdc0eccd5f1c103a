import itertools
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from nltk.translate.bleu_score import SmoothingFunction, sentence_bleu

from acrolocal.metrics import (
    AggregateReport,
    Band,
    BandConfig,
    MetricScore,
    aggregate,
    bleu,
    count_chunks,
    detection_match,
    lcs_length,
    meteor,
    meteor_alignment,
    rouge_l,
    score_expansion,
    stratify_band,
)

tokens = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), max_size=8)


def brute_lcs(a, b):
    """Longest common subsequence by enumerating subsequences of the shorter list."""
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    for size in range(len(short), 0, -1):
        for idx in itertools.combinations(range(len(short)), size):
            sub = [short[i] for i in idx]
            it = iter(long_)
            if all(tok in it for tok in sub):
                return size
    return 0


def brute_rouge(c, r):
    lcs = brute_lcs(c, r)
    if lcs == 0:
        return 0.0
    p, rec = lcs / len(c), lcs / len(r)
    return 2 * p * rec / (p + rec)


# -- detection ---------------------------------------------------------------


def test_detection_match_is_exact_and_case_sensitive():
    assert detection_match(" MS ", "MS") == 1
    assert detection_match("ms", "MS") == 0
    assert detection_match(None, "MS") == 0


# -- BLEU --------------------------------------------------------------------


def test_bleu_hand_cases():
    assert bleu(["mitral", "stenosis"], ["mitral", "stenosis"]) == pytest.approx(1.0, abs=1e-9)
    assert bleu(["a", "b"], ["a", "c"]) == pytest.approx(0.5, abs=1e-9)
    assert bleu([], ["a"]) == 0.0
    assert bleu(["a"], []) == 0.0
    assert bleu(["x"], ["y"]) == 0.0


def test_bleu_brevity_penalty():
    # one-token candidate: order 1, precision 1, BP = exp(1 - 3/1)
    assert bleu(["a"], ["a", "b", "c"]) == pytest.approx(math.exp(-2), abs=1e-12)


@settings(max_examples=400, deadline=None)
@given(tokens, tokens)
def test_bleu_matches_nltk_oracle(cand, ref):
    order = min(4, len(cand), len(ref))
    ours = bleu(cand, ref)
    if order == 0:
        assert ours == 0.0
        return
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        expected = sentence_bleu(
            [ref], cand, weights=(1 / order,) * order, smoothing_function=SmoothingFunction().method2
        )
    assert ours == pytest.approx(min(1.0, expected), abs=1e-9)


# -- ROUGE-L -----------------------------------------------------------------


def test_rouge_hand_cases():
    assert rouge_l(["a", "b", "c"], ["a", "b", "c"]) == 1.0
    assert rouge_l(["a", "b"], ["b", "a"]) == pytest.approx(0.5)
    assert rouge_l([], ["a"]) == 0.0
    assert rouge_l(["a", "x", "b"], ["a", "b"]) == pytest.approx(2 * (2 / 3) * 1 / (2 / 3 + 1))


def test_rouge_exhaustive_small_alphabet():
    lists = [list(p) for n in range(0, 7) for p in itertools.product("abc", repeat=n)]
    # all pairs up to length 4 plus a seeded sample of longer pairs keeps this quick
    short = [x for x in lists if len(x) <= 4]
    for c in short:
        for r in short:
            assert lcs_length(c, r) == brute_lcs(c, r)
            assert rouge_l(c, r) == pytest.approx(brute_rouge(c, r), abs=1e-12)


@given(tokens, tokens)
def test_rouge_bounds_and_symmetry(c, r):
    value = rouge_l(c, r)
    assert 0.0 <= value <= 1.0
    assert value == pytest.approx(rouge_l(r, c))


# -- METEOR ------------------------------------------------------------------


@pytest.mark.parametrize("m", range(1, 9))
def test_meteor_identity(m):
    toks = [f"w{i}" for i in range(m)]
    assert meteor(toks, toks) == pytest.approx(1 - 0.5 / m**3, abs=1e-9)


def test_meteor_uses_stems_and_synonyms():
    assert meteor(["receptors"], ["receptor"]) == pytest.approx(0.5)
    assert meteor(["heart", "attack"], ["myocardial", "infarction"]) == 0.0
    table = {"heart": {"myocardial"}, "attack": {"infarction"}}
    assert meteor(["heart", "attack"], ["myocardial", "infarction"], synonyms=table) == pytest.approx(1 - 0.5 / 8)


def test_meteor_fragmentation():
    # two matches in two chunks
    assert count_chunks(meteor_alignment(["b", "a"], ["a", "b"])) == 2
    assert meteor(["b", "a"], ["a", "b"]) == pytest.approx(1 - 0.5)
    assert meteor([], ["a"]) == 0.0


def test_meteor_alignment_prefers_contiguous_match():
    alignment = meteor_alignment(["a", "b"], ["b", "x", "a", "b"])
    assert alignment == [(0, 2), (1, 3)]


@given(tokens, tokens)
def test_meteor_bounds(c, r):
    assert 0.0 <= meteor(c, r) <= 1.0


# -- scores, banding, aggregation -------------------------------------------


def test_score_expansion_and_range_check():
    score = score_expansion(["a"], ["a"], "clean")
    assert score.bleu == 1.0 and score.rouge_l == 1.0
    assert MetricScore.zero("raw").meteor == 0.0
    with pytest.raises(ValueError):
        MetricScore(1.2, 0.0, 0.0, "raw")


def test_band_examples():
    assert stratify_band(0.70) is Band.HIGH
    assert stratify_band(0.30) is Band.LOW
    assert stratify_band(0.50) is Band.MEDIUM
    assert stratify_band(0.0) is Band.LOW and stratify_band(1.0) is Band.HIGH


def test_band_config_validation():
    with pytest.raises(ValueError):
        BandConfig(high_threshold=0.3, low_threshold=0.7)
    assert stratify_band(0.55, BandConfig(0.5, 0.2)) is Band.HIGH


def test_band_sweep_partitions_unit_interval():
    counts = {band: 0 for band in Band}
    for k in range(1001):
        score = k / 1000
        band = stratify_band(score)
        counts[band] += 1
        assert (band is Band.HIGH) == (score >= 0.7)
        assert (band is Band.LOW) == (score <= 0.3)
    assert sum(counts.values()) == 1001
    assert counts[Band.HIGH] == 301 and counts[Band.LOW] == 301 and counts[Band.MEDIUM] == 399


def test_aggregate_hand_case():
    agg = aggregate([[1.0, 0.0], [0.5, 0.5], [1.0, 1.0]])
    assert agg.overall_mean == pytest.approx(4 / 6)
    assert agg.overall_std == pytest.approx(np.std([1, 0, 0.5, 0.5, 1, 1]))
    assert agg.per_row_means == [0.5, 0.5, 1.0]
    assert agg.band_counts == {"high": 1, "medium": 2, "low": 0}
    assert agg.iterations == 2
    assert AggregateReport.from_dict(agg.to_dict()) == agg


def test_aggregate_rejects_bad_shapes():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([[1.0], [1.0, 0.0]])


@settings(max_examples=200)
@given(st.lists(st.lists(st.integers(0, 1), min_size=3, max_size=3), min_size=1, max_size=30))
def test_binary_std_is_bernoulli(matrix):
    agg = aggregate(matrix)
    p = agg.overall_mean
    assert agg.overall_std == pytest.approx(math.sqrt(p * (1 - p)), abs=1e-9)
