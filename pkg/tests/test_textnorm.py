from hypothesis import given, settings
from hypothesis import strategies as st

from acrolocal.textnorm import (
    NormalizationMode,
    normalize,
    normalize_clean,
    normalize_raw,
    normalized_tokens,
    tokenize,
)


def test_raw_lowercases_and_collapses_whitespace():
    assert normalize_raw("  Multiple\tSclerosis \n") == "multiple sclerosis"


def test_raw_keeps_punctuation():
    assert normalize_raw("B-cell receptor.") == "b-cell receptor."


def test_clean_splits_hyphens_and_drops_punctuation():
    assert normalize_clean("B-cell receptor.") == "b cell receptor"
    assert normalize_clean("interleukin_6 (IL-6)") == "interleukin 6 il 6"


def test_clean_strips_markup():
    assert normalize_clean("```json\n**Mitral** <b>stenosis</b>\n```") == "mitral stenosis"


def test_unicode_composed_forms_agree():
    decomposed = "Électro-cardiogram"
    assert normalize_raw(decomposed) == normalize_raw("Électro-cardiogram")
    assert normalize_clean(decomposed) == "électro cardiogram"


def test_normalize_dispatches_on_mode():
    assert normalize("A-B", "raw") == "a-b"
    assert normalize("A-B", NormalizationMode.CLEAN) == "a b"


def test_tokenize_and_none_handling():
    assert tokenize("a b  c") == ["a", "b", "c"]
    assert tokenize("") == []
    assert normalized_tokens(None, "clean") == []
    assert normalized_tokens("Mitral Stenosis", "raw") == ["mitral", "stenosis"]


@settings(max_examples=300)
@given(st.text())
def test_both_modes_are_idempotent(text):
    assert normalize_raw(normalize_raw(text)) == normalize_raw(text)
    assert normalize_clean(normalize_clean(text)) == normalize_clean(text)


@settings(max_examples=300)
@given(st.text())
def test_clean_absorbs_raw(text):
    assert normalize_clean(normalize_raw(text)) == normalize_clean(text)


@settings(max_examples=300)
@given(st.text())
def test_output_has_no_stray_whitespace(text):
    for out in (normalize_raw(text), normalize_clean(text)):
        assert out == out.strip()
        assert "  " not in out
        assert tokenize(out) == out.split()
