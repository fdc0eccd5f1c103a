import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from acrolocal.prompting import (
    EXPANSION_TASK,
    STRICT_JSON_RULE,
    DetectionResult,
    ExpansionResult,
    ParseOutcome,
    ParseStatus,
    PromptError,
    parse_output,
    prompt_kind,
    render_annotation,
    render_cascaded_detection,
    render_cascaded_expansion,
    render_single_pass,
)

TEXT = "ED staff cardiac device interrogations are faster , and with similar 30- day outcomes , as compared to SP ."


def test_single_pass_task_text_is_verbatim():
    obj = json.loads(render_single_pass(TEXT).serialize())
    assert obj["Task"] == "Find the acronym in the text and expand the meaning of the acronym in the given text."
    assert obj["Text"] == TEXT
    assert "Acronym" not in obj
    assert STRICT_JSON_RULE in obj["Rules"]


def test_expansion_prompt_shape():
    serialized = render_cascaded_expansion(TEXT, "SP").serialize()
    obj = json.loads(serialized)
    assert list(obj) == ["Task", "Text", "Acronym", "Rules"]
    assert obj["Task"] == EXPANSION_TASK
    assert obj["Acronym"] == "SP"
    assert obj["Rules"][0] == "Output strict JSON on one line"
    assert serialized == render_cascaded_expansion(TEXT, "SP").serialize()


def test_expansion_requires_acronym_in_text():
    with pytest.raises(PromptError):
        render_cascaded_expansion(TEXT, "MS")
    with pytest.raises(PromptError):
        render_cascaded_expansion(TEXT, "")
    with pytest.raises(PromptError):
        render_single_pass("   ")


def test_quotes_newlines_and_unicode_survive():
    text = 'He said "MS" \\ twice\nthen wrote é and {braces}'
    for template in (render_single_pass(text), render_cascaded_detection(text), render_annotation(text)):
        serialized = template.serialize()
        assert "é" in serialized
        assert json.loads(serialized)["Text"] == text


def test_prompt_kind_round_trip():
    assert prompt_kind(render_single_pass(TEXT).serialize())[0] == "single_pass"
    assert prompt_kind(render_cascaded_detection(TEXT).serialize())[0] == "detection"
    assert prompt_kind(render_annotation(TEXT).serialize())[0] == "annotation"
    with pytest.raises(PromptError):
        prompt_kind('{"Task": "something else"}')


@given(st.text(min_size=1).filter(lambda s: s.strip()))
def test_rendered_prompts_have_no_unfilled_slots(text):
    for template in (render_single_pass(text), render_cascaded_detection(text)):
        obj = json.loads(template.serialize())
        assert obj["Text"] == text
        assert obj["Task"] == template.task_text
        assert "{" not in obj["Task"]


# -- parsing -----------------------------------------------------------------

GOOD = '{"acronym": "SP", "expansion": "standard practice", "confidence": 0.9, "rationale": "context"}'


def test_strict_json_is_ok():
    out = parse_output(GOOD, "expansion")
    assert out.status is ParseStatus.OK
    assert out.payload == ExpansionResult("SP", "standard practice", 0.9, "context")
    assert out.succeeded


def test_fenced_and_embedded_json_are_repaired():
    fenced = parse_output(f"Sure!\n```json\n{GOOD}\n```\n", "expansion")
    assert fenced.status is ParseStatus.REPAIRED
    assert "recovered via fence" in fenced.notes
    embedded = parse_output(f"The answer is {GOOD} as requested.", "expansion")
    assert embedded.status is ParseStatus.REPAIRED
    assert embedded.payload.expansion == "standard practice"


def test_blocked_and_failures():
    assert parse_output("", "expansion").status is ParseStatus.BLOCKED
    assert parse_output(None, "detection").status is ParseStatus.BLOCKED
    assert parse_output("I cannot help with that.", "expansion").status is ParseStatus.BLOCKED
    assert parse_output('{"acronym": "SP"', "expansion").status is ParseStatus.PARSE_FAILURE
    missing = parse_output('{"acronym": "SP"}', "expansion")
    assert missing.status is ParseStatus.PARSE_FAILURE
    assert missing.payload is None and not missing.succeeded
    with pytest.raises(ValueError):
        parse_output(GOOD, "summary")


def test_confidence_is_clamped_with_a_note():
    out = parse_output('{"acronym": "SP", "expansion": "x", "confidence": 1.7}', "expansion")
    assert out.status is ParseStatus.REPAIRED
    assert out.payload.confidence == 1.0
    assert any("clamped" in note for note in out.notes)
    text_conf = parse_output('{"expansion": "x", "confidence": "high"}', "expansion")
    assert text_conf.payload.confidence is None


def test_detection_shapes():
    assert parse_output('{"acronyms": ["ED", "SP", "ED"]}', "detection").payload == DetectionResult(("ED", "SP"))
    assert parse_output('["PT"]', "detection").payload == DetectionResult(("PT",))
    assert parse_output('{"acronym": "PT"}', "detection").payload == DetectionResult(("PT",))
    assert parse_output('{"acronyms": []}', "detection").payload == DetectionResult(())


def test_outcome_dict_round_trip():
    for raw, kind in ((GOOD, "expansion"), ('{"acronyms": ["A1"]}', "detection"), ("", "expansion")):
        out = parse_output(raw, kind)
        assert ParseOutcome.from_dict(json.loads(json.dumps(out.to_dict())), kind) == out


@given(st.text(max_size=200))
def test_parser_never_raises(raw):
    for kind in ("expansion", "detection"):
        out = parse_output(raw, kind)
        assert out.raw == raw
        assert out.succeeded == (out.payload is not None)
