from __future__ import annotations

import pytest

from saiba_rt.markup import FmlDocument, Intention, IntentionClass, Modality, TimeMarker
from saiba_rt.planner import (
    SpeechRate,
    compile_fml,
    estimate_speech_timing,
    priority_from_importance,
)


def test_speech_timing_of_anger(anger_doc):
    timing = estimate_speech_timing(anger_doc)
    assert timing.marker_times == {"speech-start": 0.0, "tm1": 0.8, "tm2": 2.0, "speech-end": 2.0}
    assert timing.utterance_duration_s == 2.0
    assert timing.word_times[2] == (2, 0.8, 1.2)


def test_custom_rate(anger_doc):
    timing = estimate_speech_timing(anger_doc, SpeechRate(0.3))
    assert timing.marker_times["tm1"] == 0.6
    assert timing.utterance_duration_s == 1.5


@pytest.mark.parametrize("importance, priority", [(0.0, 0), (0.05, 1), (0.25, 3), (0.5, 5), (0.8, 8), (1.0, 10)])
def test_priority_rounds_half_up(importance, priority):
    assert priority_from_importance(importance) == priority


def test_anger_compiles_to_frown_and_ample_arm(anger_doc, libs):
    bml = compile_fml(anger_doc, libs)
    by_id = {s.id: s for s in bml.signals}
    assert set(by_id) == {"speech", "i1.face.frown", "i1.gesture.ample_arm"}
    frown, arm = by_id["i1.face.frown"], by_id["i1.gesture.ample_arm"]
    assert frown.modality is Modality.FACE and frown.lexeme == "frown"
    # onset 0.8 - attack 0.2; offset 2.0 + decay 0.3
    assert dict(frown.sync) == {"start": 0.6, "end": 2.3}
    # stroke anchored on the intention onset
    assert dict(arm.sync) == {"start": 0.4, "stroke": 0.8, "stroke_end": 2.0, "end": 2.5}
    assert frown.priority == arm.priority == 8
    assert by_id["speech"].lexeme == "This is completely unacceptable behaviour"


def test_compile_is_deterministic(anger_doc, libs):
    assert compile_fml(anger_doc, libs, seed=3) == compile_fml(anger_doc, libs, seed=3)


def test_start_clamped_at_zero(libs):
    doc = FmlDocument(("hi",), (Intention("i", IntentionClass.EMOTION, "anger", "speech-start", "speech-end"),))
    bml = compile_fml(doc, libs)
    assert all(s.start >= 0 for s in bml.signals)


def test_empty_speech_gives_zero_length_plan(libs):
    bml = compile_fml(FmlDocument(), libs)
    assert bml.utterance_duration_s == 0
    assert [s.id for s in bml.signals] == ["speech"]


def test_every_lexicon_entry_plans_and_validates(libs):
    for (cls, lexeme) in libs.lexicon:
        doc = FmlDocument(
            ("one", TimeMarker("a"), "two", "three", TimeMarker("b"), "four"),
            (Intention("x", IntentionClass(cls), lexeme, "a", "b", 0.3),),
        )
        for seed in range(3):
            compile_fml(doc, libs, seed=seed).validate()
