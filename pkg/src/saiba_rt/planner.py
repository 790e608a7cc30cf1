"""Behavior planner: FML intentions -> BML signals.

Speech timing comes from a fixed per-word rate instead of a TTS engine.
All arithmetic happens on integer milliseconds so that e.g. 0.8 - 0.2 is
exactly 0.6 in the emitted document.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .lexicon import Libraries, resolve_intention, sample_behavior_set
from .markup import BmlDocument, FmlDocument, Modality, Signal
from .prng import SplitMix64
from .timebase import to_ms, to_s

DEFAULT_WORD_DURATION_S = 0.4
SPEECH_SIGNAL_ID = "speech"


@dataclass(frozen=True)
class SpeechRate:
    word_duration_s: float = DEFAULT_WORD_DURATION_S

    def __post_init__(self):
        if not self.word_duration_s > 0:
            raise ValueError("word duration must be > 0")


@dataclass(frozen=True)
class SpeechTiming:
    marker_times: dict[str, float]
    word_times: tuple[tuple[int, float, float], ...]
    utterance_duration_s: float


def estimate_speech_timing(doc: FmlDocument, rate_cfg: SpeechRate | None = None) -> SpeechTiming:
    """Word k spans [k*w, (k+1)*w); a marker sits at the start of the next word."""
    w = to_ms((rate_cfg or SpeechRate()).word_duration_s)
    n_words = len(doc.words)
    words = tuple((k, to_s(k * w), to_s((k + 1) * w)) for k in range(n_words))
    markers = {name: to_s(pos * w) for name, pos in doc.marker_positions().items()}
    return SpeechTiming(markers, words, to_s(n_words * w))


def priority_from_importance(importance: float) -> int:
    # half-up, not banker's rounding
    return math.floor(importance * 10 + 0.5)


def plan_behaviors(
    doc: FmlDocument, libs: Libraries, timing: SpeechTiming, seed: int = 0
) -> BmlDocument:
    duration = to_ms(timing.utterance_duration_s)
    signals = [
        Signal(
            SPEECH_SIGNAL_ID,
            Modality.SPEECH,
            " ".join(doc.words),
            {"start": 0.0, "end": to_s(duration)},
        )
    ]
    rng = SplitMix64(seed)
    for intention in doc.intentions:
        chosen = sample_behavior_set(resolve_intention(libs, intention), rng.next_u64())
        on = to_ms(timing.marker_times[intention.start_ref])
        off = to_ms(timing.marker_times[intention.end_ref])
        priority = priority_from_importance(intention.importance)
        for modality, name in sorted(chosen):
            sig_id = f"{intention.id}.{modality.value}.{name}"
            if modality is Modality.FACE:
                face = libs.faces[name]
                sync = {
                    "start": max(0, on - to_ms(face.attack_s)),
                    "end": off + to_ms(face.decay_s),
                }
            else:
                g = libs.gestuary[name]
                end = off + to_ms(g.retraction_s)
                sync = {
                    "start": max(0, on - to_ms(g.preparation_s)),
                    "stroke": on,
                    "stroke_end": min(max(on + to_ms(g.stroke_s), off), end),
                    "end": end,
                }
            signals.append(
                Signal(sig_id, modality, name, {k: to_s(v) for k, v in sync.items()}, priority)
            )
    bml = BmlDocument(tuple(signals), to_s(duration))
    bml.validate()
    bml.check_bounds(libs.max_tail_s)
    return bml


def compile_fml(
    doc: FmlDocument, libs: Libraries, rate_cfg: SpeechRate | None = None, seed: int = 0
) -> BmlDocument:
    return plan_behaviors(doc, libs, estimate_speech_timing(doc, rate_cfg), seed)

