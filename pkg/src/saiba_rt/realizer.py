"""Behavior realizer: BML signals -> per-channel keyframe timeline.

Conflicts on exclusive modalities are settled first; the surviving signals
are turned into keyframes (AU trapezoids for faces, phase poses for
gesture-like behaviors, open/close visemes for speech) and evaluated with a
monotone cubic so values never overshoot their neighbouring knots.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .frames import AXES, DEFAULT_FPS, Channel, FramePacket
from .interpolate import MonotoneCubic
from .lexicon import Libraries
from .markup import BmlDocument, Modality, Signal
from .timebase import frame_ms, to_ms, to_s

EXCLUSIVE_MODALITIES = frozenset({Modality.GESTURE, Modality.HEAD, Modality.GAZE, Modality.TORSO})

VISEME_CHANNEL = Channel.viseme("open")
VISEME_PEAK = 0.7
REST_VALUE = 0.0


class UnknownBehaviorError(LookupError):
    def __init__(self, signal: Signal):
        self.signal_id = signal.id
        super().__init__(
            f"signal {signal.id!r}: {signal.modality.value} behavior {signal.lexeme!r} not in libraries"
        )


@dataclass(frozen=True, order=True)
class Keyframe:
    t_ms: int
    channel: Channel
    value: float
    track: str = ""

    @property
    def t(self) -> float:
        return to_s(self.t_ms)


TrackKey = tuple  # (Channel, track id)


@dataclass(frozen=True)
class KeyframeTimeline:
    """Keyframes grouped into tracks.

    Face signals keep one track per (AU, signal) so overlapping expressions
    compose by per-AU maximum; every other channel has a single merged track
    keyed by the empty string.
    """

    tracks: dict[TrackKey, tuple[Keyframe, ...]] = field(default_factory=dict)
    duration_ms: int = 0
    fps: float = DEFAULT_FPS
    _interp: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        if not self.fps > 0:
            raise ValueError("fps must be > 0")
        latest = 0
        for key, kfs in self.tracks.items():
            if any(b.t_ms <= a.t_ms for a, b in zip(kfs, kfs[1:])):
                raise ValueError(f"track {key} keyframe times not strictly increasing")
            if kfs:
                latest = max(latest, kfs[-1].t_ms)
        if self.duration_ms < latest:
            raise ValueError(f"duration {self.duration_ms} ms precedes last keyframe at {latest} ms")

    @property
    def duration_s(self) -> float:
        return to_s(self.duration_ms)

    @property
    def channels(self) -> list[Channel]:
        return sorted({ch for ch, _ in self.tracks})

    def keyframes(self) -> list[Keyframe]:
        return sorted(kf for kfs in self.tracks.values() for kf in kfs)

    def __len__(self) -> int:
        return sum(len(k) for k in self.tracks.values())

    @classmethod
    def from_keyframes(
        cls, keyframes: Iterable[Keyframe], duration_ms: int, fps: float = DEFAULT_FPS
    ) -> "KeyframeTimeline":
        tracks: dict[TrackKey, list[Keyframe]] = {}
        for kf in sorted(keyframes):
            tracks.setdefault((kf.channel, kf.track), []).append(kf)
        return cls({k: tuple(v) for k, v in sorted(tracks.items())}, duration_ms, fps)

    def interpolant(self, key: TrackKey) -> MonotoneCubic:
        f = self._interp.get(key)
        if f is None:
            kfs = self.tracks[key]
            f = MonotoneCubic([k.t_ms for k in kfs], [k.value for k in kfs])
            self._interp[key] = f
        return f


# --------------------------------------------------------------------------
# conflict resolution


def _free_pieces(s: int, e: int, taken: Sequence[tuple[int, int]]) -> list[tuple[int, int]]:
    pieces = [(s, e)]
    for a, b in taken:
        nxt = []
        for ps, pe in pieces:
            if b <= ps or a >= pe:
                nxt.append((ps, pe))
                continue
            if ps < a:
                nxt.append((ps, a))
            if b < pe:
                nxt.append((b, pe))
        pieces = nxt
    return sorted(pieces)


def _clamped(sig: Signal, s: int, e: int) -> Signal:
    sync = {k: to_s(min(max(to_ms(v), s), e)) for k, v in sig.sync.items()}
    return Signal(sig.id, sig.modality, sig.lexeme, sync, sig.priority)


def resolve_conflicts(signals: Sequence[Signal]) -> list[Signal]:
    """Settle overlaps between signals of the same exclusive modality.

    Signals are ranked by (priority, start, id), highest first. Each keeps the
    earliest stretch of its span not already claimed by a higher-ranked
    signal: a loser that began before its winner is cut at the winner's start,
    one that began inside it is moved to the winner's end, and one with
    nothing left is dropped. Face and speech signals pass through untouched.
    """
    out: dict[int, Signal] = {}
    groups: dict[Modality, list[tuple[int, Signal]]] = {}
    for i, sig in enumerate(signals):
        if sig.modality in EXCLUSIVE_MODALITIES:
            groups.setdefault(sig.modality, []).append((i, sig))
        else:
            out[i] = sig
    for members in groups.values():
        ranked = sorted(
            members, key=lambda m: (m[1].priority, to_ms(m[1].start), m[1].id), reverse=True
        )
        taken: list[tuple[int, int]] = []
        for i, sig in ranked:
            s, e = to_ms(sig.start), to_ms(sig.end)
            if s == e:
                out[i] = sig
                continue
            pieces = _free_pieces(s, e, taken)
            if not pieces:
                continue
            ps, pe = pieces[0]
            out[i] = sig if (ps, pe) == (s, e) else _clamped(sig, ps, pe)
            taken.append((ps, pe))
    return [out[i] for i in sorted(out)]


# --------------------------------------------------------------------------
# keyframe generation


def _dedupe(points: Iterable[tuple[int, float]]) -> list[tuple[int, float]]:
    """Sort by time; at equal times the last value written wins."""
    merged: dict[int, float] = {}
    for t, v in points:
        merged[t] = v
    return sorted(merged.items())


def face_envelope(start_ms: int, end_ms: int, peak: float, attack_ms: int, decay_ms: int) -> list[tuple[int, float]]:
    """Trapezoid 0 -> peak -> hold -> 0. Spans shorter than attack + decay
    shrink both ramps proportionally and keep the peak."""
    span = end_ms - start_ms
    if span < 2:
        return []
    if span < attack_ms + decay_ms:
        attack_ms = min(max(int(round(span * attack_ms / (attack_ms + decay_ms))), 1), span - 1)
        decay_ms = span - attack_ms
    rise, fall = start_ms + attack_ms, end_ms - decay_ms
    if rise == fall:
        return [(start_ms, 0.0), (rise, peak), (end_ms, 0.0)]
    return [(start_ms, 0.0), (rise, peak), (fall, peak), (end_ms, 0.0)]


def _pose_channels(joint: str, rotation: Sequence[float]) -> list[tuple[Channel, float]]:
    if joint == "head":
        return [(Channel.head(a), v) for a, v in zip(AXES, rotation)]
    if joint == "gaze":
        return [(Channel.gaze(a), v) for a, v in zip(AXES[:2], rotation)]
    return [(Channel.joint(joint, a), v) for a, v in zip(AXES, rotation)]


def phase_windows(sig: Signal) -> dict[str, tuple[int, int]]:
    sync = {k: to_ms(v) for k, v in sig.sync.items()}
    stroke = sync.get("stroke", sync.get("stroke_start", sync["start"]))
    stroke_start = sync.get("stroke_start", stroke)
    stroke_end = sync.get("stroke_end", stroke)
    return {
        "preparation": (sync["start"], stroke),
        "stroke": (stroke_start, stroke_end),
        "retraction": (stroke_end, sync["end"]),
    }


def gesture_keyframes(sig: Signal, entry) -> dict[Channel, list[tuple[int, float]]]:
    windows = phase_windows(sig)
    per_channel: dict[Channel, list[tuple[int, float]]] = {}
    for phase in ("preparation", "stroke", "retraction"):
        a, b = windows[phase]
        for u, pose in entry.phases.get(phase, ()):
            t = a + int(round(u * (b - a)))
            for joint, rotation in pose.items():
                for ch, v in _pose_channels(joint, rotation):
                    per_channel.setdefault(ch, []).append((t, v))
    return per_channel


def speech_keyframes(sig: Signal) -> list[tuple[int, float]]:
    words = sig.lexeme.split()
    s, e = to_ms(sig.start), to_ms(sig.end)
    if not words or e <= s:
        return []
    n = len(words)
    bounds = [s + int(round(k * (e - s) / n)) for k in range(n + 1)]
    pts = []
    for a, b in zip(bounds, bounds[1:]):
        if b - a < 2:
            continue
        pts += [(a, 0.0), ((a + b) // 2, VISEME_PEAK), (b, 0.0)]
    return _dedupe(pts)


def realize_timeline(bml: BmlDocument, libs: Libraries, fps: float = DEFAULT_FPS) -> KeyframeTimeline:
    signals = resolve_conflicts(bml.signals)
    keyframes: list[Keyframe] = []
    body: dict[Channel, list[tuple[int, float]]] = {}
    speech: list[tuple[int, float]] = []
    duration = 0
    for sig in sorted(signals, key=lambda s: (to_ms(s.start), s.id)):
        duration = max(duration, to_ms(sig.end))
        if sig.modality is Modality.SPEECH:
            speech += speech_keyframes(sig)
        elif sig.modality is Modality.FACE:
            face = libs.faces.get(sig.lexeme)
            if face is None:
                raise UnknownBehaviorError(sig)
            for au, peak in sorted(face.aus.items()):
                env = face_envelope(
                    to_ms(sig.start), to_ms(sig.end), peak, to_ms(face.attack_s), to_ms(face.decay_s)
                )
                keyframes += [Keyframe(t, Channel.au(au), v, sig.id) for t, v in env]
        else:
            entry = libs.gestuary.get(sig.lexeme)
            if entry is None:
                raise UnknownBehaviorError(sig)
            for ch, pts in gesture_keyframes(sig, entry).items():
                body.setdefault(ch, []).extend(pts)
    for ch, pts in body.items():
        keyframes += [Keyframe(t, ch, v) for t, v in _dedupe(pts)]
    keyframes += [Keyframe(t, VISEME_CHANNEL, v) for t, v in _dedupe(speech)]
    return KeyframeTimeline.from_keyframes(keyframes, duration, fps)


# --------------------------------------------------------------------------
# evaluation


def _snap(x_ms: float) -> float:
    r = round(x_ms)
    return r if abs(x_ms - r) < 1e-6 else x_ms


def evaluate_at_ms(timeline: KeyframeTimeline, channel: Channel, x_ms: float) -> float:
    values = []
    for key in timeline.tracks:
        if key[0] != channel:
            continue
        v = timeline.interpolant(key)(x_ms)
        if v is not None:
            if not channel.is_au:
                return v
            values.append(v)
    return max(values, default=REST_VALUE)


def evaluate_envelope(timeline: KeyframeTimeline, channel: Channel, t: float) -> float:
    """Channel value at ``t`` seconds; rest value outside every keyframe span
    and for channels the timeline does not animate."""
    return evaluate_at_ms(timeline, channel, _snap(t * 1000))


def frame_count(duration_ms: int, fps: float) -> int:
    return math.ceil(duration_ms * fps / 1000) + 1


def sample_frames(timeline: KeyframeTimeline) -> list[FramePacket]:
    channels = timeline.channels
    frames = []
    for k in range(frame_count(timeline.duration_ms, timeline.fps)):
        x = frame_ms(k, timeline.fps)
        values = {ch: evaluate_at_ms(timeline, ch, x) for ch in channels}
        frames.append(FramePacket.from_channels(k, values, timeline.fps))
    return frames
