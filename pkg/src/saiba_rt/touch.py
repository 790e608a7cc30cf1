"""Social touch: feature records, a rule classifier, proxemic zones, gaze
attention and the gate that keeps or drops planned touch gestures."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Protocol

from .markup import BmlDocument

TOUCH_PREFIX = "touch:"


class BodyRegion(str, Enum):
    HAND = "hand"
    ARM = "arm"
    SHOULDER = "shoulder"
    BACK = "back"
    OTHER = "other"


class TouchClass(str, Enum):
    HIT = "hit"
    TAP = "tap"
    CARESS = "caress"
    STROKE = "stroke"


class ProxemicsZone(str, Enum):
    INTIMATE = "intimate"
    PERSONAL = "personal"
    SOCIAL = "social"
    PUBLIC = "public"


# closest first; the index is the "intimacy rank" used for monotonicity
ZONE_ORDER = (ProxemicsZone.INTIMATE, ProxemicsZone.PERSONAL, ProxemicsZone.SOCIAL, ProxemicsZone.PUBLIC)


class GazeTarget(str, Enum):
    AGENT = "AGENT"
    AGENT_RELATED_OBJECT = "AGENT_RELATED_OBJECT"
    TOPIC_OBJECT = "TOPIC_OBJECT"
    OTHER = "OTHER"


class TouchFeatureError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class TouchFeatures:
    has_movement: bool
    intensity_mps: float
    body_region: BodyRegion
    dynamic: bool
    speed_mps: float = 0.0
    duration_s: float = 0.0
    pressure: float | None = None  # carried, never used

    def __post_init__(self):
        for name in ("intensity_mps", "speed_mps", "duration_s"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise TouchFeatureError(f"{name} must be a finite value >= 0, got {v!r}")
        if not self.dynamic and self.speed_mps != 0:
            raise TouchFeatureError("speed_mps must be 0 for a static touch")
        if self.pressure is not None and not math.isfinite(self.pressure):
            raise TouchFeatureError("pressure must be finite")

    @classmethod
    def from_record(cls, rec: dict) -> "TouchFeatures":
        try:
            return cls(
                has_movement=bool(rec["has_movement"]),
                intensity_mps=float(rec["intensity_mps"]),
                body_region=BodyRegion(rec["body_region"]),
                dynamic=bool(rec["dynamic"]),
                speed_mps=float(rec.get("speed_mps", 0.0)),
                duration_s=float(rec.get("duration_s", 0.0)),
                pressure=None if rec.get("pressure") is None else float(rec["pressure"]),
            )
        except KeyError as exc:
            raise TouchFeatureError(f"missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            if isinstance(exc, TouchFeatureError):
                raise
            raise TouchFeatureError(str(exc)) from None

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["body_region"] = self.body_region.value
        return rec


class TouchClassifier(Protocol):
    def classify(self, f: TouchFeatures) -> TouchClass: ...


@dataclass(frozen=True)
class RuleTouchClassifier:
    """Threshold baseline. Static contacts split on duration and impact
    intensity, dynamic ones on speed along the body."""

    hit_intensity_mps: float = 0.8
    short_contact_s: float = 0.3
    stroke_speed_mps: float = 0.15

    def classify(self, f: TouchFeatures) -> TouchClass:
        if f.dynamic:
            return TouchClass.STROKE if f.speed_mps >= self.stroke_speed_mps else TouchClass.CARESS
        if f.duration_s < self.short_contact_s and f.intensity_mps >= self.hit_intensity_mps:
            return TouchClass.HIT
        return TouchClass.TAP


DEFAULT_CLASSIFIER = RuleTouchClassifier()


def classify_touch(f: TouchFeatures, classifier: TouchClassifier = DEFAULT_CLASSIFIER) -> TouchClass:
    return classifier.classify(f)


@dataclass(frozen=True)
class ProxemicsThresholds:
    intimate_m: float = 0.45
    personal_m: float = 1.2
    social_m: float = 3.6

    def __post_init__(self):
        if not 0 < self.intimate_m < self.personal_m < self.social_m:
            raise ValueError("proxemic thresholds must satisfy 0 < intimate < personal < social")


def classify_proxemics(distance_m: float, thresholds: ProxemicsThresholds = ProxemicsThresholds()) -> ProxemicsZone:
    if math.isnan(distance_m) or distance_m < 0:
        raise ValueError(f"distance must be >= 0, got {distance_m!r}")
    if distance_m < thresholds.intimate_m:
        return ProxemicsZone.INTIMATE
    if distance_m < thresholds.personal_m:
        return ProxemicsZone.PERSONAL
    if distance_m < thresholds.social_m:
        return ProxemicsZone.SOCIAL
    return ProxemicsZone.PUBLIC


ATTENTION = {
    GazeTarget.AGENT: 1.0,
    GazeTarget.AGENT_RELATED_OBJECT: 0.7,
    GazeTarget.TOPIC_OBJECT: 0.5,
    GazeTarget.OTHER: 0.0,
}

ATTENTION_THRESHOLD = 0.5
TOUCH_ZONES = frozenset({ProxemicsZone.INTIMATE, ProxemicsZone.PERSONAL})


def attention_score(target: GazeTarget) -> float:
    return ATTENTION[GazeTarget(target)]


def is_touch_signal(sig) -> bool:
    return sig.lexeme.startswith(TOUCH_PREFIX)


def touch_allowed(zone: ProxemicsZone, attention: float) -> bool:
    return zone in TOUCH_ZONES and attention >= ATTENTION_THRESHOLD


def gate_touch(planned: BmlDocument, zone: ProxemicsZone, attention: float) -> BmlDocument:
    """Drop ``touch:`` signals unless the user is close and attending."""
    if touch_allowed(ProxemicsZone(zone), attention):
        return planned
    kept = tuple(s for s in planned.signals if not is_touch_signal(s))
    if len(kept) == len(planned.signals):
        return planned
    gated = replace(planned, signals=kept)
    gated.validate()
    return gated


# --------------------------------------------------------------------------
# feature files (JSON lines)


def read_touch_features(path: str | Path) -> Iterator[tuple[int, TouchFeatures]]:
    with open(path, encoding="utf-8") as fh:
        yield from parse_touch_lines(fh)


def parse_touch_lines(lines: Iterable[str]) -> Iterator[tuple[int, TouchFeatures]]:
    for number, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        try:
            rec = json.loads(text)
        except json.JSONDecodeError as exc:
            raise TouchFeatureError(f"invalid JSON: {exc.msg}", number) from None
        if not isinstance(rec, dict):
            raise TouchFeatureError("record must be a JSON object", number)
        try:
            yield number, TouchFeatures.from_record(rec)
        except TouchFeatureError as exc:
            raise TouchFeatureError(str(exc), number) from None


def write_touch_features(path: str | Path, features: Iterable[TouchFeatures]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for f in features:
            fh.write(json.dumps(f.to_record(), sort_keys=True) + "\n")
