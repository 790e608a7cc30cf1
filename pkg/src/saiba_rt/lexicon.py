"""Behavior libraries and the intention -> behavior-set lexicon.

A library directory holds three line-oriented text files (grammar in
``docs/lexicon.md``):

``faces.lex``     facial expressions as AU peak intensities plus envelope timing
``gestuary.lex``  phase-structured poses for gesture/head/gaze/torso behaviors
``lexicon.lex``   (class, lexeme) keys with weighted alternative behavior sets
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .markup import Intention, IntentionClass, Modality
from .prng import SplitMix64

FACES_FILE = "faces.lex"
GESTUARY_FILE = "gestuary.lex"
LEXICON_FILE = "lexicon.lex"

BUNDLED_LIBRARY_DIR = Path(__file__).with_name("data")

PHASES = ("preparation", "stroke", "retraction")
PROBABILITY_TOLERANCE = 1e-9


class LexiconError(ValueError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = str(path) if path is not None else None
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)


class MissingLibraryFileError(LexiconError):
    pass


class DanglingReferenceError(LexiconError):
    def __init__(self, key, modality: str, name: str, path=None, line=None):
        self.key = key
        self.missing = (modality, name)
        super().__init__(f"entry {key} references unknown {modality} behavior {name!r}", path, line)


class ProbabilitySumError(LexiconError):
    pass


class UnknownIntentionError(KeyError):
    def __init__(self, key: tuple[str, str]):
        self.key = key
        super().__init__(f"no lexicon entry for intention {key}")


@dataclass(frozen=True)
class FaceLibEntry:
    name: str
    aus: dict[int, float]
    attack_s: float
    sustain_min_s: float
    decay_s: float

    def __post_init__(self):
        for au, v in self.aus.items():
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"face {self.name!r}: AU{au} intensity {v} outside [0, 1]")
        for label in ("attack_s", "sustain_min_s", "decay_s"):
            if not getattr(self, label) > 0:
                raise ValueError(f"face {self.name!r}: {label} must be > 0")


Pose = dict[str, tuple[float, float, float]]


@dataclass(frozen=True)
class GestuaryEntry:
    """Phase keys are (normalized time, pose); durations drive the planner."""

    name: str
    phases: dict[str, tuple[tuple[float, Pose], ...]]
    preparation_s: float
    stroke_s: float
    retraction_s: float

    def __post_init__(self):
        if set(self.phases) - set(PHASES):
            raise ValueError(f"gesture {self.name!r}: unknown phase(s) {set(self.phases) - set(PHASES)}")
        if not self.phases.get("stroke"):
            raise ValueError(f"gesture {self.name!r}: stroke phase is empty")
        for phase, keys in self.phases.items():
            if not keys:
                continue
            times = [t for t, _ in keys]
            if len(times) < 2 or times[0] != 0.0 or times[-1] != 1.0:
                raise ValueError(f"gesture {self.name!r}: {phase} keys must run from 0 to 1")
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError(f"gesture {self.name!r}: {phase} key times not strictly increasing")
        for label in ("preparation_s", "stroke_s", "retraction_s"):
            if not getattr(self, label) > 0:
                raise ValueError(f"gesture {self.name!r}: {label} must be > 0")


Behavior = tuple[Modality, str]
BehaviorSet = frozenset  # of Behavior


@dataclass(frozen=True)
class LexiconEntry:
    key: tuple[str, str]
    alternatives: tuple[tuple[BehaviorSet, float], ...]


@dataclass(frozen=True)
class Libraries:
    faces: dict[str, FaceLibEntry] = field(default_factory=dict)
    gestuary: dict[str, GestuaryEntry] = field(default_factory=dict)
    lexicon: dict[tuple[str, str], LexiconEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.faces) + len(self.gestuary) + len(self.lexicon)

    def has_behavior(self, modality: Modality, name: str) -> bool:
        if modality is Modality.FACE:
            return name in self.faces
        if modality is Modality.SPEECH:
            return False
        return name in self.gestuary

    def dangling_references(self) -> list[tuple[tuple[str, str], Behavior]]:
        """Exhaustive re-scan; empty for any successfully loaded Libraries."""
        found = []
        for key, entry in self.lexicon.items():
            for bset, _ in entry.alternatives:
                for modality, name in sorted(bset):
                    if not self.has_behavior(modality, name):
                        found.append((key, (modality, name)))
        return found

    @property
    def max_tail_s(self) -> float:
        """Longest decay/retraction any behavior can append after an intention."""
        tails = [f.decay_s for f in self.faces.values()]
        tails += [g.retraction_s for g in self.gestuary.values()]
        return max(tails, default=0.0)


# --------------------------------------------------------------------------
# file parsing


def _lines(path: Path):
    for number, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if text:
            yield number, text.split()


def _kv(token: str, path, line) -> tuple[str, str]:
    if "=" not in token:
        raise LexiconError(f"expected key=value, got {token!r}", path, line)
    key, _, value = token.partition("=")
    return key, value


def _float(raw: str, path, line) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise LexiconError(f"{raw!r} is not a number", path, line) from None
    if not math.isfinite(value):
        raise LexiconError(f"{raw!r} is not finite", path, line)
    return value


def parse_faces(path: Path) -> dict[str, FaceLibEntry]:
    faces: dict[str, FaceLibEntry] = {}
    for line, tokens in _lines(path):
        if tokens[0] != "face" or len(tokens) < 2:
            raise LexiconError("expected 'face NAME key=value ...'", path, line)
        name = tokens[1]
        if name in faces:
            raise LexiconError(f"duplicate face {name!r}", path, line)
        timing = {}
        aus = {}
        for tok in tokens[2:]:
            key, value = _kv(tok, path, line)
            if key in ("attack", "sustain_min", "decay"):
                timing[key] = _float(value, path, line)
            elif key.upper().startswith("AU") and key[2:].isdigit():
                aus[int(key[2:])] = _float(value, path, line)
            else:
                raise LexiconError(f"unknown face field {key!r}", path, line)
        missing = {"attack", "sustain_min", "decay"} - set(timing)
        if missing:
            raise LexiconError(f"face {name!r} missing {sorted(missing)}", path, line)
        try:
            faces[name] = FaceLibEntry(
                name, aus, timing["attack"], timing["sustain_min"], timing["decay"]
            )
        except ValueError as exc:
            raise LexiconError(str(exc), path, line) from None
    return faces


def _pose(tokens: Sequence[str], path, line) -> Pose:
    pose: Pose = {}
    for tok in tokens:
        joint, value = _kv(tok, path, line)
        parts = value.split(",")
        if len(parts) != 3:
            raise LexiconError(f"joint {joint!r} needs an x,y,z rotation triple", path, line)
        pose[joint] = tuple(_float(p, path, line) for p in parts)
    return pose


def parse_gestuary(path: Path) -> dict[str, GestuaryEntry]:
    entries: dict[str, GestuaryEntry] = {}
    current = None  # (name, durations, phases, line)

    def close():
        if current is None:
            return
        name, durations, phases, line = current
        try:
            entries[name] = GestuaryEntry(
                name,
                {p: tuple(k) for p, k in phases.items()},
                durations["preparation"],
                durations["stroke"],
                durations["retraction"],
            )
        except ValueError as exc:
            raise LexiconError(str(exc), path, line) from None

    for line, tokens in _lines(path):
        head = tokens[0]
        if head == "gesture":
            close()
            if len(tokens) < 2:
                raise LexiconError("expected 'gesture NAME ...'", path, line)
            name = tokens[1]
            if name in entries or (current and current[0] == name):
                raise LexiconError(f"duplicate gesture {name!r}", path, line)
            durations = {}
            for tok in tokens[2:]:
                key, value = _kv(tok, path, line)
                if key not in PHASES:
                    raise LexiconError(f"unknown gesture field {key!r}", path, line)
                durations[key] = _float(value, path, line)
            missing = set(PHASES) - set(durations)
            if missing:
                raise LexiconError(f"gesture {name!r} missing durations {sorted(missing)}", path, line)
            current = (name, durations, {p: [] for p in PHASES}, line)
        elif head in PHASES:
            if current is None:
                raise LexiconError(f"{head!r} key outside a gesture block", path, line)
            if len(tokens) < 2:
                raise LexiconError("expected 'PHASE TIME joint=x,y,z ...'", path, line)
            current[2][head].append((_float(tokens[1], path, line), _pose(tokens[2:], path, line)))
        else:
            raise LexiconError(f"unexpected record {head!r}", path, line)
    close()
    return entries


def _behavior(token: str, path, line) -> Behavior:
    modality_raw, sep, name = token.partition(":")
    if not sep or not name:
        raise LexiconError(f"behavior must be 'modality:name', got {token!r}", path, line)
    try:
        modality = Modality(modality_raw)
    except ValueError:
        raise LexiconError(f"unknown modality {modality_raw!r}", path, line) from None
    if modality is Modality.SPEECH:
        raise LexiconError("speech is not a lexicon behavior", path, line)
    return modality, name


def parse_lexicon(path: Path) -> tuple[dict[tuple[str, str], LexiconEntry], dict]:
    """Returns entries plus the source line of every key (for error reporting)."""
    raw: dict[tuple[str, str], list] = {}
    where: dict[tuple[str, str], int] = {}
    current = None
    for line, tokens in _lines(path):
        head = tokens[0]
        if head == "intention":
            if len(tokens) != 3:
                raise LexiconError("expected 'intention CLASS LEXEME'", path, line)
            try:
                IntentionClass(tokens[1])
            except ValueError:
                raise LexiconError(f"unknown intention class {tokens[1]!r}", path, line) from None
            current = (tokens[1], tokens[2])
            if current in raw:
                raise LexiconError(f"duplicate lexicon entry {current}", path, line)
            raw[current] = []
            where[current] = line
        elif head == "alt":
            if current is None:
                raise LexiconError("'alt' outside an intention block", path, line)
            if len(tokens) < 3:
                raise LexiconError("expected 'alt PROBABILITY modality:name ...'", path, line)
            p = _float(tokens[1], path, line)
            if not p > 0:
                raise ProbabilitySumError(f"probability {p} must be > 0", path, line)
            behaviors = [_behavior(t, path, line) for t in tokens[2:]]
            raw[current].append((frozenset(behaviors), p, line))
        else:
            raise LexiconError(f"unexpected record {head!r}", path, line)
    entries = {}
    for key, alts in raw.items():
        if not alts:
            raise LexiconError(f"entry {key} has no alternatives", path, where[key])
        total = math.fsum(p for _, p, _ in alts)
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ProbabilitySumError(
                f"entry {key} probabilities sum to {total!r}, not 1", path, where[key]
            )
        entries[key] = LexiconEntry(key, tuple((b, p) for b, p, _ in alts))
        for bset, _, line in alts:
            where[(key, bset)] = line
    return entries, where


def load_libraries(directory: str | Path) -> Libraries:
    directory = Path(directory)
    paths = {name: directory / name for name in (FACES_FILE, GESTUARY_FILE, LEXICON_FILE)}
    for path in paths.values():
        if not path.is_file():
            raise MissingLibraryFileError("library file not found", path)
    faces = parse_faces(paths[FACES_FILE])
    gestuary = parse_gestuary(paths[GESTUARY_FILE])
    lexicon, where = parse_lexicon(paths[LEXICON_FILE])
    libs = Libraries(faces, gestuary, lexicon)
    for key, entry in lexicon.items():
        for bset, _ in entry.alternatives:
            for modality, name in sorted(bset):
                if not libs.has_behavior(modality, name):
                    raise DanglingReferenceError(
                        key, modality.value, name, paths[LEXICON_FILE], where[(key, bset)]
                    )
    return libs


def resolve_intention(libs: Libraries, intention: Intention) -> list[tuple[BehaviorSet, float]]:
    try:
        entry = libs.lexicon[intention.key]
    except KeyError:
        raise UnknownIntentionError(intention.key) from None
    return list(entry.alternatives)


def sample_behavior_set(alternatives: Sequence[tuple[BehaviorSet, float]], rng_seed: int) -> BehaviorSet:
    """Pick one alternative by inverting the cumulative distribution at a
    single SplitMix64 draw for ``rng_seed``."""
    if not alternatives:
        raise ValueError("no alternatives to sample from")
    u = SplitMix64(rng_seed).uniform()
    acc = 0.0
    for bset, p in alternatives:
        acc += p
        if u < acc:
            return bset
    return alternatives[-1][0]


def load_bundled_libraries() -> Libraries:
    return load_libraries(BUNDLED_LIBRARY_DIR)
