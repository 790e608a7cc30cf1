"""FML and BML document models, parsers and serializers.

The dialect is documented in ``docs/markup.md``. Parsing goes through
expat directly so every element keeps its line/column, which lets semantic
errors (dangling markers, bad sync order) point at the offending element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Union
from xml.parsers import expat
from xml.sax.saxutils import escape, quoteattr

SPEECH_START = "speech-start"
SPEECH_END = "speech-end"
RESERVED_MARKERS = (SPEECH_START, SPEECH_END)

SYNC_ORDER = ("start", "ready", "stroke_start", "stroke", "stroke_end", "relax", "end")
_SYNC_RANK = {name: i for i, name in enumerate(SYNC_ORDER)}

DEFAULT_IMPORTANCE = 0.5
DEFAULT_PRIORITY = 0


class IntentionClass(str, Enum):
    PERFORMATIVE = "performative"
    EMOTION = "emotion"
    CERTAINTY = "certainty"
    EMPHASIS = "emphasis"
    TURN = "turn"


class Modality(str, Enum):
    FACE = "face"
    GESTURE = "gesture"
    HEAD = "head"
    GAZE = "gaze"
    TORSO = "torso"
    SPEECH = "speech"


# --------------------------------------------------------------------------
# errors


class MarkupError(ValueError):
    """Base class for all markup failures; carries a source position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        if line is not None:
            message = f"line {line}, column {column}: {message}"
        super().__init__(message)


class MalformedMarkupError(MarkupError):
    pass


class UnresolvedMarkerError(MarkupError):
    def __init__(self, ref: str, intention_id: str, line=None, column=None):
        self.ref = ref
        super().__init__(
            f"intention {intention_id!r} references unknown marker {ref!r}", line, column
        )


class DuplicateMarkerError(MarkupError):
    def __init__(self, marker_id: str, line=None, column=None):
        self.marker_id = marker_id
        super().__init__(f"duplicate time marker {marker_id!r}", line, column)


class DuplicateIdError(MarkupError):
    pass


class SyncOrderError(MarkupError):
    def __init__(self, signal_id: str, first: str, second: str, line=None, column=None):
        self.signal_id = signal_id
        self.pair = (first, second)
        super().__init__(
            f"signal {signal_id!r}: sync {first!r} must not come after {second!r}",
            line,
            column,
        )


class UnknownModalityError(MarkupError):
    pass


# --------------------------------------------------------------------------
# FML


@dataclass(frozen=True)
class TimeMarker:
    id: str


Token = Union[str, TimeMarker]


@dataclass(frozen=True)
class Intention:
    id: str
    cls: IntentionClass
    lexeme: str
    start_ref: str
    end_ref: str
    importance: float = DEFAULT_IMPORTANCE

    def __post_init__(self):
        if not isinstance(self.cls, IntentionClass):
            object.__setattr__(self, "cls", IntentionClass(self.cls))
        if not (0.0 <= self.importance <= 1.0):
            raise ValueError(f"importance {self.importance} outside [0, 1]")

    @property
    def key(self) -> tuple[str, str]:
        return (self.cls.value, self.lexeme)


@dataclass(frozen=True)
class FmlDocument:
    speech: tuple[Token, ...] = ()
    intentions: tuple[Intention, ...] = ()

    @property
    def words(self) -> list[str]:
        return [tok for tok in self.speech if isinstance(tok, str)]

    @property
    def marker_ids(self) -> list[str]:
        return [tok.id for tok in self.speech if isinstance(tok, TimeMarker)]

    def marker_positions(self) -> dict[str, int]:
        """Marker id -> number of words preceding it (reserved markers included)."""
        positions = {SPEECH_START: 0}
        n = 0
        for tok in self.speech:
            if isinstance(tok, TimeMarker):
                positions[tok.id] = n
            else:
                n += 1
        positions[SPEECH_END] = n
        return positions

    def validate(self) -> None:
        _check_fml(self, {})


# --------------------------------------------------------------------------
# BML


@dataclass(frozen=True)
class Signal:
    id: str
    modality: Modality
    lexeme: str
    sync: Mapping[str, float]
    priority: int = DEFAULT_PRIORITY

    def __post_init__(self):
        if not isinstance(self.modality, Modality):
            object.__setattr__(self, "modality", Modality(self.modality))
        object.__setattr__(self, "sync", _ordered_sync(self.sync))

    @property
    def start(self) -> float:
        return self.sync["start"]

    @property
    def end(self) -> float:
        return self.sync["end"]

    def with_sync(self, **changes: float) -> "Signal":
        sync = dict(self.sync)
        sync.update(changes)
        return Signal(self.id, self.modality, self.lexeme, sync, self.priority)

    def validate(self) -> None:
        _check_signal(self, None)


@dataclass(frozen=True)
class BmlDocument:
    signals: tuple[Signal, ...] = ()
    utterance_duration_s: float = 0.0

    def validate(self) -> None:
        if not (self.utterance_duration_s >= 0 and math.isfinite(self.utterance_duration_s)):
            raise MarkupError(f"utterance duration {self.utterance_duration_s} must be >= 0")
        seen: set[str] = set()
        for sig in self.signals:
            if sig.id in seen:
                raise DuplicateIdError(f"duplicate signal id {sig.id!r}")
            seen.add(sig.id)
            _check_signal(sig, None)

    def check_bounds(self, max_tail_s: float) -> None:
        """All sync times must lie in [0, utterance duration + max_tail_s]."""
        limit = self.utterance_duration_s + max_tail_s
        for sig in self.signals:
            for name, t in sig.sync.items():
                if t > limit + 1e-9:
                    raise MarkupError(
                        f"signal {sig.id!r} sync {name}={t} beyond {limit:g} s"
                    )


def _ordered_sync(sync: Mapping[str, float]) -> dict[str, float]:
    unknown = [k for k in sync if k not in _SYNC_RANK]
    if unknown:
        raise ValueError(f"unknown sync point(s) {unknown}")
    return {k: float(sync[k]) for k in SYNC_ORDER if k in sync}


def _check_signal(sig: Signal, pos) -> None:
    line, col = pos if pos else (None, None)
    for required in ("start", "end"):
        if required not in sig.sync:
            raise MalformedMarkupError(
                f"signal {sig.id!r} lacks mandatory sync {required!r}", line, col
            )
    prev_name, prev_t = None, None
    for name, t in sig.sync.items():
        if not math.isfinite(t) or t < 0:
            raise MalformedMarkupError(
                f"signal {sig.id!r} sync {name}={t} must be finite and >= 0", line, col
            )
        if prev_t is not None and t < prev_t:
            raise SyncOrderError(sig.id, prev_name, name, line, col)
        prev_name, prev_t = name, t


def _check_fml(doc: FmlDocument, positions: Mapping) -> None:
    seen: dict[str, None] = {}
    for tok in doc.speech:
        if isinstance(tok, TimeMarker):
            where = positions.get(("tm", tok.id), (None, None))
            if tok.id in RESERVED_MARKERS:
                raise MalformedMarkupError(f"marker id {tok.id!r} is reserved", *where)
            if tok.id in seen:
                raise DuplicateMarkerError(tok.id, *where)
            seen[tok.id] = None
        elif not tok or any(c.isspace() for c in tok):
            raise MalformedMarkupError(f"invalid word token {tok!r}")
    order = doc.marker_positions()
    ids: set[str] = set()
    for it in doc.intentions:
        where = positions.get(("intention", it.id), (None, None))
        if it.id in ids:
            raise DuplicateIdError(f"duplicate intention id {it.id!r}", *where)
        ids.add(it.id)
        for ref in (it.start_ref, it.end_ref):
            if ref not in order:
                raise UnresolvedMarkerError(ref, it.id, *where)
        if _speech_index(doc, it.start_ref) > _speech_index(doc, it.end_ref):
            raise MalformedMarkupError(
                f"intention {it.id!r}: start {it.start_ref!r} comes after end {it.end_ref!r}",
                *where,
            )


def _speech_index(doc: FmlDocument, ref: str) -> int:
    if ref == SPEECH_START:
        return -1
    if ref == SPEECH_END:
        return len(doc.speech)
    for i, tok in enumerate(doc.speech):
        if isinstance(tok, TimeMarker) and tok.id == ref:
            return i
    raise KeyError(ref)


# --------------------------------------------------------------------------
# positioned element tree


@dataclass
class _Node:
    tag: str
    attrs: dict[str, str]
    line: int
    column: int
    children: list = field(default_factory=list)  # _Node or str

    @property
    def pos(self) -> tuple[int, int]:
        return (self.line, self.column)

    def elements(self) -> list["_Node"]:
        return [c for c in self.children if isinstance(c, _Node)]

    def text(self) -> str:
        return "".join(c for c in self.children if isinstance(c, str))


def _build_tree(text: str) -> _Node:
    parser = expat.ParserCreate()
    root: list[_Node] = []
    stack: list[_Node] = []

    def start(tag, attrs):
        node = _Node(tag, attrs, parser.CurrentLineNumber, parser.CurrentColumnNumber + 1)
        if stack:
            stack[-1].children.append(node)
        else:
            root.append(node)
        stack.append(node)

    def end(tag):
        stack.pop()

    def chars(data):
        if stack:
            kids = stack[-1].children
            if kids and isinstance(kids[-1], str):
                kids[-1] += data
            else:
                kids.append(data)

    parser.StartElementHandler = start
    parser.EndElementHandler = end
    parser.CharacterDataHandler = chars
    try:
        parser.Parse(text, True)
    except expat.ExpatError as exc:
        raise MalformedMarkupError(
            expat.ErrorString(exc.code), exc.lineno, exc.offset + 1
        ) from None
    return root[0]


def _expect(node: _Node, tag: str) -> None:
    if node.tag != tag:
        raise MalformedMarkupError(f"expected <{tag}>, found <{node.tag}>", *node.pos)


def _no_text(node: _Node) -> None:
    if node.text().strip():
        raise MalformedMarkupError(f"unexpected text inside <{node.tag}>", *node.pos)


def _attr(node: _Node, name: str, default=None, required=True) -> str:
    if name in node.attrs:
        return node.attrs[name]
    if required and default is None:
        raise MalformedMarkupError(f"<{node.tag}> missing attribute {name!r}", *node.pos)
    return default


def _only_attrs(node: _Node, allowed: Iterable[str]) -> None:
    extra = sorted(set(node.attrs) - set(allowed))
    if extra:
        raise MalformedMarkupError(f"<{node.tag}> has unknown attribute(s) {extra}", *node.pos)


def _number(node: _Node, name: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise MalformedMarkupError(f"attribute {name}={raw!r} is not a number", *node.pos) from None
    if not math.isfinite(value):
        raise MalformedMarkupError(f"attribute {name}={raw!r} is not finite", *node.pos)
    return value


def _integer(node: _Node, name: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise MalformedMarkupError(f"attribute {name}={raw!r} is not an integer", *node.pos) from None


# --------------------------------------------------------------------------
# parse / serialize


def parse_fml(text: str) -> FmlDocument:
    root = _build_tree(text)
    _expect(root, "fml")
    _only_attrs(root, ())
    _no_text(root)
    speech: list[Token] = []
    intentions: list[Intention] = []
    positions: dict = {}
    speech_seen = False
    for node in root.elements():
        if node.tag == "speech":
            if speech_seen:
                raise MalformedMarkupError("more than one <speech> element", *node.pos)
            speech_seen = True
            _only_attrs(node, ())
            for child in node.children:
                if isinstance(child, str):
                    speech.extend(child.split())
                    continue
                if child.tag != "tm":
                    raise MalformedMarkupError(
                        f"unexpected <{child.tag}> inside <speech>", *child.pos
                    )
                _only_attrs(child, ("id",))
                if child.children:
                    raise MalformedMarkupError("<tm> must be empty", *child.pos)
                marker = _attr(child, "id")
                positions.setdefault(("tm", marker), child.pos)
                speech.append(TimeMarker(marker))
        elif node.tag == "intention":
            _only_attrs(node, ("id", "class", "lexeme", "start", "end", "importance"))
            if node.children:
                raise MalformedMarkupError("<intention> must be empty", *node.pos)
            cls_raw = _attr(node, "class")
            try:
                cls = IntentionClass(cls_raw)
            except ValueError:
                raise MalformedMarkupError(f"unknown intention class {cls_raw!r}", *node.pos) from None
            importance = _number(
                node, "importance", _attr(node, "importance", str(DEFAULT_IMPORTANCE))
            )
            if not 0.0 <= importance <= 1.0:
                raise MalformedMarkupError(f"importance {importance} outside [0, 1]", *node.pos)
            it = Intention(
                id=_attr(node, "id"),
                cls=cls,
                lexeme=_attr(node, "lexeme"),
                start_ref=_attr(node, "start"),
                end_ref=_attr(node, "end"),
                importance=importance,
            )
            positions.setdefault(("intention", it.id), node.pos)
            intentions.append(it)
        else:
            raise MalformedMarkupError(f"unexpected <{node.tag}> inside <fml>", *node.pos)
    doc = FmlDocument(tuple(speech), tuple(intentions))
    _check_fml(doc, positions)
    return doc


def parse_bml(text: str) -> BmlDocument:
    root = _build_tree(text)
    _expect(root, "bml")
    _only_attrs(root, ("duration",))
    _no_text(root)
    signals: list[Signal] = []
    ids: set[str] = set()
    for node in root.elements():
        if node.tag != "signal":
            raise MalformedMarkupError(f"unexpected <{node.tag}> inside <bml>", *node.pos)
        _only_attrs(node, ("id", "modality", "lexeme", "priority"))
        _no_text(node)
        sig_id = _attr(node, "id")
        if sig_id in ids:
            raise DuplicateIdError(f"duplicate signal id {sig_id!r}", *node.pos)
        ids.add(sig_id)
        modality_raw = _attr(node, "modality")
        try:
            modality = Modality(modality_raw)
        except ValueError:
            raise UnknownModalityError(f"unknown modality {modality_raw!r}", *node.pos) from None
        priority = _integer(node, "priority", _attr(node, "priority", str(DEFAULT_PRIORITY)))
        sync: dict[str, float] = {}
        for child in node.elements():
            if child.tag != "sync":
                raise MalformedMarkupError(f"unexpected <{child.tag}> inside <signal>", *child.pos)
            _only_attrs(child, ("name", "t"))
            name = _attr(child, "name")
            if name not in _SYNC_RANK:
                raise MalformedMarkupError(f"unknown sync point {name!r}", *child.pos)
            if name in sync:
                raise MalformedMarkupError(f"sync {name!r} given twice", *child.pos)
            sync[name] = _number(child, "t", _attr(child, "t"))
        sig = Signal(sig_id, modality, _attr(node, "lexeme"), sync, priority)
        _check_signal(sig, node.pos)
        signals.append(sig)
    if "duration" in root.attrs:
        duration = _number(root, "duration", root.attrs["duration"])
        if duration < 0:
            raise MalformedMarkupError(f"duration {duration} must be >= 0", *root.pos)
    else:
        ends = [s.end for s in signals if s.modality is Modality.SPEECH]
        duration = max(ends, default=0.0)
    return BmlDocument(tuple(signals), duration)


def _num(x: float) -> str:
    return repr(float(x))


def _tag(name: str, attrs: Mapping[str, str], close: bool) -> str:
    body = "".join(f" {k}={quoteattr(v)}" for k, v in sorted(attrs.items()))
    return f"<{name}{body}{'/' if close else ''}>"


def serialize_fml(doc: FmlDocument) -> str:
    lines = ["<fml>"]
    parts = []
    for tok in doc.speech:
        parts.append(_tag("tm", {"id": tok.id}, True) if isinstance(tok, TimeMarker) else escape(tok))
    lines.append(f"  <speech>{' '.join(parts)}</speech>")
    for it in doc.intentions:
        attrs = {
            "id": it.id,
            "class": it.cls.value,
            "lexeme": it.lexeme,
            "start": it.start_ref,
            "end": it.end_ref,
            "importance": _num(it.importance),
        }
        lines.append("  " + _tag("intention", attrs, True))
    lines.append("</fml>")
    return "\n".join(lines) + "\n"


def serialize_bml(doc: BmlDocument) -> str:
    lines = [_tag("bml", {"duration": _num(doc.utterance_duration_s)}, False)]
    for sig in doc.signals:
        attrs = {
            "id": sig.id,
            "modality": sig.modality.value,
            "lexeme": sig.lexeme,
            "priority": str(sig.priority),
        }
        lines.append("  " + _tag("signal", attrs, False))
        for name, t in sig.sync.items():
            lines.append("    " + _tag("sync", {"name": name, "t": _num(t)}, True))
        lines.append("  </signal>")
    lines.append("</bml>")
    return "\n".join(lines) + "\n"
