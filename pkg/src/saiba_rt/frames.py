"""Animation channels and the per-frame packet shared by the realizer,
the frame-level loop and the OSC codec."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator, Mapping

DEFAULT_FPS = 25

AXES = ("x", "y", "z")


class RangeError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Channel:
    """One scalar animation channel.

    ``kind`` is one of au, head, gaze, joint, viseme; ``name`` is the AU number,
    the axis (head/gaze), ``<joint>.<axis>`` (joint) or the viseme name.
    """

    kind: str
    name: str

    KINDS = ("au", "head", "gaze", "joint", "viseme")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.kind == "au" and not self.name.isdigit():
            raise ValueError(f"AU channel needs an integer id, got {self.name!r}")
        if self.kind == "head" and self.name not in AXES:
            raise ValueError(f"head axis must be x/y/z, got {self.name!r}")
        if self.kind == "gaze" and self.name not in AXES[:2]:
            raise ValueError(f"gaze axis must be x/y, got {self.name!r}")

    @classmethod
    def au(cls, n: int) -> "Channel":
        return cls("au", str(int(n)))

    @classmethod
    def head(cls, axis: str) -> "Channel":
        return cls("head", axis)

    @classmethod
    def gaze(cls, axis: str) -> "Channel":
        return cls("gaze", axis)

    @classmethod
    def joint(cls, joint: str, axis: str) -> "Channel":
        return cls("joint", f"{joint}.{axis}")

    @classmethod
    def viseme(cls, name: str) -> "Channel":
        return cls("viseme", name)

    @classmethod
    def parse(cls, text: str) -> "Channel":
        kind, sep, name = text.partition("/")
        if not sep:
            raise ValueError(f"channel {text!r} is not '<kind>/<name>'")
        return cls(kind, name)

    @property
    def is_au(self) -> bool:
        return self.kind == "au"

    def __str__(self) -> str:
        return f"{self.kind}/{self.name}"


def _finite(label: str, v: float) -> None:
    if not math.isfinite(v):
        raise RangeError(f"{label}={v} is not finite")


@dataclass(frozen=True)
class FramePacket:
    """One tick of channel values. ``t`` is derived from the frame index so
    that frame time is exact by construction."""

    frame: int
    au: Mapping[int, float] = field(default_factory=dict)
    head: tuple[float, float, float] | None = None
    gaze: tuple[float, float] | None = None
    mouth: Mapping[str, float] = field(default_factory=dict)
    joints: Mapping[str, float] = field(default_factory=dict)
    fps: float = DEFAULT_FPS

    @property
    def t(self) -> float:
        return self.frame / self.fps

    def validate(self) -> None:
        if self.frame < 0:
            raise RangeError(f"frame {self.frame} < 0")
        for n, v in self.au.items():
            if not 0 <= n < 2**31:
                raise RangeError(f"AU id {n} out of range")
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"AU{n}={v} outside [0, 1]")
        for name, v in self.mouth.items():
            if not 0.0 <= v <= 1.0:
                raise RangeError(f"mouth {name}={v} outside [0, 1]")
        if self.head is not None:
            if len(self.head) != 3:
                raise RangeError("head needs 3 components")
            for a, v in zip(AXES, self.head):
                _finite(f"head.{a}", v)
        if self.gaze is not None:
            if len(self.gaze) != 2:
                raise RangeError("gaze needs 2 components")
            for a, v in zip(AXES, self.gaze):
                _finite(f"gaze.{a}", v)
        for name, v in self.joints.items():
            _finite(f"joint {name}", v)

    def channels(self) -> dict[Channel, float]:
        out: dict[Channel, float] = {}
        for n, v in self.au.items():
            out[Channel.au(n)] = v
        if self.head is not None:
            out.update({Channel.head(a): v for a, v in zip(AXES, self.head)})
        if self.gaze is not None:
            out.update({Channel.gaze(a): v for a, v in zip(AXES, self.gaze)})
        for name, v in self.mouth.items():
            out[Channel.viseme(name)] = v
        for name, v in self.joints.items():
            out[Channel("joint", name)] = v
        return out

    @classmethod
    def from_channels(
        cls, frame: int, values: Mapping[Channel, float], fps: float = DEFAULT_FPS
    ) -> "FramePacket":
        au, mouth, joints = {}, {}, {}
        head = gaze = None
        for ch, v in values.items():
            if ch.kind == "au":
                au[int(ch.name)] = v
            elif ch.kind == "viseme":
                mouth[ch.name] = v
            elif ch.kind == "joint":
                joints[ch.name] = v
            elif ch.kind == "head":
                head = head or [0.0, 0.0, 0.0]
                head[AXES.index(ch.name)] = v
            else:
                gaze = gaze or [0.0, 0.0]
                gaze[AXES.index(ch.name)] = v
        return cls(
            frame,
            dict(sorted(au.items())),
            tuple(head) if head else None,
            tuple(gaze) if gaze else None,
            dict(sorted(mouth.items())),
            dict(sorted(joints.items())),
            fps,
        )

    def to_record(self) -> dict:
        chans = sorted(self.channels().items(), key=lambda kv: _channel_sort_key(kv[0]))
        return {
            "frame": self.frame,
            "t": self.t,
            "channels": {str(ch): v for ch, v in chans},
        }

    @classmethod
    def from_record(cls, record: Mapping, fps: float = DEFAULT_FPS) -> "FramePacket":
        try:
            frame = int(record["frame"])
            values = {Channel.parse(k): float(v) for k, v in record["channels"].items()}
            t = float(record["t"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"bad frame record: {exc}") from None
        packet = cls.from_channels(frame, values, fps)
        if abs(packet.t - t) > 0.5 / fps:
            raise ValueError(f"frame {frame}: t={t} disagrees with frame index at {fps} fps")
        return packet


def _channel_sort_key(ch: Channel):
    return (Channel.KINDS.index(ch.kind), int(ch.name) if ch.is_au else 0, ch.name)


def write_frames(packets: Iterable[FramePacket], out: IO[str]) -> int:
    n = 0
    for p in packets:
        out.write(json.dumps(p.to_record(), separators=(",", ":")) + "\n")
        n += 1
    return n


def read_frames(lines: Iterable[str], fps: float = DEFAULT_FPS) -> Iterator[FramePacket]:
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield FramePacket.from_record(json.loads(line), fps)
        except (ValueError, json.JSONDecodeError) as exc:
            raise ValueError(f"line {number}: {exc}") from None
