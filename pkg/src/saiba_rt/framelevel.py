"""Frame-level realizer: a fixed-rate tick loop that merges per-frame
channel sources into one packet and ships it as OSC.

Source precedence per channel: speech-driven mouth, then the external stream,
then automatic blinks, then rest (0). The driver never waits on a source; a
source with nothing new for a tick simply does not populate its channels.
"""

from __future__ import annotations

import logging
import statistics
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol

from .clock import VirtualClock
from .frames import DEFAULT_FPS, Channel, FramePacket
from .osc import encode_frame_osc
from .prng import SplitMix64
from .realizer import Keyframe, KeyframeTimeline, evaluate_at_ms
from .timebase import frame_ms, to_ms

log = logging.getLogger(__name__)

BLINK_AU = 45
BLINK_CHANNEL = Channel.au(BLINK_AU)

SOURCE_PRIORITY = ("speech", "external", "blink")
REST_SOURCE = "rest"

# channels every merged packet carries, at rest when nothing drives them
BASE_CHANNELS = tuple(Channel.au(n) for n in (1, 2, 4, 5, 6, 7, 12, 45)) + (
    Channel.head("x"),
    Channel.head("y"),
    Channel.head("z"),
    Channel.gaze("x"),
    Channel.gaze("y"),
)

CHANNEL_GROUPS = ("au", "head", "gaze", "mouth", "blink")

PartialFrame = Mapping[Channel, float]


# --------------------------------------------------------------------------
# blinks


@dataclass(frozen=True)
class BlinkConfig:
    mean_interval_s: float = 4.0
    close_s: float = 0.12
    hold_s: float = 0.06
    open_s: float = 0.15
    seed: int = 0

    def __post_init__(self):
        for name in ("mean_interval_s", "close_s", "hold_s", "open_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class Blink:
    onset_ms: int
    close_ms: int
    hold_ms: int
    open_ms: int

    @property
    def end_ms(self) -> int:
        return self.onset_ms + self.close_ms + self.hold_ms + self.open_ms

    def keyframes(self) -> list[tuple[int, float]]:
        closed = self.onset_ms + self.close_ms
        return [
            (self.onset_ms, 0.0),
            (closed, 1.0),
            (closed + self.hold_ms, 1.0),
            (self.end_ms, 0.0),
        ]


def generate_blinks(cfg: BlinkConfig, horizon_s: float) -> list[Blink]:
    """Exponential inter-onset intervals from the seeded SplitMix64 stream.
    An onset that would overlap the previous blink is pushed to its end, and
    a blink that would not finish before the horizon is not emitted."""
    if not horizon_s > 0:
        raise ValueError("horizon must be > 0")
    rng = SplitMix64(cfg.seed)
    horizon = to_ms(horizon_s)
    close, hold, opening = to_ms(cfg.close_s), to_ms(cfg.hold_s), to_ms(cfg.open_s)
    blinks: list[Blink] = []
    onset, prev_end = 0, 0
    while True:
        onset = max(onset + to_ms(rng.exponential(cfg.mean_interval_s)), prev_end)
        blink = Blink(onset, close, hold, opening)
        if blink.end_ms > horizon:
            return blinks
        blinks.append(blink)
        prev_end = blink.end_ms


def blink_timeline(blinks: Iterable[Blink], fps: float = DEFAULT_FPS) -> KeyframeTimeline:
    pts: dict[int, float] = {}
    for b in blinks:
        for t, v in b.keyframes():
            pts[t] = v
    kfs = [Keyframe(t, BLINK_CHANNEL, v) for t, v in sorted(pts.items())]
    return KeyframeTimeline.from_keyframes(kfs, max(pts, default=0), fps)


# --------------------------------------------------------------------------
# sources


class Source(Protocol):
    def poll(self, frame: int, t_ms: float) -> PartialFrame | None: ...


class TimelineSource:
    """Evaluates selected channels of a keyframe timeline (zero-based at
    ``offset_ms``); populates nothing outside the timeline's span."""

    def __init__(self, timeline: KeyframeTimeline, kinds: Iterable[str] | None = None, offset_ms: float = 0):
        self.timeline = timeline
        self.channels = [c for c in timeline.channels if kinds is None or c.kind in set(kinds)]
        self.offset_ms = offset_ms

    def poll(self, frame: int, t_ms: float) -> PartialFrame | None:
        x = t_ms - self.offset_ms
        if not self.channels or x < 0 or x > self.timeline.duration_ms:
            return None
        return {c: evaluate_at_ms(self.timeline, c, x) for c in self.channels}


class BlinkSource(TimelineSource):
    def __init__(self, blinks: Iterable[Blink], fps: float = DEFAULT_FPS):
        super().__init__(blink_timeline(blinks, fps))


class Mailbox:
    """Single-writer slot; the tick driver takes whatever arrived since the
    previous tick and never blocks."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value: PartialFrame | None = None

    def push(self, values: PartialFrame) -> None:
        with self._lock:
            self._value = dict(values)

    def poll(self, frame: int, t_ms: float) -> PartialFrame | None:
        with self._lock:
            value, self._value = self._value, None
        return value


class CallableSource:
    def __init__(self, fn: Callable[[int, float], PartialFrame | None]):
        self.fn = fn

    def poll(self, frame: int, t_ms: float) -> PartialFrame | None:
        return self.fn(frame, t_ms)


# --------------------------------------------------------------------------
# merging


def _admissible(source: str, ch: Channel) -> bool:
    if source == "speech":
        return ch.kind == "viseme"
    if source == "blink":
        return ch == BLINK_CHANNEL
    return True


def _group(source: str, ch: Channel) -> str:
    if source == "blink":
        return "blink"
    return "mouth" if ch.kind == "viseme" else ch.kind


def _clip(ch: Channel, v: float) -> float:
    if ch.kind in ("au", "viseme"):
        return min(max(v, 0.0), 1.0)
    return v


def merge_with_provenance(
    sources: Mapping[str, PartialFrame | None],
    frame: int,
    fps: float = DEFAULT_FPS,
    enabled: Iterable[str] = CHANNEL_GROUPS,
    base_channels: Iterable[Channel] = BASE_CHANNELS,
) -> tuple[FramePacket, dict[Channel, str]]:
    """Merged packet plus, for every channel, the source that supplied it."""
    unknown = set(sources) - set(SOURCE_PRIORITY)
    if unknown:
        raise ValueError(f"unknown source(s) {sorted(unknown)}")
    enabled = set(enabled)
    values: dict[Channel, float] = {}
    origin: dict[Channel, str] = {}
    for name in SOURCE_PRIORITY:
        partial = sources.get(name)
        if not partial:
            continue
        for ch, v in partial.items():
            if ch in origin or not _admissible(name, ch) or _group(name, ch) not in enabled:
                continue
            values[ch] = _clip(ch, float(v))
            origin[ch] = name
    for ch in base_channels:
        if ch not in origin:
            values[ch] = 0.0
            origin[ch] = REST_SOURCE
    return FramePacket.from_channels(frame, values, fps), origin


def merge_channels(sources: Mapping[str, PartialFrame | None], frame: int = 0, fps: float = DEFAULT_FPS, **kw) -> FramePacket:
    return merge_with_provenance(sources, frame, fps, **kw)[0]


# --------------------------------------------------------------------------
# tick loop


@dataclass
class TickReport:
    fps: float
    frames: int = 0
    tick_times_ms: list[float] = field(default_factory=list)
    latencies_s: list[float] = field(default_factory=list)
    failed_frame: int | None = None
    error: str | None = None

    @property
    def periods_s(self) -> list[float]:
        t = self.tick_times_ms
        return [(b - a) / 1000 for a, b in zip(t, t[1:])]

    @property
    def mean_period_s(self) -> float | None:
        t = self.tick_times_ms
        if len(t) < 2:
            return None
        return (t[-1] - t[0]) / 1000 / (len(t) - 1)

    @property
    def jitter_s(self) -> float:
        """Largest deviation of a tick from its absolute deadline."""
        if not self.tick_times_ms:
            return 0.0
        t0 = self.tick_times_ms[0]
        return max(
            abs(t - t0 - frame_ms(k, self.fps)) / 1000 for k, t in enumerate(self.tick_times_ms)
        )

    def summary(self) -> dict:
        per = self.periods_s
        return {
            "frames": self.frames,
            "mean_period_s": self.mean_period_s,
            "period_stdev_s": statistics.pstdev(per) if per else 0.0,
            "max_jitter_s": self.jitter_s,
            "max_latency_s": max(self.latencies_s, default=0.0),
            "failed_frame": self.failed_frame,
        }


FrameSink = Callable[[FramePacket, bytes], None]


def tick_loop(
    sources: Mapping[str, Source],
    sink: FrameSink,
    fps: float = DEFAULT_FPS,
    clock=None,
    *,
    duration_s: float | None = None,
    n_frames: int | None = None,
    enabled: Iterable[str] = CHANNEL_GROUPS,
    stop_event: threading.Event | None = None,
) -> TickReport:
    """Emit ``n_frames`` (or ``fps * duration_s``) merged, OSC-encoded packets.

    Ticks are scheduled on absolute deadlines ``start + k / fps`` so a slow
    tick does not push later ones back.
    """
    if not fps > 0:
        raise ValueError("fps must be > 0")
    if n_frames is None:
        if duration_s is None:
            raise ValueError("give duration_s or n_frames")
        n_frames = int(round(fps * duration_s))
    clock = clock or VirtualClock()
    enabled = tuple(enabled)
    report = TickReport(fps)
    start = clock.now()
    for k in range(n_frames):
        if stop_event is not None and stop_event.is_set():
            break
        deadline = start + frame_ms(k, fps)
        clock.sleep_until(deadline)
        tick_at = clock.now() if not clock.virtual else deadline
        began = time.perf_counter()
        local = frame_ms(k, fps)
        polled = {name: src.poll(k, local) for name, src in sources.items()}
        packet = merge_channels(polled, k, fps, enabled=enabled)
        try:
            sink(packet, encode_frame_osc(packet))
        except Exception as exc:
            log.error("sink failed at frame %d: %s", k, exc)
            report.failed_frame, report.error = k, str(exc)
            break
        report.latencies_s.append(time.perf_counter() - began)
        report.tick_times_ms.append(tick_at)
        report.frames += 1
    return report
