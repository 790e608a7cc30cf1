"""Incremental realizer: chunked dispatch of a keyframe timeline with live
Interrupt / Resume / Stop / Clear control.

Commands are queued and take effect at the next chunk boundary, so the chunk
being sent always completes. Under a :class:`VirtualClock` the whole run is a
deterministic function of (chunks, command script).
"""

from __future__ import annotations

import logging
import math
import queue
import socketserver
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Iterable, Sequence

from .realizer import VISEME_CHANNEL, Keyframe, KeyframeTimeline, evaluate_at_ms
from .timebase import to_ms, to_s

log = logging.getLogger(__name__)

DEFAULT_CHUNK_PERIOD_S = 0.5
DEFAULT_REST_TRANSITION_S = 0.4
REST_INDEX = -1


class Mode(str, Enum):
    IDLE = "IDLE"
    RUNNING = "RUNNING"
    PAUSED = "PAUSED"
    STOPPED = "STOPPED"


class ControlCommand(str, Enum):
    INTERRUPT = "INTERRUPT"
    RESUME = "RESUME"
    STOP = "STOP"
    CLEAR = "CLEAR"

    @classmethod
    def parse(cls, text: str) -> "ControlCommand":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValueError(f"unknown control command {text.strip()!r}") from None


@dataclass(frozen=True)
class Chunk:
    index: int
    start_ms: int
    end_ms: int
    keyframes: tuple[Keyframe, ...] = ()
    rest: bool = False
    silenced: bool = False

    @property
    def start_s(self) -> float:
        return to_s(self.start_ms)

    @property
    def end_s(self) -> float:
        return to_s(self.end_ms)


def chunk_timeline(timeline: KeyframeTimeline, chunk_period_s: float = DEFAULT_CHUNK_PERIOD_S) -> list[Chunk]:
    """Split into consecutive chunks of ``chunk_period_s``; membership is
    half-open [start, end) except that the last chunk is closed."""
    period = to_ms(chunk_period_s)
    if period <= 0:
        raise ValueError(f"chunk period must be positive, got {chunk_period_s}")
    duration = timeline.duration_ms
    keyframes = timeline.keyframes()
    count = math.ceil(duration / period)
    if count == 0 and keyframes:
        count = 1
    buckets: list[list[Keyframe]] = [[] for _ in range(count)]
    for kf in keyframes:
        buckets[min(kf.t_ms // period, count - 1)].append(kf)
    return [
        Chunk(i, i * period, min((i + 1) * period, duration), tuple(b))
        for i, b in enumerate(buckets)
    ]


def timeline_from_chunks(chunks: Iterable[Chunk]) -> KeyframeTimeline:
    chunks = list(chunks)
    kfs = [kf for c in chunks for kf in c.keyframes]
    end = max((c.end_ms for c in chunks), default=0)
    return KeyframeTimeline.from_keyframes(kfs, max([end] + [k.t_ms for k in kfs]))


# --------------------------------------------------------------------------
# pure state machine


@dataclass(frozen=True)
class SchedulerState:
    """``queue`` holds the whole plan; ``cursor`` is the next unsent index.
    A chunk with index i is due at ``queue[i].start_ms + shift_ms``."""

    mode: Mode = Mode.IDLE
    queue: tuple[Chunk, ...] = ()
    cursor: int = 0
    shift_ms: float = 0
    last_sent: int = -1
    warning: str | None = None
    outbox: Chunk | None = None
    timeline: KeyframeTimeline | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not 0 <= self.cursor <= len(self.queue):
            raise ValueError("cursor outside queue")

    @property
    def remaining(self) -> tuple[Chunk, ...]:
        return self.queue[self.cursor:]

    def local_time(self, now_ms: float) -> float:
        """Position on the timeline the agent currently shows."""
        if self.last_sent < 0:
            return 0
        return min(now_ms - self.shift_ms, self.queue[self.last_sent].end_ms)


def rest_chunk(state: SchedulerState, now_ms: float, rest_transition_ms: int) -> Chunk:
    """Ramp every animated channel to rest; speech is cut at once."""
    timeline = state.timeline or timeline_from_chunks(state.queue)
    at = int(round(state.local_time(now_ms)))
    kfs = []
    for ch in timeline.channels:
        if ch == VISEME_CHANNEL or ch.kind == "viseme":
            kfs.append(Keyframe(at, ch, 0.0, "rest"))
            continue
        kfs.append(Keyframe(at, ch, evaluate_at_ms(timeline, ch, at), "rest"))
        kfs.append(Keyframe(at + rest_transition_ms, ch, 0.0, "rest"))
    return Chunk(REST_INDEX, at, at + rest_transition_ms, tuple(sorted(kfs)), rest=True, silenced=True)


def apply_control(
    state: SchedulerState,
    cmd: ControlCommand,
    now_ms: float,
    *,
    rest_transition_s: float = DEFAULT_REST_TRANSITION_S,
    replay_last: bool = False,
) -> SchedulerState:
    state = replace(state, warning=None, outbox=None)
    if cmd is ControlCommand.INTERRUPT:
        if state.mode is not Mode.RUNNING:
            return replace(state, warning=f"INTERRUPT ignored in mode {state.mode.value}")
        return replace(state, mode=Mode.PAUSED)
    if cmd is ControlCommand.RESUME:
        if state.mode is not Mode.PAUSED:
            return replace(state, warning=f"RESUME ignored in mode {state.mode.value}")
        index = state.cursor
        if replay_last and state.last_sent >= 0:
            index = state.last_sent
        if index >= len(state.queue):
            return replace(state, mode=Mode.IDLE)
        shift = now_ms - state.queue[index].start_ms
        return replace(state, mode=Mode.RUNNING, cursor=index, shift_ms=shift)
    if cmd is ControlCommand.STOP:
        rest = rest_chunk(state, now_ms, to_ms(rest_transition_s))
        return replace(state, mode=Mode.STOPPED, queue=(), cursor=0, last_sent=-1, outbox=rest)
    if cmd is ControlCommand.CLEAR:
        return replace(state, mode=Mode.IDLE, queue=(), cursor=0, last_sent=-1)
    raise ValueError(f"unknown command {cmd!r}")


# --------------------------------------------------------------------------
# driver


@dataclass(frozen=True)
class TraceEvent:
    t_ms: float
    kind: str  # START, DISPATCH, REST, CONTROL, WARN, IDLE, ERROR
    index: int | None = None
    detail: str = ""

    def format(self) -> str:
        parts = [f"{self.t_ms / 1000:.3f}", self.kind]
        if self.index is not None:
            parts.append(str(self.index))
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


@dataclass
class DispatchTrace:
    events: list[TraceEvent] = field(default_factory=list)
    error: str | None = None

    def dispatches(self) -> list[tuple[int, float]]:
        return [(e.index, e.t_ms) for e in self.events if e.kind == "DISPATCH"]

    def text(self) -> str:
        return "".join(e.format() + "\n" for e in self.events)


@dataclass
class _Pending:
    t_ms: float | None
    cmd: ControlCommand
    reply: Callable[[str], None] | None


Sink = Callable[[Chunk, float], None]


class Scheduler:
    """Sends chunks to ``sink(chunk, dispatch_time_ms)`` on ``clock``.

    Virtual clocks are driven with :meth:`step_until` (or :meth:`run`, which
    steps to completion); wall clocks with :meth:`run` on a dedicated thread
    while other threads :meth:`submit` commands.
    """

    def __init__(
        self,
        chunks: Sequence[Chunk],
        sink: Sink,
        clock,
        *,
        timeline: KeyframeTimeline | None = None,
        rest_transition_s: float = DEFAULT_REST_TRANSITION_S,
        replay_last: bool = False,
    ):
        self.sink = sink
        self.clock = clock
        self.rest_transition_s = rest_transition_s
        self.replay_last = replay_last
        self.state = SchedulerState(queue=tuple(chunks), timeline=timeline)
        self.trace = DispatchTrace()
        self._inbox: queue.Queue[_Pending] = queue.Queue()
        self._pending: list[_Pending] = []
        self._lock = threading.RLock()
        self._started = False
        self._last_t = 0.0
        self.finished = threading.Event()

    # -- commands ----------------------------------------------------------

    def submit(self, cmd: ControlCommand, at_ms: float | None = None, reply=None) -> None:
        """Queue a command. ``at_ms`` schedules it on a virtual clock; wall
        clock commands are stamped on arrival."""
        if at_ms is None:
            at_ms = self.clock.now()
        self._inbox.put(_Pending(at_ms, cmd, reply))

    def apply_now(self, cmd: ControlCommand) -> str:
        with self._lock:
            return self._apply(cmd, self.clock.now())

    def _drain(self) -> None:
        while True:
            try:
                self._pending.append(self._inbox.get_nowait())
            except queue.Empty:
                break
        self._pending.sort(key=lambda p: p.t_ms)

    def _apply(self, cmd: ControlCommand, at: float) -> str:
        new = apply_control(
            self.state, cmd, at, rest_transition_s=self.rest_transition_s, replay_last=self.replay_last
        )
        if new.warning:
            log.warning(new.warning)
            self._record(at, "WARN", detail=new.warning)
            self.state = new
            return f"WARN {new.warning}"
        self.state = new
        self._record(at, "CONTROL", detail=f"{cmd.value} -> {new.mode.value}")
        if new.outbox is not None:
            self._emit(new.outbox, at, "REST")
        return f"OK {new.mode.value}"

    def _apply_pending(self, upto: float) -> None:
        while self._pending and self._pending[0].t_ms <= upto:
            p = self._pending.pop(0)
            at = upto if self.state.mode is Mode.RUNNING else max(p.t_ms, self._last_t)
            response = self._apply(p.cmd, at)
            if p.reply:
                p.reply(response)

    # -- dispatch ----------------------------------------------------------

    def _record(self, t, kind, index=None, detail=""):
        self._last_t = t
        self.trace.events.append(TraceEvent(t, kind, index, detail))

    def _emit(self, chunk: Chunk, at: float, kind: str) -> bool:
        try:
            self.sink(chunk, at)
        except Exception as exc:  # sink failures abort the run
            if kind == "REST":
                self._record(at, "ERROR", detail=f"rest transition not delivered: {exc}")
                self.trace.error = str(exc)
                return False
            self._record(at, "ERROR", chunk.index, str(exc))
            self.trace.error = str(exc)
            self.state = apply_control(self.state, ControlCommand.STOP, at, rest_transition_s=self.rest_transition_s)
            self._record(at, "CONTROL", detail=f"STOP -> {self.state.mode.value}")
            self._emit(self.state.outbox, at, "REST")
            return False
        self._record(at, kind, chunk.index if kind == "DISPATCH" else None)
        return True

    def _due(self) -> float:
        st = self.state
        if st.cursor < len(st.queue):
            return st.queue[st.cursor].start_ms + st.shift_ms
        # queue exhausted: go idle once the last chunk has played out
        last = st.queue[st.last_sent] if st.last_sent >= 0 else None
        return (last.end_ms + st.shift_ms) if last else self.clock.now()

    def _boundary(self, at: float) -> None:
        self._apply_pending(at)
        st = self.state
        if st.mode is not Mode.RUNNING:
            return
        if st.cursor >= len(st.queue):
            self.state = replace(st, mode=Mode.IDLE)
            self._record(at, "IDLE")
            return
        chunk = st.queue[st.cursor]
        if self._emit(chunk, at, "DISPATCH"):
            self.state = replace(self.state, cursor=st.cursor + 1, last_sent=chunk.index)

    def start(self) -> None:
        with self._lock:
            if self._started:
                return
            self._started = True
            now = self.clock.now()
            self._last_t = now
            self._record(now, "START", detail=f"chunks={len(self.state.queue)}")
            if self.state.queue:
                self.state = replace(self.state, mode=Mode.RUNNING, shift_ms=now)
            else:
                self._record(now, "IDLE")

    def step_until(self, limit_ms: float) -> None:
        """Process every boundary and command up to ``limit_ms`` (virtual clock)."""
        self.start()
        with self._lock:
            while True:
                self._drain()
                if self.state.mode is Mode.RUNNING:
                    due = self._due()
                    if due > limit_ms:
                        break
                    self.clock.advance_to(due)
                    self._boundary(due)
                    continue
                if not self._pending or self._pending[0].t_ms > limit_ms:
                    break
                p = self._pending[0]
                self.clock.advance_to(p.t_ms)
                self._apply_pending(p.t_ms)
            if math.isfinite(limit_ms):
                self.clock.advance_to(limit_ms)

    def run(self, stop_event: threading.Event | None = None) -> DispatchTrace:
        if self.clock.virtual:
            self.step_until(math.inf)
            self.finished.set()
            return self.trace
        self.start()
        while stop_event is None or not stop_event.is_set():
            mode = self.state.mode
            if mode is Mode.RUNNING:
                self.clock.sleep_until(self._due())
                with self._lock:
                    self._drain()
                    self._boundary(self.clock.now())
            elif mode is Mode.PAUSED:
                try:
                    p = self._inbox.get(timeout=0.05)
                except queue.Empty:
                    continue
                with self._lock:
                    self._pending.append(p)
                    self._drain()
                    self._apply_pending(self.clock.now())
            else:
                break
        self.finished.set()
        return self.trace

    @property
    def running(self) -> bool:
        return self._started and not self.finished.is_set()


# --------------------------------------------------------------------------
# control socket


def parse_command_script(lines: Iterable[str]) -> list[tuple[int, ControlCommand]]:
    """``<seconds> <COMMAND>`` per line, ``#`` comments allowed."""
    script = []
    for number, raw in enumerate(lines, start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        if len(parts) != 2:
            raise ValueError(f"line {number}: expected '<seconds> <COMMAND>'")
        try:
            t = to_ms(float(parts[0]))
            cmd = ControlCommand.parse(parts[1])
        except ValueError as exc:
            raise ValueError(f"line {number}: {exc}") from None
        script.append((t, cmd))
    return script


class _ControlHandler(socketserver.StreamRequestHandler):
    def handle(self):
        scheduler: Scheduler = self.server.scheduler
        for raw in self.rfile:
            line = raw.decode("utf-8", "replace").strip()
            if not line:
                continue
            try:
                cmd = ControlCommand.parse(line)
            except ValueError as exc:
                self.wfile.write(f"WARN {exc}\n".encode())
                continue
            if not scheduler.running:
                response = scheduler.apply_now(cmd)
            else:
                box: queue.Queue[str] = queue.Queue()
                scheduler.submit(cmd, reply=box.put)
                try:
                    response = box.get(timeout=5.0)
                except queue.Empty:
                    response = "WARN command still pending"
            self.wfile.write((response + "\n").encode())


class ControlServer(socketserver.ThreadingTCPServer):
    """Line protocol: ``INTERRUPT``/``RESUME``/``STOP``/``CLEAR``; answers
    ``OK <mode>`` or ``WARN <reason>``."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, scheduler: Scheduler, host: str = "127.0.0.1", port: int = 0):
        self.scheduler = scheduler
        super().__init__((host, port), _ControlHandler)
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> "ControlServer":
        self._thread.start()
        return self

    def stop(self) -> None:
        self.shutdown()
        self.server_close()
