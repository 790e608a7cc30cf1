"""Turn-taking and the closed interaction loop.

Every 40 ms tick the loop resamples the user's feature streams, updates the
turn state from who is speaking, forwards any resulting Interrupt/Resume to
the incremental scheduler, and emits one merged frame. Stage latencies can
be scripted so budget claims are checkable on a virtual clock.
"""

from __future__ import annotations

import bisect
import csv
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

from .clock import VirtualClock
from .frames import DEFAULT_FPS, Channel, FramePacket
from .framelevel import CHANNEL_GROUPS, BlinkConfig, BlinkSource, generate_blinks, merge_channels
from .incremental import ControlCommand, Mode, Scheduler, chunk_timeline
from .lexicon import Libraries, load_bundled_libraries
from .markup import FmlDocument
from .osc import encode_frame_osc
from .planner import SPEECH_SIGNAL_ID, SpeechRate, compile_fml
from .realizer import realize_timeline, evaluate_at_ms
from .timebase import frame_ms, to_ms

VIDEO_RATE_HZ = 30
AUDIO_RATE_HZ = 100


class FeatureKind(str, Enum):
    VIDEO = "video"
    AUDIO = "audio"


@dataclass(frozen=True)
class FeatureSample:
    ts: float
    kind: FeatureKind
    values: Mapping[str, float] = field(default_factory=dict)


def resample_features(stream: Sequence[FeatureSample], tick_times: Iterable[float]) -> list[FeatureSample | None]:
    """Sample-and-hold: each tick gets the latest sample with ts <= tick,
    or ``None`` if the stream has not started yet."""
    stamps = [s.ts for s in stream]
    if any(b < a for a, b in zip(stamps, stamps[1:])):
        raise ValueError("feature timestamps must be non-decreasing")
    out: list[FeatureSample | None] = []
    for t in tick_times:
        i = bisect.bisect_right(stamps, t)
        out.append(stream[i - 1] if i else None)
    return out


@dataclass(frozen=True)
class VadConfig:
    voicing_threshold: float = 0.5
    loudness_floor: float = 0.1


def user_vad(sample: FeatureSample | None, cfg: VadConfig = VadConfig()) -> bool:
    if sample is None:
        return False
    v = sample.values
    return v.get("voicing_prob", 0.0) >= cfg.voicing_threshold and v.get("loudness", 0.0) >= cfg.loudness_floor


# --------------------------------------------------------------------------
# turn taking


class TurnMode(str, Enum):
    AGENT_TURN = "AGENT_TURN"
    USER_TURN = "USER_TURN"
    OVERLAP = "OVERLAP"
    SILENCE = "SILENCE"


@dataclass(frozen=True)
class TurnConfig:
    barge_in_ticks: int = 5
    silence_timeout_s: float = 1.5
    tick_s: float = 1 / DEFAULT_FPS


@dataclass(frozen=True)
class TurnState:
    mode: TurnMode = TurnMode.SILENCE
    since_s: float = 0.0
    entered_tick: int = 0
    overlap_onset: int | None = None
    after_user: bool = False


def update_turn_state(
    state: TurnState,
    agent_speaking: bool,
    user_speaking: bool,
    tick: int,
    cfg: TurnConfig = TurnConfig(),
) -> tuple[TurnState, list[ControlCommand]]:
    """One tick of the rule table:

    * both speaking for ``barge_in_ticks`` ticks past the overlap onset
      -> INTERRUPT, user's turn (shorter overlaps show as OVERLAP);
    * silence lasting ``silence_timeout_s`` after the user's turn -> RESUME,
      agent's turn;
    * silence after the agent's turn or an overlap -> SILENCE;
    * a single speaker owns the turn.
    """
    tick_ms = to_ms(cfg.tick_s)
    commands: list[ControlCommand] = []
    overlap_onset = None
    after_user = False
    if agent_speaking and user_speaking:
        if state.mode is TurnMode.USER_TURN:
            # agent still finishing its current chunk after a barge-in
            mode = TurnMode.USER_TURN
        else:
            overlap_onset = tick if state.overlap_onset is None else state.overlap_onset
            if tick - overlap_onset >= cfg.barge_in_ticks:
                commands.append(ControlCommand.INTERRUPT)
                mode, overlap_onset = TurnMode.USER_TURN, None
            else:
                mode = TurnMode.OVERLAP
    elif agent_speaking:
        mode = TurnMode.AGENT_TURN
    elif user_speaking:
        mode = TurnMode.USER_TURN
    else:
        after_user = state.mode is TurnMode.USER_TURN or (
            state.mode is TurnMode.SILENCE and state.after_user
        )
        mode = TurnMode.SILENCE
        if after_user:
            silent_from = tick if state.mode is TurnMode.USER_TURN else state.entered_tick
            if (tick - silent_from) * tick_ms >= to_ms(cfg.silence_timeout_s):
                commands.append(ControlCommand.RESUME)
                mode, after_user = TurnMode.AGENT_TURN, False
    entered = state.entered_tick if mode is state.mode else tick
    new = TurnState(mode, (tick - entered) * tick_ms / 1000, entered, overlap_onset, after_user)
    return new, commands


# --------------------------------------------------------------------------
# scenarios


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


STAGES = ("perception", "generation", "io")


@dataclass(frozen=True)
class LatencyStep:
    from_s: float
    perception_s: float | None = None
    generation_s: float | None = None
    io_s: float | None = None


@dataclass
class Scenario:
    duration_s: float | None = None
    fps: float = DEFAULT_FPS
    samples: list[FeatureSample] = field(default_factory=list)
    vad: list[tuple[float, float]] = field(default_factory=list)
    agent: list[tuple[float, float]] = field(default_factory=list)
    latency: list[LatencyStep] = field(default_factory=list)
    utterances: list[tuple[float, str]] = field(default_factory=list)
    blink_seed: int | None = None

    def stream(self, kind: FeatureKind) -> list[FeatureSample]:
        return sorted((s for s in self.samples if s.kind is kind), key=lambda s: s.ts)

    def latencies_at(self, t_s: float) -> tuple[float, float, float]:
        current = {"perception_s": 0.0, "generation_s": 0.0, "io_s": 0.0}
        for step in sorted(self.latency, key=lambda s: s.from_s):
            if step.from_s > t_s + 1e-9:
                break
            for name in current:
                value = getattr(step, name)
                if value is not None:
                    current[name] = value
        return current["perception_s"], current["generation_s"], current["io_s"]


def _interval(tokens, line) -> tuple[float, float]:
    if len(tokens) != 3:
        raise ScenarioError(f"'{tokens[0]}' needs <start> <end>", line)
    a, b = _number(tokens[1], line), _number(tokens[2], line)
    if b < a:
        raise ScenarioError(f"interval end {b} before start {a}", line)
    return a, b


def _number(raw: str, line: int) -> float:
    try:
        v = float(raw)
    except ValueError:
        raise ScenarioError(f"{raw!r} is not a number", line) from None
    if not math.isfinite(v):
        raise ScenarioError(f"{raw!r} is not finite", line)
    return v


def _pairs(tokens, line) -> dict[str, float]:
    out = {}
    for tok in tokens:
        key, sep, value = tok.partition("=")
        if not sep or not key:
            raise ScenarioError(f"expected name=value, got {tok!r}", line)
        out[key] = _number(value, line)
    return out


def parse_scenario(text: str) -> Scenario:
    sc = Scenario()
    last_ts: dict[FeatureKind, float] = {}
    for line, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        head = tokens[0]
        if head == "duration":
            if len(tokens) != 2:
                raise ScenarioError("'duration' needs one value", line)
            sc.duration_s = _number(tokens[1], line)
            if sc.duration_s < 0:
                raise ScenarioError("duration must be >= 0", line)
        elif head == "fps":
            if len(tokens) != 2:
                raise ScenarioError("'fps' needs one value", line)
            sc.fps = _number(tokens[1], line)
            if not sc.fps > 0:
                raise ScenarioError("fps must be > 0", line)
        elif head == "seed":
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise ScenarioError("'seed' needs a non-negative integer", line)
            sc.blink_seed = int(tokens[1])
        elif head == "vad":
            sc.vad.append(_interval(tokens, line))
        elif head == "agent":
            sc.agent.append(_interval(tokens, line))
        elif head == "latency":
            fields = _pairs(tokens[1:], line)
            unknown = set(fields) - {"from", *STAGES}
            if unknown:
                raise ScenarioError(f"unknown latency field(s) {sorted(unknown)}", line)
            if any(v < 0 for v in fields.values()):
                raise ScenarioError("latencies must be >= 0", line)
            sc.latency.append(
                LatencyStep(
                    fields.get("from", 0.0),
                    fields.get("perception"),
                    fields.get("generation"),
                    fields.get("io"),
                )
            )
        elif head == "sample":
            if len(tokens) < 3:
                raise ScenarioError("'sample' needs <ts> <video|audio> name=value ...", line)
            ts = _number(tokens[1], line)
            try:
                kind = FeatureKind(tokens[2])
            except ValueError:
                raise ScenarioError(f"unknown stream kind {tokens[2]!r}", line) from None
            if ts < last_ts.get(kind, -math.inf):
                raise ScenarioError(f"{kind.value} timestamps must be non-decreasing", line)
            last_ts[kind] = ts
            sc.samples.append(FeatureSample(ts, kind, _pairs(tokens[3:], line)))
        elif head == "utterance":
            if len(tokens) < 2:
                raise ScenarioError("'utterance' needs <start> [words ...]", line)
            sc.utterances.append((_number(tokens[1], line), " ".join(tokens[2:])))
        else:
            raise ScenarioError(f"unknown record {head!r}", line)
    if len(sc.utterances) > 1:
        raise ScenarioError("at most one utterance per scenario")
    return sc


def load_scenario(path: str | Path) -> Scenario:
    return parse_scenario(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# loop report


@dataclass(frozen=True)
class TickRow:
    tick: int
    t_ms: float
    perception_s: float
    generation_s: float
    io_s: float
    dropped: bool
    turn: str
    user_vad: bool
    agent_speaking: bool
    commands: tuple[str, ...] = ()

    @property
    def total_s(self) -> float:
        return self.perception_s + self.generation_s + self.io_s


REPORT_COLUMNS = (
    "tick", "t_s", "perception_s", "generation_s", "io_s", "total_s",
    "dropped", "turn", "user_vad", "agent_speaking", "commands",
)


@dataclass
class LoopReport:
    fps: float = DEFAULT_FPS
    rows: list[TickRow] = field(default_factory=list)
    virtual: bool = True

    @property
    def ticks(self) -> int:
        return len(self.rows)

    @property
    def frames_emitted(self) -> int:
        return sum(not r.dropped for r in self.rows)

    @property
    def drops(self) -> int:
        return sum(r.dropped for r in self.rows)

    @property
    def max_total_s(self) -> float:
        return max((r.total_s for r in self.rows), default=0.0)

    @property
    def mean_period_s(self) -> float | None:
        if len(self.rows) < 2:
            return None
        return (self.rows[-1].t_ms - self.rows[0].t_ms) / 1000 / (len(self.rows) - 1)

    def commands(self) -> list[tuple[float, str]]:
        return [(r.t_ms / 1000, c) for r in self.rows for c in r.commands]

    def summary(self) -> dict:
        return {
            "ticks": self.ticks,
            "frames": self.frames_emitted,
            "drops": self.drops,
            "max_total_s": round(self.max_total_s, 9),
            "mean_period_s": self.mean_period_s,
            "commands": [f"{t:.3f} {c}" for t, c in self.commands()],
        }

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([
                    r.tick, f"{r.t_ms / 1000:.6f}", f"{r.perception_s:.6f}", f"{r.generation_s:.6f}",
                    f"{r.io_s:.6f}", f"{r.total_s:.6f}", int(r.dropped), r.turn,
                    int(r.user_vad), int(r.agent_speaking), " ".join(r.commands),
                ])


def read_report_csv(path: str | Path) -> LoopReport:
    report = LoopReport()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
            raise ValueError(f"report columns must be {','.join(REPORT_COLUMNS)}")
        for rec in reader:
            report.rows.append(TickRow(
                int(rec["tick"]), float(rec["t_s"]) * 1000, float(rec["perception_s"]),
                float(rec["generation_s"]), float(rec["io_s"]), rec["dropped"] == "1",
                rec["turn"], rec["user_vad"] == "1", rec["agent_speaking"] == "1",
                tuple(rec["commands"].split()),
            ))
    return report


# --------------------------------------------------------------------------
# interaction loop


def external_from_video(sample: FeatureSample | None) -> dict[Channel, float] | None:
    """Default external frame source: mirror the user's AU/head/gaze features."""
    if sample is None:
        return None
    out = {}
    for key, v in sample.values.items():
        k = key.lower()
        if k.startswith("au") and k[2:].isdigit():
            out[Channel.au(int(k[2:]))] = v
        elif k in ("head_x", "head_y", "head_z"):
            out[Channel.head(k[-1])] = v
        elif k in ("gaze_x", "gaze_y"):
            out[Channel.gaze(k[-1])] = v
    return out or None


def _in_intervals(t_s: float, intervals: Sequence[tuple[float, float]]) -> bool:
    return any(a <= t_s + 1e-9 and t_s < b - 1e-9 for a, b in intervals)


class _AgentPlayback:
    """Plays the scenario utterance through the incremental scheduler on the
    loop's virtual timeline."""

    def __init__(self, start_s: float, text: str, libs: Libraries, rate: SpeechRate, chunk_s: float, fps: float):
        self.start_ms = to_ms(start_s)
        bml = compile_fml(FmlDocument(tuple(text.split())), libs, rate)
        self.timeline = realize_timeline(bml, libs, fps)
        speech = next(s for s in bml.signals if s.id == SPEECH_SIGNAL_ID)
        self.speech_end_ms = to_ms(speech.end)
        self.clock = VirtualClock()
        self.scheduler = Scheduler(chunk_timeline(self.timeline, chunk_s), lambda c, t: None, self.clock, timeline=self.timeline)

    def step(self, t_ms: int) -> None:
        if t_ms < self.start_ms:
            return
        if not self.scheduler._started:
            self.clock.advance_to(self.start_ms)
            self.scheduler.start()
        self.scheduler.step_until(t_ms)

    def local_ms(self, t_ms: int) -> float | None:
        st = self.scheduler.state
        if not self.scheduler._started or st.mode is not Mode.RUNNING:
            return None
        return t_ms - st.shift_ms

    def speaking(self, t_ms: int) -> bool:
        local = self.local_ms(t_ms)
        return local is not None and 0 <= local < self.speech_end_ms

    def mouth(self, t_ms: int) -> dict[Channel, float] | None:
        local = self.local_ms(t_ms)
        if local is None:
            return None
        chans = [c for c in self.timeline.channels if c.kind == "viseme"]
        return {c: evaluate_at_ms(self.timeline, c, local) for c in chans} or None

    def submit(self, cmd: ControlCommand, t_ms: int) -> None:
        if self.scheduler._started:
            self.scheduler.submit(cmd, at_ms=t_ms)


def run_interaction_loop(
    scenario: Scenario,
    duration_s: float | None = None,
    *,
    libs: Libraries | None = None,
    turn_cfg: TurnConfig | None = None,
    vad_cfg: VadConfig = VadConfig(),
    chunk_s: float = 0.5,
    rate: SpeechRate = SpeechRate(),
    clock=None,
    sink: Callable[[FramePacket, bytes], None] | None = None,
    external: Callable[[FeatureSample | None], dict | None] = external_from_video,
    blink_cfg: BlinkConfig | None = None,
    enabled: Iterable[str] = CHANNEL_GROUPS,
) -> LoopReport:
    """Drive resample -> turn state -> frame merge once per tick.

    On a virtual clock the per-stage latencies come from the scenario script
    and a tick is dropped whenever the previous tick's work is still running
    at its deadline. On a wall clock the stages are timed for real.
    """
    if duration_s is None:
        duration_s = scenario.duration_s or 0.0
    fps = scenario.fps
    clock = clock or VirtualClock()
    turn_cfg = turn_cfg or TurnConfig(tick_s=1 / fps)
    report = LoopReport(fps=fps, virtual=clock.virtual)
    n_ticks = int(round(duration_s * fps))
    if n_ticks == 0:
        return report

    audio = scenario.stream(FeatureKind.AUDIO)
    video = scenario.stream(FeatureKind.VIDEO)
    audio_ts = [s.ts for s in audio]
    video_ts = [s.ts for s in video]
    blink_cfg = blink_cfg or BlinkConfig()
    if scenario.blink_seed is not None:
        blink_cfg = replace(blink_cfg, seed=scenario.blink_seed)
    blinks = BlinkSource(generate_blinks(blink_cfg, duration_s), fps)
    enabled = tuple(enabled)
    playback = None
    if scenario.utterances:
        start, text = scenario.utterances[0]
        playback = _AgentPlayback(start, text, libs or load_bundled_libraries(), rate, chunk_s, fps)

    state = TurnState()
    period_us = int(round(1e6 / fps))
    busy_until_us = 0
    start_ms = clock.now()
    for k in range(n_ticks):
        local_ms = frame_ms(k, fps)
        clock.sleep_until(start_ms + local_ms)
        t_s = local_ms / 1000
        began = time.perf_counter()

        # perception
        i = bisect.bisect_right(audio_ts, t_s)
        a_sample = audio[i - 1] if i else None
        j = bisect.bisect_right(video_ts, t_s)
        v_sample = video[j - 1] if j else None
        user = _in_intervals(t_s, scenario.vad) if scenario.vad else user_vad(a_sample, vad_cfg)
        t_perc = time.perf_counter()

        # generation
        if playback is not None:
            playback.step(int(local_ms))
            agent = playback.speaking(int(local_ms))
        else:
            agent = _in_intervals(t_s, scenario.agent)
        state, cmds = update_turn_state(state, agent, user, k, turn_cfg)
        if playback is not None:
            for c in cmds:
                playback.submit(c, int(local_ms))
        sources = {
            "speech": playback.mouth(int(local_ms)) if playback else None,
            "external": external(v_sample),
            "blink": blinks.poll(k, local_ms),
        }
        packet = merge_channels(sources, k, fps, enabled=enabled)
        t_gen = time.perf_counter()

        if clock.virtual:
            perception, generation, io = scenario.latencies_at(t_s)
            tick_us = int(round(local_ms * 1000))
            dropped = busy_until_us > tick_us
            if not dropped:
                busy_until_us = tick_us + sum(int(round(x * 1e6)) for x in (perception, generation, io))
        else:
            lateness_ms = clock.now() - (start_ms + local_ms)
            dropped = lateness_ms * 1000 > period_us
        if not dropped and sink is not None:
            sink(packet, encode_frame_osc(packet))
        if not clock.virtual:
            t_io = time.perf_counter()
            perception, generation, io = t_perc - began, t_gen - t_perc, t_io - t_gen
        report.rows.append(
            TickRow(k, local_ms, perception, generation, io, dropped, state.mode.value, user, agent, tuple(c.value for c in cmds))
        )
    return report
