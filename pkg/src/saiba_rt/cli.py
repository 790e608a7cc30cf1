"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 input or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import threading
from pathlib import Path

from . import __version__
from .clock import VirtualClock, WallClock
from .dialogue import REPORT_COLUMNS, ScenarioError, TurnConfig, load_scenario, read_report_csv, run_interaction_loop
from .frames import DEFAULT_FPS, read_frames, write_frames
from .framelevel import CHANNEL_GROUPS, BlinkConfig
from .incremental import (
    DEFAULT_CHUNK_PERIOD_S,
    DEFAULT_REST_TRANSITION_S,
    Chunk,
    Scheduler,
    chunk_timeline,
    parse_command_script,
    ControlServer,
)
from .lexicon import (
    BUNDLED_LIBRARY_DIR,
    FACES_FILE,
    GESTUARY_FILE,
    LEXICON_FILE,
    LexiconError,
    UnknownIntentionError,
    load_libraries,
    parse_faces,
    parse_gestuary,
    parse_lexicon,
)
from .markup import MarkupError, parse_bml, parse_fml, serialize_bml
from .osc import OscError, UdpSender, decode_frame_osc, encode_frame_osc, parse_udp_target
from .planner import SpeechRate, compile_fml
from .realizer import KeyframeTimeline, UnknownBehaviorError, evaluate_at_ms, realize_timeline, sample_frames
from .timebase import frame_ms
from .touch import (
    GazeTarget,
    ProxemicsThresholds,
    TouchFeatureError,
    attention_score,
    classify_proxemics,
    classify_touch,
    read_touch_features,
)

log = logging.getLogger("saiba_rt")

EXIT_OK, EXIT_RUNTIME, EXIT_INPUT = 0, 1, 2

# every default the CLI exposes; a --config JSON file may override any of
# them and explicit flags override the file
DEFAULTS = {
    "fps": DEFAULT_FPS,
    "chunk": DEFAULT_CHUNK_PERIOD_S,
    "word_duration": SpeechRate().word_duration_s,
    "seed": 0,
    "lexicon": str(BUNDLED_LIBRARY_DIR),
    "rest_transition": DEFAULT_REST_TRANSITION_S,
    "barge_in_ticks": TurnConfig().barge_in_ticks,
    "silence_timeout": TurnConfig().silence_timeout_s,
    "blink_interval": BlinkConfig().mean_interval_s,
    "channels": list(CHANNEL_GROUPS),
    "resume_replay_last": False,
}

INPUT_ERRORS = (
    MarkupError,
    LexiconError,
    UnknownIntentionError,
    UnknownBehaviorError,
    ScenarioError,
    TouchFeatureError,
    OscError,
    ValueError,
    FileNotFoundError,
    IsADirectoryError,
    json.JSONDecodeError,
    UnicodeDecodeError,
)


class InputError(Exception):
    """Raised for problems the user must fix in their inputs."""


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"config {path}: top level must be an object")
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise InputError(f"config {path}: unknown key(s) {sorted(unknown)}")
    return data


def settings(args) -> dict:
    merged = dict(DEFAULTS)
    merged.update(load_config(getattr(args, "config", None)))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    return merged


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


# --------------------------------------------------------------------------
# subcommands


def cmd_compile(args) -> int:
    cfg = settings(args)
    doc = parse_fml(Path(args.fml).read_text(encoding="utf-8"))
    libs = load_libraries(cfg["lexicon"])
    bml = compile_fml(doc, libs, SpeechRate(cfg["word_duration"]), cfg["seed"])
    out = _open_out(args.out)
    try:
        out.write(serialize_bml(bml))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def _realize(args, cfg) -> KeyframeTimeline:
    bml = parse_bml(Path(args.bml).read_text(encoding="utf-8"))
    libs = load_libraries(cfg["lexicon"])
    return realize_timeline(bml, libs, cfg["fps"])


def cmd_realize(args) -> int:
    cfg = settings(args)
    timeline = _realize(args, cfg)
    frames = sample_frames(timeline)
    out = _open_out(args.out)
    try:
        write_frames(frames, out)
    finally:
        if out is not sys.stdout:
            out.close()
    if args.figure:
        from .plotting import plot_timeline

        plot_timeline(timeline, args.figure)
    log.info("wrote %d frames", len(frames))
    return EXIT_OK


def _chunk_frames(chunk: Chunk, timeline: KeyframeTimeline, at_ms: float, fps: float):
    """Packets covering one dispatched chunk, stamped from its dispatch time."""
    source = KeyframeTimeline.from_keyframes(chunk.keyframes, chunk.end_ms, fps) if chunk.rest else timeline
    channels = source.channels
    period = frame_ms(1, fps)
    x = chunk.start_ms
    while x < chunk.end_ms or (x == chunk.end_ms and chunk.start_ms == chunk.end_ms):
        frame = int(round((at_ms + x - chunk.start_ms) * fps / 1000))
        values = {ch: evaluate_at_ms(source, ch, x) for ch in channels}
        yield frame, values
        x += period
        if chunk.start_ms == chunk.end_ms:
            break


def _parse_tcp(spec: str) -> tuple[str, int]:
    scheme, _, rest = spec.partition(":")
    host, _, port = rest.rpartition(":")
    if scheme != "tcp" or not port.isdigit():
        raise InputError(f"expected tcp:<port> or tcp:<host>:<port>, got {spec!r}")
    return host or "127.0.0.1", int(port)


def cmd_play(args) -> int:
    from .frames import FramePacket

    cfg = settings(args)
    timeline = _realize(args, cfg)
    chunks = chunk_timeline(timeline, cfg["chunk"])
    script = []
    if args.commands:
        script = parse_command_script(Path(args.commands).read_text(encoding="utf-8").splitlines())
    if args.control:
        control = _parse_tcp(args.control)
    sender = UdpSender(*parse_udp_target(args.osc)) if args.osc else None
    fps = cfg["fps"]

    def sink(chunk: Chunk, at_ms: float) -> None:
        if sender is None:
            return
        for frame, values in _chunk_frames(chunk, timeline, at_ms, fps):
            sender.send(encode_frame_osc(FramePacket.from_channels(frame, values, fps)))

    clock = VirtualClock() if args.virtual_clock else WallClock()
    scheduler = Scheduler(
        chunks,
        sink,
        clock,
        timeline=timeline,
        rest_transition_s=cfg["rest_transition"],
        replay_last=bool(cfg["resume_replay_last"]),
    )
    server = ControlServer(scheduler, *control).start() if args.control else None
    if server:
        log.info("control socket listening on %s:%d", *server.server_address[:2])
    try:
        if args.virtual_clock:
            for t, cmd in script:
                scheduler.submit(cmd, at_ms=t)
            trace = scheduler.run()
        else:
            stop = threading.Event()
            timers = [threading.Timer(t / 1000, scheduler.submit, (cmd,)) for t, cmd in script]
            for timer in timers:
                timer.daemon = True
                timer.start()
            try:
                trace = scheduler.run(stop)
            except KeyboardInterrupt:
                stop.set()
                trace = scheduler.trace
            for timer in timers:
                timer.cancel()
    finally:
        if server:
            server.stop()
        if sender:
            sender.close()
    text = trace.text()
    if args.trace:
        Path(args.trace).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if trace.error:
        print(f"error: sink failed: {trace.error}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def _channel_groups(groups, disabled) -> tuple[str, ...]:
    unknown = (set(groups) | set(disabled or ())) - set(CHANNEL_GROUPS)
    if unknown:
        raise InputError(f"unknown channel group(s) {sorted(unknown)}; choose from {', '.join(CHANNEL_GROUPS)}")
    return tuple(g for g in groups if g not in set(disabled or ()))


def cmd_loop(args) -> int:
    cfg = settings(args)
    scenario = load_scenario(args.scenario)
    if args.fps is not None:
        scenario.fps = args.fps
    if args.seed is not None:
        scenario.blink_seed = args.seed
    duration = args.duration if args.duration is not None else scenario.duration_s
    if duration is None:
        raise InputError("no duration: pass --duration or put 'duration N' in the scenario")
    if duration < 0:
        raise InputError("duration must be >= 0")
    libs = load_libraries(cfg["lexicon"]) if scenario.utterances else None
    sender = UdpSender(*parse_udp_target(args.osc)) if args.osc else None
    turn = TurnConfig(cfg["barge_in_ticks"], cfg["silence_timeout"], 1 / scenario.fps)
    try:
        report = run_interaction_loop(
            scenario,
            duration,
            libs=libs,
            turn_cfg=turn,
            chunk_s=cfg["chunk"],
            rate=SpeechRate(cfg["word_duration"]),
            clock=WallClock() if args.wall_clock else VirtualClock(),
            sink=(lambda p, data: sender.send(data)) if sender else None,
            blink_cfg=BlinkConfig(mean_interval_s=cfg["blink_interval"]),
            enabled=_channel_groups(cfg["channels"], args.disable),
        )
    finally:
        if sender:
            sender.close()
    report.write_csv(args.report)
    figure = args.figure or str(Path(args.report).with_suffix(".png"))
    if not args.no_figure:
        from .plotting import plot_loop_report

        plot_loop_report(report, figure)
    print(json.dumps(report.summary(), indent=2))
    return EXIT_OK


def cmd_touch_classify(args) -> int:
    cfg_zone = None
    if args.distance is not None:
        cfg_zone = classify_proxemics(args.distance, ProxemicsThresholds())
        print(f"zone {cfg_zone.value}")
    if args.gaze is not None:
        print(f"attention {attention_score(GazeTarget(args.gaze)):.1f}")
    for line, features in read_touch_features(args.features):
        print(f"{line} {classify_touch(features).value}")
    return EXIT_OK


def _sniff_lex(path: Path) -> str:
    for raw in path.read_text(encoding="utf-8").splitlines():
        text = raw.split("#", 1)[0].split()
        if text:
            return text[0]
    return ""


def validate_path(path: Path) -> str:
    """Checks one artifact and returns a one-line description of it."""
    if path.is_dir():
        libs = load_libraries(path)
        return f"library directory: {len(libs.faces)} faces, {len(libs.gestuary)} gestures, {len(libs.lexicon)} lexicon entries"
    data = path.read_bytes()
    if data.startswith(b"#bundle") or data.startswith(b"/"):
        p = decode_frame_osc(data)
        return f"OSC frame {p.frame}: {len(p.channels())} channels"
    text = data.decode("utf-8")
    stripped = text.lstrip()
    if stripped.startswith("<"):
        head = stripped[:200]
        if "<fml" in head:
            doc = parse_fml(text)
            return f"FML: {len(doc.words)} words, {len(doc.intentions)} intentions"
        doc = parse_bml(text)
        return f"BML: {len(doc.signals)} signals, duration {doc.utterance_duration_s} s"
    first = next((ln for ln in text.splitlines() if ln.strip()), "")
    if first.strip() == ",".join(REPORT_COLUMNS):
        report = read_report_csv(path)
        return f"loop report: {report.ticks} ticks, {report.drops} drops"
    if path.suffix == ".lex":
        kind = _sniff_lex(path)
        if kind == "face":
            return f"face library: {len(parse_faces(path))} entries"
        if kind == "gesture":
            return f"gestuary: {len(parse_gestuary(path))} entries"
        if kind == "intention":
            return f"lexicon: {len(parse_lexicon(path)[0])} entries"
        raise InputError(f"{path}: unrecognised .lex content")
    if first.lstrip().startswith("{"):
        record = json.loads(first)
        if isinstance(record, dict) and "frame" in record:
            n = sum(1 for _ in read_frames(text.splitlines()))
            return f"frame stream: {n} frames"
        n = sum(1 for _ in read_touch_features(path))
        return f"touch features: {n} records"
    if path.name in (FACES_FILE, GESTUARY_FILE, LEXICON_FILE):
        raise InputError(f"{path}: empty library file")
    scenario = load_scenario(path)
    return f"scenario: {len(scenario.samples)} samples, duration {scenario.duration_s}"


def cmd_validate(args) -> int:
    print(f"OK {args.file}: {validate_path(Path(args.file))}")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="saiba-rt", description="Real-time multimodal behavior realization.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file overriding built-in defaults")
    common.add_argument("--lexicon", help="library directory (default: bundled libraries)")

    p = sub.add_parser("compile", parents=[common], help="FML -> BML")
    p.add_argument("--fml", required=True)
    p.add_argument("--out", default="-", help="BML output path (default stdout)")
    p.add_argument("--word-duration", dest="word_duration", type=float, help="seconds per word (0.4)")
    p.add_argument("--seed", type=int, help="lexicon sampling seed (0)")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("realize", parents=[common], help="BML -> frame stream (NDJSON)")
    p.add_argument("--bml", required=True)
    p.add_argument("--fps", type=float, help="frame rate (25)")
    p.add_argument("--out", default="-", help="frame stream path (default stdout)")
    p.add_argument("--figure", help="also plot the keyframe timeline to this image file")
    p.set_defaults(func=cmd_realize)

    p = sub.add_parser("play", parents=[common], help="dispatch a BML plan chunk by chunk")
    p.add_argument("--bml", required=True)
    p.add_argument("--osc", help="udp:<host>:<port> to stream frames to")
    p.add_argument("--control", help="tcp:<port> for the live control socket")
    p.add_argument("--chunk", type=float, help="chunk period in seconds (0.5)")
    p.add_argument("--fps", type=float, help="frame rate (25)")
    p.add_argument("--virtual-clock", action="store_true", help="simulate time; deterministic trace")
    p.add_argument("--commands", help="script of '<seconds> <COMMAND>' lines")
    p.add_argument("--trace", help="write the dispatch trace here instead of stdout")
    p.add_argument("--rest-transition", dest="rest_transition", type=float, help="seconds to ramp to rest on STOP (0.4)")
    p.add_argument("--resume-replay-last", dest="resume_replay_last", action="store_true", default=None,
                   help="RESUME re-sends the last chunk sent before the pause instead of continuing after it")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("loop", parents=[common], help="run the closed interaction loop on a scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--duration", type=float, help="seconds (default: scenario duration)")
    p.add_argument("--report", required=True, help="per-tick CSV report path")
    p.add_argument("--figure", help="latency plot path (default: report path with .png)")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--wall-clock", action="store_true", help="run in real time and measure stage latencies")
    p.add_argument("--osc", help="udp:<host>:<port> to stream frames to")
    p.add_argument("--fps", type=float)
    p.add_argument("--seed", type=int, help="blink seed")
    p.add_argument("--chunk", type=float)
    p.add_argument("--blink-interval", dest="blink_interval", type=float, help="mean seconds between blinks (4.0)")
    p.add_argument("--disable", action="append", metavar="GROUP", help=f"switch off a channel group ({', '.join(CHANNEL_GROUPS)}); repeatable")
    p.add_argument("--barge-in-ticks", dest="barge_in_ticks", type=int)
    p.add_argument("--silence-timeout", dest="silence_timeout", type=float)
    p.set_defaults(func=cmd_loop)

    p = sub.add_parser("touch-classify", help="classify touch feature records (JSON lines)")
    p.add_argument("--features", required=True)
    p.add_argument("--distance", type=float, help="also print the proxemic zone for this distance (m)")
    p.add_argument("--gaze", choices=[g.value for g in GazeTarget], help="also print the attention score")
    p.set_defaults(func=cmd_touch_classify)

    p = sub.add_parser("validate", help="check any artifact file (FML, BML, libraries, frames, OSC, scenario, report)")
    p.add_argument("file")
    p.set_defaults(func=cmd_validate)
    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except INPUT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # anything else is a runtime failure, not a usage one
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
