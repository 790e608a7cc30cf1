from __future__ import annotations

import json
import socket
import subprocess
import sys

import pytest

from conftest import ANGER_FML
from saiba_rt.cli import DEFAULTS, build_parser, run, settings
from saiba_rt.frames import read_frames
from saiba_rt.markup import parse_bml

SPEECH_BML = (
    '<bml><signal id="sp" modality="speech" lexeme="one two three four five">'
    '<sync name="start" t="0"/><sync name="end" t="2.0"/></signal></bml>'
)


@pytest.fixture
def bml_file(tmp_path):
    path = tmp_path / "plan.bml"
    path.write_text(SPEECH_BML, encoding="utf-8")
    return path


def test_compile_anger(tmp_path):
    out = tmp_path / "anger.bml"
    assert run(["compile", "--fml", str(ANGER_FML), "--out", str(out)]) == 0
    lexemes = {s.lexeme for s in parse_bml(out.read_text(encoding="utf-8")).signals}
    assert {"frown", "ample_arm"} <= lexemes


def test_realize_empty_bml_gives_one_frame(tmp_path):
    bml, out = tmp_path / "e.bml", tmp_path / "frames.jsonl"
    bml.write_text("<bml/>", encoding="utf-8")
    assert run(["realize", "--bml", str(bml), "--fps", "25", "--out", str(out)]) == 0
    frames = list(read_frames(out.read_text(encoding="utf-8").splitlines()))
    assert len(frames) == 1 and frames[0].frame == 0


def test_realize_figure(tmp_path, bml_file):
    fig = tmp_path / "tl.png"
    assert run(["realize", "--bml", str(bml_file), "--out", str(tmp_path / "f.jsonl"), "--figure", str(fig)]) == 0
    assert fig.stat().st_size > 0


def test_dangling_marker_is_input_error(tmp_path, capsys):
    fml = tmp_path / "bad.fml"
    fml.write_text('<fml>\n<speech>a</speech>\n<intention id="i" class="emotion" lexeme="anger" start="speech-start" end="tmX"/>\n</fml>', encoding="utf-8")
    assert run(["compile", "--fml", str(fml)]) == 2
    err = capsys.readouterr().err
    assert "tmX" in err and "line 3" in err


@pytest.mark.parametrize("argv", [["compile", "--nope"], ["dance"], []])
def test_usage_errors_exit_2(argv, capsys):
    with pytest.raises(SystemExit) as info:
        run(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_usage_error_via_entry_point():
    proc = subprocess.run([sys.executable, "-m", "saiba_rt.cli", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage" in proc.stderr and proc.stdout == ""


def test_missing_input_is_exit_2(tmp_path):
    assert run(["realize", "--bml", str(tmp_path / "none.bml")]) == 2


def test_bad_output_path_is_input_error(tmp_path, bml_file):
    assert run(["realize", "--bml", str(bml_file), "--out", str(tmp_path / "no" / "dir" / "f.jsonl")]) == 2


def test_internal_failure_is_runtime_error(bml_file, monkeypatch, capsys):
    def boom(*_a, **_k):
        raise RuntimeError("renderer crashed")

    monkeypatch.setattr("saiba_rt.cli.sample_frames", boom)
    assert run(["realize", "--bml", str(bml_file)]) == 1
    assert "renderer crashed" in capsys.readouterr().err


# -- validate over good and malformed artifacts ------------------------------------------


GOOD = {
    "a.fml.xml": ANGER_FML.read_text(encoding="utf-8"),
    "b.bml": SPEECH_BML,
    "s.scn": "duration 1\nvad 0 0.5\n",
    "t.jsonl": '{"has_movement": false, "intensity_mps": 1.0, "body_region": "arm", "dynamic": false, "speed_mps": 0, "duration_s": 0.1}\n',
}

BAD = {
    "unresolved.fml": '<fml><speech>a</speech><intention id="i" class="emotion" lexeme="x" start="speech-start" end="q"/></fml>',
    "dup.fml": '<fml><speech><tm id="a"/><tm id="a"/></speech></fml>',
    "order.bml": '<bml duration="1"><signal id="g" modality="gesture" lexeme="beat"><sync name="start" t="0.5"/><sync name="stroke" t="0.2"/><sync name="end" t="1"/></signal></bml>',
    "modality.bml": '<bml><signal id="x" modality="tail" lexeme="w"><sync name="start" t="0"/><sync name="end" t="1"/></signal></bml>',
    "truncated.bml": "<bml><signal",
    "scenario.scn": "duration 1\nlatency warp=3\n",
    "faces.lex": "face frown attack=0.2\n  AU4 7\n",
    "touch.jsonl": '{"has_movement": true}\n',
    "frames.jsonl": '{"frame": -1}\n',
    "osc.bin": b"/au/12\x00\x00,f\x00\x00",
    "utf.txt": b"\xff\xfe\x00",
}


@pytest.mark.parametrize("name", sorted(GOOD))
def test_validate_accepts(tmp_path, name, capsys):
    path = tmp_path / name
    path.write_text(GOOD[name], encoding="utf-8")
    assert run(["validate", str(path)]) == 0
    assert capsys.readouterr().out.startswith("OK")


def test_validate_library_dir(lib_dir):
    assert run(["validate", str(lib_dir)]) == 0


@pytest.mark.parametrize("name", sorted(BAD))
def test_validate_rejects(tmp_path, name, capsys):
    path = tmp_path / name
    data = BAD[name]
    path.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
    assert run(["validate", str(path)]) == 2
    assert capsys.readouterr().err.startswith("error:")


# -- play ---------------------------------------------------------------------------------


def _play(tmp_path, bml_file, tag, script="0.7 INTERRUPT\n1.2 RESUME\n"):
    cmds = tmp_path / "cmds.txt"
    cmds.write_text(script, encoding="utf-8")
    trace = tmp_path / f"trace{tag}.txt"
    code = run(["play", "--bml", str(bml_file), "--virtual-clock", "--commands", str(cmds), "--trace", str(trace)])
    assert code == 0
    return trace.read_bytes()


def test_play_virtual_clock_is_byte_identical(tmp_path, bml_file):
    traces = {_play(tmp_path, bml_file, i) for i in range(3)}
    assert len(traces) == 1
    text = traces.pop().decode()
    assert "INTERRUPT" in text and "RESUME" in text


def test_play_streams_osc(tmp_path, bml_file):
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(2)
    port = rx.getsockname()[1]
    try:
        assert run(["play", "--bml", str(bml_file), "--virtual-clock", "--osc", f"udp:127.0.0.1:{port}", "--trace", str(tmp_path / "t")]) == 0
        first = rx.recv(65536)
    finally:
        rx.close()
    assert first.startswith(b"#bundle\x00")


def test_play_bad_command_script(tmp_path, bml_file):
    cmds = tmp_path / "cmds.txt"
    cmds.write_text("0.5 JUMP\n", encoding="utf-8")
    assert run(["play", "--bml", str(bml_file), "--virtual-clock", "--commands", str(cmds)]) == 2


# -- loop ---------------------------------------------------------------------------------


def test_loop_writes_report_and_figure(tmp_path, capsys):
    scn = tmp_path / "s.scn"
    scn.write_text("duration 2\nlatency perception=0.030 generation=0.008 io=0.002\nagent 0 2\nvad 1 2\n", encoding="utf-8")
    report = tmp_path / "r.csv"
    assert run(["loop", "--scenario", str(scn), "--report", str(report)]) == 0
    assert report.with_suffix(".png").stat().st_size > 0
    assert len(report.read_text(encoding="utf-8").splitlines()) == 51
    summary = json.loads(capsys.readouterr().out)
    assert summary["ticks"] == 50 and summary["drops"] == 0


def test_loop_disable_unknown_group(tmp_path):
    scn = tmp_path / "s.scn"
    scn.write_text("duration 1\n", encoding="utf-8")
    assert run(["loop", "--scenario", str(scn), "--report", str(tmp_path / "r.csv"), "--disable", "tail"]) == 2


def test_loop_requires_duration(tmp_path):
    scn = tmp_path / "s.scn"
    scn.write_text("vad 0 1\n", encoding="utf-8")
    assert run(["loop", "--scenario", str(scn), "--report", str(tmp_path / "r.csv"), "--no-figure"]) == 2


# -- touch-classify ---------------------------------------------------------------------------


def test_touch_classify(tmp_path, capsys):
    path = tmp_path / "t.jsonl"
    path.write_text(GOOD["t.jsonl"], encoding="utf-8")
    assert run(["touch-classify", "--features", str(path), "--distance", "0.3", "--gaze", "AGENT"]) == 0
    assert capsys.readouterr().out.split("\n")[:3] == ["zone intimate", "attention 1.0", "1 hit"]


# -- config precedence ----------------------------------------------------------------------


def test_config_file_then_flags(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"fps": 30, "chunk": 0.25}), encoding="utf-8")
    args = build_parser().parse_args(["play", "--bml", "x", "--config", str(cfg), "--chunk", "1.0"])
    merged = settings(args)
    assert merged["fps"] == 30 and merged["chunk"] == 1.0
    assert merged["word_duration"] == DEFAULTS["word_duration"] == 0.4


def test_config_unknown_key(tmp_path, bml_file):
    cfg = tmp_path / "c.json"
    cfg.write_text('{"fsp": 30}', encoding="utf-8")
    assert run(["realize", "--bml", str(bml_file), "--config", str(cfg)]) == 2


def test_play_resume_replay_last(tmp_path, bml_file):
    cmds = tmp_path / "cmds.txt"
    cmds.write_text("0.7 INTERRUPT\n3 RESUME\n", encoding="utf-8")
    traces = {}
    for extra in ([], ["--resume-replay-last"]):
        out = tmp_path / f"t{len(extra)}.txt"
        assert run(["play", "--bml", str(bml_file), "--virtual-clock", "--commands", str(cmds), "--trace", str(out), *extra]) == 0
        traces[bool(extra)] = out.read_text(encoding="utf-8")
    # chunk 1 (sent before the pause) is dispatched a second time only with replay
    assert traces[False].count("DISPATCH 1") == 1
    assert traces[True].count("DISPATCH 1") == 2
