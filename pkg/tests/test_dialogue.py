from __future__ import annotations

import itertools
import random

import pytest

from oracles import latest_at_or_before
from saiba_rt.dialogue import (
    FeatureKind,
    FeatureSample,
    ScenarioError,
    TurnConfig,
    TurnMode,
    TurnState,
    VadConfig,
    external_from_video,
    parse_scenario,
    read_report_csv,
    resample_features,
    run_interaction_loop,
    update_turn_state,
    user_vad,
)
from saiba_rt.frames import Channel
from saiba_rt.incremental import ControlCommand

BUDGET = "latency perception=0.030 generation=0.008 io=0.002\n"


def ticks(n):
    return [k * 40 / 1000 for k in range(n)]


# -- resampling ----------------------------------------------------------------------


def test_audio_exact_hit_and_video_hold():
    audio = [FeatureSample(k / 100, FeatureKind.AUDIO, {"loudness": k}) for k in range(20)]
    video = [FeatureSample(k / 30, FeatureKind.VIDEO, {"AU12": k}) for k in range(10)]
    assert resample_features(audio, [0.04])[0].values["loudness"] == 4
    assert resample_features(video, [0.04])[0].ts == pytest.approx(1 / 30)


def test_absent_before_first_sample():
    assert resample_features([FeatureSample(0.1, FeatureKind.AUDIO)], [0.0, 0.04]) == [None, None]


def test_resample_rejects_unsorted():
    with pytest.raises(ValueError):
        resample_features([FeatureSample(0.2, FeatureKind.AUDIO), FeatureSample(0.1, FeatureKind.AUDIO)], [0])


@pytest.mark.parametrize("seed", range(25))
def test_resample_matches_oracle(seed):
    rng = random.Random(seed)
    stamps = sorted(round(rng.uniform(0, 3), rng.choice([2, 3])) for _ in range(rng.randint(0, 40)))
    stream = [FeatureSample(t, FeatureKind.VIDEO, {"i": i}) for i, t in enumerate(stamps)]
    out = resample_features(stream, ticks(80))
    for t, got in zip(ticks(80), out):
        want = latest_at_or_before(stamps, t)
        assert (got is None) if want is None else got is stream[want]


def test_vad_threshold_rule():
    mk = lambda v, l: FeatureSample(0, FeatureKind.AUDIO, {"voicing_prob": v, "loudness": l})
    assert user_vad(mk(0.5, 0.1)) and not user_vad(mk(0.49, 0.9)) and not user_vad(mk(0.9, 0.05))
    assert user_vad(mk(0.9, 0.05), VadConfig(loudness_floor=0.01))
    assert not user_vad(None)


# -- turn-taking ------------------------------------------------------------------------


def drive(agent, user, cfg=TurnConfig()):
    state, log = TurnState(), []
    for k, (a, u) in enumerate(zip(agent, user)):
        state, cmds = update_turn_state(state, a, u, k, cfg)
        log.append((k, state.mode, cmds))
    return log


def test_barge_in_fires_after_five_ticks():
    n = 120
    agent = [True] * n
    user = [k >= 75 for k in range(n)]  # voicing from t = 3.00 s
    log = drive(agent, user)
    fired = [(k, c) for k, _, cmds in log for c in cmds]
    assert fired == [(80, ControlCommand.INTERRUPT)]  # t = 3.20 s
    assert all(mode is TurnMode.OVERLAP for k, mode, _ in log if 75 <= k < 80)


def test_short_blip_is_overlap_only():
    agent = [True] * 20
    user = [k in (5, 6) for k in range(20)]
    log = drive(agent, user)
    assert not any(cmds for _, _, cmds in log)
    assert [m for _, m, _ in log[4:8]] == [TurnMode.AGENT_TURN, TurnMode.OVERLAP, TurnMode.OVERLAP, TurnMode.AGENT_TURN]


def test_silence_forever():
    log = drive([False] * 500, [False] * 500)
    assert {m for _, m, _ in log} == {TurnMode.SILENCE} and not any(c for _, _, c in log)


def test_resume_after_silence_timeout():
    user = [k < 10 for k in range(60)]
    log = drive([False] * 60, user)
    fired = [(k, c) for k, _, cmds in log for c in cmds]
    # silence starts at tick 10; 38 ticks = 1.52 s is the first tick >= 1.5 s
    assert fired == [(48, ControlCommand.RESUME)]
    assert log[48][1] is TurnMode.AGENT_TURN


def test_no_resume_after_agent_turn():
    agent = [k < 10 for k in range(100)]
    assert not any(c for _, _, c in drive(agent, [False] * 100))


def test_user_speaking_again_cancels_resume():
    user = [k < 10 or 30 <= k < 32 for k in range(90)]
    fired = [k for k, _, cmds in drive([False] * 90, user) for _ in cmds]
    assert fired == [32 + 38]


def test_no_repeat_interrupt_while_agent_finishes_chunk():
    agent = [True] * 40
    user = [k >= 5 for k in range(40)]
    fired = [k for k, _, cmds in drive(agent, user) for _ in cmds]
    assert fired == [10]


def test_since_tracks_time_in_mode():
    state = TurnState()
    for k in range(10):
        state, _ = update_turn_state(state, True, False, k)
    assert state.since_s == pytest.approx(0.36)


def test_transition_totality():
    states = [TurnState(m, 0.0, 0, onset, after) for m in TurnMode for onset in (None, 0) for after in (False, True)]
    for st, a, u in itertools.product(states, (False, True), (False, True)):
        new, cmds = update_turn_state(st, a, u, 10)
        assert isinstance(new.mode, TurnMode)
        assert new.since_s >= 0
        assert len(cmds) <= 1


# -- scenarios and the loop -------------------------------------------------------------


def test_budget_exactly_met():
    report = run_interaction_loop(parse_scenario("duration 10\n" + BUDGET))
    assert report.ticks == report.frames_emitted == 250 and report.drops == 0
    assert all(r.total_s == pytest.approx(0.040, abs=1e-12) for r in report.rows)
    assert [r.t_ms for r in report.rows] == [40 * k for k in range(250)]


def test_generation_overrun_drops_frames():
    report = run_interaction_loop(parse_scenario("duration 10\n" + BUDGET + "latency generation=0.050\n"))
    assert report.drops > 0
    assert report.frames_emitted + report.drops == 250


def test_latency_steps_apply_from_their_time():
    report = run_interaction_loop(parse_scenario("duration 2\n" + BUDGET + "latency from=1.0 generation=0.050\n"))
    assert not any(r.dropped for r in report.rows if r.t_ms < 1000)
    assert any(r.dropped for r in report.rows if r.t_ms > 1000)


def test_zero_length_scenario():
    report = run_interaction_loop(parse_scenario("duration 0\n"))
    assert report.rows == [] and report.mean_period_s is None


def test_scripted_barge_in_through_loop():
    report = run_interaction_loop(parse_scenario("duration 6\nagent 0 6\nvad 3.0 3.5\n"))
    assert report.commands() == [(3.2, "INTERRUPT")]


def test_audio_driven_vad_and_video_mirroring(libs):
    lines = ["duration 2", "agent 0 2"]
    lines += [f"sample {k / 100:.2f} audio voicing_prob=0.9 loudness=0.5" for k in range(100, 200)]
    lines += [f"sample {k / 30:.4f} video AU12=0.6 head_x=0.1" for k in range(60)]
    frames = []
    report = run_interaction_loop(parse_scenario("\n".join(lines)), sink=lambda p, b: frames.append(p))
    assert report.commands() == [(1.2, "INTERRUPT")]
    assert frames[30].au[12] == pytest.approx(0.6)
    assert frames[30].head[0] == pytest.approx(0.1)


def test_utterance_is_interrupted_and_resumed(libs):
    text = "duration 10\nutterance 0.5 " + " ".join(["word"] * 15) + "\nvad 3.0 4.0\n"
    report = run_interaction_loop(parse_scenario(text), libs=libs)
    assert report.commands() == [(3.2, "INTERRUPT"), (5.52, "RESUME")]
    speaking = {round(r.t_ms): r.agent_speaking for r in report.rows}
    assert speaking[2000] and not speaking[4400] and speaking[6000]


def test_external_mapping():
    s = FeatureSample(0, FeatureKind.VIDEO, {"AU4": 0.3, "gaze_y": -0.2, "f0_hz": 120})
    assert external_from_video(s) == {Channel.au(4): 0.3, Channel.gaze("y"): -0.2}
    assert external_from_video(None) is None


def test_report_csv_round_trip(tmp_path):
    report = run_interaction_loop(parse_scenario("duration 1\n" + BUDGET + "agent 0 1\nvad 0.2 1\n"))
    path = tmp_path / "r.csv"
    report.write_csv(path)
    back = read_report_csv(path)
    assert back.ticks == 25 and back.drops == 0
    assert back.commands() == report.commands()


@pytest.mark.parametrize(
    "text, line",
    [
        ("duration ten", 1),
        ("duration 1\nlatency perception=-0.1", 2),
        ("latency warp=1", 1),
        ("sample 0.1 smell x=1", 1),
        ("sample 0.2 audio a=1\nsample 0.1 audio a=1", 2),
        ("vad 3 2", 1),
        ("dance 1", 1),
        ("sample 0.1 audio loud", 1),
    ],
)
def test_scenario_errors_are_positioned(text, line):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert info.value.line == line
