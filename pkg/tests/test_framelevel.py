from __future__ import annotations

import pytest

from saiba_rt.clock import VirtualClock
from saiba_rt.frames import Channel, FramePacket, read_frames, write_frames
from saiba_rt.framelevel import (
    BASE_CHANNELS,
    BLINK_CHANNEL,
    BlinkConfig,
    BlinkSource,
    CallableSource,
    Mailbox,
    merge_with_provenance,
    merge_channels,
    generate_blinks,
    tick_loop,
)
from saiba_rt.osc import decode_frame_osc

OPEN = Channel.viseme("open")


def test_blink_count_in_band_and_disjoint():
    blinks = generate_blinks(BlinkConfig(seed=0), 600)
    assert 112 <= len(blinks) <= 188
    assert all(a.end_ms <= b.onset_ms for a, b in zip(blinks, blinks[1:]))
    assert all(b.end_ms <= 600_000 for b in blinks)


def test_blinks_reproducible():
    assert generate_blinks(BlinkConfig(seed=5), 100) == generate_blinks(BlinkConfig(seed=5), 100)
    assert generate_blinks(BlinkConfig(seed=5), 100) != generate_blinks(BlinkConfig(seed=6), 100)


def test_short_horizon_never_truncates():
    for seed in range(50):
        blinks = generate_blinks(BlinkConfig(seed=seed), 0.01)
        assert len(blinks) <= 1 and all(b.end_ms <= 10 for b in blinks)


def test_blink_envelope_shape():
    (b, *_) = generate_blinks(BlinkConfig(seed=1), 60)
    assert [v for _, v in b.keyframes()] == [0.0, 1.0, 1.0, 0.0]
    assert b.end_ms - b.onset_ms == 330


@pytest.mark.parametrize("field", ["mean_interval_s", "close_s", "hold_s", "open_s"])
def test_blink_config_positive(field):
    with pytest.raises(ValueError):
        BlinkConfig(**{field: 0})


def test_external_au45_beats_blink():
    (b, *_) = generate_blinks(BlinkConfig(seed=0), 60)
    src = BlinkSource([b])
    mid = b.onset_ms + b.close_ms + 10
    blink_vals = src.poll(0, mid)
    assert blink_vals[BLINK_CHANNEL] == 1.0
    packet, origin = merge_with_provenance({"external": {BLINK_CHANNEL: 0.9}, "blink": blink_vals}, 0)
    assert packet.au[45] == 0.9 and origin[BLINK_CHANNEL] == "external"


def test_no_sources_all_rest():
    packet, origin = merge_with_provenance({}, 3)
    assert set(origin.values()) == {"rest"}
    assert all(v == 0 for v in packet.channels().values())
    assert set(packet.channels()) == set(BASE_CHANNELS)


def test_speech_mouth_beats_external_mouth():
    packet = merge_channels({"speech": {OPEN: 0.6}, "external": {OPEN: 0.1}})
    assert packet.mouth == {"open": 0.6}


def test_blink_source_cannot_drive_other_channels():
    packet, origin = merge_with_provenance({"blink": {Channel.au(4): 1.0}}, 0)
    assert origin[Channel.au(4)] == "rest"


def test_disabled_groups():
    packet, origin = merge_with_provenance({"external": {Channel.head("x"): 0.3}, "blink": {BLINK_CHANNEL: 1.0}}, 0, enabled=("au", "gaze"))
    assert origin[Channel.head("x")] == "rest" and origin[BLINK_CHANNEL] == "rest"


def test_unknown_source_name():
    with pytest.raises(ValueError):
        merge_channels({"telepathy": {}})


def test_every_channel_has_one_source():
    packet, origin = merge_with_provenance({"speech": {OPEN: 0.2}, "external": {Channel.au(12): 0.4}}, 0)
    assert set(origin) == set(packet.channels())


def test_virtual_loop_frame_count_and_spacing():
    frames = []
    report = tick_loop({}, lambda p, b: frames.append((p, b)), 25, VirtualClock(), duration_s=10)
    assert report.frames == 250 == len(frames)
    assert [p.frame for p, _ in frames] == list(range(250))
    assert all(b - a == 40 for a, b in zip(report.tick_times_ms, report.tick_times_ms[1:]))
    assert report.mean_period_s == 0.04 and report.jitter_s == 0
    assert decode_frame_osc(frames[10][1]) == frames[10][0]


def test_one_frame_run():
    out = []
    tick_loop({}, lambda p, b: out.append(p), n_frames=1)
    assert out[0].frame == 0 and out[0].t == 0


def test_mailbox_drained_each_tick():
    box = Mailbox()
    box.push({Channel.au(12): 0.7})
    out = []
    tick_loop({"external": box}, lambda p, b: out.append(p), n_frames=2)
    assert out[0].au[12] == pytest.approx(0.7) and out[1].au[12] == 0


def test_sink_failure_flags_frame():
    def sink(p, b):
        if p.frame == 3:
            raise OSError("down")

    report = tick_loop({}, sink, n_frames=10)
    assert report.failed_frame == 3 and report.frames == 3


def test_callable_source_sees_tick_time():
    seen = []
    tick_loop({"external": CallableSource(lambda k, t: seen.append(t))}, lambda p, b: None, n_frames=4)
    assert seen == [0, 40, 80, 120]


def test_frame_stream_round_trip(tmp_path):
    packets = [FramePacket(k, au={4: 0.5}, head=(0.1, 0.0, 0.0), mouth={"open": 0.2}) for k in range(3)]
    path = tmp_path / "f.ndjson"
    with open(path, "w") as fh:
        write_frames(packets, fh)
    with open(path) as fh:
        assert list(read_frames(fh)) == packets
