from __future__ import annotations

import random
import socket
import struct

import pytest

from gen import random_packet
from saiba_rt.frames import FramePacket, RangeError
from saiba_rt.osc import (
    OscPaddingError,
    OscTruncatedError,
    OscTypeTagError,
    OscUnknownAddressError,
    UdpSender,
    decode_frame_osc,
    decode_message,
    encode_bundle,
    encode_frame_osc,
    encode_message,
    parse_udp_target,
    timetag_for,
)

GOLDEN_AU12 = bytes.fromhex("2F61752F31320000" "2C660000" "3F000000")


def test_golden_au12_message():
    assert encode_message("/au/12", [0.5]) == GOLDEN_AU12
    assert len(GOLDEN_AU12) == 16


def test_golden_decodes_to_packet():
    p = decode_frame_osc(GOLDEN_AU12)
    assert p.au == {12: 0.5} and p.frame == 0


def test_empty_packet_is_header_only_bundle():
    data = encode_frame_osc(FramePacket(0))
    assert data == b"#bundle\x00" + b"\x00" * 8
    assert decode_frame_osc(data) == FramePacket(0)


def test_bundle_layout():
    data = encode_frame_osc(FramePacket(25, au={4: 0.25}, head=(0.0, 0.5, -0.5)))
    assert data[:8] == b"#bundle\x00"
    assert struct.unpack(">II", data[8:16]) == (1, 0)  # frame 25 at 25 fps -> t = 1 s
    (size,) = struct.unpack(">i", data[16:20])
    assert data[20:20 + size].startswith(b"/agent/au/4\x00")


def test_timetag_fraction():
    assert timetag_for(0.5) == (0, 2**31)
    assert timetag_for(0.04)[0] == 0


def test_string_and_int_arguments_round_trip():
    msg = encode_message("/x", [7, "", "abcd", 1.0])
    addr, args, _ = decode_message(msg)
    assert addr == "/x" and args == [7, "", "abcd", 1.0]
    assert len(msg) % 4 == 0


@pytest.mark.parametrize("seed", range(50))
def test_round_trip_random(seed):
    p = random_packet(random.Random(seed))
    assert decode_frame_osc(encode_frame_osc(p)) == p


def test_address_padded_to_three_bytes_only():
    bad = b"/au/12\x00" + b"\x00" * 2 + GOLDEN_AU12[8:]  # 9-byte address field
    with pytest.raises(OscPaddingError):
        decode_frame_osc(bad)


def test_short_padding_is_rejected():
    bad = b"/au/12\x00" + GOLDEN_AU12[8:]  # 7 bytes: not on a 4-byte boundary
    with pytest.raises(OscPaddingError):
        decode_frame_osc(bad)


def test_nonzero_padding():
    bad = b"/au/12\x00\x01" + GOLDEN_AU12[8:]
    with pytest.raises(OscPaddingError) as info:
        decode_frame_osc(bad)
    assert info.value.offset == 6


def test_unknown_address_named():
    with pytest.raises(OscUnknownAddressError) as info:
        decode_frame_osc(encode_message("/agent/tail", [0.1]))
    assert info.value.address == "/agent/tail"


def test_truncated_payload():
    with pytest.raises(OscTruncatedError):
        decode_frame_osc(GOLDEN_AU12[:-2])
    bundle = encode_frame_osc(FramePacket(1, au={1: 0.5}))
    with pytest.raises(OscTruncatedError):
        decode_frame_osc(bundle[:-4])


def test_wrong_arity():
    with pytest.raises(OscTypeTagError):
        decode_frame_osc(encode_message("/agent/head", [0.1, 0.2]))


@pytest.mark.parametrize(
    "packet",
    [FramePacket(0, au={4: 1.5}), FramePacket(0, mouth={"open": -0.1}), FramePacket(0, head=(float("nan"), 0, 0)), FramePacket(0, gaze=(1e40, 0.0))],
)
def test_out_of_range_refused(packet):
    with pytest.raises(RangeError):
        encode_frame_osc(packet)


def test_bundle_helper_sizes():
    m = encode_message("/a", [1.0])
    data = encode_bundle((0, 0), [m, m])
    assert len(data) == 16 + 2 * (4 + len(m))


def test_udp_target_and_sender():
    assert parse_udp_target("udp:127.0.0.1:9000") == ("127.0.0.1", 9000)
    with pytest.raises(ValueError):
        parse_udp_target("tcp:1")
    rx = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    rx.bind(("127.0.0.1", 0))
    rx.settimeout(2)
    tx = UdpSender("127.0.0.1", rx.getsockname()[1])
    p = FramePacket(3, au={45: 0.5})
    tx.send(encode_frame_osc(p))
    assert decode_frame_osc(rx.recv(4096)) == p
    tx.close()
    rx.close()
