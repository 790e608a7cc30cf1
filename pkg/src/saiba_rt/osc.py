"""OSC 1.0 encoding of frame packets.

A frame travels as one bundle whose timetag is the frame time (seconds since
the session start in the NTP 32.32 layout) holding one message per populated
channel:

    /agent/au/<n>        f
    /agent/head          fff
    /agent/gaze          ff
    /agent/mouth/<name>  f
    /agent/joint/<name>  f

The decoder also accepts the addresses without the ``/agent`` prefix and a
bare message instead of a bundle (frame 0).
"""

from __future__ import annotations

import math
import socket
import struct
from typing import Sequence

from .frames import DEFAULT_FPS, FramePacket, RangeError

PREFIX = "/agent"
BUNDLE_TAG = b"#bundle\x00"


class OscError(ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"byte {offset}: {message}")


class OscPaddingError(OscError):
    pass


class OscTruncatedError(OscError):
    pass


class OscUnknownAddressError(OscError):
    def __init__(self, address: str, offset: int):
        self.address = address
        super().__init__(f"unknown address {address!r}", offset)


class OscTypeTagError(OscError):
    pass


# --------------------------------------------------------------------------
# primitives


def pad_string(text: str) -> bytes:
    raw = text.encode("ascii") + b"\x00"
    return raw + b"\x00" * (-len(raw) % 4)


def encode_message(address: str, args: Sequence[float | int | str]) -> bytes:
    tags, payload = ",", b""
    for a in args:
        if isinstance(a, bool):
            raise TypeError("booleans are not supported")
        if isinstance(a, int):
            tags += "i"
            payload += struct.pack(">i", a)
        elif isinstance(a, float):
            tags += "f"
            try:
                payload += struct.pack(">f", a)
            except OverflowError:
                raise RangeError(f"{address}: {a} does not fit float32") from None
        elif isinstance(a, str):
            tags += "s"
            payload += pad_string(a)
        else:
            raise TypeError(f"unsupported OSC argument {a!r}")
    return pad_string(address) + pad_string(tags) + payload


def encode_bundle(timetag: tuple[int, int], messages: Sequence[bytes]) -> bytes:
    out = BUNDLE_TAG + struct.pack(">II", *timetag)
    for m in messages:
        out += struct.pack(">i", len(m)) + m
    return out


def timetag_for(t: float) -> tuple[int, int]:
    seconds = math.floor(t)
    frac = int(round((t - seconds) * 2**32))
    if frac >= 2**32:
        seconds, frac = seconds + 1, 0
    return seconds, frac


def _read_string(data: bytes, pos: int, end: int) -> tuple[str, int]:
    stop = data.find(b"\x00", pos, end)
    if stop < 0:
        raise OscTruncatedError("unterminated string", pos)
    padded = stop + 1 + (-(stop + 1 - pos) % 4)
    if padded > end:
        raise OscTruncatedError("string padding runs past the end", stop)
    if any(data[stop:padded]):
        raise OscPaddingError("non-zero padding byte", stop)
    try:
        return data[pos:stop].decode("ascii"), padded
    except UnicodeDecodeError:
        raise OscError("string is not ASCII", pos) from None


def decode_message(data: bytes, pos: int = 0, end: int | None = None) -> tuple[str, list, int]:
    """Returns (address, args, offset of the address) for one message."""
    end = len(data) if end is None else end
    address, p = _read_string(data, pos, end)
    if not address.startswith("/"):
        raise OscError(f"address {address!r} does not start with '/'", pos)
    if p >= end:
        raise OscTruncatedError("missing type tag string", p)
    if data[p] == 0:
        raise OscPaddingError("address padded beyond the next 4-byte boundary", p)
    if data[p] != ord(","):
        raise OscTypeTagError("type tag string must start with ','", p)
    tags, p = _read_string(data, p, end)
    args: list = []
    for tag in tags[1:]:
        if tag in "if":
            if p + 4 > end:
                raise OscTruncatedError(f"argument '{tag}' cut short", p)
            args.append(struct.unpack_from(">i" if tag == "i" else ">f", data, p)[0])
            p += 4
        elif tag == "s":
            s, p = _read_string(data, p, end)
            args.append(s)
        else:
            raise OscTypeTagError(f"unsupported type tag {tag!r}", p)
    if p != end:
        raise OscError(f"{end - p} trailing byte(s) after arguments", p)
    return address, args, pos


# --------------------------------------------------------------------------
# frame packets


def frame_messages(p: FramePacket, prefix: str = PREFIX) -> list[bytes]:
    msgs = [encode_message(f"{prefix}/au/{n}", [float(v)]) for n, v in sorted(p.au.items())]
    if p.head is not None:
        msgs.append(encode_message(f"{prefix}/head", [float(v) for v in p.head]))
    if p.gaze is not None:
        msgs.append(encode_message(f"{prefix}/gaze", [float(v) for v in p.gaze]))
    msgs += [encode_message(f"{prefix}/mouth/{k}", [float(v)]) for k, v in sorted(p.mouth.items())]
    msgs += [encode_message(f"{prefix}/joint/{k}", [float(v)]) for k, v in sorted(p.joints.items())]
    return msgs


def encode_frame_osc(p: FramePacket) -> bytes:
    p.validate()
    return encode_bundle(timetag_for(p.t), frame_messages(p))


def _floats(address: str, args: list, n: int, offset: int) -> list[float]:
    if len(args) != n or not all(isinstance(a, float) for a in args):
        raise OscTypeTagError(f"{address} expects {n} float32 argument(s)", offset)
    return args


def _apply(fields: dict, address: str, args: list, offset: int) -> None:
    path = address[len(PREFIX):] if address.startswith(PREFIX + "/") else address
    parts = path.split("/")[1:]
    if len(parts) == 2 and parts[0] == "au" and parts[1].isdigit():
        fields["au"][int(parts[1])] = _floats(address, args, 1, offset)[0]
    elif parts == ["head"]:
        fields["head"] = tuple(_floats(address, args, 3, offset))
    elif parts == ["gaze"]:
        fields["gaze"] = tuple(_floats(address, args, 2, offset))
    elif len(parts) == 2 and parts[0] == "mouth" and parts[1]:
        fields["mouth"][parts[1]] = _floats(address, args, 1, offset)[0]
    elif len(parts) == 2 and parts[0] == "joint" and parts[1]:
        fields["joints"][parts[1]] = _floats(address, args, 1, offset)[0]
    else:
        raise OscUnknownAddressError(address, offset)


def decode_frame_osc(data: bytes, fps: float = DEFAULT_FPS) -> FramePacket:
    fields: dict = {"au": {}, "head": None, "gaze": None, "mouth": {}, "joints": {}}
    frame = 0
    if data.startswith(BUNDLE_TAG):
        if len(data) < 16:
            raise OscTruncatedError("bundle header cut short", len(data))
        seconds, frac = struct.unpack_from(">II", data, 8)
        frame = int(round((seconds + frac / 2**32) * fps))
        pos = 16
        while pos < len(data):
            if pos + 4 > len(data):
                raise OscTruncatedError("element size cut short", pos)
            (size,) = struct.unpack_from(">i", data, pos)
            pos += 4
            if size <= 0 or size % 4:
                raise OscPaddingError(f"element size {size} is not a positive multiple of 4", pos - 4)
            if pos + size > len(data):
                raise OscTruncatedError(f"element of {size} bytes runs past the end", pos)
            if data.startswith(BUNDLE_TAG, pos):
                raise OscError("nested bundles are not part of the frame schema", pos)
            address, args, offset = decode_message(data, pos, pos + size)
            _apply(fields, address, args, offset)
            pos += size
    else:
        address, args, offset = decode_message(data)
        _apply(fields, address, args, offset)
    return FramePacket(
        frame,
        dict(sorted(fields["au"].items())),
        fields["head"],
        fields["gaze"],
        dict(sorted(fields["mouth"].items())),
        dict(sorted(fields["joints"].items())),
        fps,
    )


def parse_udp_target(spec: str) -> tuple[str, int]:
    """``udp:<host>:<port>`` -> (host, port)."""
    scheme, _, rest = spec.partition(":")
    host, _, port = rest.rpartition(":")
    if scheme != "udp" or not host or not port.isdigit():
        raise ValueError(f"expected udp:<host>:<port>, got {spec!r}")
    return host, int(port)


class UdpSender:
    def __init__(self, host: str, port: int):
        self.address = (host, port)
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)

    def send(self, payload: bytes) -> None:
        self.sock.sendto(payload, self.address)

    def close(self) -> None:
        self.sock.close()
