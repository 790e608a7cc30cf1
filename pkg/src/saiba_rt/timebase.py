"""Millisecond tick arithmetic shared by every scheduling module."""

from __future__ import annotations

TICKS_PER_SECOND = 1000


def to_ms(seconds: float) -> int:
    return int(round(seconds * TICKS_PER_SECOND))


def to_s(ms: int) -> float:
    return ms / TICKS_PER_SECOND


def frame_ms(k: int, fps: float) -> float:
    """Tick time of frame k; an exact integer whenever 1000/fps is."""
    q, r = divmod(k * TICKS_PER_SECOND, fps)
    return q if r == 0 else k * TICKS_PER_SECOND / fps
