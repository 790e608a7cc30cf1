"""Monotone piecewise-cubic Hermite interpolation (Fritsch-Carlson)."""

from __future__ import annotations

import bisect
import math
from typing import Sequence


def fritsch_carlson_tangents(xs: Sequence[float], ys: Sequence[float]) -> list[float]:
    """Knot tangents with zero end slopes, limited so every segment stays
    monotone between its two knot values."""
    n = len(xs)
    if n < 2:
        return [0.0] * n
    delta = [(ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k]) for k in range(n - 1)]
    m = [0.0] * n
    for k in range(1, n - 1):
        if (delta[k - 1] > 0 and delta[k] > 0) or (delta[k - 1] < 0 and delta[k] < 0):
            m[k] = delta[k - 1] / 2 + delta[k] / 2
    for k, d in enumerate(delta):
        if d == 0:
            m[k] = m[k + 1] = 0.0
            continue
        # limiter (m_k/d)^2 + (m_k+1/d)^2 <= 9, written without dividing by d
        # so subnormal slopes cannot overflow
        norm = math.hypot(m[k], m[k + 1])
        bound = 3 * abs(d)
        if norm > bound:
            m[k] = m[k] / norm * bound
            m[k + 1] = m[k + 1] / norm * bound
    return m


class MonotoneCubic:
    """Interpolant through strictly increasing knots; ``None`` outside them."""

    __slots__ = ("xs", "ys", "ms")

    def __init__(self, xs: Sequence[float], ys: Sequence[float]):
        if len(xs) != len(ys) or not xs:
            raise ValueError("need matching, non-empty knot lists")
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ValueError("knot times must be strictly increasing")
        self.xs = list(xs)
        self.ys = list(ys)
        self.ms = fritsch_carlson_tangents(self.xs, self.ys)

    def __call__(self, x: float) -> float | None:
        xs, ys = self.xs, self.ys
        if x < xs[0] or x > xs[-1]:
            return None
        i = bisect.bisect_left(xs, x)
        if xs[i] == x:
            return ys[i]
        k = i - 1
        x0, x1, y0, y1 = xs[k], xs[i], ys[k], ys[i]
        h = x1 - x0
        s = (x - x0) / h
        s2 = s * s
        s3 = s2 * s
        y = (
            (2 * s3 - 3 * s2 + 1) * y0
            + (s3 - 2 * s2 + s) * h * self.ms[k]
            + (-2 * s3 + 3 * s2) * y1
            + (s3 - s2) * h * self.ms[i]
        )
        # Each segment is monotone, so clamping only removes rounding noise.
        lo, hi = (y0, y1) if y0 <= y1 else (y1, y0)
        return min(max(y, lo), hi)
