"""Figures for the CLI report paths (Agg backend, files only)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dialogue import LoopReport  # noqa: E402
from .realizer import KeyframeTimeline, evaluate_at_ms  # noqa: E402


def plot_timeline(timeline: KeyframeTimeline, path: str | Path, step_ms: int = 10) -> None:
    """One panel per channel kind; knots drawn as dots over the 10 ms curve."""
    channels = timeline.channels
    kinds = sorted({c.kind for c in channels}) or ["au"]
    fig, axes = plt.subplots(len(kinds), 1, figsize=(9, 2.2 * len(kinds)), sharex=True, squeeze=False)
    xs = list(range(0, timeline.duration_ms + 1, step_ms)) or [0]
    knots = timeline.keyframes()
    for ax, kind in zip(axes[:, 0], kinds):
        for ch in (c for c in channels if c.kind == kind):
            ax.plot([x / 1000 for x in xs], [evaluate_at_ms(timeline, ch, x) for x in xs], label=str(ch), lw=1.2)
            pts = [k for k in knots if k.channel == ch]
            ax.plot([k.t_ms / 1000 for k in pts], [k.value for k in pts], ".", color="k", ms=3)
        ax.set_ylabel(kind)
        if ax.get_legend_handles_labels()[0]:
            ax.legend(fontsize=7, loc="upper right", ncol=2)
        ax.grid(alpha=0.3)
    axes[-1, 0].set_xlabel("time (s)")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_loop_report(report: LoopReport, path: str | Path) -> None:
    """Stacked per-tick stage latencies against the tick period, drops marked."""
    t = [r.t_ms / 1000 for r in report.rows]
    perc = [r.perception_s * 1000 for r in report.rows]
    gen = [r.generation_s * 1000 for r in report.rows]
    io = [r.io_s * 1000 for r in report.rows]
    fig, ax = plt.subplots(figsize=(9, 3.5))
    if t:
        ax.stackplot(t, perc, gen, io, labels=("perception", "generation", "io"), step="post", alpha=0.8)
        drops = [r.t_ms / 1000 for r in report.rows if r.dropped]
        if drops:
            ax.plot(drops, [0] * len(drops), "rx", ms=4, label=f"dropped ({len(drops)})")
    ax.axhline(1000 / report.fps, color="k", ls="--", lw=1, label="tick period")
    ax.set_xlabel("time (s)")
    ax.set_ylabel("latency (ms)")
    ax.legend(fontsize=7, loc="upper right")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
