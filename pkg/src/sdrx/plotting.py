"""Figure rendering for the CLI's ``--plot`` option (PNG files next to the CSVs)."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_sweep(rows, path, q_target=8.4):
    """Q versus OSNR, one line per format; zero-error points drawn as open markers."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    formats = sorted({r.format for r in rows})
    for fmt in formats:
        pts = [r for r in rows if r.format == fmt and r.status == "ok" and math.isfinite(r.osnr_db)]
        x = [r.osnr_db for r in pts]
        y = [r.q_db for r in pts]
        line, = ax.plot(x, y, "-", label=fmt)
        ax.plot([r.osnr_db for r in pts if not r.q_is_bound], [r.q_db for r in pts if not r.q_is_bound],
                "o", color=line.get_color())
        ax.plot([r.osnr_db for r in pts if r.q_is_bound], [r.q_db for r in pts if r.q_is_bound],
                "^", mfc="none", color=line.get_color())
    ax.axhline(q_target, color="k", lw=0.8, ls="--")
    ax.set_xlabel("OSNR (dB, 0.1 nm)")
    ax.set_ylabel("Q (dB)")
    ax.grid(alpha=0.3)
    ax.legend()
    return _save(fig, path)


def plot_timeseries(records, path):
    fig, ax = plt.subplots(figsize=(6, 3))
    t = [r.window_start * 1e3 for r in records]
    ax.plot(t, [r.q_db for r in records], ".-")
    ax.set_xlabel("stream time (ms)")
    ax.set_ylabel("Q (dB)")
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_bench(rows, path):
    fig, ax = plt.subplots(figsize=(5, 3))
    labels = [f"{r.chain}\n{r.streams} stream{'s' if r.streams > 1 else ''}" for r in rows]
    ax.bar(range(len(rows)), [r.samples_per_s / 1e6 for r in rows])
    ax.set_xticks(range(len(rows)), labels)
    ax.set_ylabel("throughput (MS/s)")
    ax.grid(alpha=0.3, axis="y")
    return _save(fig, path)
