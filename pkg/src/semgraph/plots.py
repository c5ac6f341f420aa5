"""Figure rendering for the CLI report paths.

Figures are written to files next to the delimited outputs; nothing here is
interactive, so the Agg backend is forced before pyplot loads.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

plt.rcParams.update({
    "figure.figsize": (7.0, 4.2),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 130,
})


def save(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    return path


def roc_figure(curves: dict, labels, path):
    """One ROC trace per pattern from a threshold sweep."""
    fig, ax = plt.subplots()
    for i in sorted(curves):
        pts = sorted(curves[i].points, key=lambda p: p[0])
        ax.plot([p[0] for p in pts], [p[1] for p in pts], marker=".", label=labels[i])
    ax.plot([0, 1], [0, 1], ls="--", c="gray", lw=0.8, label="chance")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_xlim(-0.02, 1.02)
    ax.set_ylim(-0.02, 1.02)
    ax.legend(fontsize=8)
    ax.set_title("detection characteristics per pattern")
    return save(fig, path)


def score_figure(raw: dict, integrated: dict, tau: float, path):
    """Raw vs window-averaged scores with the detection threshold."""
    fig, axes = plt.subplots(len(raw), 1, sharex=True, squeeze=False)
    for ax, label in zip(axes[:, 0], sorted(raw)):
        ax.plot(raw[label].times, raw[label].scores, lw=0.6, alpha=0.5, label="raw")
        ax.plot(integrated[label].times, integrated[label].scores, lw=1.2, label="integrated")
        ax.axhline(tau, c="crimson", ls=":", lw=0.8)
        ax.set_ylabel(label, fontsize=8)
        ax.set_ylim(-0.05, 1.05)
    axes[0, 0].legend(fontsize=7, loc="upper right")
    axes[-1, 0].set_xlabel("frame")
    fig.suptitle("score integration")
    return save(fig, path)


def innovation_figure(rows, threshold: float, path):
    """Per-track innovation mass over time with detected peaks marked.

    rows: iterable of (t, track_id, l1, peak).
    """
    per_track: dict[int, list] = {}
    for t, tid, l1, peak in rows:
        per_track.setdefault(tid, []).append((t, l1, peak))
    fig, ax = plt.subplots()
    for tid in sorted(per_track):
        data = sorted(per_track[tid])
        ts = [d[0] for d in data]
        ls = [d[1] for d in data]
        ax.plot(ts, ls, lw=0.9, label=f"track {tid}")
        peaks = [(t, l1) for t, l1, p in data if p]
        if peaks:
            ax.scatter([p[0] for p in peaks], [p[1] for p in peaks], marker="v",
                       zorder=3, s=30)
    ax.axhline(threshold, c="crimson", ls=":", lw=0.8, label="threshold")
    ax.set_xlabel("frame")
    ax.set_ylabel("sparse-component l1 mass")
    ax.set_title("attribute-level innovation")
    ax.legend(fontsize=8)
    return save(fig, path)


def ged_timeline_figure(times, distances, events, threshold: float, path):
    """Baseline distance across time with innovation events marked."""
    fig, ax = plt.subplots()
    ax.plot(times, distances, lw=0.8, label="distance to baseline")
    ax.axhline(threshold, c="crimson", ls=":", lw=0.8, label="significance limit")
    for ev_t in events:
        ax.axvline(ev_t, c="seagreen", lw=0.8, alpha=0.7)
    ax.set_xlabel("frame")
    ax.set_ylabel("edit distance")
    ax.set_title(f"graph smoothing ({len(events)} innovation events)")
    ax.legend(fontsize=8)
    return save(fig, path)


def render_run_report(frames, ledger, events, out_dir):
    """Pipeline summary figures: node-count timeline plus event raster."""
    out_dir = Path(out_dir)
    times = [mg.time_index for mg in frames]
    counts = [sum(len(a.nodes) for a in mg.atoms) for mg in frames]
    fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True)
    ax1.step(times, counts, where="post", lw=0.9)
    ax1.set_ylabel("nodes in scene")
    ax1.set_title("smoothed stream and innovation events")
    y = 0
    for bank in ledger.graph_banks:
        if bank.events:
            ax2.scatter([t for t, _ in bank.events], [y] * len(bank.events),
                        marker="|", s=80, label=f"atom {bank.bank_id}")
            y += 1
    for track in ledger.attr_tracks:
        if track.events:
            ax2.scatter([t for t, _ in track.events], [y] * len(track.events),
                        marker="v", s=20, label=f"track {track.track_id} (L{track.level})")
            y += 1
    ax2.set_ylim(-1, max(y, 1))
    ax2.set_yticks([])
    ax2.set_xlabel("frame")
    ax2.set_ylabel("events")
    if y:
        ax2.legend(fontsize=7, loc="upper right")
    return save(fig, out_dir / "report.png")
