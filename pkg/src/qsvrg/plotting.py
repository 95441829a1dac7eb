"""Static PNG figures for traces and bound sweeps."""

from __future__ import annotations

import io
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

_SAVE_KW = dict(format="png", dpi=120, metadata={"Software": None})


def _save(fig, path: Path) -> Path:
    buf = io.BytesIO()
    fig.savefig(buf, **_SAVE_KW)
    plt.close(fig)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)
    return path


def plot_traces(traces: dict, path, y: str = "grad_norm", x: str = "k", title: str | None = None) -> Path:
    """One line per algorithm; ``traces`` maps a label to a list of TraceRecords.

    ``x`` may be ``"k"`` or ``"bits"`` (uplink plus downlink data bits).
    """
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, trace in traces.items():
        if x == "bits":
            xs = [r.bits_up + r.bits_down for r in trace]
        else:
            xs = [r.k for r in trace]
        ys = [getattr(r, y) for r in trace]
        positive = [(a, b) for a, b in zip(xs, ys) if b > 0]
        if positive:
            ax.plot(*zip(*positive), label=label, lw=1.4)
    ax.set_yscale("log")
    if x == "bits":
        ax.set_xscale("symlog")
    ax.set_xlabel("outer iteration" if x == "k" else "total bits")
    ax.set_ylabel(y.replace("_", " "))
    if title:
        ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_curves(curves: dict, path, xlabel: str, ylabel: str, logy: bool = True) -> Path:
    """Generic line plot: ``curves`` maps a label to ``(xs, ys)``; None values are skipped."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, (xs, ys) in curves.items():
        pts = [(a, b) for a, b in zip(xs, ys) if b is not None]
        if pts:
            ax.plot(*zip(*pts), marker=".", label=label, lw=1.2)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
