"""Matplotlib figures written next to the delimited/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "balmatch"
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GROUP_COLORS = ("#1f77b4", "#d62728")


# drop timestamps and version strings so reruns write identical files
_STABLE_METADATA = {
    ".png": {"Software": None},
    ".svg": {"Date": None, "Creator": None},
    ".pdf": {"CreationDate": None, "Creator": None, "Producer": None},
}


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata=_STABLE_METADATA.get(Path(path).suffix.lower()))
    plt.close(fig)


def envelope(rows: list[dict], path, labels=("A", "B")) -> None:
    """Grouped bars of per-side death counts, one group per result row."""
    fig, ax = plt.subplots(figsize=(7, 3.8))
    x = np.arange(len(rows))
    width = 0.38
    for k, key in enumerate(("deaths_a", "deaths_b")):
        ax.bar(x + (k - 0.5) * width, [float(r[key]) for r in rows], width, label=labels[k], color=GROUP_COLORS[k])
    ax.set_xticks(x)
    ax.set_xticklabels([r["label"] for r in rows], rotation=20, ha="right")
    ax.set_ylabel("deaths among matched")
    ax.legend(frameon=False)
    _finish(fig, path)


def bootstrap_trace(samples_a, samples_b, target_a: float, target_b: float, path) -> None:
    """Running bootstrap means against the min-weighted totals."""
    fig, ax = plt.subplots(figsize=(7, 3.8))
    n = np.arange(1, len(samples_a) + 1)
    for k, (samples, target) in enumerate(((samples_a, target_a), (samples_b, target_b))):
        ax.plot(n, np.cumsum(samples) / n, color=GROUP_COLORS[k], lw=1, label=f"running mean {'AB'[k]}")
        ax.axhline(target, color=GROUP_COLORS[k], ls="--", lw=1, label=f"DBSeM R_{'AB'[k]}")
    ax.set_xscale("log")
    ax.set_xlabel("bootstrap iterations")
    ax.set_ylabel("deaths")
    ax.legend(frameon=False, fontsize=8)
    _finish(fig, path)


def cluster_sizes(matches: list[dict], path) -> None:
    """Matched cluster sizes, A against B; points off the diagonal lose data under 1:1 matching."""
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    a = np.array([m["size_a"] for m in matches], dtype=float)
    b = np.array([m["size_b"] for m in matches], dtype=float)
    if len(a):
        ax.scatter(a, b, s=12, alpha=0.6, color="k")
        top = max(a.max(), b.max())
        ax.plot([1, top], [1, top], color="0.6", lw=1)
        ax.set_xscale("log")
        ax.set_yscale("log")
    ax.set_xlabel("|C_A|")
    ax.set_ylabel("|C_B|")
    _finish(fig, path)
