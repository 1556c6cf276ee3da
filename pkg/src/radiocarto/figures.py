"""Figure rendering for the report path: each command that writes a
plot-ready CSV also renders the matching figure to PNG.

Rendering is byte-deterministic: fixed Agg backend, fixed dpi, and the
variable PNG metadata stripped, so rerunning a seeded command reproduces
figures exactly.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_SAVE = dict(dpi=130, metadata={"Software": None})


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, **_SAVE)
    plt.close(fig)


def render_error_traces(path, traces: dict, title="Per-slot estimation error") -> None:
    """One line per method: slot index vs normalized slice error (log y)."""
    fig, ax = plt.subplots(figsize=(6.4, 3.6))
    for label, values in traces.items():
        ax.semilogy(np.arange(1, len(values) + 1), values, label=label, linewidth=1.2)
    ax.set_xlabel("time slot")
    ax.set_ylabel("normalized error")
    ax.set_title(title)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend(fontsize=8)
    _finish(fig, path)


def render_objective_trace(path, traces: dict, title="Objective per sweep") -> None:
    """Objective value against sweep index, one line per labeled run."""
    fig, ax = plt.subplots(figsize=(5.6, 3.4))
    for label, values in traces.items():
        ax.plot(np.arange(1, len(values) + 1), values, label=label, linewidth=1.2)
    ax.set_xlabel("sweep")
    ax.set_ylabel("objective")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(traces) > 1:
        ax.legend(fontsize=8)
    _finish(fig, path)


def render_map(path, xs, ys, values, sensors=None, title="Aggregated power map") -> None:
    """Heatmap of the frequency-aggregated map over a regular raster."""
    xs = np.asarray(xs)
    ys = np.asarray(ys)
    ux, uy = np.unique(xs), np.unique(ys)
    grid = np.full((uy.size, ux.size), np.nan)
    xi = np.searchsorted(ux, xs)
    yi = np.searchsorted(uy, ys)
    grid[yi, xi] = values
    fig, ax = plt.subplots(figsize=(4.8, 4.0))
    im = ax.pcolormesh(ux, uy, grid, shading="nearest", cmap="viridis")
    fig.colorbar(im, ax=ax, label="power")
    if sensors is not None:
        sensors = np.asarray(sensors)
        ax.plot(sensors[:, 0], sensors[:, 1], "w^", markersize=4, label="sensors")
        ax.legend(fontsize=7, loc="upper right")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    _finish(fig, path)


def render_online_trace(path, slots, windows, residuals, threshold=None,
                        title="Adaptive window and fit residual") -> None:
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.4, 4.6), sharex=True)
    ax1.step(slots, windows, where="post", linewidth=1.2)
    ax1.set_ylabel("window length")
    ax1.grid(True, alpha=0.3)
    ax1.set_title(title)
    ax2.plot(slots, residuals, linewidth=1.0)
    if threshold is not None and np.isfinite(threshold):
        ax2.axhline(threshold, color="tab:red", linestyle="--", linewidth=1.0, label="threshold")
        ax2.legend(fontsize=8)
    ax2.set_xlabel("time slot")
    ax2.set_ylabel("residual")
    ax2.grid(True, alpha=0.3)
    _finish(fig, path)
