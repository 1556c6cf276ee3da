"""Spectrum-map reconstruction at arbitrary points and the error metrics
used to compare estimators."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .scenario import ChannelModel
from .tensor_ops import FactorSet, _as_tensor3


@dataclass(frozen=True)
class SpectrumMap:
    """Reconstructed power at ``query_points`` for every frequency bin at a
    fixed (1-based) time slot."""

    query_points: np.ndarray  # (Q, 2)
    values: np.ndarray        # (Q, F), linear power
    time_slot: int


def spectrum_map(f: FactorSet, channel: ChannelModel, queries, t: int) -> SpectrumMap:
    """Evaluate the recovered factors at arbitrary locations.

    Every rank-1 component contributes its spectral/temporal profile scaled
    by the spatial coefficient and the inverse-power-law decay from its grid
    location to the query, with the same distance clamp the gain matrix uses.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.size == 0:
        raise ValueError("need at least one query point")
    if queries.shape[1] != 2:
        raise ValueError("query points must be 2-D coordinates")
    if not (1 <= t <= f.c.shape[0]):
        raise ValueError(f"time slot {t} outside 1..{f.c.shape[0]}")
    diff = queries[:, None, :] - channel.grid_points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    gains = 1.0 / np.maximum(dist, channel.d_min) ** channel.eta   # (Q, P)
    weights = gains @ f.a                                          # (Q, R)
    values = (weights * f.c[t - 1][None, :]) @ f.b.T               # (Q, F)
    return SpectrumMap(queries, values, t)


def aggregate_map(m: SpectrumMap) -> np.ndarray:
    """Total power per query point, summed over the frequency axis."""
    return m.values.sum(axis=1)


class SliceErrors(NamedTuple):
    errors: np.ndarray    # length T
    absolute: np.ndarray  # True where the truth slice was zero (absolute error)


def slice_error_trace(x_hat, x_true) -> SliceErrors:
    """Per-time-slice Frobenius error of the estimate, normalized by the true
    slice norm; slices with zero truth are reported as absolute errors and
    flagged."""
    x_hat = _as_tensor3(x_hat)
    x_true = _as_tensor3(x_true)
    if x_hat.shape != x_true.shape:
        raise ValueError(f"shape mismatch: {x_hat.shape} vs {x_true.shape}")
    diff = np.sqrt(np.sum((x_hat - x_true) ** 2, axis=(0, 1)))
    ref = np.sqrt(np.sum(x_true * x_true, axis=(0, 1)))
    absolute = ref == 0.0
    errors = np.where(absolute, diff, diff / np.where(absolute, 1.0, ref))
    return SliceErrors(errors, absolute)


def raster_queries(channel: ChannelModel, factor: int = 4) -> np.ndarray:
    """Regular query raster over the grid extent, ``factor`` times finer than
    the candidate grid (factor 1 reproduces the grid points)."""
    if factor < 1:
        raise ValueError("raster factor must be >= 1")
    pts = channel.grid_points
    xs = np.unique(pts[:, 0])
    ys = np.unique(pts[:, 1])
    if xs.size > 1:
        xs = np.linspace(xs[0], xs[-1], (xs.size - 1) * factor + 1)
    if ys.size > 1:
        ys = np.linspace(ys[0], ys[-1], (ys.size - 1) * factor + 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def save_map_csv(path, m: SpectrumMap) -> None:
    """Full map as ``x,y,f,t,value`` rows (1-based frequency index)."""
    with open(path, "w") as fh:
        fh.write("x,y,f,t,value\n")
        for q in range(m.query_points.shape[0]):
            x, y = m.query_points[q]
            for j in range(m.values.shape[1]):
                fh.write(
                    f"{repr(float(x))},{repr(float(y))},{j + 1},"
                    f"{m.time_slot},{repr(float(m.values[q, j]))}\n"
                )


def save_aggregate_csv(path, m: SpectrumMap) -> None:
    """Frequency-aggregated map as ``x,y,t,value`` rows."""
    agg = aggregate_map(m)
    with open(path, "w") as fh:
        fh.write("x,y,t,value\n")
        for q in range(m.query_points.shape[0]):
            x, y = m.query_points[q]
            fh.write(f"{repr(float(x))},{repr(float(y))},{m.time_slot},{repr(float(agg[q]))}\n")
