"""Online loop: sliding-window tensor maintenance, gross-change detection
through the model-fit residual, additive-increase/multiplicative-decrease
window adaptation, and per-slot re-decomposition with warm starts."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .cartography import SpectrumMap, spectrum_map
from .decomposition import AlsOptions, DecompositionResult, RegWeights, structured_als
from .scenario import ChannelModel
from .solvers import SolverTolerances
from .tensor_ops import frob_norm, mode1_product, cp_reconstruct


def window_update(w_prev: int, residual: float, j: float) -> int:
    """Additive increase, multiplicative decrease: grow the window by one
    while the fit residual stays within the threshold, halve it (never below
    one) when a gross change is detected."""
    if w_prev < 1:
        raise ValueError("window length must be >= 1")
    if residual <= j:
        return w_prev + 1
    return 1 + w_prev // 2


@dataclass(frozen=True)
class OnlineConfig:
    channel: ChannelModel
    rank: int
    weights: RegWeights
    capacity: int = 64            # hard bound on buffered slices
    sweeps_per_slot: int = 15     # latency budget, relies on warm starts
    rel_tol: float = 1e-4
    init_iters: int = 20
    inner: SolverTolerances = field(
        default_factory=lambda: SolverTolerances(max_inner_iters=200, rel_tol=1e-9)
    )
    normalize_residual: bool = False  # opt-in: compare residual per slice
    map_queries: np.ndarray | None = None  # defaults to the candidate grid

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be >= 1")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")


@dataclass(frozen=True)
class WindowState:
    """Current window length, detection threshold, the buffered recent
    slices (most recent last) and the previous solution for warm starts."""

    w: int
    j_threshold: float
    buffer: tuple = ()
    warm: DecompositionResult | None = None

    def __post_init__(self):
        if self.w < 1:
            raise ValueError("window length must be >= 1")
        if not self.j_threshold > 0:
            raise ValueError("threshold must be > 0")


class OnlineStep(NamedTuple):
    state: WindowState
    decomposition: DecompositionResult
    map: SpectrumMap
    residual: float     # raw Frobenius fit residual of this slot's window
    window: int         # number of slices actually decomposed this slot


def online_step(state: WindowState, slice_nf, cfg: OnlineConfig) -> OnlineStep:
    """Ingest one sensed slice and refresh the running estimate.

    The slice joins the buffer, the most recent ``state.w`` slices form the
    window tensor, and the structured solver runs warm-started from the
    previous spatial/spectral factors and perturbation estimate (the
    temporal factor is refit since the window length changes).  The fit
    residual then drives the AIMD window update and the newest slot's map is
    emitted.  Deterministic given the threshold and the input stream.
    """
    slice_nf = np.asarray(slice_nf, dtype=float)
    n_sens = cfg.channel.gamma_m.shape[0]
    if slice_nf.ndim != 2 or slice_nf.shape[0] != n_sens:
        raise ValueError(
            f"slice must be a {n_sens} x F matrix, got shape {slice_nf.shape}"
        )
    if state.warm is not None and state.warm.factors.b.shape[0] != slice_nf.shape[1]:
        raise ValueError("slice frequency count changed mid-stream")

    buffer = (state.buffer + (slice_nf,))[-min(state.w, cfg.capacity):]
    y = np.stack(buffer, axis=2)  # (N, F, W)
    w_used = y.shape[2]

    opts = AlsOptions(
        rel_tol=cfg.rel_tol,
        max_sweeps=cfg.sweeps_per_slot,
        init_iters=cfg.init_iters,
        inner=cfg.inner,
    )
    if state.warm is None:
        result = structured_als(y, cfg.channel.gamma_m, cfg.rank, cfg.weights, opts)
    else:
        warm = (state.warm.factors.a, state.warm.factors.b, state.warm.gamma_p)
        result = structured_als(
            y, cfg.channel.gamma_m, cfg.rank, cfg.weights, opts, warm_start=warm
        )

    x_hat = cp_reconstruct(result.factors)
    residual = frob_norm(y - mode1_product(x_hat, cfg.channel.gamma_m + result.gamma_p))
    rule_residual = residual / np.sqrt(w_used) if cfg.normalize_residual else residual
    w_next = min(cfg.capacity, window_update(state.w, rule_residual, state.j_threshold))

    queries = cfg.map_queries if cfg.map_queries is not None else cfg.channel.grid_points
    current_map = spectrum_map(result.factors, cfg.channel, queries, t=w_used)

    next_state = replace(
        state, w=w_next, buffer=buffer[-min(w_next, cfg.capacity):], warm=result
    )
    return OnlineStep(next_state, result, current_map, float(residual), w_used)


class SlotRecord(NamedTuple):
    slot: int
    window: int
    residual: float
    objective: float
    locations: tuple        # active grid locations, 1-based, sorted


def calibrate_threshold(residuals, windows, capacity: int,
                        quantile: float = 0.95, margin: float = 1.05) -> float:
    """Detection threshold from a stationary warm-up prefix.

    The raw residual grows like the square root of the window length, so the
    warm-up residuals are first reduced to per-slice level, the given
    quantile is taken, and the result is scaled back up to the largest
    window the loop can reach plus a safety margin.  A threshold taken from
    the raw warm-up residuals alone would trip spuriously once the window
    outgrows the prefix.
    """
    residuals = np.asarray(residuals, dtype=float)
    windows = np.asarray(windows, dtype=float)
    if residuals.size == 0:
        raise ValueError("need at least one warm-up residual")
    per_slice = residuals / np.sqrt(windows)
    return float(np.quantile(per_slice, quantile) * np.sqrt(capacity) * margin)


def run_online(slices, cfg: OnlineConfig, j_threshold: float | None = None,
               warmup: int = 30) -> tuple[list[SlotRecord], float]:
    """Drive the online loop over an iterable of sensed slices.

    When no threshold is given the first ``warmup`` slots run in
    grow-only mode while their residuals are collected, then the threshold
    is calibrated from them and adaptation starts.  Returns the per-slot
    records and the threshold that was used.
    """
    records: list[SlotRecord] = []
    state = WindowState(w=1, j_threshold=np.inf if j_threshold is None else j_threshold)
    warm_res: list[float] = []
    warm_win: list[int] = []
    for slot, slice_nf in enumerate(slices, start=1):
        step = online_step(state, slice_nf, cfg)
        state = step.state
        if j_threshold is None and slot <= warmup:
            warm_res.append(step.residual)
            warm_win.append(step.window)
            if slot == warmup:
                j = calibrate_threshold(warm_res, warm_win, cfg.capacity)
                state = replace(state, j_threshold=j)
        a = step.decomposition.factors.a
        locations = tuple(sorted(int(i) + 1 for i in np.nonzero(np.any(a != 0, axis=1))[0]))
        records.append(
            SlotRecord(slot, step.window, step.residual,
                       float(step.decomposition.objective_trace[-1]), locations)
        )
    return records, float(state.j_threshold)


def write_stream(path, slices) -> None:
    """Concatenated per-slice records in the shared tensor text format, one
    ``T3 N F 1`` record per slice; readable as a line-delimited feed."""
    with open(path, "w") as fh:
        for s in slices:
            s = np.asarray(s, dtype=float)
            fh.write(f"T3 {s.shape[0]} {s.shape[1]} 1\n")
            for v in s.ravel(order="C"):
                fh.write(repr(float(v)))
                fh.write("\n")


def read_stream(path):
    """Yield sensor x frequency slices from a stream file."""
    with open(path) as fh:
        while True:
            header = fh.readline()
            if not header.strip():
                return
            parts = header.split()
            if len(parts) != 4 or parts[0] != "T3" or parts[3] != "1":
                raise ValueError(f"{path}: bad stream record header {header!r}")
            n, f = int(parts[1]), int(parts[2])
            values = np.empty(n * f)
            for i in range(n * f):
                line = fh.readline()
                if not line:
                    raise ValueError(f"{path}: truncated stream record")
                values[i] = float(line)
            yield values.reshape(n, f)


def save_online_trace(path, records) -> None:
    """Per-slot trace as ``slot,window,residual,objective,active_locations``
    (locations 1-based, ';'-separated)."""
    with open(path, "w") as fh:
        fh.write("slot,window,residual,objective,active_locations\n")
        for rec in records:
            locs = ";".join(str(p) for p in rec.locations)
            fh.write(
                f"{rec.slot},{rec.window},{repr(float(rec.residual))},"
                f"{repr(float(rec.objective))},{locs}\n"
            )
