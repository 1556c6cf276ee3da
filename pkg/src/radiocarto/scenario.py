"""Synthetic spectrum-sensing world.

Builds grid/sensor geometry, inverse-power-law channel gains, block ground
truth factors, a multipath magnitude perturbation of the gains, and the
sensed tensor with additive white Gaussian noise at a target SNR.

All randomness flows through PCG64 generators derived from the scenario seed
plus a fixed per-operation substream label, so adding a new stochastic
operation never shifts the draws of existing ones and equal seeds give
bit-identical scenarios.

User-facing indices (grid locations, frequency bins, time slots) are
1-based throughout, matching the way scenarios are described in configs;
arrays are 0-based internally.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field

import numpy as np

from .decomposition import RegWeights
from .tensor_ops import FactorSet, cp_reconstruct, mode1_product

# Mean magnitude of a unit-power complex circular Gaussian (Rayleigh mean).
_RAYLEIGH_MEAN = float(np.sqrt(np.pi) / 2.0)


def substream(seed: int, label: str) -> np.random.Generator:
    """Deterministic per-operation random stream: PCG64 keyed by the scenario
    seed and a fixed label."""
    key = zlib.crc32(label.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def grid_coordinates(rows: int, cols: int, spacing: float) -> np.ndarray:
    """Row-major grid point coordinates: location p (1-based) sits at
    ``((p-1) % cols * spacing, (p-1) // cols * spacing)``."""
    if rows < 1 or cols < 1 or spacing <= 0:
        raise ValueError("grid needs positive rows, cols and spacing")
    xs = np.arange(cols) * spacing
    ys = np.arange(rows) * spacing
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()]).astype(float)


def pathloss_gains(grid_points, sensor_points, eta: float, d_min: float) -> np.ndarray:
    """Gain matrix with entry (n, p) = 1 / max(d(sensor n, grid p), d_min)^eta.

    The clamp keeps coincident sensor/grid pairs finite; the loss exponent is
    restricted to [2, 3].
    """
    grid_points = np.asarray(grid_points, dtype=float)
    sensor_points = np.asarray(sensor_points, dtype=float)
    if not (2.0 <= eta <= 3.0):
        raise ValueError(f"eta must lie in [2, 3], got {eta}")
    if d_min <= 0:
        raise ValueError("d_min must be > 0")
    diff = sensor_points[:, None, :] - grid_points[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    return 1.0 / np.maximum(dist, d_min) ** eta


@dataclass(frozen=True)
class ChannelModel:
    """Geometry plus the model gains and the true perturbation (zero when the
    channel is unperturbed)."""

    grid_points: np.ndarray     # (P, 2) meters
    sensor_points: np.ndarray   # (N, 2) meters
    eta: float
    d_min: float
    gamma_m: np.ndarray         # (N, P)
    gamma_p_true: np.ndarray    # (N, P)


@dataclass(frozen=True)
class PuConfig:
    """One rectangular activation block: a grid location (1-based), an
    inclusive 1-based frequency band and time span, and a transmit power."""

    location: int
    band: tuple[int, int]
    span: tuple[int, int]
    power: float = 1.0


@dataclass(frozen=True)
class PerturbConfig:
    enabled: bool = False
    taps: int = 6
    strength: float = 0.0


@dataclass(frozen=True)
class ScenarioConfig:
    grid_rows: int
    grid_cols: int
    spacing: float
    n_sensors: int
    n_freqs: int
    n_slots: int
    rank: int
    pus: tuple[PuConfig, ...]
    snr_db: float = float("inf")
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    weights: RegWeights = field(default_factory=lambda: RegWeights(lambda_p=1e-2))
    seed: int = 0
    eta: float = 2.5
    d_min: float | None = None          # defaults to spacing / 2
    sensor_points: tuple | None = None  # explicit coordinates override placement

    @property
    def n_grid(self) -> int:
        return self.grid_rows * self.grid_cols

    @property
    def clamp(self) -> float:
        return self.spacing / 2.0 if self.d_min is None else self.d_min

    def validate(self) -> None:
        if self.n_sensors < 1:
            raise ValueError("need at least one sensor")
        if self.n_freqs < 1 or self.n_slots < 1:
            raise ValueError("need positive frequency and slot counts")
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if len(self.pus) > self.rank:
            raise ValueError(f"{len(self.pus)} transmitters exceed rank {self.rank}")
        for i, pu in enumerate(self.pus, start=1):
            if not (1 <= pu.location <= self.n_grid):
                raise ValueError(f"pus[{i}]: location {pu.location} outside 1..{self.n_grid}")
            lo, hi = pu.band
            if not (1 <= lo <= hi <= self.n_freqs):
                raise ValueError(f"pus[{i}]: band {pu.band} outside 1..{self.n_freqs}")
            lo, hi = pu.span
            if not (1 <= lo <= hi <= self.n_slots):
                raise ValueError(f"pus[{i}]: span {pu.span} outside 1..{self.n_slots}")
            if pu.power < 0:
                raise ValueError(f"pus[{i}]: power must be >= 0")
        if self.sensor_points is not None and len(self.sensor_points) != self.n_sensors:
            raise ValueError("explicit sensor coordinates do not match the sensor count")


@dataclass(frozen=True)
class GroundTruth:
    factors: FactorSet
    x: np.ndarray          # (P, F, T) propagation tensor
    channel: ChannelModel
    config: ScenarioConfig


def synth_factors(cfg: ScenarioConfig) -> FactorSet:
    """Ground-truth factors: one rank-1 block per transmitter.  The spatial
    column is a unit indicator at the location, the spectral column carries
    the power over the band, the temporal column is a 0/1 indicator over the
    span.  Columns beyond the transmitter count stay zero."""
    cfg.validate()
    a = np.zeros((cfg.n_grid, cfg.rank))
    b = np.zeros((cfg.n_freqs, cfg.rank))
    c = np.zeros((cfg.n_slots, cfg.rank))
    for r, pu in enumerate(cfg.pus):
        a[pu.location - 1, r] = 1.0
        b[pu.band[0] - 1 : pu.band[1], r] = pu.power
        c[pu.span[0] - 1 : pu.span[1], r] = 1.0
    return FactorSet(a, b, c)


def rayleigh_perturbation(gamma_m, taps: int, strength: float, seed: int) -> np.ndarray:
    """Mean-zero multiplicative magnitude perturbation of the model gains.

    Per entry, a ``taps``-path complex circular Gaussian channel with unit
    total mean power is drawn; the actual gain is
    ``gamma_m * (1 + strength * (|h| - E|h|))`` and the returned matrix is
    the difference from ``gamma_m``.  Centering on E|h| keeps the model
    gains the mean of the actual gains.
    """
    gamma_m = np.asarray(gamma_m, dtype=float)
    if taps < 1:
        raise ValueError("taps must be >= 1")
    if strength < 0:
        raise ValueError("strength must be >= 0")
    if strength == 0:
        return np.zeros_like(gamma_m)
    rng = substream(seed, "perturbation")
    draws = rng.standard_normal(gamma_m.shape + (taps, 2)) / np.sqrt(2.0 * taps)
    h = draws[..., 0].sum(axis=-1) + 1j * draws[..., 1].sum(axis=-1)
    return gamma_m * strength * (np.abs(h) - _RAYLEIGH_MEAN)


def build_channel(cfg: ScenarioConfig, perturb_seed: int | None = None) -> ChannelModel:
    """Geometry and gains for a scenario: explicit sensor coordinates when
    given, otherwise uniform placement over the grid extent from the seeded
    ``sensors`` substream.  ``perturb_seed`` redraws only the channel
    perturbation, leaving the geometry pinned by the scenario seed."""
    cfg.validate()
    grid = grid_coordinates(cfg.grid_rows, cfg.grid_cols, cfg.spacing)
    if cfg.sensor_points is not None:
        sensors = np.asarray(cfg.sensor_points, dtype=float).reshape(cfg.n_sensors, 2)
    else:
        rng = substream(cfg.seed, "sensors")
        extent_x = (cfg.grid_cols - 1) * cfg.spacing
        extent_y = (cfg.grid_rows - 1) * cfg.spacing
        sensors = rng.random((cfg.n_sensors, 2)) * np.array([extent_x, extent_y])
    gamma_m = pathloss_gains(grid, sensors, cfg.eta, cfg.clamp)
    if cfg.perturb.enabled:
        gamma_p = rayleigh_perturbation(
            gamma_m, cfg.perturb.taps, cfg.perturb.strength,
            cfg.seed if perturb_seed is None else perturb_seed,
        )
    else:
        gamma_p = np.zeros_like(gamma_m)
    return ChannelModel(grid, sensors, cfg.eta, cfg.clamp, gamma_m, gamma_p)


def build_scenario(cfg: ScenarioConfig, perturb_seed: int | None = None) -> GroundTruth:
    factors = synth_factors(cfg)
    channel = build_channel(cfg, perturb_seed)
    return GroundTruth(factors, cp_reconstruct(factors), channel, cfg)


def generate_sensed(gt: GroundTruth, snr_db: float, seed: int) -> np.ndarray:
    """Sensed tensor: propagation pushed through the actual gains plus white
    Gaussian noise scaled for the requested tensor-wide SNR.  ``inf``
    disables the noise; a finite SNR on an all-zero signal is rejected."""
    y0 = mode1_product(gt.x, gt.channel.gamma_m + gt.channel.gamma_p_true)
    if np.isinf(snr_db):
        return y0
    sig_power = float(np.mean(y0 * y0))
    if sig_power == 0.0:
        raise ValueError("SNR is undefined for an all-zero signal")
    sigma = np.sqrt(sig_power * 10.0 ** (-snr_db / 10.0))
    rng = substream(seed, "noise")
    return y0 + sigma * rng.standard_normal(y0.shape)
