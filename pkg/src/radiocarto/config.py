"""TOML run-configuration loading, validation, and presets.

A config file describes one scenario plus optional solver, baseline, map,
and online sections; :func:`load_config` validates everything up front and
raises :class:`ConfigError` with the offending key path before any
computation starts.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .decomposition import AlsOptions, RegWeights
from .scenario import PerturbConfig, PuConfig, ScenarioConfig
from .solvers import SolverTolerances

PRESETS = ("sanity", "fig4", "fig6", "fig8")


class ConfigError(Exception):
    """Malformed or inconsistent run configuration."""


@dataclass(frozen=True)
class BaselineParams:
    slice_l1: float = 1e-4     # per-fiber lasso penalty
    ma_window: int = 10        # moving-average depth
    cp_map_l1: float = 0.1     # relative l1 level of the CP grid inversion


@dataclass(frozen=True)
class MapParams:
    time_slot: int = 1
    raster: int = 4


@dataclass(frozen=True)
class OnlineParams:
    rank: int = 2
    capacity: int = 64
    sweeps_per_slot: int = 15
    warmup: int = 30
    threshold: float | None = None   # None means calibrate from the warm-up
    normalize_residual: bool = False


@dataclass(frozen=True)
class RunConfig:
    scenario: ScenarioConfig
    solver: AlsOptions = field(default_factory=AlsOptions)
    baselines: BaselineParams = field(default_factory=BaselineParams)
    map: MapParams = field(default_factory=MapParams)
    online: OnlineParams | None = None


def _need(table, key, path, types, type_name):
    full = f"{path}.{key}" if path else key
    if not isinstance(table, dict) or key not in table:
        raise ConfigError(f"missing required key '{full}'")
    v = table[key]
    if isinstance(v, bool) or not isinstance(v, types):
        raise ConfigError(f"'{full}' must be {type_name}")
    return v


def _need_int(table, key, path):
    return int(_need(table, key, path, int, "an integer"))


def _need_num(table, key, path):
    return float(_need(table, key, path, (int, float), "a number"))


def _opt_num(table, key, path, default):
    return float(table[key]) if key in table else default


def _opt_int(table, key, path, default):
    return int(table[key]) if key in table else default


def _pair(v, path):
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, int) for x in v)):
        raise ConfigError(f"'{path}' must be a two-integer array [lo, hi]")
    return (v[0], v[1])


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: invalid TOML: {e}") from e
    try:
        return parse_config(doc)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from e


def parse_config(doc: dict) -> RunConfig:
    grid = _need(doc, "grid", "", dict, "a table")
    rows = _need_int(grid, "rows", "grid")
    cols = _need_int(grid, "cols", "grid")
    spacing = _need_num(grid, "spacing", "grid")
    d_min = float(grid["d_min"]) if "d_min" in grid else None

    sensors = _need(doc, "sensors", "", dict, "a table")
    count = _need_int(sensors, "count", "sensors")
    coords = None
    if "coordinates" in sensors:
        raw_pts = sensors["coordinates"]
        if not isinstance(raw_pts, list):
            raise ConfigError("'sensors.coordinates' must be an array of [x, y] pairs")
        pts = []
        for i, p in enumerate(raw_pts):
            if not (isinstance(p, list) and len(p) == 2):
                raise ConfigError(f"'sensors.coordinates[{i}]' must be an [x, y] pair")
            pts.append((float(p[0]), float(p[1])))
        coords = tuple(pts)

    tensor = _need(doc, "tensor", "", dict, "a table")
    n_freqs = _need_int(tensor, "freqs", "tensor")
    n_slots = _need_int(tensor, "slots", "tensor")
    rank = _need_int(tensor, "rank", "tensor")

    pus = []
    raw_pus = doc.get("pus", [])
    if not isinstance(raw_pus, list):
        raise ConfigError("'pus' must be an array of tables")
    for i, pu in enumerate(raw_pus):
        loc = _need_int(pu, "location", f"pus[{i}]")
        band = _pair(_need(pu, "band", f"pus[{i}]", list, "an array"), f"pus[{i}].band")
        span = _pair(_need(pu, "span", f"pus[{i}]", list, "an array"), f"pus[{i}].span")
        power = _opt_num(pu, "power", f"pus[{i}]", 1.0)
        pus.append(PuConfig(loc, band, span, power))

    snr_db = float("inf")
    if "noise" in doc:
        snr_db = _need_num(doc["noise"], "snr_db", "noise")

    eta = 2.5
    if "channel" in doc:
        eta = _opt_num(doc["channel"], "eta", "channel", 2.5)

    perturb = PerturbConfig()
    if "perturbation" in doc:
        p = doc["perturbation"]
        perturb = PerturbConfig(
            enabled=bool(p.get("enabled", False)),
            taps=_opt_int(p, "taps", "perturbation", 6),
            strength=_opt_num(p, "strength", "perturbation", 0.0),
        )

    wtab = _need(doc, "weights", "", dict, "a table")
    weights = RegWeights(
        lambda_p=_need_num(wtab, "lambda_p", "weights"),
        lambda_b=_opt_num(wtab, "lambda_b", "weights", 0.0),
        lambda_c=_opt_num(wtab, "lambda_c", "weights", 0.0),
    )

    seed = doc.get("seed", 0)
    if not isinstance(seed, int):
        raise ConfigError("'seed' must be an integer")

    try:
        scenario = ScenarioConfig(
            grid_rows=rows, grid_cols=cols, spacing=spacing, n_sensors=count,
            n_freqs=n_freqs, n_slots=n_slots, rank=rank, pus=tuple(pus),
            snr_db=snr_db, perturb=perturb, weights=weights, seed=seed,
            eta=eta, d_min=d_min, sensor_points=coords,
        )
        scenario.validate()
    except ValueError as e:
        raise ConfigError(str(e)) from e

    solver = AlsOptions()
    if "solver" in doc:
        s = doc["solver"]
        try:
            solver = AlsOptions(
                rel_tol=_opt_num(s, "rel_tol", "solver", 1e-4),
                max_sweeps=_opt_int(s, "max_sweeps", "solver", 100),
                init_iters=_opt_int(s, "init_iters", "solver", 30),
                inner=SolverTolerances(
                    max_inner_iters=_opt_int(s, "inner_iters", "solver", 200),
                    rel_tol=_opt_num(s, "inner_rel_tol", "solver", 1e-9),
                ),
            )
        except ValueError as e:
            raise ConfigError(f"[solver]: {e}") from e

    baselines = BaselineParams()
    if "baselines" in doc:
        b = doc["baselines"]
        baselines = BaselineParams(
            slice_l1=_opt_num(b, "slice_l1", "baselines", 1e-4),
            ma_window=_opt_int(b, "ma_window", "baselines", 10),
            cp_map_l1=_opt_num(b, "cp_map_l1", "baselines", 0.1),
        )
        if baselines.ma_window < 1:
            raise ConfigError("'baselines.ma_window' must be >= 1")

    map_params = MapParams(time_slot=min(60, n_slots), raster=4)
    if "map" in doc:
        m = doc["map"]
        map_params = MapParams(
            time_slot=_opt_int(m, "time_slot", "map", map_params.time_slot),
            raster=_opt_int(m, "raster", "map", 4),
        )
        if not (1 <= map_params.time_slot <= n_slots):
            raise ConfigError(f"'map.time_slot' outside 1..{n_slots}")
        if map_params.raster < 1:
            raise ConfigError("'map.raster' must be >= 1")

    online = None
    if "online" in doc:
        o = doc["online"]
        thr = o.get("threshold", "auto")
        if thr == "auto":
            threshold = None
        elif isinstance(thr, (int, float)) and not isinstance(thr, bool) and float(thr) > 0:
            threshold = float(thr)
        else:
            raise ConfigError("'online.threshold' must be a positive number or 'auto'")
        online = OnlineParams(
            rank=_opt_int(o, "rank", "online", 2),
            capacity=_opt_int(o, "capacity", "online", 64),
            sweeps_per_slot=_opt_int(o, "sweeps_per_slot", "online", 15),
            warmup=_opt_int(o, "warmup", "online", 30),
            threshold=threshold,
            normalize_residual=bool(o.get("normalize_residual", False)),
        )
        if online.rank < 1 or online.capacity < 1 or online.sweeps_per_slot < 1:
            raise ConfigError("[online]: rank, capacity and sweeps_per_slot must be >= 1")

    return RunConfig(scenario, solver, baselines, map_params, online)


def config_to_dict(cfg: RunConfig) -> dict:
    """JSON-serializable resolved configuration; sensor coordinates are
    always materialized so the scenario is reproducible without the seed's
    placement stream."""
    s = cfg.scenario
    d = {
        "seed": s.seed,
        "grid": {"rows": s.grid_rows, "cols": s.grid_cols, "spacing": s.spacing,
                 "d_min": s.clamp},
        "sensors": {"count": s.n_sensors,
                    "coordinates": [list(p) for p in (s.sensor_points or ())]},
        "tensor": {"freqs": s.n_freqs, "slots": s.n_slots, "rank": s.rank},
        "channel": {"eta": s.eta},
        "pus": [{"location": p.location, "band": list(p.band), "span": list(p.span),
                 "power": p.power} for p in s.pus],
        "noise": {"snr_db": "inf" if s.snr_db == float("inf") else s.snr_db},
        "perturbation": {"enabled": s.perturb.enabled, "taps": s.perturb.taps,
                         "strength": s.perturb.strength},
        "weights": {"lambda_p": s.weights.lambda_p, "lambda_b": s.weights.lambda_b,
                    "lambda_c": s.weights.lambda_c},
        "solver": {"rel_tol": cfg.solver.rel_tol, "max_sweeps": cfg.solver.max_sweeps,
                   "init_iters": cfg.solver.init_iters,
                   "inner_iters": cfg.solver.inner.max_inner_iters,
                   "inner_rel_tol": cfg.solver.inner.rel_tol},
        "baselines": {"slice_l1": cfg.baselines.slice_l1,
                      "ma_window": cfg.baselines.ma_window,
                      "cp_map_l1": cfg.baselines.cp_map_l1},
        "map": {"time_slot": cfg.map.time_slot, "raster": cfg.map.raster},
    }
    if cfg.online is not None:
        o = cfg.online
        d["online"] = {"rank": o.rank, "capacity": o.capacity,
                       "sweeps_per_slot": o.sweeps_per_slot, "warmup": o.warmup,
                       "threshold": "auto" if o.threshold is None else o.threshold,
                       "normalize_residual": o.normalize_residual}
    return d


def config_from_dict(d: dict) -> RunConfig:
    doc = dict(d)
    noise = doc.get("noise", {})
    if noise.get("snr_db") == "inf":
        doc["noise"] = dict(noise, snr_db=float("inf"))
    sensors = doc.get("sensors", {})
    if not sensors.get("coordinates"):
        doc["sensors"] = {k: v for k, v in sensors.items() if k != "coordinates"}
    return parse_config(doc)


def preset_path(name: str) -> Path:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}' (expected one of {', '.join(PRESETS)})")
    ref = resources.files("radiocarto").joinpath(f"presets/{name}.toml")
    with resources.as_file(ref) as p:
        return Path(p)
