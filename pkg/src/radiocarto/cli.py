"""Command-line front end.

Five subcommands: ``simulate`` (synthesize a scenario to disk),
``decompose`` (structured solve of a simulated scenario), ``compare`` (all
five estimators, one error column each), ``map`` (spectrum-map export from
a decomposition), and ``online`` (adaptive-window loop over a slice
stream).  Figure presets bundle the reference configurations so the
headline runs are single commands, e.g.::

    radiocarto compare --preset fig4 --out out/fig4
    radiocarto map     --preset fig6 --out out/fig6
    radiocarto online  --preset fig8 --out out/fig8

Every command writes a ``manifest.json`` recording the resolved seed, the
config hash, versions, and a SHA-256 per output file.  Exit codes: 0 on
success, 2 for usage/config errors, 3 for numerical failure under
``--strict``.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .cartography import (
    aggregate_map,
    raster_queries,
    save_aggregate_csv,
    save_map_csv,
    slice_error_trace,
    spectrum_map,
)
from .config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    preset_path,
)
from .decomposition import (
    baseline_cp_init,
    baseline_moving_avg,
    baseline_slice_lasso,
    baseline_slice_ls,
    load_matrix_csv,
    save_decomposition,
    save_matrix_csv,
    save_objective_trace,
    structured_als,
)
from .online import OnlineConfig, read_stream, run_online, save_online_trace, write_stream
from .scenario import (
    ChannelModel,
    GroundTruth,
    build_scenario,
    generate_sensed,
    pathloss_gains,
)
from .tensor_ops import FactorSet, cp_reconstruct, load_tensor, save_tensor


class NumericalFailure(Exception):
    """Raised under --strict when an iterative solve does not converge."""


# ------------------------------------------------------------- manifest

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, cfg_sha: str, seed: int,
                    files: list, started: float, extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "config_sha256": cfg_sha,
        "seed": seed,
        "versions": {
            "radiocarto": __version__,
            "python": sys.version.split()[0],
            "numpy": np.__version__,
        },
        "outputs": [
            {"name": name, "bytes": (outdir / name).stat().st_size,
             "sha256": _sha256(outdir / name)}
            for name in sorted(files)
        ],
        "duration_s": round(time.monotonic() - started, 3),
    }
    if extra:
        manifest.update(extra)
    tmp = outdir / "manifest.json.tmp"
    with open(tmp, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, outdir / "manifest.json")


# ------------------------------------------------------------- config plumbing

def _resolve_run_config(args) -> tuple[RunConfig, bytes]:
    if getattr(args, "preset", None):
        path = preset_path(args.preset)
    elif getattr(args, "config", None):
        path = Path(args.config)
    else:
        raise ConfigError("one of --config or --preset is required")
    cfg = load_config(path)
    raw = path.read_bytes()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, scenario=replace(cfg.scenario, seed=args.seed))
    if getattr(args, "rel_tol", None) is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, rel_tol=args.rel_tol))
    if getattr(args, "max_sweeps", None) is not None:
        cfg = replace(cfg, solver=replace(cfg.solver, max_sweeps=args.max_sweeps))
    return cfg, raw


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ------------------------------------------------------------- simulate

def _materialize(cfg: RunConfig) -> tuple[RunConfig, GroundTruth, np.ndarray]:
    gt = build_scenario(cfg.scenario)
    y = generate_sensed(gt, cfg.scenario.snr_db, cfg.scenario.seed)
    pinned = replace(cfg, scenario=replace(
        cfg.scenario,
        sensor_points=tuple(map(tuple, gt.channel.sensor_points.tolist())),
        d_min=gt.channel.d_min,
    ))
    return pinned, gt, y


def _write_scenario(outdir: Path, cfg: RunConfig, gt: GroundTruth, y) -> list:
    files = []

    def put_csv(name, m):
        save_matrix_csv(outdir / name, m)
        files.append(name)

    with open(outdir / "config.json", "w") as fh:
        json.dump(config_to_dict(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    files.append("config.json")
    put_csv("gamma_m.csv", gt.channel.gamma_m)
    put_csv("gamma_p_true.csv", gt.channel.gamma_p_true)
    put_csv("A_true.csv", gt.factors.a)
    put_csv("B_true.csv", gt.factors.b)
    put_csv("C_true.csv", gt.factors.c)
    put_csv("grid.csv", gt.channel.grid_points)
    put_csv("sensors.csv", gt.channel.sensor_points)
    save_tensor(outdir / "X.t3", gt.x)
    files.append("X.t3")
    save_tensor(outdir / "Y.t3", y)
    files.append("Y.t3")
    return files


def cmd_simulate(args) -> int:
    started = time.monotonic()
    cfg, raw = _resolve_run_config(args)
    outdir = _outdir(args)
    cfg, gt, y = _materialize(cfg)
    files = _write_scenario(outdir, cfg, gt, y)
    _write_manifest(outdir, "simulate", hashlib.sha256(raw).hexdigest(),
                    cfg.scenario.seed, files, started)
    return 0


# ------------------------------------------------------------- scenario loading

def _load_scenario_dir(path) -> tuple[RunConfig, GroundTruth, np.ndarray]:
    path = Path(path)
    cfg_file = path / "config.json"
    if not cfg_file.exists():
        raise ConfigError(f"{path} is not a scenario directory (missing config.json)")
    with open(cfg_file) as fh:
        cfg = config_from_dict(json.load(fh))
    gt = build_scenario(cfg.scenario)
    y = load_tensor(path / "Y.t3")
    if y.shape != (cfg.scenario.n_sensors, cfg.scenario.n_freqs, cfg.scenario.n_slots):
        raise ConfigError(f"{path}/Y.t3 does not match the configured dimensions")
    return cfg, gt, y


def _scenario_from_args(args, outdir: Path):
    """Scenario dir if given, else simulate the preset/config into a subdir."""
    started = time.monotonic()
    if getattr(args, "scenario", None):
        cfg, gt, y = _load_scenario_dir(args.scenario)
        raw = (Path(args.scenario) / "config.json").read_bytes()
        return cfg, gt, y, hashlib.sha256(raw).hexdigest()
    cfg, raw = _resolve_run_config(args)
    cfg, gt, y = _materialize(cfg)
    scen_dir = outdir / "scenario"
    scen_dir.mkdir(parents=True, exist_ok=True)
    files = _write_scenario(scen_dir, cfg, gt, y)
    _write_manifest(scen_dir, "simulate", hashlib.sha256(raw).hexdigest(),
                    cfg.scenario.seed, files, started)
    return cfg, gt, y, hashlib.sha256(raw).hexdigest()


def _write_channel_json(outdir: Path, channel: ChannelModel) -> str:
    doc = {
        "grid_points": channel.grid_points.tolist(),
        "sensor_points": channel.sensor_points.tolist(),
        "eta": channel.eta,
        "d_min": channel.d_min,
    }
    with open(outdir / "channel.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return "channel.json"


def _load_channel_json(path) -> ChannelModel:
    with open(path) as fh:
        doc = json.load(fh)
    grid = np.asarray(doc["grid_points"], dtype=float)
    sensors = np.asarray(doc["sensor_points"], dtype=float)
    gamma_m = pathloss_gains(grid, sensors, doc["eta"], doc["d_min"])
    return ChannelModel(grid, sensors, doc["eta"], doc["d_min"], gamma_m,
                        np.zeros_like(gamma_m))


# ------------------------------------------------------------- decompose

def _error_trace_csv(path, errors, absolute) -> None:
    with open(path, "w") as fh:
        fh.write("slot,error,absolute\n")
        for t, (e, a) in enumerate(zip(errors, absolute), start=1):
            fh.write(f"{t},{repr(float(e))},{int(a)}\n")


def cmd_decompose(args) -> int:
    started = time.monotonic()
    outdir = _outdir(args)
    cfg, gt, y, cfg_sha = _scenario_from_args(args, outdir)
    rank = args.rank if args.rank is not None else cfg.scenario.rank
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    solver = cfg.solver
    if args.rel_tol is not None:
        solver = replace(solver, rel_tol=args.rel_tol)
    if args.max_sweeps is not None:
        solver = replace(solver, max_sweeps=args.max_sweeps)

    result = structured_als(y, gt.channel.gamma_m, rank, cfg.scenario.weights, solver)
    if args.strict and not result.converged:
        raise NumericalFailure(
            f"structured solve did not converge in {solver.max_sweeps} sweeps"
        )

    files = save_decomposition(outdir, result.factors, result.gamma_p)
    save_objective_trace(outdir / "objective_trace.csv", result.objective_trace)
    files.append("objective_trace.csv")
    tr = slice_error_trace(cp_reconstruct(result.factors), gt.x)
    _error_trace_csv(outdir / "error_trace.csv", tr.errors, tr.absolute)
    files.append("error_trace.csv")
    files.append(_write_channel_json(outdir, gt.channel))

    from .figures import render_objective_trace

    render_objective_trace(outdir / "objective_trace.png",
                           {"structured solve": result.objective_trace})
    files.append("objective_trace.png")
    _write_manifest(outdir, "decompose", cfg_sha, cfg.scenario.seed, files, started,
                    extra={"converged": result.converged, "sweeps": result.sweeps})
    return 0


# ------------------------------------------------------------- compare

METHODS = ("proposed", "cp_init", "slice_ls", "slice_lasso", "moving_avg")


def _mean_error(tr) -> float:
    mask = ~tr.absolute
    return float(np.mean(tr.errors[mask])) if mask.any() else float(np.mean(tr.errors))


def cmd_compare(args) -> int:
    started = time.monotonic()
    outdir = _outdir(args)
    cfg, gt, y, cfg_sha = _scenario_from_args(args, outdir)
    gm = gt.channel.gamma_m
    sc = cfg.scenario
    bl = cfg.baselines

    result = structured_als(y, gm, sc.rank, sc.weights, cfg.solver)
    if args.strict and not result.converged:
        raise NumericalFailure(
            f"structured solve did not converge in {cfg.solver.max_sweeps} sweeps"
        )
    estimates = {
        "proposed": cp_reconstruct(result.factors),
        "cp_init": cp_reconstruct(
            baseline_cp_init(y, gm, sc.rank, cfg.solver.init_iters, bl.cp_map_l1)
        ),
        "slice_ls": baseline_slice_ls(y, gm),
        "slice_lasso": baseline_slice_lasso(y, gm, bl.slice_l1),
        "moving_avg": baseline_moving_avg(
            y, bl.ma_window, lambda t: baseline_slice_lasso(t, gm, bl.slice_l1)
        ),
    }
    traces = {name: slice_error_trace(est, gt.x) for name, est in estimates.items()}

    files = []
    with open(outdir / "error_traces.csv", "w") as fh:
        fh.write("slot," + ",".join(METHODS) + "\n")
        for t in range(sc.n_slots):
            row = ",".join(repr(float(traces[m].errors[t])) for m in METHODS)
            fh.write(f"{t + 1},{row}\n")
    files.append("error_traces.csv")
    with open(outdir / "summary.csv", "w") as fh:
        fh.write("method,time_avg_error\n")
        for m in METHODS:
            fh.write(f"{m},{repr(_mean_error(traces[m]))}\n")
    files.append("summary.csv")

    from .figures import render_error_traces

    render_error_traces(outdir / "error_traces.png",
                        {m: traces[m].errors for m in METHODS})
    files.append("error_traces.png")
    _write_manifest(outdir, "compare", cfg_sha, sc.seed, files, started,
                    extra={"converged": result.converged, "sweeps": result.sweeps})
    return 0


# ------------------------------------------------------------- map

def cmd_map(args) -> int:
    started = time.monotonic()
    outdir = _outdir(args)
    if args.decomposition:
        dec_dir = Path(args.decomposition)
        if not (dec_dir / "channel.json").exists():
            raise ConfigError(f"{dec_dir} is not a decomposition directory "
                              "(missing channel.json)")
        channel = _load_channel_json(dec_dir / "channel.json")
        factors = FactorSet(
            load_matrix_csv(dec_dir / "A.csv"),
            load_matrix_csv(dec_dir / "B.csv"),
            load_matrix_csv(dec_dir / "C.csv"),
        )
        cfg_sha = _sha256(dec_dir / "channel.json")
        t = args.t if args.t is not None else 1
        raster = args.raster if args.raster is not None else 4
        seed = 0
    else:
        cfg, gt, y, cfg_sha = _scenario_from_args(args, outdir)
        dec = structured_als(y, gt.channel.gamma_m, cfg.scenario.rank,
                             cfg.scenario.weights, cfg.solver)
        if args.strict and not dec.converged:
            raise NumericalFailure("structured solve did not converge")
        dec_dir = outdir / "decomposition"
        dec_dir.mkdir(parents=True, exist_ok=True)
        dstart = time.monotonic()
        dfiles = save_decomposition(dec_dir, dec.factors, dec.gamma_p)
        save_objective_trace(dec_dir / "objective_trace.csv", dec.objective_trace)
        dfiles.append("objective_trace.csv")
        dfiles.append(_write_channel_json(dec_dir, gt.channel))
        _write_manifest(dec_dir, "decompose", cfg_sha, cfg.scenario.seed, dfiles, dstart,
                        extra={"converged": dec.converged, "sweeps": dec.sweeps})
        channel = gt.channel
        factors = dec.factors
        t = args.t if args.t is not None else cfg.map.time_slot
        raster = args.raster if args.raster is not None else cfg.map.raster
        seed = cfg.scenario.seed

    if raster < 1:
        raise ConfigError("raster must be >= 1")
    if not (1 <= t <= factors.c.shape[0]):
        raise ConfigError(f"time slot {t} outside 1..{factors.c.shape[0]}")

    queries = raster_queries(channel, raster)
    m = spectrum_map(factors, channel, queries, t)
    files = []
    save_map_csv(outdir / "map.csv", m)
    files.append("map.csv")
    save_aggregate_csv(outdir / "map_agg.csv", m)
    files.append("map_agg.csv")

    from .figures import render_map

    agg = aggregate_map(m)
    render_map(outdir / "map_agg.png", m.query_points[:, 0], m.query_points[:, 1],
               agg, sensors=channel.sensor_points,
               title=f"Aggregated power map, slot {t}")
    files.append("map_agg.png")
    _write_manifest(outdir, "map", cfg_sha, seed, files, started,
                    extra={"time_slot": t, "raster": raster})
    return 0


# ------------------------------------------------------------- online

def cmd_online(args) -> int:
    started = time.monotonic()
    outdir = _outdir(args)
    cfg, raw = _resolve_run_config(args)
    if cfg.online is None:
        raise ConfigError("config has no [online] section")
    cfg_sha = hashlib.sha256(raw).hexdigest()
    files = []

    if args.stream:
        slices = list(read_stream(args.stream))
        if not slices:
            raise ConfigError(f"stream {args.stream} is empty")
        cfg, gt, _ = _materialize(cfg)
        channel = gt.channel
        if slices[0].shape[0] != channel.gamma_m.shape[0]:
            raise ConfigError("stream sensor count does not match the config")
    else:
        cfg, gt, y = _materialize(cfg)
        channel = gt.channel
        slices = [y[:, :, k] for k in range(y.shape[2])]
        write_stream(outdir / "stream.t3s", slices)
        files.append("stream.t3s")

    op = cfg.online
    ocfg = OnlineConfig(
        channel=channel,
        rank=op.rank,
        weights=cfg.scenario.weights,
        capacity=op.capacity,
        sweeps_per_slot=op.sweeps_per_slot,
        rel_tol=cfg.solver.rel_tol,
        init_iters=cfg.solver.init_iters,
        inner=cfg.solver.inner,
        normalize_residual=op.normalize_residual,
    )
    threshold = args.threshold if args.threshold is not None else op.threshold
    records, used_threshold = run_online(slices, ocfg, j_threshold=threshold,
                                         warmup=op.warmup)
    save_online_trace(outdir / "online_trace.csv", records)
    files.append("online_trace.csv")

    from .figures import render_online_trace

    render_online_trace(outdir / "online_trace.png",
                        [r.slot for r in records], [r.window for r in records],
                        [r.residual for r in records], threshold=used_threshold)
    files.append("online_trace.png")
    _write_manifest(outdir, "online", cfg_sha, cfg.scenario.seed, files, started,
                    extra={"threshold": used_threshold, "slots": len(records)})
    return 0


# ------------------------------------------------------------- entry point

def _add_config_args(p, with_scenario=False, with_decomposition=False):
    src = p.add_argument_group("input")
    src.add_argument("--config", help="path to a TOML run configuration")
    src.add_argument("--preset", help="bundled configuration: sanity, fig4, fig6, fig8")
    if with_scenario:
        src.add_argument("--scenario", help="directory produced by 'simulate'")
    if with_decomposition:
        src.add_argument("--decomposition", help="directory produced by 'decompose'")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True, help="output directory")


def _add_solver_args(p):
    p.add_argument("--rel-tol", type=float, dest="rel_tol",
                   help="relative objective-change stopping tolerance")
    p.add_argument("--max-sweeps", type=int, dest="max_sweeps",
                   help="sweep budget for the structured solve")
    p.add_argument("--strict", action="store_true",
                   help="exit with status 3 when the solve does not converge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="radiocarto",
        description="Structured tensor decomposition for radio-spectrum cartography.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a sensing scenario to disk")
    _add_config_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="structured decomposition of a scenario")
    _add_config_args(p, with_scenario=True)
    p.add_argument("--rank", type=int, help="override the decomposition rank")
    _add_solver_args(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("compare", help="error traces for all five estimators")
    _add_config_args(p, with_scenario=True)
    _add_solver_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("map", help="spectrum-map CSV and figure export")
    _add_config_args(p, with_scenario=True, with_decomposition=True)
    p.add_argument("--t", type=int, help="1-based time slot (default from config)")
    p.add_argument("--raster", type=int,
                   help="query raster refinement over the grid (default 4)")
    _add_solver_args(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("online", help="adaptive-window online loop over a stream")
    _add_config_args(p)
    p.add_argument("--stream", help="slice stream file (default: synthesize from config)")
    p.add_argument("--threshold", type=float,
                   help="fixed detection threshold (default: config or auto)")
    p.set_defaults(func=cmd_online)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"config error: missing input file: {e}", file=sys.stderr)
        return 2
    except NumericalFailure as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
