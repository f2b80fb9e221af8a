"""Orchestration shared by the command line and the test-suite.

Each function takes a resolved configuration (see :mod:`superrad.config`) and
an output directory, does one job and writes its files atomically.
"""
from __future__ import annotations

import copy
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import oracle_config, sim_params
from .dynamics import propagate_batch
from .io import (SCHEMA_VERSION, alpha_filename, atomic_write, read_alpha, read_json, read_series, write_alpha,
                 write_json, write_series)
from .observables import SERIES_COLUMNS, husimi_marginal
from .oracle import compare_runs, oracle_propagate

log = logging.getLogger(__name__)


def _meta(kind: str, cfg: dict, wall: float, **extra) -> dict:
    meta = {
        "schema_version": SCHEMA_VERSION,
        "code_version": __version__,
        "kind": kind,
        "config": cfg,
        "seed": cfg["sampling"]["seed"],
        "precision": cfg["solver"]["precision"],
        "series_columns": list(SERIES_COLUMNS),
        "wall_time_s": wall,
    }
    meta.update(extra)
    return meta


def _on_grid(times, grid, tol=1e-9):
    out = []
    for t in times:
        hit = np.nonzero(np.abs(grid - t) <= tol)[0]
        if not len(hit):
            raise ValueError(f"dump time {t} is not on the record grid")
        out.append(float(grid[hit[0]]))
    return out


def run_stochastic(cfg: dict, out_dir, recorder=None):
    """Propagate the batch and write series.csv, meta.json and any alpha dumps."""
    out = Path(out_dir)
    params = sim_params(cfg)
    dump_times = _on_grid(cfg["output"]["dump_times"], params.record_times())
    result = propagate_batch(params, recorder=recorder, dump_times=dump_times,
                             linearization=cfg["solver"]["linearization"])
    write_series(out / "series.csv", result.series)
    dumps = []
    for t, alpha in sorted(result.dumps.items()):
        name = alpha_filename(t)
        write_alpha(out / name, alpha, t)
        dumps.append(name)
    failed = np.nonzero(result.failed)[0].tolist()
    stats = result.stats
    write_json(out / "meta.json", _meta(
        "stochastic", cfg, result.wall_time, dumps=dumps, failed_trajectories=failed,
        integration={"accepted_steps": stats.accepted, "rejected_steps": stats.rejected,
                     "phi_applications": stats.phi_applications},
        rho_spin_final={"real": result.rho_final.real.tolist(), "imag": result.rho_final.imag.tolist()},
    ))
    log.info("wrote %s", out)
    return result


def run_oracle(cfg: dict, out_dir):
    """Exact propagation on the same grid; standard-error columns are zero."""
    out = Path(out_dir)
    start = time.perf_counter()
    result = oracle_propagate(oracle_config(cfg), keep_states=False)
    wall = time.perf_counter() - start
    write_series(out / "series.csv", result.series)
    rho = result.rho_spin[-1]
    write_json(out / "meta.json", _meta(
        "oracle", cfg, wall, max_norm_drift=result.max_norm_drift,
        rho_spin_final={"real": rho.real.tolist(), "imag": rho.imag.tolist()},
    ))
    return result


def compare_dirs(stochastic_dir, oracle_dir, out_path=None, z_bound=None, rel_bound=None) -> dict:
    """z-score comparison of two run directories; writes compare.json."""
    meta = read_json(Path(stochastic_dir) / "meta.json")
    cfg = meta.get("config", {})
    bounds = cfg.get("compare", {})
    report = compare_runs(read_series(Path(stochastic_dir) / "series.csv"),
                          read_series(Path(oracle_dir) / "series.csv"),
                          z_bound=z_bound if z_bound is not None else bounds.get("z_bound", 3.0),
                          rel_bound=rel_bound if rel_bound is not None else bounds.get("rel_bound", 0.05),
                          numerical_floor=numerical_floor(cfg))
    payload = report.to_dict()
    payload.update({"stochastic": str(stochastic_dir), "oracle": str(oracle_dir)})
    write_json(out_path or Path(stochastic_dir) / "compare.json", payload)
    return payload


def numerical_floor(cfg: dict) -> float:
    """Integration tolerance of a run, used as the deterministic error floor in comparisons."""
    from .integrator import StepController

    solver = cfg.get("solver", {})
    rtol = solver.get("rtol")
    if rtol is None:
        rtol = StepController.for_precision(solver.get("precision", "double")).rtol
    return float(rtol)


SWEEP_AXES = ("n_modes", "max_photons", "n_batch", "rtol")


def _with_axis(cfg: dict, axis: str, value) -> dict:
    new = copy.deepcopy(cfg)
    section = {"n_modes": "system", "max_photons": "system", "n_batch": "sampling", "rtol": "solver"}[axis]
    new[section][axis] = value
    if axis == "rtol":
        # keep the absolute tolerance in the same proportion as the base configuration
        base_rtol, base_atol = cfg["solver"].get("rtol"), cfg["solver"].get("atol")
        if base_rtol and base_atol:
            new["solver"]["atol"] = base_atol * value / base_rtol
    return new


@dataclass
class LadderRow:
    axis: str
    value: float
    n_final: float
    n_final_se: float
    dispersion_final: float
    correlator_final: float


def _final(series, key):
    return float(np.asarray(series[key])[-1])


def _shrinking(values) -> bool:
    mags = np.abs(np.asarray(values, float))
    return bool(len(mags) < 2 or np.all(np.diff(mags) < 0))


def run_sweep(cfg: dict, out_dir, runner=None) -> dict:
    """One-axis-at-a-time refinement ladders around the base configuration.

    For every axis the table lists final <n>, its standard error, the final
    dispersion and correlator, and the change against the previous rung.  An
    axis converges when the magnitudes of successive changes shrink; for the
    batch-size axis the statistical error is the convergence measure, since the
    change in the mean between independent batches is itself pure noise.
    """
    out = Path(out_dir)
    runner = runner or (lambda c: propagate_batch(sim_params(c), linearization=c["solver"]["linearization"]).series)
    cache: dict = {}

    def series_for(c):
        key = repr(sorted((k, sorted(v.items()) if isinstance(v, dict) else v) for k, v in c.items()
                          if k in ("system", "band", "drive", "time", "solver", "sampling")))
        if key not in cache:
            log.info("sweep rung: %s", {a: c[s][a] for a, s in (("n_modes", "system"), ("max_photons", "system"),
                                                                 ("n_batch", "sampling"), ("rtol", "solver"))})
            cache[key] = runner(c)
        return cache[key]

    axes = {}
    lines = ["axis,value,n_final,n_final_se,dispersion_final,correlator_final,delta_n,delta_dispersion,delta_correlator"]
    for axis in SWEEP_AXES:
        values = cfg["sweep"].get(axis) or []
        if not values:
            continue
        ordered = sorted(values, reverse=(axis == "rtol"))
        rows = []
        for v in ordered:
            s = series_for(_with_axis(cfg, axis, v))
            rows.append(LadderRow(axis, v, _final(s, "n_mean"), _final(s, "n_mean_se"),
                                  _final(s, "rel_dispersion"), _final(s, "correlator")))
        deltas = [rows[i + 1].n_final - rows[i].n_final for i in range(len(rows) - 1)]
        d_disp = [rows[i + 1].dispersion_final - rows[i].dispersion_final for i in range(len(rows) - 1)]
        d_corr = [rows[i + 1].correlator_final - rows[i].correlator_final for i in range(len(rows) - 1)]
        if axis == "n_batch":
            measure = [r.n_final_se for r in rows]
            monotone = bool(np.all(np.diff(measure) < 0))
        else:
            measure = deltas
            monotone = _shrinking(deltas)
        if not monotone:
            log.warning("non-monotone convergence along %s: %s", axis, measure)
        for i, r in enumerate(rows):
            dn, dd, dc = ("", "", "") if i == 0 else (repr(deltas[i - 1]), repr(d_disp[i - 1]), repr(d_corr[i - 1]))
            lines.append(f"{axis},{r.value!r},{r.n_final!r},{r.n_final_se!r},{r.dispersion_final!r},"
                         f"{r.correlator_final!r},{dn},{dd},{dc}")
        axes[axis] = {
            "values": [r.value for r in rows],
            "n_final": [r.n_final for r in rows],
            "n_final_se": [r.n_final_se for r in rows],
            "delta_n": deltas,
            "delta_dispersion": d_disp,
            "delta_correlator": d_corr,
            "convergence_measure": "n_final_se" if axis == "n_batch" else "abs(delta_n)",
            "monotone": monotone,
        }
    atomic_write(out / "sweep.csv", "\n".join(lines) + "\n")
    report = {"schema_version": SCHEMA_VERSION, "code_version": __version__, "config": cfg, "axes": axes,
              "all_monotone": all(a["monotone"] for a in axes.values())}
    write_json(out / "sweep.json", report)
    return report


def husimi_from_dir(run_dir, modes=None, bins=None, extent=None, smoothing=None) -> list[Path]:
    """Histogram every alpha dump of a run into per-mode Husimi grids (CSV + JSON)."""
    run_dir = Path(run_dir)
    meta = read_json(run_dir / "meta.json")
    opts = meta.get("config", {}).get("output", {})
    modes = modes if modes else opts.get("husimi_modes", [0])
    bins = bins or opts.get("husimi_bins", 64)
    extent = extent if extent is not None else opts.get("husimi_extent")
    smoothing = smoothing if smoothing is not None else opts.get("husimi_smoothing", 0.0)
    written = []
    for name in meta.get("dumps", []):
        alpha, t = read_alpha(run_dir / name)
        for mode in modes:
            grid = husimi_marginal(alpha, mode, bins=bins, extent=extent, smoothing=smoothing, time=t)
            stem = f"husimi_{Path(name).stem}_m{mode}"
            body = "\n".join(",".join(repr(float(x)) for x in row) for row in grid.density) + "\n"
            written.append(atomic_write(run_dir / f"{stem}.csv", body))
            write_json(run_dir / f"{stem}.json", {
                "mode": mode, "time": t, "bins": bins, "smoothing_bins": smoothing,
                "x_edges": grid.x_edges.tolist(), "y_edges": grid.y_edges.tolist(),
                "total_mass": grid.total_mass(), "n_samples": int(alpha.shape[0]),
            })
    return written
