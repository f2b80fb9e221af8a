"""Command-line entry point.

Usage:
    superrad run --preset desk-benchmark --out runs/desk
    superrad oracle --preset desk-benchmark --out runs/desk-exact
    superrad compare runs/desk runs/desk-exact
    superrad sweep --preset desk-benchmark
    superrad husimi runs/desk --mode 0 --mode 1

Frequencies are in units of omega_0 and times in laser cycles throughout.
Without ``--out`` results go below ``$SUPERRAD_OUTPUT_ROOT`` (default ``./runs``).
"""
from __future__ import annotations

import json
import logging
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import click

from . import __version__
from .config import PRESETS, resolve
from .exceptions import ConfigError, SimulationError

OUTPUT_ROOT_ENV = "SUPERRAD_OUTPUT_ROOT"

log = logging.getLogger("superrad")


def _output_dir(out, cfg: dict, preset, config_path, kind: str) -> Path:
    if out:
        return Path(out)
    root = Path(os.environ.get(OUTPUT_ROOT_ENV, "runs"))
    stem = preset or (Path(config_path).stem if config_path else "default")
    return root / f"{stem}-{kind}-seed{cfg['sampling']['seed']}"


def _threads(n):
    if not n:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load(preset, config_path, seed, precision) -> dict:
    overrides: dict = {}
    if seed is not None:
        overrides["sampling"] = {"seed": seed}
    if precision is not None:
        overrides["solver"] = {"precision": precision}
    return resolve(preset, config_path, overrides)


def config_options(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON config file (a previous run's meta.json also works).")(f)
    f = click.option("--preset", type=click.Choice(sorted(PRESETS)), help="Start from a named preset.")(f)
    f = click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Master seed for vacuum sampling.")(f)
    f = click.option("--precision", type=click.Choice(["single", "double"]), help="Floating-point precision.")(f)
    f = click.option("--out", type=click.Path(file_okay=False), help="Output directory.")(f)
    f = click.option("--threads", type=click.IntRange(1), help="Limit BLAS/OpenMP threads.")(f)
    return f


def _fail(exc: Exception, code: int = 2):
    click.echo(f"error: {exc}", err=True)
    sys.exit(code)


@click.group()
@click.version_option(__version__, prog_name="superrad")
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
def main(verbose: int):
    """Stochastic trajectory simulator for driven collective emission into a photonic band."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")


@main.command()
@config_options
def run(config_path, preset, seed, precision, out, threads):
    """Propagate a stochastic batch and write series.csv, meta.json and alpha dumps."""
    from .runner import run_stochastic

    try:
        cfg = _load(preset, config_path, seed, precision)
        target = _output_dir(out, cfg, preset, config_path, "run")
        with _threads(threads):
            result = run_stochastic(cfg, target)
    except (ConfigError, SimulationError, ValueError) as exc:
        _fail(exc)
    s = result.series
    click.echo(f"{target}: {len(s)} records, final <n> = {s['n_mean'][-1]:.6g} "
               f"+/- {s['n_mean_se'][-1]:.2g}, {result.wall_time:.1f}s")


@main.command()
@config_options
def oracle(config_path, preset, seed, precision, out, threads):
    """Exact joint-wavefunction reference on the same time grid."""
    from .runner import run_oracle

    try:
        cfg = _load(preset, config_path, seed, precision)
        target = _output_dir(out, cfg, preset, config_path, "oracle")
        with _threads(threads):
            result = run_oracle(cfg, target)
    except (ConfigError, SimulationError, ValueError) as exc:
        _fail(exc)
    click.echo(f"{target}: final <n> = {result.series['n_mean'][-1]:.6g}, "
               f"norm drift {result.max_norm_drift:.2g}")


@main.command()
@click.argument("stochastic_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("oracle_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--out", type=click.Path(dir_okay=False), help="Report path (default STOCHASTIC_DIR/compare.json).")
@click.option("--z-bound", type=float, help="Largest acceptable |z|.")
@click.option("--rel-bound", type=float, help="Largest relative deviation of <n> at its peak.")
def compare(stochastic_dir, oracle_dir, out, z_bound, rel_bound):
    """Score a stochastic run against a reference; exit code 1 on failure."""
    from .runner import compare_dirs

    try:
        report = compare_dirs(stochastic_dir, oracle_dir, out, z_bound, rel_bound)
    except (ValueError, OSError) as exc:
        _fail(exc)
    click.echo(f"{report['result']}: max |z| = {report['max_abs_z']:.3g}, "
               f"relative deviation at peak = {report['peak_relative_deviation']:.3g}")
    sys.exit(0 if report["result"] == "pass" else 1)


@main.command()
@config_options
def sweep(config_path, preset, seed, precision, out, threads):
    """Convergence ladders over N_m, N_p, N_batch and rtol; writes sweep.csv and sweep.json."""
    from .runner import run_sweep

    try:
        cfg = _load(preset, config_path, seed, precision)
        if not any(cfg["sweep"].values()):
            raise ConfigError("no sweep lists configured (sweep.n_modes / max_photons / n_batch / rtol)")
        target = _output_dir(out, cfg, preset, config_path, "sweep")
        with _threads(threads):
            report = run_sweep(cfg, target)
    except (ConfigError, SimulationError, ValueError) as exc:
        _fail(exc)
    click.echo((Path(target) / "sweep.csv").read_text(), nl=False)
    for axis, body in report["axes"].items():
        click.echo(f"{axis}: {'monotone' if body['monotone'] else 'NOT monotone'}")


@main.command()
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--mode", "modes", type=int, multiple=True, help="Mode index (0-based, repeatable).")
@click.option("--bins", type=click.IntRange(2), help="Bins per axis.")
@click.option("--extent", type=float, help="Half-width of the square grid in |alpha| units.")
@click.option("--smoothing", type=float, help="Gaussian smoothing width in bins.")
def husimi(run_dir, modes, bins, extent, smoothing):
    """Bin the alpha dumps of a run into per-mode Husimi grids."""
    from .runner import husimi_from_dir

    written = husimi_from_dir(run_dir, list(modes), bins, extent, smoothing)
    if not written:
        click.echo("no alpha dumps in this run (set output.dump_times in the config)", err=True)
        sys.exit(1)
    click.echo(json.dumps([str(p) for p in written], indent=1))


if __name__ == "__main__":
    main()
