"""Run configuration: presets, validation and conversion to parameter objects.

A configuration is a nested JSON document.  Frequencies are in units of the
atomic transition frequency omega_0 and times in laser cycles; the ``units``
block states this explicitly and is checked on load.  Unknown keys are errors.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

from .bath import BandParams, DriveWaveform
from .dynamics import SimParams
from .exceptions import ConfigError
from .oracle import OracleConfig

UNITS = {"frequency": "omega_0", "time": "laser_cycles"}
LINEARIZATIONS = ("exact", "semilinear")

DEFAULTS: dict = {
    "units": dict(UNITS),
    "system": {"n_atoms": 2, "n_modes": 2, "max_photons": 4},
    "band": {"epsilon": 2.0, "hopping": 0.2, "coupling": 0.2},
    "drive": {"carrier": 1.0, "amplitude": 0.25, "envelope": "sin2", "duration": 8.0,
              "start": 0.0, "phase": 0.0},
    "time": {"t_start": 0.0, "t_end": 8.0, "record_interval": 1.0 / 64},
    "solver": {"rtol": None, "atol": None, "initial_step": 0.05, "precision": "double",
               "frame": "bargmann", "linearization": "exact"},
    "sampling": {"n_batch": 512, "seed": 0, "failure_policy": "abort"},
    "oracle": {"n_max": None, "rtol": 1e-10, "atol": 1e-12, "dimension_cap": 20_000},
    "output": {"dump_times": [], "husimi_modes": [0], "husimi_bins": 64, "husimi_extent": None,
               "husimi_smoothing": 0.0},
    "compare": {"z_bound": 3.0, "rel_bound": 0.05},
    "sweep": {"n_modes": [], "max_photons": [], "n_batch": [], "rtol": []},
}

_TYPES = {
    "system": {"n_atoms": int, "n_modes": int, "max_photons": int},
    "band": {"epsilon": float, "hopping": float, "coupling": float},
    "drive": {"carrier": float, "amplitude": float, "envelope": str, "duration": float, "start": float,
              "phase": float},
    "time": {"t_start": float, "t_end": float, "record_interval": float},
    "solver": {"rtol": (float, None), "atol": (float, None), "initial_step": float, "precision": str,
               "frame": str, "linearization": str},
    "sampling": {"n_batch": int, "seed": int, "failure_policy": str},
    "oracle": {"n_max": (int, None), "rtol": float, "atol": float, "dimension_cap": int},
    "output": {"dump_times": [float], "husimi_modes": [int], "husimi_bins": int,
               "husimi_extent": (float, None), "husimi_smoothing": float},
    "compare": {"z_bound": float, "rel_bound": float},
    "sweep": {"n_modes": [int], "max_photons": [int], "n_batch": [int], "rtol": [float]},
}

PRESETS: dict = {
    # full-scale model; several accelerator-hours in the original work, far more on a CPU
    "paper-full": {
        "system": {"n_atoms": 40, "n_modes": 12, "max_photons": 6},
        "band": {"epsilon": 2.0, "hopping": 0.2, "coupling": 0.2},
        "sampling": {"n_batch": 512},
    },
    # small enough for the exact oracle; band centred on the atoms so emission is strong
    "desk-benchmark": {
        "system": {"n_atoms": 2, "n_modes": 2, "max_photons": 4},
        "band": {"epsilon": 1.0, "hopping": 0.2, "coupling": 0.1},
        # rtol 1e-5 keeps the 4096-trajectory run under ten minutes on one core; the
        # rtol ladder shows final <n> moving by far less than its standard error below it
        "solver": {"rtol": 1e-5, "atol": 1e-8},
        "sampling": {"n_batch": 4096},
        "oracle": {"n_max": 4},
        "sweep": {"n_modes": [2, 3, 4], "max_photons": [2, 3, 4], "n_batch": [1024, 2048, 4096],
                  "rtol": [1e-4, 1e-5, 1e-6]},
    },
    # reduced-scale qualitative run with the band above the atoms; single precision
    # (rtol 1e-4, atol 1e-6) is about three times faster and ample for a qualitative run
    "reduced": {
        "system": {"n_atoms": 16, "n_modes": 8, "max_photons": 4},
        "band": {"epsilon": 2.0, "hopping": 0.2, "coupling": 0.2},
        "solver": {"precision": "single"},
        "sampling": {"n_batch": 256},
        "time": {"t_end": 12.0, "record_interval": 1.0 / 16},
    },
}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _check_value(section: str, key: str, value, spec):
    where = f"{section}.{key}"
    if isinstance(spec, list):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be a list")
        return [_check_value(section, key, v, spec[0]) for v in value]
    if isinstance(spec, tuple):
        if value is None:
            return None
        spec = spec[0]
    if spec is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer, got {value!r}")
        return value
    if spec is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number, got {value!r}")
        return float(value)
    if not isinstance(value, spec):
        raise ConfigError(f"{where} must be {spec.__name__}, got {value!r}")
    return value


def validate(raw: dict) -> dict:
    """Check a (partial) configuration; returns a copy with numbers normalised."""
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown configuration sections: {sorted(unknown)}")
    out = {}
    for section, body in raw.items():
        if not isinstance(body, dict):
            raise ConfigError(f"section {section!r} must be an object")
        if section == "units":
            for key, value in body.items():
                if key not in UNITS:
                    raise ConfigError(f"unknown key units.{key}")
                if value != UNITS[key]:
                    raise ConfigError(f"units.{key} must be {UNITS[key]!r} (got {value!r})")
            out[section] = dict(body)
            continue
        bad = set(body) - set(_TYPES[section])
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
        out[section] = {k: _check_value(section, k, v, _TYPES[section][k]) for k, v in body.items()}
    return out


def load_file(path) -> dict:
    """Read a config file; a run's ``meta.json`` is accepted and its resolved config used."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    if isinstance(data, dict) and "schema_version" in data and "config" in data:
        data = data["config"]
    return validate(data)


def resolve(preset: str | None = None, config_path=None, overrides: dict | None = None) -> dict:
    """Defaults <- preset <- config file <- command-line overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = deep_merge(cfg, PRESETS[preset])
    if config_path is not None:
        cfg = deep_merge(cfg, load_file(config_path))
    if overrides:
        cfg = deep_merge(cfg, validate(overrides))
    validate(cfg)
    if cfg["solver"]["linearization"] not in LINEARIZATIONS:
        raise ConfigError(f"solver.linearization must be one of {LINEARIZATIONS}")
    # building the parameter objects runs their own consistency checks
    sim_params(cfg)
    return cfg


def sim_params(cfg: dict) -> SimParams:
    s, b, d, t, sol, smp = (cfg[k] for k in ("system", "band", "drive", "time", "solver", "sampling"))
    try:
        return SimParams(
            n_atoms=s["n_atoms"], n_modes=s["n_modes"], max_photons=s["max_photons"],
            n_batch=smp["n_batch"], band=BandParams(**b), drive=DriveWaveform(**d),
            t_start=t["t_start"], t_end=t["t_end"], record_interval=t["record_interval"],
            rtol=sol["rtol"], atol=sol["atol"], initial_step=sol["initial_step"], seed=smp["seed"],
            precision=sol["precision"], frame=sol["frame"], failure_policy=smp["failure_policy"],
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def oracle_config(cfg: dict) -> OracleConfig:
    o = cfg["oracle"]
    params = sim_params(cfg)
    return OracleConfig.from_sim(params, n_max=o["n_max"], rtol=o["rtol"], atol=o["atol"],
                                 dimension_cap=o["dimension_cap"])
