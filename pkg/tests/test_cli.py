import json

import numpy as np
import pytest
from click.testing import CliRunner
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from superrad import config as cfgmod
from superrad.cli import main
from superrad.dynamics import StochasticModel
from superrad.exceptions import ConfigError
from superrad.io import encode_alpha, read_alpha, read_json, read_series, write_alpha

TINY = {
    "system": {"n_atoms": 2, "n_modes": 2, "max_photons": 2},
    "band": {"epsilon": 1.0, "hopping": 0.2, "coupling": 0.1},
    "time": {"t_end": 1.0, "record_interval": 0.25},
    "sampling": {"n_batch": 32, "seed": 5},
    "output": {"dump_times": [0.5, 1.0]},
}


@pytest.fixture
def tiny(tmp_path):
    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY))
    return path


def invoke(*args):
    return CliRunner().invoke(main, [str(a) for a in args], catch_exceptions=False)


class TestConfig:
    def test_paper_full_preset(self):
        cfg = cfgmod.resolve("paper-full")
        assert (cfg["system"]["n_atoms"], cfg["system"]["n_modes"], cfg["system"]["max_photons"]) == (40, 12, 6)
        assert cfg["sampling"]["n_batch"] == 512
        assert cfg["band"] == {"epsilon": 2.0, "hopping": 0.2, "coupling": 0.2}

    def test_desk_preset(self):
        cfg = cfgmod.resolve("desk-benchmark")
        assert (cfg["system"]["n_atoms"], cfg["system"]["n_modes"], cfg["system"]["max_photons"]) == (2, 2, 4)
        assert cfg["sampling"]["n_batch"] == 4096
        assert cfgmod.oracle_config(cfg).dimension <= 20_000

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            cfgmod.validate({"system": {"n_atom": 2}})
        with pytest.raises(ConfigError):
            cfgmod.validate({"systems": {}})

    def test_units_checked(self):
        with pytest.raises(ConfigError):
            cfgmod.validate({"units": {"time": "seconds"}})
        assert cfgmod.validate({"units": {"time": "laser_cycles"}})

    def test_type_errors(self):
        with pytest.raises(ConfigError):
            cfgmod.validate({"sampling": {"n_batch": 1.5}})
        with pytest.raises(ConfigError):
            cfgmod.resolve(overrides={"solver": {"frame": "lab"}})
        with pytest.raises(ConfigError):
            cfgmod.resolve(overrides={"solver": {"linearization": "newton"}})

    def test_layering(self, tiny):
        cfg = cfgmod.resolve("desk-benchmark", tiny, {"sampling": {"seed": 9}})
        assert cfg["system"]["max_photons"] == 2
        assert cfg["sampling"]["seed"] == 9
        assert cfg["oracle"]["n_max"] == 4


class TestAlphaDump:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(7, 3)) + 1j * rng.normal(size=(7, 3))
        write_alpha(tmp_path / "a.bin", a, 2.5)
        b, t = read_alpha(tmp_path / "a.bin")
        assert t == 2.5
        assert b.dtype == np.complex128
        assert np.array_equal(a, b)

    def test_single_precision(self, tmp_path):
        a = (np.arange(6) + 1j).astype(np.complex64).reshape(3, 2)
        write_alpha(tmp_path / "a.bin", a, 0.0)
        b, _ = read_alpha(tmp_path / "a.bin")
        assert b.dtype == np.complex64 and np.array_equal(a, b)

    def test_layout(self):
        raw = encode_alpha(np.array([[1 + 2j]]), 3.0)
        assert len(raw) == 28 + 16
        assert raw[:4] == b"QAL8"
        assert np.frombuffer(raw[4:12], "<u8")[0] == 1
        assert np.frombuffer(raw[12:20], "<u8")[0] == 1
        assert np.frombuffer(raw[20:28], "<f8")[0] == 3.0
        np.testing.assert_array_equal(np.frombuffer(raw[28:], "<f8"), [1.0, 2.0])

    def test_truncated_file(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(encode_alpha(np.ones((2, 2), complex), 0.0)[:-3])
        with pytest.raises(ValueError):
            read_alpha(tmp_path / "bad.bin")

    @settings(max_examples=30, deadline=None)
    @given(arrays(np.complex128, st.tuples(st.integers(0, 5), st.integers(1, 4))), st.floats(-1e3, 1e3))
    def test_round_trip_property(self, a, t):
        import tempfile
        from pathlib import Path

        with tempfile.TemporaryDirectory() as d:
            write_alpha(Path(d) / "x.bin", a, t)
            b, t2 = read_alpha(Path(d) / "x.bin")
        assert t2 == t
        assert a.tobytes() == b.tobytes()


class TestCommands:
    def test_run_is_deterministic_and_reproducible_from_meta(self, tiny, tmp_path):
        r1 = invoke("run", "--config", tiny, "--out", tmp_path / "a")
        assert r1.exit_code == 0, r1.output
        invoke("run", "--config", tiny, "--out", tmp_path / "b")
        assert (tmp_path / "a/series.csv").read_bytes() == (tmp_path / "b/series.csv").read_bytes()
        invoke("run", "--config", tmp_path / "a/meta.json", "--out", tmp_path / "c")
        assert (tmp_path / "a/series.csv").read_bytes() == (tmp_path / "c/series.csv").read_bytes()
        for name in ("alpha_t0000.5000.bin", "alpha_t0001.0000.bin"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "c" / name).read_bytes()

    def test_meta_contents(self, tiny, tmp_path):
        invoke("run", "--config", tiny, "--out", tmp_path / "a", "--seed", 11)
        meta = read_json(tmp_path / "a/meta.json")
        assert meta["seed"] == 11 and meta["config"]["sampling"]["seed"] == 11
        assert meta["precision"] == "double"
        assert meta["schema_version"] == 1
        assert meta["config"]["units"] == {"frequency": "omega_0", "time": "laser_cycles"}
        assert meta["dumps"] == ["alpha_t0000.5000.bin", "alpha_t0001.0000.bin"]
        assert "wall_time_s" in meta and "code_version" in meta
        s = read_series(tmp_path / "a/series.csv")
        np.testing.assert_allclose(s.time, [0, 0.25, 0.5, 0.75, 1.0])
        alpha, t = read_alpha(tmp_path / "a/alpha_t0001.0000.bin")
        assert alpha.shape == (32, 2) and t == 1.0

    def test_seed_changes_output(self, tiny, tmp_path):
        invoke("run", "--config", tiny, "--out", tmp_path / "a")
        invoke("run", "--config", tiny, "--out", tmp_path / "b", "--seed", 6)
        assert (tmp_path / "a/series.csv").read_bytes() != (tmp_path / "b/series.csv").read_bytes()

    def test_default_output_root(self, tiny, tmp_path, monkeypatch):
        monkeypatch.setenv("SUPERRAD_OUTPUT_ROOT", str(tmp_path / "root"))
        assert invoke("run", "--config", tiny).exit_code == 0
        assert (tmp_path / "root/tiny-run-seed5/series.csv").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"system": {"n_atoms": 2, "spin": 1}}))
        res = CliRunner().invoke(main, ["run", "--config", str(bad), "--out", str(tmp_path / "x")])
        assert res.exit_code == 2
        assert "spin" in res.output

    def test_compare_identical_dirs(self, tiny, tmp_path):
        invoke("run", "--config", tiny, "--out", tmp_path / "a")
        res = invoke("compare", tmp_path / "a", tmp_path / "a")
        assert res.exit_code == 0
        report = read_json(tmp_path / "a/compare.json")
        assert report["max_abs_z"] == 0.0 and report["result"] == "pass"

    def test_oracle_and_husimi(self, tiny, tmp_path):
        assert invoke("oracle", "--config", tiny, "--out", tmp_path / "o").exit_code == 0
        assert read_json(tmp_path / "o/meta.json")["max_norm_drift"] < 1e-8
        invoke("run", "--config", tiny, "--out", tmp_path / "a")
        res = invoke("husimi", tmp_path / "a", "--mode", 1, "--bins", 16)
        assert res.exit_code == 0
        info = read_json(tmp_path / "a/husimi_alpha_t0001.0000_m1.json")
        assert info["total_mass"] == pytest.approx(1.0)
        grid = np.loadtxt(tmp_path / "a/husimi_alpha_t0001.0000_m1.csv", delimiter=",")
        assert grid.shape == (16, 16)

    def test_sweep_table(self, tiny, tmp_path):
        path = tmp_path / "sweep.json"
        body = dict(TINY, sweep={"n_batch": [8, 32], "max_photons": [1, 2]})
        path.write_text(json.dumps(body))
        res = invoke("sweep", "--config", path, "--out", tmp_path / "s")
        assert res.exit_code == 0
        lines = (tmp_path / "s/sweep.csv").read_text().splitlines()
        assert lines[0].startswith("axis,value,n_final")
        assert len(lines) == 5
        report = read_json(tmp_path / "s/sweep.json")
        assert set(report["axes"]) == {"n_batch", "max_photons"}

    def test_sweep_rtol_rung_scales_atol(self):
        from superrad.runner import _with_axis

        cfg = cfgmod.resolve("desk-benchmark")
        rung = _with_axis(cfg, "rtol", 1e-6)
        assert rung["solver"]["rtol"] == 1e-6
        assert rung["solver"]["atol"] == pytest.approx(1e-9)
        assert cfg["solver"]["atol"] == 1e-8

    def test_sweep_requires_lists(self, tiny, tmp_path):
        res = CliRunner().invoke(main, ["sweep", "--config", str(tiny), "--out", str(tmp_path / "s")])
        assert res.exit_code == 2

    def test_broken_coupling_sign_fails_compare(self, tmp_path, monkeypatch):
        """Mutation check: flipping the sign of the field-source term must be caught."""
        body = {
            "system": {"n_atoms": 2, "n_modes": 2, "max_photons": 4},
            "band": {"epsilon": 1.0, "hopping": 0.2, "coupling": 0.1},
            "time": {"record_interval": 0.25},
            "solver": {"rtol": 1e-4, "atol": 1e-7},
            "sampling": {"n_batch": 256},
        }
        path = tmp_path / "c.json"
        path.write_text(json.dumps(body))
        assert invoke("oracle", "--config", path, "--out", tmp_path / "o").exit_code == 0

        original = StochasticModel.__init__

        def broken(self, *a, **kw):
            original(self, *a, **kw)
            self.cconj = -self.cconj

        monkeypatch.setattr(StochasticModel, "__init__", broken)
        invoke("run", "--config", path, "--out", tmp_path / "s")
        res = CliRunner().invoke(main, ["compare", str(tmp_path / "s"), str(tmp_path / "o")])
        assert res.exit_code == 1
        assert read_json(tmp_path / "s/compare.json")["max_abs_z"] > 10
