from types import SimpleNamespace

import numpy as np
import pytest
from scipy.integrate import dblquad

from superrad.hilbert import CollectiveSpinBasis
from superrad.observables import (ObservableSeries, SERIES_COLUMNS, correlator_I, emission_rate,
                                  estimate_rho_system, excited_fraction, husimi_marginal, jackknife,
                                  photon_moments, relative_dispersion, spin_expectations)

from .samplers import coherent_samples, fock1_samples, thermal_samples


def batch(conditional, n_atoms):
    conditional = np.atleast_2d(np.asarray(conditional, dtype=complex))
    return SimpleNamespace(conditional=conditional, n_atoms=n_atoms)


def dicke(n, m):
    v = np.zeros(n + 1, dtype=complex)
    v[m] = 1
    return v


class TestPhotonMoments:
    def test_vacuum(self):
        rng = np.random.default_rng(0)
        mom = photon_moments(coherent_samples(rng, 20_000, [0, 0, 0]))
        assert abs(mom["n_mean"]) < 3 * mom["n_mean_se"]
        assert mom["var_n"] > -10 * mom["var_n_se"]

    def test_coherent(self):
        rng = np.random.default_rng(1)
        beta = 1.3 - 0.4j
        mom = photon_moments(coherent_samples(rng, 40_000, [beta, 0]))
        nbar = abs(beta) ** 2
        assert abs(mom["n_mean"] - nbar) < 3 * mom["n_mean_se"]
        assert abs(mom["var_n"] - nbar) < 3 * mom["var_n_se"]

    def test_coherent_moments_by_quadrature(self):
        # brute-force integration of the displaced-Gaussian Husimi: E|a|^2 and E|a|^4
        beta = 0.8 + 0.5j
        Q = lambda y, x: np.exp(-abs(x + 1j * y - beta) ** 2) / np.pi
        m2 = dblquad(lambda y, x: abs(x + 1j * y) ** 2 * Q(y, x), -9, 9, -9, 9, epsabs=1e-10)[0]
        m4 = dblquad(lambda y, x: abs(x + 1j * y) ** 4 * Q(y, x), -9, 9, -9, 9, epsabs=1e-10)[0]
        nbar = abs(beta) ** 2
        assert m2 - 1 == pytest.approx(nbar, abs=1e-8)
        n2 = m4 - 2 * m2 + 1 - m2  # E[(q - 1)^2 - q] with M = 1
        assert n2 - nbar**2 == pytest.approx(nbar, abs=1e-7)

    def test_fock_one(self):
        rng = np.random.default_rng(2)
        mom = photon_moments(fock1_samples(rng, 40_000))
        assert abs(mom["n_mean"] - 1.0) < 3 * mom["n_mean_se"]
        assert abs(mom["var_n"]) < 3 * mom["var_n_se"]

    def test_thermal(self):
        rng = np.random.default_rng(3)
        nbar = 0.7
        mom = photon_moments(thermal_samples(rng, 40_000, nbar))
        # geometric distribution moments by direct summation
        k = np.arange(400)
        p = nbar**k / (1 + nbar) ** (k + 1)
        mean, second = np.sum(k * p), np.sum(k**2 * p)
        assert abs(mom["n_mean"] - mean) < 3 * mom["n_mean_se"]
        assert abs(mom["var_n"] - (second - mean**2)) < 3 * mom["var_n_se"]

    def test_variance_identity(self):
        rng = np.random.default_rng(4)
        mom = photon_moments(coherent_samples(rng, 1000, [0.5, 1j]))
        assert mom["var_n"] == pytest.approx(mom["n_second"] - mom["n_mean"] ** 2, rel=1e-12)

    def test_error_scaling(self):
        rng = np.random.default_rng(5)
        sizes = np.array([1_000, 10_000, 100_000])
        rms = []
        for B in sizes:
            errs = [photon_moments(coherent_samples(rng, B, [1.0]))["n_mean"] - 1.0 for _ in range(30)]
            rms.append(np.sqrt(np.mean(np.square(errs))))
        slope = np.polyfit(np.log(sizes), np.log(rms), 1)[0]
        assert slope == pytest.approx(-0.5, abs=0.15)


class TestDispersion:
    def test_coherent(self):
        val, se = relative_dispersion(coherent_samples(np.random.default_rng(6), 40_000, [1.5]))
        assert abs(val - 1.0) < 3 * se

    def test_fock_one_is_sub_poissonian(self):
        val, se = relative_dispersion(fock1_samples(np.random.default_rng(7), 40_000))
        assert abs(val) < 3 * se
        assert val + 3 * se < 1.0

    def test_thermal(self):
        nbar = 1.2
        val, se = relative_dispersion(thermal_samples(np.random.default_rng(8), 40_000, nbar))
        assert abs(val - (1 + nbar)) < 3 * se

    def test_masked_below_noise(self):
        val, se = relative_dispersion(coherent_samples(np.random.default_rng(9), 500, [0, 0]))
        assert np.isnan(val) and np.isnan(se)


class TestSpin:
    @pytest.mark.parametrize("n", [2, 4, 8, 40])
    def test_correlator_product_ground(self, n):
        val, _ = correlator_I(batch(np.tile(dicke(n, 0), (3, 1)), n))
        assert abs(val) <= 1e-12

    @pytest.mark.parametrize("n", [2, 4, 8, 40])
    def test_correlator_half_dicke(self, n):
        val, _ = correlator_I(batch(np.tile(dicke(n, n // 2), (3, 1)), n))
        assert abs(val - 1.0) <= 1e-12

    def test_correlator_random_state_dense(self):
        rng = np.random.default_rng(10)
        f = rng.normal(size=3) + 1j * rng.normal(size=3)
        f /= np.linalg.norm(f)
        spin = CollectiveSpinBasis(2)
        ops = [spin.matrix(k).toarray() for k in ("Sx", "Sy", "Sz")]
        exp = np.array([np.vdot(f, o @ f).real for o in ops])
        s2 = sum(np.vdot(f, o @ o @ f).real for o in ops)
        dense = (s2 - 3 * 2) / (2 * 1) - np.sum(exp**2) / 4
        val, _ = correlator_I(batch(f, 2))
        assert val == pytest.approx(dense, abs=1e-13)

    def test_correlator_uses_batch_averaged_expectations(self):
        rng = np.random.default_rng(11)
        n = 5
        f = rng.normal(size=(20, n + 1)) + 1j * rng.normal(size=(20, n + 1))
        s = spin_expectations(f, n)[:, :3].mean(axis=0)
        val, _ = correlator_I(batch(f, n))
        assert val == (n * (n + 2) - 3.0 * n) / (n * (n - 1)) - np.sum(s**2) / n**2

    def test_excited_fraction_examples(self):
        assert excited_fraction(batch(dicke(4, 0), 4))[0] == 0.0
        assert excited_fraction(batch(dicke(4, 4), 4))[0] == 1.0
        assert excited_fraction(batch(dicke(4, 2), 4))[0] == 0.5

    def test_rho_examples(self):
        rho = estimate_rho_system(batch(np.tile(dicke(3, 0), (4, 1)), 3))
        np.testing.assert_allclose(rho, np.diag([1, 0, 0, 0]), atol=1e-15)
        rho = estimate_rho_system(batch([dicke(1, 0), dicke(1, 1)], 1))
        np.testing.assert_allclose(rho, np.diag([0.5, 0.5]), atol=1e-15)

    def test_rho_properties(self):
        rng = np.random.default_rng(12)
        B = 400
        f = rng.normal(size=(B, 5)) + 1j * rng.normal(size=(B, 5))
        rho = estimate_rho_system(batch(f * 3.7, 4))
        np.testing.assert_allclose(rho, rho.conj().T, atol=1e-12)
        assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.eigvalsh(rho).min() >= -10 / np.sqrt(B)


class TestRate:
    def test_constant(self):
        t = np.linspace(0, 2, 9)
        np.testing.assert_array_equal(emission_rate(t, np.full(9, 3.0)), 0.0)

    def test_linear(self):
        t = np.linspace(0, 2, 9)
        np.testing.assert_allclose(emission_rate(t, t), 1.0, atol=1e-14)

    def test_quadratic(self):
        t = np.linspace(0, 2, 17)
        np.testing.assert_allclose(emission_rate(t, t**2)[1:-1], 2 * t[1:-1], atol=1e-12)


class TestJackknife:
    def test_mean_se_matches_classical(self):
        x = np.random.default_rng(13).normal(size=500)
        val, se = jackknife(x, lambda m: m[..., 0])
        assert val == pytest.approx(x.mean())
        assert se == pytest.approx(x.std(ddof=1) / np.sqrt(500), rel=1e-10)


class TestHusimi:
    def test_vacuum_centred(self):
        a = coherent_samples(np.random.default_rng(14), 20_000, [0])
        g = husimi_marginal(a, 0, bins=41, extent=5.0)
        assert g.total_mass() == pytest.approx(1.0, abs=1e-3)
        assert np.all(g.density >= 0)
        xs, ys = np.meshgrid(g.x_centers, g.y_centers, indexing="ij")
        mu = np.sum((xs + 1j * ys) * g.density) * g.cell_area
        assert abs(mu) < 3 * np.sqrt(1 / 20_000) + 0.02

    def test_displaced(self):
        beta = 1.5 + 1.0j
        a = coherent_samples(np.random.default_rng(15), 20_000, [0, beta])
        g = husimi_marginal(a, 1, bins=61, extent=6.0)
        xs, ys = np.meshgrid(g.x_centers, g.y_centers, indexing="ij")
        mu = np.sum((xs + 1j * ys) * g.density) * g.cell_area
        assert abs(mu - beta) < 0.05

    def test_fock_ring(self):
        a = fock1_samples(np.random.default_rng(16), 200_000)
        g = husimi_marginal(a, 0, bins=80, extent=4.0)
        xs, ys = np.meshgrid(g.x_centers, g.y_centers, indexing="ij")
        r = np.abs(xs + 1j * ys)
        edges = np.linspace(0, 3, 16)
        idx = np.digitize(r, edges)
        radial = [g.density[idx == i].mean() for i in range(1, len(edges))]
        peak = 0.5 * (edges[1:] + edges[:-1])[int(np.argmax(radial))]
        assert peak == pytest.approx(1.0, abs=0.2)
        assert radial[0] < 0.3 * max(radial)

    def test_smoothing_keeps_mass(self):
        a = coherent_samples(np.random.default_rng(17), 5_000, [0])
        g = husimi_marginal(a, 0, bins=40, extent=6.0, smoothing=1.5)
        assert g.total_mass() == pytest.approx(1.0, abs=1e-12)


def test_series_round_trip():
    arr = np.arange(3 * len(SERIES_COLUMNS), dtype=float).reshape(3, -1)
    s = ObservableSeries.from_array(arr)
    assert len(s) == 3
    np.testing.assert_array_equal(s.to_array(), arr)
    assert s.n_mean[1] == arr[1, 1]
