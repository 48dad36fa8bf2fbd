"""The brute-force referees: PDE solver, histogram, and pinned moments.

The two independent oracles (Fokker-Planck solve, endpoint histogram) are
checked against each other and against exact Gaussian laws before anything
else trusts them.
"""

import math

import numpy as np
import pytest
from scipy.stats import norm

from oubridge.model import SpectralModel, bridge_gain, bridge_variance, semigroup_factor
from oubridge.oracle import (
    chi2_against_density,
    fokker_planck_1d,
    mc_histogram_density,
    scalar_bridge_moments,
)


class TestFokkerPlanck:
    def test_drift_free_matches_ou_gaussian(self):
        alpha, lam, x0, T = 1.0, 1.0, 0.3, 1.0
        mesh = fokker_planck_1d(alpha, lam, None, x0, T, n_cells=2000, n_steps=2000)
        qT = lam * (1 - math.exp(-2 * alpha * T)) / (2 * alpha)
        exact = norm.pdf(mesh.xs, x0 * math.exp(-alpha * T), math.sqrt(qT))
        assert np.max(np.abs(mesh.values - exact)) < 1e-4

    def test_pure_diffusion_heat_kernel(self):
        alpha, lam, x0, T = 0.0, 0.8, 0.2, 0.5
        mesh = fokker_planck_1d(alpha, lam, None, x0, T, n_cells=1500, n_steps=1500)
        exact = norm.pdf(mesh.xs, x0, math.sqrt(lam * T))
        assert np.max(np.abs(mesh.values - exact)) < 2e-4

    def test_mass_conservation(self):
        mesh = fokker_planck_1d(1.0, 1.0, lambda u: 0.5 * np.tanh(u), 0.3, 1.0,
                                n_cells=1200, n_steps=800)
        assert mesh.mass() == pytest.approx(1.0, abs=1e-6)

    def test_narrow_box_reported(self):
        with pytest.raises(ValueError, match="boundary mass|box"):
            fokker_planck_1d(1.0, 1.0, None, 0.0, 1.0, n_cells=400, n_steps=200,
                             width_sigmas=1.0)

    def test_nonlinear_drift_shifts_mean(self):
        mesh = fokker_planck_1d(1.0, 1.0, lambda u: 0.5 * np.tanh(u), 0.3, 1.0,
                                n_cells=1200, n_steps=800)
        mean = np.trapezoid(mesh.xs * mesh.values, mesh.xs)
        drift_free = 0.3 * math.exp(-1.0)
        # a positive bounded drift moves the mean up, by at most c sqrt(lam) (1-e^{-aT})/a
        assert drift_free + 0.02 < mean < drift_free + 0.5 * (1 - math.exp(-1.0))


class TestHistogram:
    def test_gaussian_agreement(self):
        rng = np.random.default_rng(8)
        samples = rng.normal(0.2, 0.7, size=200_000)
        hist = mc_histogram_density(samples, n_bins=50)
        stat, dof, p = chi2_against_density(hist, lambda x: norm.pdf(x, 0.2, 0.7))
        assert p > 0.05

    def test_wrong_reference_rejected(self):
        rng = np.random.default_rng(9)
        samples = rng.normal(0.2, 0.7, size=200_000)
        hist = mc_histogram_density(samples, n_bins=50)
        _, _, p = chi2_against_density(hist, lambda x: norm.pdf(x, 0.0, 0.7))
        assert p < 0.01

    def test_error_bars_shrink_like_root_n(self):
        rng = np.random.default_rng(10)
        small = mc_histogram_density(rng.normal(size=50_000), n_bins=40, support=(-4, 4))
        big = mc_histogram_density(rng.normal(size=200_000), n_bins=40, support=(-4, 4))
        mid = 20
        ratio = small.std_errors[mid] / big.std_errors[mid]
        assert ratio == pytest.approx(2.0, rel=0.25)

    def test_agrees_with_pde_oracle(self):
        # the two referees must agree with each other before refereeing others
        alpha, lam, x0, T, c = 1.0, 1.0, 0.3, 1.0, 0.5
        rng = np.random.default_rng(12)
        n, steps = 200_000, 400
        dt = T / steps
        z = np.full(n, x0)
        decay = math.exp(-alpha * dt)
        conv_sd = math.sqrt(lam * (1 - math.exp(-2 * alpha * dt)) / (2 * alpha))
        for _ in range(steps):
            z = decay * (z + math.sqrt(lam) * c * np.tanh(z) * dt) + conv_sd * rng.standard_normal(n)
        hist = mc_histogram_density(z, n_bins=50)
        mesh = fokker_planck_1d(alpha, lam, lambda u: c * np.tanh(u), x0, T,
                                n_cells=1600, n_steps=1200)
        stat, dof, p = chi2_against_density(hist, mesh)
        assert p > 0.05


class TestScalarBridgeMoments:
    def test_endpoint(self):
        mean, var = scalar_bridge_moments(1.0, 1.0, 0.3, 0.8, 1.0, 1.0)
        assert mean == pytest.approx(0.8, rel=1e-12)
        assert var == pytest.approx(0.0, abs=1e-14)

    def test_brownian_limit(self):
        lam, x, y, T, t = 0.9, 0.2, 0.7, 1.0, 0.4
        mean, var = scalar_bridge_moments(0.0, lam, x, y, T, t)
        assert mean == pytest.approx(x * (1 - t / T) + y * t / T, rel=1e-10)
        assert var == pytest.approx(lam * t * (T - t) / T, rel=1e-10)

    def test_matches_spectral_kernels(self):
        rng = np.random.default_rng(14)
        for _ in range(30):
            alpha = rng.uniform(0.0, 8.0)
            lam = rng.uniform(0.2, 4.0)
            T = rng.uniform(0.2, 2.0)
            t = rng.uniform(0.0, 1.0) * T
            x, y = rng.normal(size=2)
            m = SpectralModel(1, np.array([alpha]), np.array([lam]))
            mean, var = scalar_bridge_moments(alpha, lam, x, y, T, t)
            gain = bridge_gain(m, t, T, 0)
            want_mean = semigroup_factor(m, t, 0) * x + gain * (
                y - semigroup_factor(m, T, 0) * x)
            want_var = bridge_variance(m, t, T, 0)
            assert mean == pytest.approx(want_mean, rel=1e-10, abs=1e-12)
            assert var == pytest.approx(want_var, rel=1e-9, abs=1e-12)
