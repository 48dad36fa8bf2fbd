"""Operator kernels: frozen oracle values, identities, and property tests.

Derived expected values were computed with an independent quadrature oracle
(adaptive integration of the covariance integrand lam * exp(-2 alpha s));
the same oracle runs inline in the cross-check tests.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from oubridge.model import (
    SpectralModel,
    TimeGrid,
    analyze,
    b_operators,
    bridge_gain,
    bridge_variance,
    contraction_vt,
    covariance_qt,
    feedback_fs,
    gain_kernel,
    qhat_kernel,
    qt_kernel,
    regularity_ct,
    sde_feedback_kernel,
    semigroup_factor,
    sine_basis_grid,
    stationary_contraction,
    stationary_variance,
    synthesize,
    vt_kernel,
)

rates = st.floats(min_value=0.0, max_value=50.0)
intensities = st.floats(min_value=1e-3, max_value=20.0)
fractions = st.floats(min_value=0.0, max_value=1.0)
horizons = st.floats(min_value=1e-3, max_value=10.0)


def quad_qt(alpha, lam, t):
    """Independent route to Q_t: adaptive quadrature of the integrand."""
    if t == 0.0:
        return 0.0
    val, _ = quad(lambda s: lam * math.exp(-2.0 * alpha * s), 0.0, t,
                  epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def single_mode(alpha, lam):
    return SpectralModel(n_modes=1, alpha=np.array([alpha]), lam=np.array([lam]))


class TestSemigroup:
    def test_identity_at_zero(self):
        assert semigroup_factor(single_mode(1.0, 1.0), 0.0, 0) == 1.0

    def test_zero_decay(self):
        assert semigroup_factor(single_mode(0.0, 1.0), 5.0, 0) == 1.0

    def test_unit_decay(self):
        got = semigroup_factor(single_mode(1.0, 1.0), 1.0, 0)
        assert got == pytest.approx(0.36787944117144233, rel=1e-15)

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            semigroup_factor(single_mode(1.0, 1.0), -0.1)


class TestCovarianceQt:
    def test_closed_form(self):
        got = covariance_qt(single_mode(1.0, 2.0), 1.0, 0)
        assert got == pytest.approx(0.8646647167633872, rel=1e-14)

    def test_zero_rate_limit(self):
        assert covariance_qt(single_mode(0.0, 3.0), 2.0, 0) == pytest.approx(6.0, rel=1e-15)

    def test_empty_integral(self):
        m = SpectralModel(n_modes=2, alpha=np.array([0.0, 3.0]), lam=np.array([1.0, 2.0]))
        assert np.all(covariance_qt(m, 0.0) == 0.0)

    @given(alpha=rates, lam=intensities, t=st.floats(min_value=0.0, max_value=5.0))
    @settings(max_examples=80, deadline=None)
    def test_matches_quadrature_oracle(self, alpha, lam, t):
        got = float(qt_kernel(alpha, lam, t))
        want = quad_qt(alpha, lam, t)
        assert got == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_series_branch_is_continuous(self):
        # straddle the alpha*t switch and confirm both branches agree
        t = 1.0
        for alpha in (0.5e-8, 0.99e-8, 1.01e-8, 2e-8):
            got = float(qt_kernel(alpha, 1.0, t))
            want = quad_qt(alpha, 1.0, t)
            assert got == pytest.approx(want, rel=1e-13)


class TestStationaryVariance:
    def test_values(self):
        assert stationary_variance(single_mode(1.0, 2.0), 0) == pytest.approx(1.0, rel=1e-12)
        assert stationary_variance(single_mode(2.0, 2.0), 0) == pytest.approx(0.5, rel=1e-12)

    def test_zero_rate_rejected(self):
        with pytest.raises(ValueError, match="invariant"):
            stationary_variance(single_mode(0.0, 1.0))

    def test_is_long_time_limit(self):
        m = single_mode(0.7, 1.3)
        assert covariance_qt(m, 80.0, 0) == pytest.approx(stationary_variance(m, 0), rel=1e-12)


class TestContraction:
    def test_endpoint_values(self):
        m = single_mode(1.0, 1.0)
        assert contraction_vt(m, 1.0, 1.0, 0) == 1.0
        assert contraction_vt(m, 0.0, 1.0, 0) == 0.0

    def test_interior_value(self):
        got = contraction_vt(single_mode(1.0, 1.0), 0.5, 1.0, 0)
        assert got == pytest.approx(0.5185956241330958, rel=1e-13)

    def test_zero_horizon_rejected(self):
        with pytest.raises(ValueError):
            contraction_vt(single_mode(1.0, 1.0), 0.0, 0.0)

    @given(alpha=rates, frac=fractions, T=horizons)
    @settings(max_examples=120, deadline=None)
    def test_range(self, alpha, frac, T):
        v = float(vt_kernel(alpha, frac * T, T))
        assert 0.0 <= v <= 1.0
        if 0.0 < frac < 1.0:
            assert v < 1.0

    def test_monotone_to_one(self):
        ts = np.linspace(0.0, 0.3, 400)
        v = vt_kernel(SpectralModel.heat(6).alpha[None, :], ts[:, None], 0.3)
        assert np.all(np.diff(v, axis=0) > 0)
        np.testing.assert_allclose(v[-1], 1.0, rtol=0, atol=0)


class TestBridgeGain:
    def test_endpoints(self):
        m = single_mode(2.3, 1.0)
        assert bridge_gain(m, 1.0, 1.0, 0) == 1.0
        assert bridge_gain(m, 0.0, 1.0, 0) == 0.0

    def test_interior_value(self):
        got = bridge_gain(single_mode(1.0, 1.0), 0.5, 1.0, 0)
        assert got == pytest.approx(0.44340944198503707, rel=1e-13)

    @given(alpha=rates, lam=intensities, frac=fractions, T=horizons)
    @settings(max_examples=80, deadline=None)
    def test_oracle_from_conditioning(self, alpha, lam, frac, T):
        # gain = Cov(Z_t, Z_T)/Var(Z_T) = e^{-alpha(T-t)} Q_t / Q_T with quad Q
        t = frac * T
        qt = quad_qt(alpha, lam, t)
        qT = quad_qt(alpha, lam, T)
        want = math.exp(-alpha * (T - t)) * qt / qT
        assert float(gain_kernel(alpha, t, T)) == pytest.approx(want, rel=1e-9)


class TestBridgeVariance:
    def test_vanishes_at_endpoints(self):
        m = single_mode(1.0, 1.0)
        assert bridge_variance(m, 0.0, 1.0, 0) == 0.0
        assert bridge_variance(m, 1.0, 1.0, 0) == 0.0

    def test_brownian_limit(self):
        got = bridge_variance(single_mode(0.0, 1.0), 0.5, 1.0, 0)
        assert got == pytest.approx(0.25, rel=1e-14)

    @given(alpha=rates, lam=intensities, frac=fractions, T=horizons)
    @settings(max_examples=120, deadline=None)
    def test_factorization_identity(self, alpha, lam, frac, T):
        # Q_hat = Q_t (1 - V_t^2), evaluated two ways.  The 1 - V^2 route
        # cancels catastrophically as t -> T, so its own rounding floor
        # eps * V^2/(1 - V^2) enters the comparison tolerance.
        t = frac * T
        direct = float(qhat_kernel(alpha, lam, t, T))
        v2 = float(vt_kernel(alpha, t, T)) ** 2
        via_vt = float(qt_kernel(alpha, lam, t)) * (1.0 - v2)
        if v2 == 1.0:
            assert direct == via_vt == 0.0
        else:
            cancellation_floor = 4e-16 * v2 / (1.0 - v2)
            assert direct == pytest.approx(via_vt, rel=1e-12 + cancellation_floor,
                                           abs=1e-300)


class TestCovarianceDecomposition:
    @given(alpha=rates, lam=intensities, frac=fractions, T=horizons)
    @settings(max_examples=150, deadline=None)
    def test_qtd_identity(self, alpha, lam, frac, T):
        # Q_T = Q_t + e^{-2 alpha t} Q_{T-t}
        t = frac * T
        lhs = float(qt_kernel(alpha, lam, T))
        rhs = float(qt_kernel(alpha, lam, t)) + math.exp(-2 * alpha * t) * float(
            qt_kernel(alpha, lam, T - t))
        assert rhs == pytest.approx(lhs, rel=1e-12)


class TestFeedback:
    def test_brownian_start(self):
        assert feedback_fs(single_mode(0.0, 1.0), 0.0, 1.0, 0) == pytest.approx(1.0, rel=1e-14)

    def test_interior_value(self):
        # oracle: e^{-1} / sqrt(Q_1), Q by quadrature
        got = feedback_fs(single_mode(1.0, 1.0), 1.0, 2.0, 0)
        assert got == pytest.approx(0.559495563431321, rel=1e-13)

    def test_divergence_at_pinning_time(self):
        m = single_mode(1.0, 1.0)
        ss = np.array([0.9, 0.99, 0.999, 0.9999])
        vals = feedback_fs(m, ss[:, None], 1.0).ravel()
        assert np.all(np.diff(vals) > 0)
        # (T-s)^{-1/2} rate: F * sqrt(T-s) settles to a constant
        scaled = vals * np.sqrt(1.0 - ss)
        assert scaled[-1] == pytest.approx(scaled[-2], rel=5e-3)

    def test_singular_at_T_rejected(self):
        with pytest.raises(ValueError):
            feedback_fs(single_mode(1.0, 1.0), 1.0, 1.0)

    def test_nonincreasing_in_elapsed_time(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            alpha = rng.uniform(0.0, 20.0)
            lam = rng.uniform(0.1, 5.0)
            ts = np.linspace(1e-4, 3.0, 1000)
            # F as a function of elapsed time t is feedback at s=0 with horizon t
            vals = np.array([feedback_fs(single_mode(alpha, lam), 0.0, t, 0) for t in ts[:50]])
            assert np.all(np.diff(vals) <= 1e-12)


class TestBOperators:
    def test_b2_over_b3_is_semigroup(self):
        m = SpectralModel.heat(4)
        for s in (0.0, 0.1, 0.25):
            _, b2, b3 = b_operators(m, s, 0.3)
            np.testing.assert_allclose(b2 / b3, semigroup_factor(m, 0.3), rtol=1e-13)

    def test_b3_brownian_value(self):
        _, _, b3 = b_operators(single_mode(0.0, 1.0), 0.0, 1.0)
        assert b3[0] == pytest.approx(1.0, rel=1e-14)

    def test_b2_square_integrates_to_isometry(self):
        # oracle: adaptive quadrature vs the closed form e^{-2 alpha T} / Q_T
        for alpha, lam, T in [(1.0, 1.0, 1.0), (3.0, 0.5, 0.7), (math.pi**2, 1.0, 0.3)]:
            m = single_mode(alpha, lam)
            val, _ = quad(lambda s: b_operators(m, s, T)[1][0] ** 2, 0.0, T,
                          epsabs=1e-14, epsrel=1e-10, limit=200)
            want = math.exp(-2 * alpha * T) / quad_qt(alpha, lam, T)
            assert val == pytest.approx(want, rel=1e-6)

    def test_b1_composition(self):
        # B1 = f * e^{-alpha (T-s)} where f is the Wiener-feedback factor
        m = single_mode(2.0, 3.0)
        b1, _, _ = b_operators(m, 0.4, 1.0)
        f = sde_feedback_kernel(2.0, 0.4, 1.0) / math.sqrt(3.0)
        assert b1[0] == pytest.approx(float(f) * math.exp(-2.0 * 0.6), rel=1e-13)

    def test_b3_operator_norm_diverges_like_inverse_gap(self):
        # sup over modes of B3(s) grows like 1/(T-s) while the maximizing
        # rate stays inside the truncated spectrum
        from oubridge.model import b3_kernel
        m = SpectralModel.heat(64)
        T = 0.3
        gaps = np.geomspace(1.2 / m.alpha[-1], 0.8 / m.alpha[0], 40)
        opnorm = np.array([np.max(b3_kernel(m.alpha, m.lam, T - u, T)) for u in gaps])
        scaled = opnorm * gaps
        assert opnorm[0] / opnorm[-1] > 100.0
        assert scaled.max() / scaled.min() < 2.0


class TestStationaryContraction:
    def test_identity_at_zero(self):
        assert stationary_contraction(single_mode(1.0, 1.0), 0.0, 0) == 1.0

    def test_scalar_diagonal(self):
        got = stationary_contraction(single_mode(1.0, 1.0), 1.0, 0)
        assert got == pytest.approx(math.exp(-1.0), rel=1e-15)

    def test_heat_sup(self):
        m = SpectralModel.heat(8)
        got = np.max(stationary_contraction(m, 0.1))
        assert got == pytest.approx(0.37270783885343794, rel=1e-13)

    def test_zero_rate_rejected(self):
        with pytest.raises(ValueError):
            stationary_contraction(single_mode(0.0, 1.0), 1.0)


class TestRegularityCt:
    def test_long_horizon_vanishes(self):
        assert regularity_ct(single_mode(1.0, 2.0), 50.0, 0) == pytest.approx(0.0, abs=1e-40)

    def test_value(self):
        got = regularity_ct(single_mode(1.0, 2.0), 1.0, 0)
        assert got == pytest.approx(0.15651764274966568, rel=1e-13)

    def test_consistent_with_gaussian_ratio(self):
        # k(T, y) = prod (1-s^2)^{-1/2} exp(-C(T) y^2 / 2): check the quadratic
        # coefficient against a direct ratio of normal densities
        from scipy.stats import norm
        m = single_mode(1.3, 0.8)
        T, y = 0.9, 0.37
        qT = covariance_qt(m, T, 0)
        qinf = stationary_variance(m, 0)
        direct = norm.pdf(y, 0.0, math.sqrt(qT)) / norm.pdf(y, 0.0, math.sqrt(qinf))
        s2 = math.exp(-2 * 1.3 * T)
        via_ct = (1 - s2) ** -0.5 * math.exp(-0.5 * regularity_ct(m, T, 0) * y**2)
        assert via_ct == pytest.approx(direct, rel=1e-12)


class TestPhysicalBasis:
    def test_single_mode_value(self):
        coeffs = np.array([1.0])
        assert synthesize(coeffs, np.array([0.5]))[0] == pytest.approx(math.sqrt(2.0), rel=1e-15)

    def test_zero_everywhere(self):
        xi = sine_basis_grid(64)
        np.testing.assert_array_equal(synthesize(np.zeros(8), xi), np.zeros(64))

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        coeffs = rng.standard_normal(64)
        xi = sine_basis_grid(512)
        back = analyze(synthesize(coeffs, xi), xi, 64)
        assert np.max(np.abs(back - coeffs)) <= 1e-10

    def test_abstract_basis_has_no_physical_form(self):
        from oubridge.model import model_synthesize
        m = single_mode(1.0, 1.0)
        with pytest.raises(ValueError, match="physical"):
            model_synthesize(m, np.zeros(1), sine_basis_grid(8))


class TestSpectralModelValidation:
    def test_dirichlet_forces_heat_rates(self):
        with pytest.raises(ValueError, match="dirichlet-sine"):
            SpectralModel(n_modes=2, alpha=np.array([1.0, 2.0]), lam=np.array([1.0, 1.0]),
                          basis="dirichlet-sine")

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError):
            SpectralModel(n_modes=1, alpha=np.array([1.0]), lam=np.array([-1.0]))

    def test_from_dict_heat(self):
        m = SpectralModel.from_dict({"n_modes": 3, "spectrum": "heat", "lambda": 0.5})
        assert m.basis == "dirichlet-sine"
        np.testing.assert_allclose(m.alpha, (np.arange(1, 4) * math.pi) ** 2)
        np.testing.assert_allclose(m.lam, 0.5)

    def test_from_dict_explicit(self):
        m = SpectralModel.from_dict({"n_modes": 2, "spectrum": {"alpha": [0.0, 1.0]},
                                     "lambda": [1.0, 2.0]})
        assert m.basis == "abstract"
        np.testing.assert_allclose(m.lam, [1.0, 2.0])


class TestTimeGrid:
    def test_uniform(self):
        g = TimeGrid.uniform(1.0, 4)
        np.testing.assert_allclose(g.nodes, [0.0, 0.25, 0.5, 0.75, 1.0])
        assert g.epsilon_cutoff == 0.0

    def test_refined_reaches_cutoff(self):
        g = TimeGrid.refined(0.3, dt_max=1e-2, cluster=0.1, epsilon=1e-4)
        assert g.nodes[-1] == pytest.approx(0.3 - 1e-4, rel=0, abs=1e-15)
        assert np.all(np.diff(g.nodes) > 0)
        assert np.max(g.dts) <= 1e-2 + 1e-12
        # clustering: late steps shrink roughly like the remaining gap
        tail = g.dts[-5:] / (0.3 - g.nodes[:-1][-5:])
        assert np.all(tail <= 0.1 + 1e-9)

    def test_monotonicity_enforced(self):
        with pytest.raises(ValueError):
            TimeGrid(horizon=1.0, nodes=np.array([0.0, 0.5, 0.5, 1.0]))

    def test_must_start_at_zero(self):
        with pytest.raises(ValueError):
            TimeGrid(horizon=1.0, nodes=np.array([0.1, 0.5, 1.0]))
