"""Closed-form Gaussian laws and density ratios of the linear (drift-free) theory.

Everything here is exact: marginals of the OU flow, the two density factors
g and k of the transition-density factorization d = h g k, the bridge
density ratio psi, and the analytic Hilbert-Schmidt norm of the linear
transition operator on L^2 of the invariant measure.

Density factors are computed in log space throughout; exponentiation is
deferred to the last step so large endpoints cannot overflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (
    SpectralModel,
    qt_kernel,
    semigroup_kernel,
)

__all__ = [
    "GaussianMarginal",
    "ou_marginal",
    "two_time_covariance",
    "invariant_variance",
    "log_g_factor",
    "g_factor",
    "log_k_factor",
    "k_factor",
    "psi_density",
    "hs_norm_linear",
    "nu_log_density",
]


@dataclass(frozen=True)
class GaussianMarginal:
    """Diagonal Gaussian law: per-mode mean and variance vectors."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        if mean.shape != variance.shape:
            raise ValueError("mean and variance must have matching shapes")
        if np.any(variance < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variance", variance)


def ou_marginal(model: SpectralModel, x, t) -> GaussianMarginal:
    """Law of the OU state at time t started from x: N(e^{-alpha t} x, Q_t)."""
    x = np.asarray(x, dtype=float)
    return GaussianMarginal(
        mean=semigroup_kernel(model.alpha, t) * x,
        variance=qt_kernel(model.alpha, model.lam, t) * np.ones_like(x),
    )


def two_time_covariance(model: SpectralModel, s, t, n=None):
    """Cov of the OU state at times s <= t per mode: e^{-alpha (t-s)} Q_s."""
    if s > t:
        raise ValueError("two-time covariance requires s <= t")
    cov = semigroup_kernel(model.alpha, t - s) * qt_kernel(model.alpha, model.lam, s)
    return cov if n is None else cov[n]


def invariant_variance(model: SpectralModel) -> np.ndarray:
    model.requires_invariant()
    return model.lam / (2.0 * model.alpha)


def log_g_factor(model: SpectralModel, T, x, y) -> float:
    """log of the Cameron-Martin ratio between the laws started at x and at 0.

    g(T, x, y) = exp{ sum_n [ x_n y_n e^{-alpha_n T} - x_n^2 e^{-2 alpha_n T} / 2 ] / Q_T(n) }.
    """
    model.requires_noise()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    qT = qt_kernel(model.alpha, model.lam, T)
    sT = semigroup_kernel(model.alpha, T)
    terms = (x * y * sT - 0.5 * x * x * sT * sT) / qT
    return float(np.sum(terms, axis=-1)) if terms.ndim == 1 else np.sum(terms, axis=-1)


def g_factor(model: SpectralModel, T, x, y) -> float:
    return np.exp(log_g_factor(model, T, x, y))


def log_k_factor(model: SpectralModel, T, y):
    """log of the density of the zero-started time-T law against the invariant law.

    Per mode, with s = e^{-alpha T}:  -log(1 - s^2)/2 - y^2 s^2 / (2 (1 - s^2) Q_inf).
    """
    qinf = invariant_variance(model)
    y = np.asarray(y, dtype=float)
    s2 = semigroup_kernel(model.alpha, T) ** 2
    one_minus = -np.expm1(-2.0 * model.alpha * np.asarray(T, dtype=float))  # 1 - s^2, stably
    terms = -0.5 * np.log(one_minus) - 0.5 * y * y * s2 / (one_minus * qinf)
    return float(np.sum(terms, axis=-1)) if terms.ndim == 1 else np.sum(terms, axis=-1)


def k_factor(model: SpectralModel, T, y):
    return np.exp(log_k_factor(model, T, y))


def psi_density(model: SpectralModel, t, T, x, z) -> float:
    """Ratio of bridge marginal densities started at x versus started at 0.

    ``z`` is the deviation of the evaluation point from the mean of the
    zero-started bridge marginal (the endpoint contribution cancels in the
    ratio, which is why no y appears):

        psi = exp{ -|Q_t^{-1/2} S_t x|^2 / 2 + |Q_T^{-1/2} S_T x|^2 / 2
                   + <Q_t^{-1/2} z, Q_t^{-1/2} S_t x> }.
    """
    model.requires_noise()
    t = float(t)
    T = float(T)
    if not 0.0 < t < T:
        raise ValueError("psi is defined for interior times 0 < t < T only")
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    qt = qt_kernel(model.alpha, model.lam, t)
    qT = qt_kernel(model.alpha, model.lam, T)
    st_x = semigroup_kernel(model.alpha, t) * x
    sT_x = semigroup_kernel(model.alpha, T) * x
    log_psi = np.sum(-0.5 * st_x * st_x / qt + 0.5 * sT_x * sT_x / qT + z * st_x / qt, axis=-1)
    return np.exp(log_psi)


def hs_norm_linear(model: SpectralModel, T) -> float:
    """Hilbert-Schmidt norm of the drift-free transition operator on L^2(nu).

    Per mode the operator has singular values e^{-alpha T k}, k >= 0, so the
    squared norm is prod_n 1/(1 - e^{-2 alpha_n T}).
    """
    model.requires_invariant()
    one_minus = -np.expm1(-2.0 * model.alpha * float(T))
    return float(np.exp(-0.5 * np.sum(np.log(one_minus))))


def nu_log_density(model: SpectralModel, y):
    """Lebesgue log-density of the invariant Gaussian law at y (per-mode product)."""
    qinf = invariant_variance(model)
    y = np.asarray(y, dtype=float)
    terms = -0.5 * np.log(2.0 * np.pi * qinf) - 0.5 * y * y / qinf
    return np.sum(terms, axis=-1)
