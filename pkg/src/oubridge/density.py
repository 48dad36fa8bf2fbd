"""Girsanov weights along bridge paths and Monte Carlo transition densities.

The transition density of the semilinear equation against the invariant
Gaussian measure factorizes as d(T, x, y) = h(T, x, y) g(T, x, y) k(T, y):
g and k are the exact Gaussian ratios from :mod:`oubridge.laws`, and h is the
conditional Girsanov expectation estimated here over an ensemble of pinned
paths.

The log-weight of one bridge path is

    rho = sum_k <G(z_k), dW_k> - (1/2) sum_k |G(z_k)|^2 dt_k,

with dW_k the original Wiener increments recovered from the bridge's own
driving noise (see :func:`oubridge.sampling.reconstruct_wiener_increments`).
An algebraically identical form keeps the raw d zeta increments and instead
subtracts the drift pairing

    sum_k <G(z_k), B1(t_k) zhat_k + B2(t_k) x - B3(t_k) y> dt_k

against the centered bridge zhat; the reconstruction drift and the B-pairing
are pointwise negatives of each other, so the two routes agree to rounding
on the same grid.  Both are exposed (`girsanov_log_weight`,
`girsanov_log_weight_parts`) and the equality is under test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import NonlinearityConfig, drift_G
from .laws import log_g_factor, log_k_factor
from .model import (
    SpectralModel,
    TimeGrid,
    b1_kernel,
    b2_kernel,
    b3_kernel,
    qt_kernel,
    semigroup_kernel,
)
from .rng import RngStream, map_blocks
from .sampling import (
    PathEnsemble,
    _endpoint_rows,
    _sde_block,
    bridge_sde_tables,
    center_bridge,
    reconstruct_wiener_increments,
)

__all__ = [
    "DensityEstimate",
    "girsanov_log_weight",
    "girsanov_log_weight_parts",
    "estimate_h",
    "estimate_hq",
    "estimate_density",
    "estimate_pq_norm",
    "default_density_grid",
    "b3_path_integral",
]

# Effective sample sizes below this trip the degenerate-weights flag.
MIN_EFFECTIVE_SAMPLES = 10.0


@dataclass
class DensityEstimate:
    """Monte Carlo estimate with its standard error and weight diagnostics."""

    value: float
    std_error: float
    n_samples: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0 or self.std_error < 0:
            raise ValueError("estimates and standard errors are nonnegative")

    def as_dict(self) -> dict:
        return {
            "value": self.value,
            "std_error": self.std_error,
            "n_samples": self.n_samples,
            "diagnostics": self.diagnostics,
        }


def default_density_grid(T: float) -> TimeGrid:
    """Refined grid used by the weight estimators when none is supplied."""
    return TimeGrid.refined(T, dt_max=T / 500.0, cluster=0.02, epsilon=1e-4 * T)


# ---------------------------------------------------------------------------
# Path-level log-weights
# ---------------------------------------------------------------------------

def girsanov_log_weight(model: SpectralModel, config: NonlinearityConfig,
                        bridge: PathEnsemble, x, y) -> np.ndarray:
    """Log Girsanov weight of every path in a stored bridge-SDE ensemble."""
    if bridge.kind != "bridge-sde" or bridge.noise is None:
        raise ValueError("girsanov weights need a bridge-sde ensemble with stored increments")
    x_row = np.asarray(x, dtype=float)
    y_rows = _endpoint_rows(y, model.n_modes, bridge.n_paths)
    if not (np.array_equal(bridge.states[:, 0, :],
                           np.broadcast_to(x_row, y_rows.shape))
            and np.array_equal(bridge.states[:, -1, :], y_rows)):
        raise ValueError("ensemble endpoints do not match the given (x, y)")
    d_wiener = reconstruct_wiener_increments(model, bridge, y)
    M = d_wiener.shape[1]
    dts = np.diff(bridge.times)[:M]
    z_left = bridge.states[:, :M, :]
    G = drift_G(config, model, z_left)
    return np.einsum("pkm,pkm->p", G, d_wiener) - 0.5 * np.einsum(
        "pkm,pkm,k->p", G, G, dts
    )


def girsanov_log_weight_parts(model: SpectralModel, config: NonlinearityConfig,
                              bridge: PathEnsemble, x, y) -> dict:
    """Both routes to the log-weight, for consistency checks.

    Returns rho_wiener (reconstructed-increment form), rho_zeta (raw d zeta
    form) and drift_pairing; rho_wiener == rho_zeta - drift_pairing up to
    rounding.
    """
    rho_wiener = girsanov_log_weight(model, config, bridge, x, y)
    M = bridge.noise.shape[1]
    dts = np.diff(bridge.times)[:M]
    t_left = bridge.times[:M]
    T = bridge.times[-1]
    z_left = bridge.states[:, :M, :]
    G = drift_G(config, model, z_left)
    rho_zeta = np.einsum("pkm,pkm->p", G, bridge.noise) - 0.5 * np.einsum(
        "pkm,pkm,k->p", G, G, dts
    )
    centered = center_bridge(model, bridge, x, y)[:, :M, :]
    b1 = b1_kernel(model.alpha[None, :], model.lam[None, :], t_left[:, None], T)
    b2 = b2_kernel(model.alpha[None, :], model.lam[None, :], t_left[:, None], T)
    b3 = b3_kernel(model.alpha[None, :], model.lam[None, :], t_left[:, None], T)
    x_row = np.asarray(x, dtype=float)
    y_rows = _endpoint_rows(y, model.n_modes, bridge.n_paths)
    pairing = b1[None, :, :] * centered + b2[None, :, :] * x_row - b3[None, :, :] * y_rows[:, None, :]
    drift_pairing = np.einsum("pkm,pkm,k->p", G, pairing, dts)
    return {
        "rho_wiener": rho_wiener,
        "rho_zeta": rho_zeta,
        "drift_pairing": drift_pairing,
    }


def _stream_log_weights(model: SpectralModel, config: NonlinearityConfig, x, y_rows,
                        tables, gen) -> np.ndarray:
    """Log-weights of one block of bridge paths without storing the paths."""
    n = y_rows.shape[0]
    out = np.zeros(n)
    M = tables.n_steps
    for k, z, d_wiener, _ in _sde_block(tables, x, y_rows, gen):
        if k == M:
            break
        G = drift_G(config, model, z)
        out += np.einsum("pm,pm->p", G, d_wiener)
        out -= 0.5 * tables.dts[k] * np.einsum("pm,pm->p", G, G)
    return out


# ---------------------------------------------------------------------------
# Monte Carlo estimators
# ---------------------------------------------------------------------------

def _aggregate_weights(log_weights: np.ndarray, n: int) -> DensityEstimate:
    """Stable mean/stderr of exp(log_weights) plus importance diagnostics."""
    shift = float(np.max(log_weights))
    w = np.exp(log_weights - shift)
    scale = np.exp(shift)
    mean = float(np.mean(w))
    std = float(np.std(w, ddof=1)) if n > 1 else 0.0
    ess = float(np.sum(w) ** 2 / np.sum(w * w))
    diagnostics = {
        "min_log_weight": float(np.min(log_weights)),
        "max_log_weight": float(np.max(log_weights)),
        "effective_sample_size": ess,
        "low_effective_sample_size": bool(ess < MIN_EFFECTIVE_SAMPLES),
    }
    return DensityEstimate(
        value=scale * mean,
        std_error=scale * std / np.sqrt(n),
        n_samples=n,
        diagnostics=diagnostics,
    )


def _collect_log_weights(model, config, x, y, T, n_paths, rng, grid, tag, n_rep=1,
                         threads: int = 1):
    """Stream bridge blocks and gather per-path log-weights.

    ``y`` may be one endpoint vector or an array of endpoint rows; with
    ``n_rep > 1`` each row is repeated that many times (row-major), which is
    how one bridge ensemble serves many endpoints at once.
    """
    grid = grid if grid is not None else default_density_grid(T)
    if abs(grid.horizon - T) > 1e-12:
        raise ValueError("grid horizon does not match the requested T")
    tables = bridge_sde_tables(model, grid)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    y_all = np.repeat(np.atleast_2d(y), n_rep, axis=0) if n_rep > 1 else np.atleast_2d(y)
    if y_all.shape[0] == 1:
        y_all = np.broadcast_to(y_all, (n_paths, model.n_modes))
    total = y_all.shape[0]
    out = np.empty(total)

    def run_block(block, lo, hi):
        gen = rng.generator(tag, block)
        out[lo:hi] = _stream_log_weights(model, config, x, y_all[lo:hi], tables, gen)

    map_blocks(run_block, rng.block_ranges(total), threads)
    return out


def estimate_hq(model: SpectralModel, config: NonlinearityConfig, x, y, T, q: float,
                n_paths: int, rng: RngStream, grid: TimeGrid | None = None,
                tag: str = "h-weight", threads: int = 1) -> DensityEstimate:
    """Monte Carlo mean of exp(q * log-weight) over independent bridge paths."""
    if n_paths < 2:
        raise ValueError("need at least two paths for a standard error")
    if q < 0:
        raise ValueError("q must be >= 0")
    if config.kind == "zero" or q == 0.0:
        return DensityEstimate(
            value=1.0, std_error=0.0, n_samples=n_paths,
            diagnostics={"linear_exact": True, "effective_sample_size": float(n_paths),
                         "min_log_weight": 0.0, "max_log_weight": 0.0,
                         "low_effective_sample_size": False},
        )
    model.requires_noise()
    log_w = _collect_log_weights(model, config, x, y, T, n_paths, rng, grid, tag,
                                 threads=threads)
    return _aggregate_weights(q * log_w, n_paths)


def estimate_h(model: SpectralModel, config: NonlinearityConfig, x, y, T,
               n_paths: int, rng: RngStream, grid: TimeGrid | None = None,
               tag: str = "h-weight", threads: int = 1) -> DensityEstimate:
    """The Girsanov factor h(T, x, y): estimate_hq at q = 1."""
    return estimate_hq(model, config, x, y, T, 1.0, n_paths, rng, grid, tag, threads)


def estimate_density(model: SpectralModel, config: NonlinearityConfig, x, y, T,
                     n_paths: int, rng: RngStream, grid: TimeGrid | None = None,
                     tag: str = "h-weight", threads: int = 1) -> DensityEstimate:
    """Transition density d(T, x, y) = h * g * k against the invariant measure."""
    h = estimate_h(model, config, x, y, T, n_paths, rng, grid, tag, threads)
    log_gk = log_g_factor(model, T, x, y) + log_k_factor(model, T, y)
    scale = float(np.exp(log_gk))
    diagnostics = dict(h.diagnostics)
    diagnostics.update({"log_g": float(log_g_factor(model, T, x, y)),
                        "log_k": float(log_k_factor(model, T, y)),
                        "h_value": h.value, "h_std_error": h.std_error})
    return DensityEstimate(value=h.value * scale, std_error=h.std_error * scale,
                           n_samples=h.n_samples, diagnostics=diagnostics)


def _log_gk_matrix(model: SpectralModel, T, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """log(g(x_i, y_j) k(y_j)) for all pairs, vectorized."""
    qT = qt_kernel(model.alpha, model.lam, T)
    sT = semigroup_kernel(model.alpha, T)
    cross = (xs * sT / qT) @ ys.T                      # (n_x, n_y)
    quad_x = -0.5 * np.sum(xs * xs * sT * sT / qT, axis=1)
    log_k = np.array([log_k_factor(model, T, yj) for yj in ys])
    return cross + quad_x[:, None] + log_k[None, :]


def estimate_pq_norm(model: SpectralModel, config: NonlinearityConfig, T, p: float, q: float,
                     n_x: int, n_y: int, n_paths: int, rng: RngStream,
                     grid: TimeGrid | None = None, threads: int = 1) -> DensityEstimate:
    """Nested Monte Carlo of the (p, q) operator norm of the transition semigroup.

    Estimates ( E_x [ ( E_y d(T,x,y)^{p'} )^{q/p'} ] )^{1/q} with x, y drawn
    from the invariant measure and p' = p/(p-1).  Inner estimates enter
    through a nonlinear power, so the result carries a small-sample bias;
    the diagnostics say so rather than pretending otherwise.
    """
    if p <= 1 or q <= 1:
        raise ValueError("the operator norm needs p, q > 1")
    if n_x < 8 or n_y < 8:
        raise ValueError("sample budget too small: need n_x >= 8 and n_y >= 8")
    model.requires_invariant()
    p_prime = p / (p - 1.0)
    contraction = float(np.max(semigroup_kernel(model.alpha, T)))
    q_limit = 1.0 + (p - 1.0) / contraction**2
    diagnostics = {
        "bias_caveat": "inner estimates enter a nonlinear power; value has O(1/n_y) bias",
        "q_admissible_limit": q_limit,
    }
    if q >= q_limit:
        diagnostics["admissibility_warning"] = (
            f"q = {q} is not below 1 + (p-1)/|S0(T)|^2 = {q_limit:.4f}; "
            "finiteness of the norm is not guaranteed"
        )
    xs = sample_invariant_rows(model, rng, n_x, tag="pq-x")
    ys = sample_invariant_rows(model, rng, n_y, tag="pq-y")
    log_d = _log_gk_matrix(model, T, xs, ys)
    min_ess = None
    if config.kind != "zero":
        for i in range(n_x):
            log_w = _collect_log_weights(model, config, xs[i], ys, T, n_paths, rng,
                                         grid, tag=f"pq-h-{i}", n_rep=n_paths,
                                         threads=threads)
            log_w = log_w.reshape(n_y, n_paths)
            shift = log_w.max(axis=1, keepdims=True)
            w = np.exp(log_w - shift)
            log_h = shift[:, 0] + np.log(np.mean(w, axis=1))
            ess = np.sum(w, axis=1) ** 2 / np.sum(w * w, axis=1)
            min_ess = float(np.min(ess)) if min_ess is None else min(min_ess, float(np.min(ess)))
            log_d[i] += log_h
        diagnostics["min_inner_effective_sample_size"] = min_ess
    # inner: (mean_j d^{p'})^{q/p'} in log space
    shift = log_d.max(axis=1, keepdims=True)
    inner = np.log(np.mean(np.exp(p_prime * (log_d - shift)), axis=1)) + p_prime * shift[:, 0]
    a = np.exp((q / p_prime) * inner)
    mean_a = float(np.mean(a))
    se_a = float(np.std(a, ddof=1) / np.sqrt(n_x))
    value = mean_a ** (1.0 / q)
    std_error = value * se_a / (q * mean_a) if mean_a > 0 else 0.0
    diagnostics["n_x"] = n_x
    diagnostics["n_y"] = n_y
    diagnostics["n_paths"] = n_paths
    return DensityEstimate(value=value, std_error=std_error,
                           n_samples=n_x * n_y, diagnostics=diagnostics)


def sample_invariant_rows(model: SpectralModel, rng: RngStream, n: int, tag: str) -> np.ndarray:
    """Invariant-measure draws under a caller-chosen stream tag."""
    model.requires_invariant()
    sd = np.sqrt(model.lam / (2.0 * model.alpha))
    out = np.empty((n, model.n_modes))
    for block, lo, hi in rng.block_ranges(n):
        gen = rng.generator(tag, block)
        out[lo:hi] = gen.standard_normal((hi - lo, model.n_modes)) * sd
    return out


# ---------------------------------------------------------------------------
# Singular-integral diagnostics
# ---------------------------------------------------------------------------

def b3_path_integral(model: SpectralModel, y, T, epsilon: float,
                     dt_max: float | None = None, cluster: float = 0.02) -> float:
    """Left-endpoint quadrature of the endpoint drift mass, int_0^{T-eps} |B3(s) y| ds.

    |.| is the mode-space norm.  The integrand's operator norm grows like
    1/(T-s), so the value as a function of the cutoff reveals whether a given
    endpoint has enough high-mode decay for the integral to converge.
    """
    model.requires_noise()
    y = np.asarray(y, dtype=float)
    grid = TimeGrid.refined(T, dt_max=dt_max if dt_max is not None else T / 200.0,
                            cluster=cluster, epsilon=epsilon)
    s = grid.nodes[:-1][:, None]
    b3y = b3_kernel(model.alpha[None, :], model.lam[None, :], s, T) * y
    integrand = np.sqrt(np.sum(b3y * b3y, axis=1))
    return float(np.sum(integrand * grid.dts))
