"""Exact OU path sampling, bridge sampling, and Wiener-increment reconstruction.

Two bridge samplers are provided:

* :func:`sample_bridge_exact` draws the pinned path by sequential Gaussian
  conditioning, one transition at a time.  Each step treats the remaining
  segment as a fresh pinned problem, so the construction has no
  discretization bias and hits the endpoint exactly.
* :func:`integrate_bridge_sde` integrates the singular bridge SDE

      dz = [-alpha z + J(s) (y - e^{-alpha (T-s)} z)] ds + sqrt(lam) d zeta,
      J(s) = 2 alpha e^{-alpha (T-s)} / (1 - e^{-2 alpha (T-s)}),

  with the linear flow treated exactly over each step (both the decay and
  the stochastic-convolution increment, the latter drawn jointly with the
  d zeta increment it is correlated with) and the singular feedback
  coefficient frozen at the left endpoint.  The increments of the original
  driving Wiener process are recovered from the stored d zeta by
  :func:`reconstruct_wiener_increments` with the same frozen rule.

Noise increments are always stored so the Girsanov machinery can replay a
path deterministically.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .model import (
    SpectralModel,
    TimeGrid,
    _qt_unit,
    gain_kernel,
    qhat_kernel,
    qt_kernel,
    sde_feedback_kernel,
    semigroup_kernel,
    wiener_feedback_kernel,
)
from .rng import RngStream, map_blocks

__all__ = [
    "PathEnsemble",
    "StepStabilityError",
    "sample_ou_path",
    "sample_invariant",
    "sample_bridge_exact",
    "integrate_bridge_sde",
    "reconstruct_wiener_increments",
    "center_bridge",
    "bridge_mean",
    "streamed_node_moments",
    "wiener_increment_stats",
    "BridgeSdeTables",
]

PATH_KINDS = ("ou", "bridge-exact", "bridge-sde", "semilinear")

# Modes whose endpoint coefficient e^{alpha T} |y_n| exceeds this are flagged:
# pinning them is numerically ill-conditioned at short horizons.
CONDITIONING_THRESHOLD = 1e8

# Upper bound on the frozen feedback increment beta_k dt_k; beyond it the
# one-step multiplier turns strongly negative and the scheme oscillates.
STABILITY_LIMIT = 0.9


class StepStabilityError(ValueError):
    """Raised when a grid step is too coarse for the singular feedback term."""


@dataclass
class PathEnsemble:
    """States of a path ensemble on a fixed node set.

    states has shape (n_paths, n_nodes, n_modes); noise holds the driving
    increments actually consumed, one row per integration step (d zeta for
    the bridge SDE, the stochastic-convolution draws for OU/semilinear, the
    conditional innovations for the exact bridge).
    """

    times: np.ndarray
    states: np.ndarray
    noise: np.ndarray | None
    kind: str

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.states.ndim != 3 or self.states.shape[1] != len(self.times):
            raise ValueError("states must have shape (n_paths, n_nodes, n_modes)")

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_modes(self) -> int:
        return self.states.shape[2]

    def node_summary(self) -> dict:
        """Per-node mean/variance with Monte Carlo standard errors."""
        n = self.n_paths
        mean = self.states.mean(axis=0)
        var = self.states.var(axis=0, ddof=1) if n > 1 else np.zeros_like(mean)
        return {
            "times": self.times.tolist(),
            "n_paths": n,
            "mean": mean.tolist(),
            "mean_std_error": np.sqrt(var / n).tolist(),
            "variance": var.tolist(),
            "variance_std_error": (var * np.sqrt(2.0 / max(n - 1, 1))).tolist(),
        }

    def write_csv(self, path) -> None:
        """Dump all states as rows (path, time, mode, value)."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "time", "mode", "value"])
            for p in range(self.n_paths):
                for j, t in enumerate(self.times):
                    for m in range(self.n_modes):
                        writer.writerow([p, f"{t:.12g}", m, f"{self.states[p, j, m]:.17g}"])


def _as_state(x, n_modes: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = np.full(n_modes, float(x))
    if x.shape != (n_modes,):
        raise ValueError(f"state vector must have length {n_modes}")
    return x


def _endpoint_rows(y, n_modes: int, n_paths: int) -> np.ndarray:
    """Accept a shared endpoint (n_modes,) or per-path endpoints (n_paths, n_modes)."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        if y.shape != (n_modes,):
            raise ValueError(f"endpoint must have length {n_modes}")
        return np.broadcast_to(y, (n_paths, n_modes))
    if y.shape != (n_paths, n_modes):
        raise ValueError("per-path endpoints must have shape (n_paths, n_modes)")
    return y


# ---------------------------------------------------------------------------
# OU / mild-formula sampling
# ---------------------------------------------------------------------------

def sample_ou_path(model: SpectralModel, x, grid: TimeGrid, rng: RngStream,
                   n_paths: int, path_offset: int = 0, tag: str = "mild",
                   threads: int = 1) -> PathEnsemble:
    """Exact OU transitions: z' = e^{-alpha dt} z + N(0, Q_dt) per mode."""
    states, noise = _mild_scheme(model, x, grid, rng, n_paths, path_offset, tag,
                                 drift=None, threads=threads)
    return PathEnsemble(times=grid.nodes, states=states, noise=noise, kind="ou")


def _mild_scheme(model: SpectralModel, x, grid: TimeGrid, rng: RngStream, n_paths: int,
                 path_offset: int, tag: str, drift: Callable | None, threads: int = 1):
    """Shared stepper for the OU flow and the semilinear mild scheme.

    With ``drift`` set, each step applies e^{-alpha dt} (z + sqrt(lam) G(z) dt)
    before adding the exact stochastic-convolution increment.  With
    ``drift=None`` the G term is skipped entirely, so a zero nonlinearity and
    the plain OU sampler execute identical floating-point operations.
    """
    x = _as_state(x, model.n_modes)
    dts = grid.dts
    decay = semigroup_kernel(model.alpha[None, :], dts[:, None])          # (M, modes)
    conv_sd = np.sqrt(qt_kernel(model.alpha[None, :], model.lam[None, :], dts[:, None]))
    sqrt_lam = np.sqrt(model.lam)
    n_nodes = len(grid.nodes)
    states = np.empty((n_paths, n_nodes, model.n_modes))
    noise = np.empty((n_paths, len(dts), model.n_modes))

    def run_block(block, lo, hi):
        gen = rng.generator(tag, block)
        z = np.broadcast_to(x, (hi - lo, model.n_modes)).copy()
        states[lo:hi, 0, :] = z
        for k in range(len(dts)):
            xi = gen.standard_normal((hi - lo, model.n_modes)) * conv_sd[k]
            if drift is not None:
                z = decay[k] * (z + sqrt_lam * drift(z) * dts[k]) + xi
            else:
                z = decay[k] * z + xi
            states[lo:hi, k + 1, :] = z
            noise[lo:hi, k, :] = xi

    map_blocks(run_block, rng.block_ranges(n_paths, path_offset), threads)
    return states, noise


def sample_invariant(model: SpectralModel, rng: RngStream, n_samples: int,
                     path_offset: int = 0, tag: str = "invariant") -> np.ndarray:
    """Draws from the invariant Gaussian law N(0, lam/(2 alpha)) per mode."""
    model.requires_invariant()
    sd = np.sqrt(model.lam / (2.0 * model.alpha))
    out = np.empty((n_samples, model.n_modes))
    for block, lo, hi in rng.block_ranges(n_samples, path_offset):
        gen = rng.generator(tag, block)
        out[lo:hi] = gen.standard_normal((hi - lo, model.n_modes)) * sd
    return out


# ---------------------------------------------------------------------------
# Exact bridge sampling by sequential conditioning
# ---------------------------------------------------------------------------

def bridge_mean(model: SpectralModel, x, y, t, T):
    """Pinned-path marginal mean: e^{-alpha t} x + gain(t) (y - e^{-alpha T} x)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    gain = gain_kernel(model.alpha, t, T)
    return semigroup_kernel(model.alpha, t) * x + gain * (y - semigroup_kernel(model.alpha, T) * x)


def sample_bridge_exact(model: SpectralModel, x, y, grid: TimeGrid, rng: RngStream,
                        n_paths: int, path_offset: int = 0, tag: str = "bridge",
                        threads: int = 1) -> PathEnsemble:
    """Pinned OU path via per-step Gaussian conditioning on (current value, endpoint).

    At node t with remaining horizon H = T - t, the next value after a step
    of size d is Gaussian with

        mean = e^{-alpha d} z + gain(d; H) (y - e^{-alpha H} z),
        var  = Q_d Q_{H-d} / Q_H,

    the one-step specialisation of the bridge marginal law.  The final node
    is set to y exactly.
    """
    if abs(grid.epsilon_cutoff) > 1e-14:
        raise ValueError("the exact bridge sampler needs a grid whose last node is T")
    x = _as_state(x, model.n_modes)
    T = grid.horizon
    nodes, dts = grid.nodes, grid.dts
    M = len(dts)
    horizons = T - nodes[:-1]                                            # (M,)
    decay = semigroup_kernel(model.alpha[None, :], dts[:, None])
    e_h = semigroup_kernel(model.alpha[None, :], horizons[:, None])
    gain = gain_kernel(model.alpha[None, :], dts[:, None], horizons[:, None])
    sd = np.sqrt(qhat_kernel(model.alpha[None, :], model.lam[None, :],
                             dts[:, None], horizons[:, None]))
    states = np.empty((n_paths, M + 1, model.n_modes))
    noise = np.empty((n_paths, M, model.n_modes))

    def run_block(block, lo, hi):
        gen = rng.generator(tag, block)
        y_rows = _endpoint_rows(y, model.n_modes, n_paths)[lo:hi]
        z = np.broadcast_to(x, (hi - lo, model.n_modes)).copy()
        states[lo:hi, 0, :] = z
        for k in range(M):
            innovation = gen.standard_normal((hi - lo, model.n_modes)) * sd[k]
            z = decay[k] * z + gain[k] * (y_rows - e_h[k] * z) + innovation
            states[lo:hi, k + 1, :] = z
            noise[lo:hi, k, :] = innovation
        states[lo:hi, M, :] = y_rows

    map_blocks(run_block, rng.block_ranges(n_paths, path_offset), threads)
    return PathEnsemble(times=nodes, states=states, noise=noise, kind="bridge-exact")


# ---------------------------------------------------------------------------
# Bridge SDE integration
# ---------------------------------------------------------------------------

@dataclass
class BridgeSdeTables:
    """Per-step coefficient tables of the frozen-feedback exponential Euler scheme.

    The noise enters through the exact stochastic-convolution increment
    C_k = int e^{-alpha (dt - u)} d zeta(u) over the step, drawn jointly with
    d zeta_k: C_k = conv_on_zeta * d zeta_k + conv_resid_sd * xi with a fresh
    normal xi.  Cov(C, d zeta) = (1 - e^{-alpha dt})/alpha; at alpha = 0 the
    residual vanishes and C = d zeta.  This keeps the linear part of the
    update exact in distribution for any step size.
    """

    t_left: np.ndarray        # (M,)   left endpoints of the integration steps
    dts: np.ndarray           # (M,)
    decay_dt: np.ndarray      # (M, modes) e^{-alpha dt}
    e_u: np.ndarray           # (M, modes) e^{-alpha (T - t_k)}
    j_dt: np.ndarray          # (M, modes) J(t_k) dt_k, noise-free feedback gain
    f_dt: np.ndarray | None   # (M, modes) f(t_k) dt_k = J dt / sqrt(lam), None if lam has zeros
    sqrt_lam: np.ndarray      # (modes,)
    sqrt_dt: np.ndarray       # (M, 1)
    z_coef: np.ndarray        # (M, modes) one-step multiplier e^{-alpha dt} - J e_u dt
    noise_on_raw0: np.ndarray  # (M, modes) sqrt(lam) * convolution loading on the zeta normal
    noise_on_raw1: np.ndarray  # (M, modes) sqrt(lam) * convolution residual sd
    horizon: float

    @property
    def n_steps(self) -> int:
        return len(self.dts)


def _convolution_coupling(alpha, dts):
    """Joint law of (d zeta, int e^{-alpha (dt-u)} d zeta): regression + residual sd."""
    a = np.asarray(alpha, dtype=float)[None, :]
    dt = np.asarray(dts, dtype=float)[:, None]
    adt = a * dt
    small = adt < 1e-8
    safe = np.where(small, 1.0, a)
    r = np.where(small, dt * (1.0 - 0.5 * adt + adt * adt / 6.0), -np.expm1(-adt) / safe)
    q = _qt_unit(a, dt)
    on_zeta = r / dt
    resid_var = np.maximum(q - r * r / dt, 0.0)
    return on_zeta, np.sqrt(resid_var)


def bridge_sde_tables(model: SpectralModel, grid: TimeGrid,
                      stability_limit: float = STABILITY_LIMIT) -> BridgeSdeTables:
    if grid.epsilon_cutoff <= 0:
        raise ValueError("bridge SDE integration needs a terminal cutoff epsilon > 0")
    T = grid.horizon
    t_left = grid.nodes[:-1]
    dts = grid.dts
    j = sde_feedback_kernel(model.alpha[None, :], t_left[:, None], T)
    e_u = semigroup_kernel(model.alpha[None, :], (T - t_left)[:, None])
    beta_dt = j * e_u * dts[:, None]
    worst = np.unravel_index(np.argmax(beta_dt), beta_dt.shape)
    if beta_dt[worst] > stability_limit:
        k, m = worst
        raise StepStabilityError(
            f"step {k} (t = {t_left[k]:.6g}, dt = {dts[k]:.3g}) is too coarse near T: "
            f"feedback increment {beta_dt[worst]:.3f} exceeds the stability bound "
            f"{stability_limit} in mode {m}"
        )
    sqrt_lam = np.sqrt(model.lam)
    f_dt = None
    if np.all(model.lam > 0):
        f_dt = j * dts[:, None] / sqrt_lam
    on_zeta, resid_sd = _convolution_coupling(model.alpha, dts)
    decay_dt = semigroup_kernel(model.alpha[None, :], dts[:, None])
    j_dt = j * dts[:, None]
    sqrt_dt = np.sqrt(dts)[:, None]
    return BridgeSdeTables(
        t_left=t_left,
        dts=dts,
        decay_dt=decay_dt,
        e_u=e_u,
        j_dt=j_dt,
        f_dt=f_dt,
        sqrt_lam=sqrt_lam,
        sqrt_dt=sqrt_dt,
        z_coef=decay_dt - j_dt * e_u,
        noise_on_raw0=sqrt_lam * on_zeta * sqrt_dt,
        noise_on_raw1=sqrt_lam * resid_sd,
        horizon=T,
    )


def check_endpoint_conditioning(model: SpectralModel, y, T,
                                threshold: float = CONDITIONING_THRESHOLD) -> np.ndarray:
    """Flag modes where pinning amplifies the endpoint by more than ``threshold``.

    e^{alpha_n T} |y_n| measures how far y_n sits outside the comfortably
    reachable range of mode n at horizon T; huge values make the pinned
    problem ill-conditioned.  Returns the offending mode indices and warns.
    """
    y = np.asarray(y, dtype=float)
    max_abs = np.max(np.abs(np.atleast_2d(y)), axis=0)
    with np.errstate(divide="ignore"):
        log_mag = model.alpha * float(T) + np.log(max_abs)
    bad = np.flatnonzero(log_mag > np.log(threshold))
    if bad.size:
        warnings.warn(
            f"endpoint conditioning ratio e^(alpha T)|y| exceeds {threshold:.1e} "
            f"in modes {bad.tolist()}; the pinned problem is ill-conditioned there",
            RuntimeWarning,
            stacklevel=2,
        )
    return bad


def _sde_block(tables: BridgeSdeTables, x, y_rows, gen):
    """Generate one block of bridge-SDE paths step by step.

    Yields (k, z_left, d_wiener, d_zeta) for every integration step with the
    state at the left endpoint, then a final (M, z_final, None, None).
    d_wiener is None when some modes are noise-free.
    """
    n, modes = y_rows.shape
    z = np.broadcast_to(x, (n, modes)).copy()
    for k in range(tables.n_steps):
        raw = gen.standard_normal((2, n, modes))
        dzeta = raw[0] * tables.sqrt_dt[k]
        d_wiener = None
        if tables.f_dt is not None:
            d_wiener = dzeta + tables.f_dt[k] * (y_rows - tables.e_u[k] * z)
        yield k, z, d_wiener, dzeta
        z = (tables.z_coef[k] * z + tables.j_dt[k] * y_rows
             + tables.noise_on_raw0[k] * raw[0] + tables.noise_on_raw1[k] * raw[1])
    yield tables.n_steps, z, None, None


def integrate_bridge_sde(model: SpectralModel, x, y, grid: TimeGrid, rng: RngStream,
                         n_paths: int, path_offset: int = 0, tag: str = "bridge-sde",
                         stability_limit: float = STABILITY_LIMIT,
                         record_nodes=None, store_noise: bool = True,
                         threads: int = 1) -> PathEnsemble:
    """Integrate the pinned SDE on [0, T - epsilon] and close the path at y.

    The returned node set is the grid plus the pinning time T itself; the
    closing step is the exact conditional step, which at the endpoint is
    deterministic, so the last node equals y.  ``record_nodes`` selects a
    subset of node indices to keep (the Girsanov machinery needs all of them,
    moment studies usually need a handful); ``store_noise=False`` drops the
    d zeta increments, which rules out Wiener reconstruction but saves the
    memory at large path counts.
    """
    x = _as_state(x, model.n_modes)
    tables = bridge_sde_tables(model, grid, stability_limit)
    check_endpoint_conditioning(model, y, grid.horizon)
    M = tables.n_steps
    all_times = np.append(grid.nodes, grid.horizon)
    if record_nodes is None:
        keep = np.arange(M + 2)
    else:
        keep = np.asarray(record_nodes, dtype=int)
    keep_pos = {int(node): slot for slot, node in enumerate(keep)}
    states = np.empty((n_paths, len(keep), model.n_modes))
    noise = np.empty((n_paths, M, model.n_modes)) if store_noise else None

    def run_block(block, lo, hi):
        gen = rng.generator(tag, block)
        y_rows = _endpoint_rows(y, model.n_modes, n_paths)[lo:hi]
        for k, z, _, dzeta in _sde_block(tables, x, y_rows, gen):
            slot = keep_pos.get(k)
            if slot is not None:
                states[lo:hi, slot, :] = z
            if store_noise and k < M:
                noise[lo:hi, k, :] = dzeta
        slot = keep_pos.get(M + 1)
        if slot is not None:
            states[lo:hi, slot, :] = y_rows

    map_blocks(run_block, rng.block_ranges(n_paths, path_offset), threads)
    return PathEnsemble(times=all_times[keep], states=states, noise=noise,
                        kind="bridge-sde")


def reconstruct_wiener_increments(model: SpectralModel, bridge: PathEnsemble, y) -> np.ndarray:
    """Recover the original Wiener increments from a bridge-SDE ensemble.

    dW_k = d zeta_k + f(t_k) (y - e^{-alpha (T - t_k)} z_k) dt_k per mode,
    the frozen left-endpoint quadrature of W = zeta + int f (y - S zhat) ds
    on the same grid the integrator used.
    """
    model.requires_noise()
    if bridge.kind != "bridge-sde":
        raise ValueError("Wiener reconstruction needs a bridge-sde ensemble")
    if bridge.noise is None:
        raise ValueError("Wiener reconstruction needs the stored d zeta increments")
    if len(bridge.times) != bridge.noise.shape[1] + 2:
        raise ValueError("Wiener reconstruction needs every integration node recorded")
    T = bridge.times[-1]
    M = bridge.noise.shape[1]
    t_left = bridge.times[:M]
    dts = np.diff(bridge.times)[:M][:, None]
    f_dt = wiener_feedback_kernel(model.alpha[None, :], model.lam[None, :],
                                  t_left[:, None], T) * dts
    e_u = semigroup_kernel(model.alpha[None, :], (T - t_left)[:, None])
    y_rows = _endpoint_rows(y, model.n_modes, bridge.n_paths)
    pull = y_rows[:, None, :] - e_u[None, :, :] * bridge.states[:, :M, :]
    return bridge.noise + f_dt[None, :, :] * pull


def center_bridge(model: SpectralModel, bridge: PathEnsemble, x, y) -> np.ndarray:
    """Subtract the pinned-path mean, recovering the centered bridge.

    The centered path vanishes at both endpoints and has the bridge marginal
    variance at interior nodes.
    """
    x = _as_state(x, model.n_modes)
    T = bridge.times[-1]
    y_rows = _endpoint_rows(y, model.n_modes, bridge.n_paths)
    t = bridge.times[:, None]
    gain = gain_kernel(model.alpha[None, :], t, T)
    decay_t = semigroup_kernel(model.alpha[None, :], t)
    decay_T = semigroup_kernel(model.alpha, T)
    mean = decay_t[None, :, :] * x + gain[None, :, :] * (y_rows[:, None, :] - decay_T * x)
    return bridge.states - mean


# ---------------------------------------------------------------------------
# Streaming summaries
# ---------------------------------------------------------------------------

def streamed_node_moments(make_block: Callable[[int, int], np.ndarray], n_paths: int,
                          block_size: int):
    """Accumulate per-node mean/variance over blocks of paths.

    ``make_block(n, offset)`` must return a states array for paths
    [offset, offset + n); offsets are generated block-aligned so counter-based
    streams reproduce a monolithic run.
    """
    count = 0
    total = None
    total_sq = None
    for off in range(0, n_paths, block_size):
        n = min(block_size, n_paths - off)
        block = make_block(n, off)
        if total is None:
            total = block.sum(axis=0)
            total_sq = (block * block).sum(axis=0)
        else:
            total += block.sum(axis=0)
            total_sq += (block * block).sum(axis=0)
        count += n
    mean = total / count
    var = (total_sq - count * mean * mean) / (count - 1)
    return mean, np.maximum(var, 0.0), count


def wiener_increment_stats(model: SpectralModel, x, grid: TimeGrid, rng: RngStream,
                           n_paths: int, y=None, tag: str = "bridge-sde") -> dict:
    """Per-step statistics of the reconstructed Wiener increments.

    When ``y`` is None each path gets its own endpoint drawn from the OU
    time-T law, the coupling under which the reconstructed increments are
    exactly standard; a fixed ``y`` conditions them and biases the means.
    Returns per-step mean, variance and lag-1 correlation, pooled over modes.
    """
    model.requires_noise()
    x = _as_state(x, model.n_modes)
    tables = bridge_sde_tables(model, grid)
    M = tables.n_steps
    endpoint_mean = semigroup_kernel(model.alpha, grid.horizon) * x
    endpoint_sd = np.sqrt(qt_kernel(model.alpha, model.lam, grid.horizon))
    count = np.zeros(M)
    s1 = np.zeros((M, model.n_modes))
    s2 = np.zeros((M, model.n_modes))
    lag = np.zeros((M - 1, model.n_modes))
    for block, lo, hi in rng.block_ranges(n_paths):
        gen = rng.generator(tag, block)
        if y is None:
            y_rows = endpoint_mean + gen.standard_normal((hi - lo, model.n_modes)) * endpoint_sd
        else:
            y_rows = _endpoint_rows(y, model.n_modes, n_paths)[lo:hi]
        prev = None
        for k, _, d_wiener, _ in _sde_block(tables, x, y_rows, gen):
            if k == M:
                break
            count[k] += hi - lo
            s1[k] += d_wiener.sum(axis=0)
            s2[k] += (d_wiener * d_wiener).sum(axis=0)
            if prev is not None:
                lag[k - 1] += (prev * d_wiener).sum(axis=0)
            prev = d_wiener
    mean = s1 / count[:, None]
    var = (s2 - count[:, None] * mean * mean) / (count[:, None] - 1)
    # lag-1 sample covariance, then correlation against the per-step variances
    cov1 = lag / count[:-1, None] - mean[:-1] * mean[1:]
    corr1 = cov1 / np.sqrt(var[:-1] * var[1:])
    return {
        "dts": tables.dts,
        "n_paths": n_paths,
        "mean": mean,
        "variance": var,
        "lag1_corr": corr1,
    }
