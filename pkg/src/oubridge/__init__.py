"""Spectral OU bridges and Girsanov transition densities.

The package simulates Hilbert-space Ornstein-Uhlenbeck processes and their
pinned bridges in a diagonal spectral truncation, and uses the bridge to
compute transition densities of semilinear stochastic evolution equations
through the factorization d = h * g * k, with brute-force oracles standing
guard over every piece.
"""

from .model import (
    SpectralModel,
    TimeGrid,
    semigroup_factor,
    covariance_qt,
    stationary_variance,
    contraction_vt,
    bridge_gain,
    bridge_variance,
    feedback_fs,
    b_operators,
    stationary_contraction,
    regularity_ct,
)
from .laws import (
    GaussianMarginal,
    ou_marginal,
    two_time_covariance,
    g_factor,
    k_factor,
    psi_density,
    hs_norm_linear,
)
from .rng import RngStream
from .sampling import (
    PathEnsemble,
    sample_ou_path,
    sample_invariant,
    sample_bridge_exact,
    integrate_bridge_sde,
    reconstruct_wiener_increments,
    center_bridge,
)
from .dynamics import NonlinearityConfig, drift_G, simulate_semilinear
from .density import (
    DensityEstimate,
    girsanov_log_weight,
    estimate_h,
    estimate_hq,
    estimate_density,
    estimate_pq_norm,
)
from .config import ExperimentConfig, ConfigError, load_config

__version__ = "0.1.0"
