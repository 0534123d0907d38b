"""wigsim: signed-particle Monte Carlo for 2D phase-space quantum dynamics.

The package propagates a quasi-distribution with signed particles whose
pair creation is driven by an analytic momentum-transfer kernel, either
derived in closed form from a Gaussian-sum fit of the (clamped)
potential or from delta-smoothing of the bare polynomial, and ships a
Crank-Nicolson wave-equation solver as the exact benchmark.
"""

__version__ = "0.1.0"

from .grids import PhaseSpaceGrid
from .potential import (
    DoubleWellParams,
    FitConfig,
    GaussianSumModel,
    GaussianTerm,
    derive_quartic_coefficients,
    eval_double_well,
    eval_gaussian_sum,
    fit_gaussian_sum,
    truncate,
)
from .rng import RngContract, derive_substream
from .spmc import Ensemble, SpmcConfig, SpmcState, annihilate, drift, init_particles, reconstruct, scatter
from .units import from_internal, to_internal
from .wigner import (
    AnalyticGaussianWigner,
    GammaTable,
    MomentumGrid,
    MomentumSampler,
    SmoothedPolynomialWigner,
    build_gamma_table,
    build_momentum_sampler,
    eval_wigner_potential,
    split_plus,
)
