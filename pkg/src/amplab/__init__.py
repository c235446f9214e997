"""Numerical laboratory for AMP on spiked symmetric random matrices.

The package runs approximate message passing orbits (with and without the
memory-correction term, and with spectral initialization), computes the
deterministic state-evolution predictions they track, and orchestrates the
experiments that compare Gaussian against general sub-Gaussian noise.
"""

from .engine import (
    AmpOrbit,
    onsager_coeffs,
    phi_average,
    phi_pair_average,
    run_generalized,
    run_onsager,
    run_spectral_amp,
)
from .ensembles import (
    EnsembleSpec,
    PriorSpec,
    SpikeComponent,
    SpikeSpec,
    SpikedOperator,
    TrialStreams,
    build_spiked,
    derive_streams,
    sample_prior,
    sample_wigner,
)
from .errors import (
    AccuracyError,
    AmpLabError,
    ConfigError,
    DegenerateInputError,
    DivergenceError,
    NotPositiveSemidefiniteError,
    NumericalFailureError,
    PreconditionError,
    RejectedInputError,
)
from .linalg import (
    EigenDecomp,
    SymmetricMatrix,
    axpy,
    cholesky,
    dot,
    jacobi_eigendecomp,
    norm2,
    scale,
    sym_matvec,
)
from .nonlinear import (
    Denoiser,
    TestFunction,
    denoiser_eval,
    denoiser_partial,
    fd_partial,
    phi_eval,
    phi_eval_rows,
)
from .spectral import (
    GapCheckResult,
    PowerResult,
    default_power_depth,
    gap_check,
    power_method,
    spectral_init,
)
from .state_evolution import (
    QuadratureSpec,
    SECovariance,
    SEParams,
    bayes_tanh_schedule,
    covariance_phi_prediction,
    se_covariance,
    se_predict_phi,
    se_spiked,
)

__version__ = "0.1.0"
