"""Fractional processes as finite-dimensional affine Markov systems.

Superpositions of exactly-sampled Ornstein-Uhlenbeck factors realize
fractional Brownian motion and fractional short-rate / bank-account /
stochastic-volatility models with closed-form affine pricing, plus the
Monte Carlo machinery to cross-validate every closed form.
"""

from .errors import ConfigError, DomainError, FactorizationError, QuadratureError
from .measures import (
    DEFAULT_GRID,
    GridConfig,
    GridMeasure,
    MeasureSpec,
    build_measure,
    discretize,
    discretize_pair,
    fbm_laplace_error,
    fbm_laplace_exact,
    laplace,
    validate_integrability,
)
from .ou import (
    OUPath,
    OUState,
    TransitionKernel,
    cov_operator,
    init_state,
    make_kernel,
    pair,
    semimartingale_residual,
    simulate_path,
    spatial_consistency,
    step,
)
from .affine import (
    AffineCoeffs,
    Phi,
    SumOfSquares,
    diagonalize,
    mgf,
    phi,
    riccati_residual,
    stein_psi,
)
from .fbm import FbmConfig, fbm_cov_oracle, fbm_variance_scale, simulate_fbm
from .rates import (
    CapSchedule,
    RateModel,
    bank_account_path,
    black_option,
    cap_floor,
    forward_curve,
    forward_vol,
    hjm_coefficients,
    model_covariation,
    rate_value,
    zcb_price,
)
from .stein import (
    IVMoments,
    SteinModel,
    SteinState,
    char_fn_pi,
    iv_moments,
    logprice_cdf_uncorrelated,
    simulate_stein,
)
from .mc import (
    Estimate,
    McConfig,
    PathEnsemble,
    StationarityReport,
    estimate,
    run_ensemble,
    stationarity_report,
)

__version__ = "0.1.0"
