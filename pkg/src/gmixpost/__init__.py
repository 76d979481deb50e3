"""Continuous Gaussian-mixture posterior sampling for linear Bayesian inversion."""

from .chains import ChainSet
from .diagnostics import credible_interval, epsr, ess, ess_multichain, ness_per_coordinate
from .errors import (
    ArgError,
    DivergenceError,
    DomainError,
    FeasibilityError,
    FormatError,
    GmixpostError,
    InitError,
    NumericalError,
    OptimError,
    ShapeError,
    SupportError,
)
from .haar import HaarTransform, haar_forward, haar_inverse
from .mala import MalaConfig, TargetDensity, mala_sample
from .mixing import (
    ReducedVEvaluator,
    VSpaceEvaluator,
    WSpaceEvaluator,
    sparse_map_objective,
)
from .model import (
    ExponentialMixing,
    FiniteWeightMixing,
    GaussianComponentSpec,
    InverseGammaMixing,
    LaplacePrior,
    LinearGaussianModel,
    MixingDensity,
    PosteriorComponent,
    gmm_posterior_weights,
    log_marginal_y_given_w,
    log_mixing_posterior,
    posterior_component,
)
from .problems import (
    BlurOperator,
    ExperimentData,
    StormOperator,
    besov_rates,
    build_deblurring,
    build_storm,
    build_toy,
)
from .reduction import (
    CoordinateSplit,
    Diagnostic,
    MapApprox,
    MapXApprox,
    ccs_w_sampler,
    ccs_x_sampler,
    estimate_diagnostic_w,
    estimate_diagnostic_x,
    hellinger_bound_estimate,
    map_w_approx,
    map_w_sampler,
    map_x_approx,
    map_x_sampler,
    split_by_diagnostic,
    split_top_r,
)
from .rto import RtoWorkspace, cgls, linear_rto_draws, linear_rto_sample
from .truncnorm import exponential_sample, truncated_mvn_sample

__version__ = "0.1.0"
