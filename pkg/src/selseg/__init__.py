"""Selective segmentation of linear regressions.

Detects structural breaks in a linear regression and identifies which
coefficients actually move at each break: penalized estimation over a grid
of penalty settings, marginal-likelihood model selection with Bayesian model
averaging, and MCMC uncertainty on the break dates.
"""

__version__ = "0.1.0"

from .bayes import (
    BmaPredictive,
    PosteriorParams,
    PredictiveDensity,
    bma_predictive,
    forecast_row,
    posterior_params,
    predictive,
    sample_posterior,
)
from .detect import (
    ScanConfig,
    ScanResult,
    detect_breaks,
    dp_mdl_segmentation,
    lr_scan,
    local_max_candidates,
    mdl,
    refine_candidates,
)
from .dream import (
    BreakPosterior,
    DreamConfig,
    break_prior_support,
    dream_propose,
    psrf,
    sample_break_posterior,
)
from .exceptions import (
    ConvergenceError,
    InsufficientObservationsError,
    InvalidSegmentationError,
    ParseError,
    SelsegError,
    SingularDesignError,
    WindowTooShortError,
)
from .model_select import (
    GridConfig,
    ModelCandidate,
    exhaustive_select,
    lasso_baseline,
    log_marginal_likelihood,
    run_grid,
    top_candidate,
)
from .regress_core import (
    BreakDesign,
    Dataset,
    OlsResult,
    Segmentation,
    build_break_design,
    gaussian_loglik,
    ols,
    rss_partitioned,
)
from .selo import (
    DaemConfig,
    DaemFit,
    MixtureApprox,
    SeloParams,
    calibrate_mixture,
    daem_e_step,
    daem_fit,
    init_search,
    penalized_objective,
    selo_penalty,
    swap,
)
from .simbench import (
    DgpSpec,
    ForecastConfig,
    ForecastReport,
    McReport,
    PipelineConfig,
    dgp_j_spec,
    dgp_spec,
    empirical_dgp_spec,
    forecast_eval,
    run_monte_carlo,
    simulate,
)
