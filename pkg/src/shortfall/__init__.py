"""Estimation and optimization of utility-based shortfall risk and
optimized-certainty-equivalent risk measures from i.i.d. samples."""

__version__ = "0.1.0"

from .risk_functions import (
    CVaRHingeUtility,
    EntropicLoss,
    EntropicUtility,
    FunctionRegularity,
    HeavisideLoss,
    LossSpec,
    MonotoneMVUtility,
    ONPVUtility,
    PiecewiseLinearLoss,
    PolynomialLoss,
    QuarticUtility,
    RiskFunctionSpec,
    UtilitySpec,
    deriv_flagged,
    eval_flagged,
    expectile_loss,
    from_json,
    loss_deriv,
    loss_eval,
    loss_from_json,
    regularity,
    to_json,
    utility_deriv,
    utility_eval,
    utility_from_json,
)
from .estimation import (
    BisectionConfig,
    BracketNotFound,
    EstimationError,
    MaxIterationsExceeded,
    RiskEstimate,
    bracket_root,
    cvar_estimate,
    default_config,
    iteration_budget,
    oce_g,
    oce_objective,
    oce_saa,
    oce_sb,
    saa_g,
    sample_window,
    ubsr_sb,
    var_estimate,
)
from .gradients import (
    DoubleBatch,
    GradientEstimate,
    ZeroDenominator,
    oce_grad,
    portfolio_gradient,
    portfolio_value,
    ubsr_grad,
)
from .scenarios import (
    EmpiricalBootstrapSampler,
    ExponentialDist,
    GaussianDist,
    GaussianVectorSampler,
    PointMassDist,
    PointMassSampler,
    ReturnsData,
    UniformDist,
    analytic_cvar,
    analytic_entropic,
    analytic_var,
    entropic_gradient,
    entropic_objective,
    independent_streams,
    parse_dist,
    read_returns,
    synthetic_market,
    write_returns,
)
from .optimization import (
    BallProjection,
    BoxProjection,
    IdentityProjection,
    OCEObjective,
    SGAbort,
    SGConfig,
    SGTrace,
    SimplexProjection,
    UBSRObjective,
    deterministic_mv_optimum,
    project_simplex,
    sg_run,
)
from .experiments import (
    AuditRecord,
    SGRateResult,
    SlopeFit,
    SweepResult,
    SweepRow,
    VarCVaRCell,
    estimation_sweep,
    fit_loglog,
    read_report_csv,
    reference_truth,
    resolve_truth,
    sg_error_curve,
    var_cvar_grid,
    write_sweep_outputs,
    write_var_cvar_outputs,
)

__all__ = [name for name in dir() if not name.startswith("_")]
