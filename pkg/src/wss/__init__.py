"""Small-sample inference for censored Weibull regression with an MCP-Mod
dose-finding pipeline on top."""

__version__ = "0.1.0"

from .weibull import (  # noqa: E402
    CensoredSample,
    CensoringScheme,
    CovariateDesign,
    ModelSpec,
    WeightSet,
    calibrate_censoring,
    fisher_information,
    log_likelihood,
    score,
    simulate_sample,
    weight_set,
)
from .estimators import (  # noqa: E402
    FitOptions,
    FitResult,
    cox_snell_bias,
    fit_bce,
    fit_firth,
    fit_mle,
    second_order_covariance,
)
from .wald import ContrastSpec, chi_square, matrix_distances, partitioned_information, wald_test  # noqa: E402
from .mcpmod import (  # noqa: E402
    DoseDesign,
    DoseResponseModel,
    estimate_med,
    gls_fit,
    mcp_step,
    optimal_contrasts,
    run_mcpmod,
    table1_models,
)
from .study import (  # noqa: E402
    McpModScenario,
    RegressionScenario,
    fit_strategies,
    run_mcpmod_study,
    run_regression_study,
)
