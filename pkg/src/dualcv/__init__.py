"""Dual upper bounds for Bermudan options via nested Monte Carlo, with
regression-fitted control variates and a complexity benchmarking harness."""

from .basis import (
    HermiteSystem,
    StateBasis,
    hermite_block,
    hermite_eval,
    hermite_features,
    state_basis_eval,
)
from .errors import ArtifactError, ConfigError, DualcvError, NumericalError
from .estimators import (
    CostLedger,
    EstimatorConfig,
    MultilevelSchedule,
    PriceEstimate,
    estimate_dual_cv,
    estimate_dual_standard,
    estimate_eep,
    estimate_lower_bound,
    estimate_multilevel,
)
from .harness import (
    ReferencePrice,
    RmseCell,
    RunRecord,
    SlopeFit,
    SweepSpec,
    compute_reference,
    estimate_rmse,
    fit_loglog_slope,
    fit_value_functions,
    read_run_csv,
    run_sweep,
    write_rmse_csv,
    write_run_csv,
    write_slope_csv,
)
from .model import (
    ModelSpec,
    PathBatch,
    Payoff,
    euler_step,
    payoff_eval,
    resample_substep,
    resample_substep_block,
    simulate_paths,
)
from .regress import (
    CVModel,
    LinearModel,
    ValueFunctions,
    cv_eval,
    fit_cv_coefficients,
    fit_lower_bound_tv,
    holdout_variances,
    least_squares_fit,
    load_artifacts,
    save_artifacts,
)
from .streams import StreamKey

__version__ = "0.1.0"
