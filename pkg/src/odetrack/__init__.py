"""Parameter estimation for ODE systems via optimal-control tracking.

The estimator fits a pseudo-linear system dx/dt = A(x, t; theta) x to noisy,
partial observations by driving a controlled copy of the model toward the
data and penalizing the control energy needed to get there. Parameters that
need little forcing explain the data well.
"""

from .bench import (
    EstimatorSpec,
    McReport,
    SemiparamReport,
    best_constant_mse,
    constant_estimator,
    functional_variance_mse,
    mc_metrics,
    run_monte_carlo,
    run_semiparam_benchmark,
    write_mc_report_csv,
)
from .errors import (
    ConfigError,
    DataFormatError,
    DivergenceError,
    EstimationFailed,
    MissingConstantsError,
    NumericalError,
    OdetrackError,
    SingularInitialCost,
)
from .estimate import (
    EstimationResult,
    HyperGrid,
    ObservabilityReport,
    SelectionOutcome,
    ep_score,
    estimate_semiparametric,
    estimate_tracking,
    nls_estimate,
    observability_check,
    select_hyperparams,
    write_control_trace_csv,
    write_ep_table_csv,
    write_result_json,
)
from .grids import (
    ObservationSet,
    TrackingGrid,
    build_grid,
    load_observations,
    save_observations,
)
from .lqr import (
    LinearizedSystem,
    RiccatiPass,
    TrackingSolution,
    forward_optimal,
    profiled_tracking_cost,
    riccati_backward,
    tracking_cost,
)
from .models import (
    ModelCatalogEntry,
    PseudoLinearModel,
    SemiParamSpec,
    extend_semiparametric,
    fhn_functional_spec,
    get_catalog_entry,
    load_glv_constants,
)
from .sdre import SdreConfig, sdre_track, sdre_track_profiled
from .sim import (
    FullSystemTruth,
    HypoellipticNoise,
    MultiplicativeNoise,
    SimConfig,
    obs_times,
    simulate_entry,
    simulate_misspecified,
    simulate_ode,
)

__version__ = "0.1.0"

__all__ = [
    "ModelCatalogEntry",
    "ConfigError",
    "DataFormatError",
    "DivergenceError",
    "EstimationFailed",
    "EstimationResult",
    "EstimatorSpec",
    "FullSystemTruth",
    "HyperGrid",
    "HypoellipticNoise",
    "LinearizedSystem",
    "McReport",
    "MissingConstantsError",
    "MultiplicativeNoise",
    "NumericalError",
    "ObservabilityReport",
    "ObservationSet",
    "OdetrackError",
    "PseudoLinearModel",
    "RiccatiPass",
    "SdreConfig",
    "SelectionOutcome",
    "SemiparamReport",
    "SemiParamSpec",
    "SimConfig",
    "SingularInitialCost",
    "TrackingGrid",
    "TrackingSolution",
    "best_constant_mse",
    "build_grid",
    "constant_estimator",
    "ep_score",
    "estimate_semiparametric",
    "estimate_tracking",
    "extend_semiparametric",
    "fhn_functional_spec",
    "forward_optimal",
    "functional_variance_mse",
    "get_catalog_entry",
    "load_glv_constants",
    "load_observations",
    "mc_metrics",
    "nls_estimate",
    "obs_times",
    "observability_check",
    "profiled_tracking_cost",
    "riccati_backward",
    "run_monte_carlo",
    "run_semiparam_benchmark",
    "save_observations",
    "sdre_track",
    "sdre_track_profiled",
    "select_hyperparams",
    "simulate_entry",
    "simulate_misspecified",
    "simulate_ode",
    "tracking_cost",
    "write_control_trace_csv",
    "write_ep_table_csv",
    "write_mc_report_csv",
    "write_result_json",
]
