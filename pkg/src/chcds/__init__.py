"""Conformal prediction sets from conditional density estimates.

The package estimates a conditional density, finds the density cutoff
of its highest-density region, and calibrates the cutoff with a split
conformal adjustment so the resulting prediction sets carry the usual
finite-sample coverage guarantee.
"""

from .cde import (
    ConditionalDensityModel,
    KernelCde,
    KernelCdeConfig,
    KnnKernelCde,
    KnnKernelCdeConfig,
    auto_bandwidth,
    fit_kernel_cde,
    fit_knn_kernel_cde,
)
from .conformal import (
    CalibrationResult,
    ConformalPredictor,
    adjustment_index,
    calibration_from_scores,
    chcds_calibrate,
    chcds_multiplicative_calibrate,
    chcds_predict,
    hpd_split_calibrate,
    negative_density_calibrate,
)
from .datagen import SCENARIO_KINDS, Scenario, covariate_range, generate, oracle_density
from .dataset import Dataset, split_dataset
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    MethodSummary,
    adjustment_curve,
    run_experiment,
    run_replicate,
)
from .io import (
    ConfigError,
    config_digest,
    experiment_config_from_values,
    load_config,
    load_dataset_csv,
    load_query_csv,
    parse_config_text,
    write_conditional_csv,
    write_manifest,
    write_predictions_csv,
    write_results_csv,
    write_summary_csv,
)
from .hdr import (
    CutoffResult,
    PredictionSet,
    ResponseGrid,
    grid_for_model,
    hdr_cutoff,
    hdr_cutoff_batch,
    level_set,
    level_set_from_density,
    mass_above,
    mass_below,
    modal_threshold_for_mass_below,
    set_mass,
    set_mass_from_density,
    total_mass,
)
from .metrics import (
    CoverageBoundsCheck,
    EvaluationReport,
    conditional_absolute_deviation,
    coverage_bounds_check,
    evaluate,
)
from .mixture import (
    GaussianMixture,
    GaussianMixtureCde,
    GaussianMixtureCdeConfig,
    fit_gaussian_mixture,
    fit_gaussian_mixture_cde,
)

__version__ = "0.1.0"
