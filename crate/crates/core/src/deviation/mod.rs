//! Latent and feature-space deviation metrics, outlier calls and evaluation.

mod metrics;
mod report;
mod stats;

pub use metrics::{
    chi_square_sf, chi_square_threshold, d_mf, d_ml, d_uf, normal_two_sided_p,
    outlier_test_feature, outlier_test_latent, pearson_corr, significance_ratio, Correlation,
    FeatureOutlierCall, OutlierCall, SignificanceResult, FEATURE_FAMILY_ALPHA, LATENT_P_THRESHOLD,
};
pub use report::{
    DeviationReport, Metric, SubjectDeviation, DISEASE_COHORT, HOLDOUT_COHORT, REPORT_COLUMNS,
};
pub use stats::{
    CohortStats, FeatureNormStats, FitOptions, StatsSource, RIDGE_SCALE, ROBUST_RETENTION,
    SYMMETRY_TOLERANCE,
};
