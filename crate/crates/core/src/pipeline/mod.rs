//! End-to-end scoring, evaluation and the synthetic benchmark harness.

mod benchmark;
mod evaluate;
mod score;

pub use benchmark::{
    fit_and_score, run_benchmark, severity_covariate, BenchmarkOutcome, BenchmarkRun,
    BenchmarkSpec, ModelVariant, BENCHMARK_LATENT_DIMS,
};
pub use evaluate::{
    evaluate, write_plot_csv, CorrelationEntry, Evaluation, ModelLabel, ScoredModel,
    SignificanceEntry, SubjectCovariate, PLOT_COLUMNS,
};
pub use score::{score_cohort, worker_count, ReferenceStats, ScoreOptions, THREADS_ENV};
