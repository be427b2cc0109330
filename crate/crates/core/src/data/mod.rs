//! Cohorts: synthetic generation, CSV ingestion and healthy-control preprocessing.

mod cohort;
mod io;
mod preprocess;
mod synthetic;

pub use cohort::{Cohort, CohortLabel, Covariates};
pub use io::{
    load_csv, load_dir, save_csv, write_provenance, CohortManifest, LoadedCohort, COVARIATES_FILE,
    ID_COLUMN, LABELS_FILE, MANIFEST_FILE, PROVENANCE_FILE,
};
pub use io::{read_json, write_json};
pub use preprocess::{
    deconfound, standardize, unstandardize, ConfoundModel, PreprocessStats, StandardizeStats,
    RANK_TOLERANCE,
};
pub use synthetic::{
    generate_synthetic, Provenance, SyntheticSpec, DEFAULT_LATENT_DIM, DEFAULT_MODALITY_DIMS,
};
