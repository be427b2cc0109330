use serde::{Deserialize, Serialize};

use crate::data::{Cohort, CohortLabel};
use crate::deviation::{
    chi_square_sf, d_mf, d_ml, d_uf, outlier_test_feature, CohortStats, DeviationReport,
    FeatureNormStats, StatsSource, SubjectDeviation, LATENT_P_THRESHOLD,
};
use crate::error::{dim_err, Error, Result};
use crate::mvae::{LatentChoice, MvaeModel};

/// Environment variable capping the number of scoring workers.
pub const THREADS_ENV: &str = "NORMFLUX_THREADS";

/// Settings for scoring subjects against a healthy reference cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreOptions {
    /// Cohort whose encodings and errors define the normative statistics.
    pub reference: CohortLabel,
    pub robust: bool,
    pub latent: LatentChoice,
    /// Upper-tail probability below which D_ml and D_mf flag a subject.
    pub p_threshold: f64,
    /// Cohorts written to the report.
    pub cohorts: Vec<CohortLabel>,
    /// Worker count; `None` uses the available parallelism.
    pub workers: Option<usize>,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        Self {
            reference: CohortLabel::HealthyTrain,
            robust: false,
            latent: LatentChoice::PosteriorMean,
            p_threshold: LATENT_P_THRESHOLD,
            cohorts: CohortLabel::ALL.to_vec(),
            workers: None,
        }
    }
}

/// Worker count after applying the `NORMFLUX_THREADS` cap.
pub fn worker_count(requested: Option<usize>) -> usize {
    let available = std::thread::available_parallelism().map_or(1, |n| n.get());
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0);
    let n = requested.unwrap_or(available);
    cap.map_or(n, |c| n.min(c)).max(1)
}

/// Normative statistics of the reference cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceStats {
    pub latent: CohortStats,
    pub error: CohortStats,
    pub norm: FeatureNormStats,
}

impl ReferenceStats {
    pub fn fit(latents: &[Vec<f64>], errors: &[Vec<f64>], robust: bool) -> Result<Self> {
        Ok(Self {
            latent: CohortStats::fit(latents, robust, StatsSource::Latent)?,
            error: CohortStats::fit(errors, robust, StatsSource::FeatureError)?,
            norm: FeatureNormStats::fit(errors)?,
        })
    }
}

fn rows_of(rows: &[usize], all: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter().map(|&i| all[i].clone()).collect()
}

/// Scores every subject of the selected cohorts with D_ml, D_mf and D_uf.
///
/// The cohort must already be preprocessed like the model's training data.
pub fn score_cohort(
    model: &MvaeModel<f64>,
    cohort: &Cohort,
    options: &ScoreOptions,
) -> Result<DeviationReport> {
    if cohort.modality_dims() != model.modality_dims() {
        return Err(dim_err!(
            "cohort has modality widths {:?}, model expects {:?}",
            cohort.modality_dims(),
            model.modality_dims()
        ));
    }
    if !(options.p_threshold > 0.0 && options.p_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "p_threshold must lie in (0, 1), got {}",
            options.p_threshold
        )));
    }
    let recon = model.reconstruct(cohort.modalities(), options.latent)?;
    let latents: Vec<Vec<f64>> = (0..recon.latent.rows())
        .map(|i| recon.latent.row(i).to_vec())
        .collect();
    let errors = recon.squared_errors();

    let reference = cohort.indices(options.reference);
    if reference.len() < 2 {
        return Err(Error::Data(format!(
            "reference cohort {} has {} subjects, need at least 2",
            options.reference,
            reference.len()
        )));
    }
    let stats = ReferenceStats::fit(
        &rows_of(&reference, &latents),
        &rows_of(&reference, &errors),
        options.robust,
    )?;

    let selected: Vec<usize> = (0..cohort.n_subjects())
        .filter(|&i| options.cohorts.contains(&cohort.labels()[i]))
        .collect();
    let scored = score_rows(&selected, &latents, &errors, &stats, cohort, options)?;
    let (subjects, d_uf): (Vec<_>, Vec<_>) = scored.into_iter().unzip();
    let modalities = model.reconstructed_modalities();
    Ok(DeviationReport {
        modality_order: modalities
            .iter()
            .map(|&m| cohort.modality_names()[m].clone())
            .collect(),
        feature_names: cohort.qualified_feature_names(&modalities),
        subjects,
        d_uf,
    })
}

fn score_rows(
    rows: &[usize],
    latents: &[Vec<f64>],
    errors: &[Vec<f64>],
    stats: &ReferenceStats,
    cohort: &Cohort,
    options: &ScoreOptions,
) -> Result<Vec<(SubjectDeviation, Vec<f64>)>> {
    let workers = worker_count(options.workers).min(rows.len().max(1));
    let chunk = rows.len().div_ceil(workers).max(1);
    let score = |part: &[usize]| -> Result<Vec<(SubjectDeviation, Vec<f64>)>> {
        part.iter()
            .map(|&i| score_subject(i, &latents[i], &errors[i], stats, cohort, options))
            .collect()
    };
    if workers == 1 {
        return score(rows);
    }
    let parts: Vec<Result<Vec<_>>> = std::thread::scope(|s| {
        let handles: Vec<_> = rows
            .chunks(chunk)
            .map(|part| s.spawn(move || score(part)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Numeric("scoring worker panicked".into())))
            })
            .collect()
    });
    let mut out = Vec::with_capacity(rows.len());
    for part in parts {
        out.extend(part?);
    }
    Ok(out)
}

fn score_subject(
    i: usize,
    z: &[f64],
    err: &[f64],
    stats: &ReferenceStats,
    cohort: &Cohort,
    options: &ScoreOptions,
) -> Result<(SubjectDeviation, Vec<f64>)> {
    let dml = d_ml(z, &stats.latent)?;
    let dml_p = chi_square_sf(dml * dml, z.len())?;
    let dmf = d_mf(err, &stats.error)?;
    let dmf_p = chi_square_sf(dmf * dmf, err.len())?;
    let duf = d_uf(&[err.to_vec()], &stats.norm)?.remove(0);
    let feature_call = outlier_test_feature(std::slice::from_ref(&duf), err.len())[0];
    let subject = SubjectDeviation {
        subject_id: cohort.subject_ids()[i].clone(),
        cohort: cohort.labels()[i].as_str().to_string(),
        d_ml: dml,
        d_ml_p: dml_p,
        d_ml_outlier: dml_p < options.p_threshold,
        d_mf: dmf,
        d_mf_p: dmf_p,
        d_mf_outlier: dmf_p < options.p_threshold,
        d_uf_min_p: feature_call.min_p_value,
        d_uf_outlier_features: feature_call.n_flagged_features,
        d_uf_outlier: feature_call.flagged,
    };
    Ok((subject, duf))
}
