use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::cohort::{Cohort, CohortLabel, Covariates};
use crate::error::{dim_err, Error, Result};
use crate::gradnet::Tensor;

/// Relative size of the smallest QR pivot below which the confound design
/// is treated as rank deficient.
pub const RANK_TOLERANCE: f64 = 1e-10;

const N_BASIS: usize = 5;

/// Ordinary least-squares fit of every feature on `[1, a, a^2, a^3, icv]`,
/// where `a` and `icv` are centred and scaled with healthy-train moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundModel {
    pub age_center: f64,
    pub age_scale: f64,
    pub icv_center: f64,
    pub icv_scale: f64,
    /// `[modality][feature][basis]`.
    pub coefficients: Vec<Vec<Vec<f64>>>,
}

/// Healthy-train feature means and standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizeStats {
    pub mean: Vec<Vec<f64>>,
    pub std: Vec<Vec<f64>>,
}

/// Everything fitted on the healthy training cohort that scoring new data needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessStats {
    pub confound: Option<ConfoundModel>,
    pub standardize: StandardizeStats,
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

impl ConfoundModel {
    fn design_row(&self, age: f64, icv: f64) -> [f64; N_BASIS] {
        let a = (age - self.age_center) / self.age_scale;
        let v = (icv - self.icv_center) / self.icv_scale;
        [1.0, a, a * a, a * a * a, v]
    }

    fn fit(cohort: &Cohort, covariates: &Covariates) -> Result<Self> {
        let train = cohort.indices(CohortLabel::HealthyTrain);
        if train.len() < N_BASIS {
            return Err(Error::Data(format!(
                "confound regression needs at least {N_BASIS} healthy training subjects, got {}",
                train.len()
            )));
        }
        let pick = |v: &[f64]| train.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let (age_center, age_sd) = moments(&pick(&covariates.age));
        let (icv_center, icv_sd) = moments(&pick(&covariates.icv));
        let mut model = Self {
            age_center,
            age_scale: if age_sd > 0.0 { age_sd } else { 1.0 },
            icv_center,
            icv_scale: if icv_sd > 0.0 { icv_sd } else { 1.0 },
            coefficients: Vec::new(),
        };
        let x = DMatrix::from_fn(train.len(), N_BASIS, |r, c| {
            model.design_row(covariates.age[train[r]], covariates.icv[train[r]])[c]
        });
        let qr = x.qr();
        let (q, r) = (qr.q(), qr.r());
        let max_pivot = (0..N_BASIS).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if (0..N_BASIS).any(|i| r[(i, i)].abs() <= RANK_TOLERANCE * max_pivot) {
            return Err(Error::Data(
                "confound design is rank deficient; check age and icv".into(),
            ));
        }
        for t in cohort.modalities() {
            let y = DMatrix::from_fn(train.len(), t.cols(), |r, c| t.get(train[r], c));
            let beta = r
                .solve_upper_triangular(&(q.transpose() * y))
                .ok_or_else(|| Error::Numeric("confound regression solve failed".into()))?;
            model.coefficients.push(
                (0..t.cols())
                    .map(|c| beta.column(c).iter().copied().collect())
                    .collect(),
            );
        }
        Ok(model)
    }

    /// Replaces every feature with its residual under the fitted coefficients.
    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        let cov = cohort
            .covariates()
            .ok_or_else(|| Error::Data("deconfounding needs age and icv covariates".into()))?;
        if self.coefficients.len() != cohort.n_modalities() {
            return Err(dim_err!(
                "confound model has {} modalities",
                self.coefficients.len()
            ));
        }
        let rows: Vec<[f64; N_BASIS]> = cov
            .age
            .iter()
            .zip(&cov.icv)
            .map(|(&a, &v)| self.design_row(a, v))
            .collect();
        let mut out = Vec::with_capacity(cohort.n_modalities());
        for (t, coef) in cohort.modalities().iter().zip(&self.coefficients) {
            if coef.len() != t.cols() {
                return Err(dim_err!(
                    "confound model has {} features, data has {}",
                    coef.len(),
                    t.cols()
                ));
            }
            let mut values = Vec::with_capacity(t.len());
            for (i, basis) in rows.iter().enumerate() {
                for (j, b) in coef.iter().enumerate() {
                    let fitted: f64 = basis.iter().zip(b).map(|(x, c)| x * c).sum();
                    values.push(t.get(i, j) - fitted);
                }
            }
            out.push(Tensor::matrix(t.rows(), t.cols(), values)?);
        }
        cohort.with_modalities(out)
    }
}

/// Regresses age (cubic) and icv (linear) out of every feature, fitting on
/// the healthy training subjects only.
pub fn deconfound(cohort: &Cohort) -> Result<(Cohort, ConfoundModel)> {
    let cov = cohort
        .covariates()
        .ok_or_else(|| Error::Data("deconfounding needs age and icv covariates".into()))?;
    if cov.age.iter().chain(&cov.icv).any(|v| !v.is_finite()) {
        return Err(Error::Data("covariates contain non-finite values".into()));
    }
    let model = ConfoundModel::fit(cohort, cov)?;
    Ok((model.apply(cohort)?, model))
}

impl StandardizeStats {
    pub fn fit(cohort: &Cohort) -> Result<Self> {
        let rows = cohort.indices(CohortLabel::HealthyTrain);
        if rows.len() < 2 {
            return Err(Error::Data(
                "standardization needs at least two healthy training subjects".into(),
            ));
        }
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for (m, t) in cohort.modalities().iter().enumerate() {
            let (mut mu, mut sd) = (Vec::new(), Vec::new());
            for j in 0..t.cols() {
                let col: Vec<f64> = rows.iter().map(|&i| t.get(i, j)).collect();
                let (a, s) = moments(&col);
                if !(s > 0.0) {
                    return Err(Error::Data(format!(
                        "feature {} of modality {} has zero variance in the healthy training cohort",
                        cohort.feature_names()[m][j],
                        cohort.modality_names()[m]
                    )));
                }
                mu.push(a);
                sd.push(s);
            }
            mean.push(mu);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    fn check(&self, cohort: &Cohort) -> Result<()> {
        let dims = cohort.modality_dims();
        if self.mean.len() != dims.len() || self.mean.iter().zip(&dims).any(|(m, &d)| m.len() != d)
        {
            return Err(dim_err!(
                "standardization statistics do not match the cohort's features"
            ));
        }
        Ok(())
    }

    fn map(&self, cohort: &Cohort, f: impl Fn(f64, f64, f64) -> f64) -> Result<Cohort> {
        self.check(cohort)?;
        let out = cohort
            .modalities()
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(t, (mu, sd))| {
                let c = t.cols();
                let values = t
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(k, &x)| f(x, mu[k % c], sd[k % c]))
                    .collect();
                Tensor::matrix(t.rows(), c, values)
            })
            .collect::<Result<Vec<_>>>()?;
        cohort.with_modalities(out)
    }

    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        self.map(cohort, |x, m, s| (x - m) / s)
    }

    pub fn invert(&self, cohort: &Cohort) -> Result<Cohort> {
        self.map(cohort, |x, m, s| x * s + m)
    }
}

/// Scales every cohort with healthy-train moments, fitting them unless given.
pub fn standardize(
    cohort: &Cohort,
    stats: Option<&StandardizeStats>,
) -> Result<(Cohort, StandardizeStats)> {
    let stats = match stats {
        Some(s) => s.clone(),
        None => StandardizeStats::fit(cohort)?,
    };
    Ok((stats.apply(cohort)?, stats))
}

/// Inverse of [`standardize`].
pub fn unstandardize(cohort: &Cohort, stats: &StandardizeStats) -> Result<Cohort> {
    stats.invert(cohort)
}

impl PreprocessStats {
    /// Deconfounds (when requested and covariates exist) then standardizes.
    pub fn fit_apply(cohort: &Cohort, deconfound_covariates: bool) -> Result<(Cohort, Self)> {
        let (base, confound) = if deconfound_covariates {
            let (c, m) = deconfound(cohort)?;
            (c, Some(m))
        } else {
            (cohort.clone(), None)
        };
        let (out, standardize) = standardize(&base, None)?;
        Ok((
            out,
            Self {
                confound,
                standardize,
            },
        ))
    }

    pub fn apply(&self, cohort: &Cohort) -> Result<Cohort> {
        let base = match &self.confound {
            Some(m) => m.apply(cohort)?,
            None => cohort.clone(),
        };
        self.standardize.apply(&base)
    }
}
