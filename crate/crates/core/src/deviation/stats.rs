use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

/// Fraction of the cohort kept by each trimmed refit.
pub const ROBUST_RETENTION: f64 = 0.75;

/// Ridge scale relative to the mean covariance diagonal.
pub const RIDGE_SCALE: f64 = 1e-6;

/// Tolerance on covariance asymmetry.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;

/// Space a set of reference statistics was fitted in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatsSource {
    Latent,
    FeatureError,
}

/// Options for [`CohortStats::fit_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub robust: bool,
    pub ridge: bool,
    pub source: StatsSource,
}

/// Location and scatter of a reference cohort, with the Cholesky factor of
/// the covariance.
#[derive(Debug, Clone)]
pub struct CohortStats {
    mean: Vec<f64>,
    covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
    robust: bool,
    source: StatsSource,
    ridge: f64,
}

impl PartialEq for CohortStats {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean
            && self.covariance == other.covariance
            && self.robust == other.robust
            && self.source == other.source
            && self.ridge == other.ridge
    }
}

impl CohortStats {
    /// Builds statistics from an explicit mean and covariance.
    pub fn from_parts(
        mean: Vec<f64>,
        covariance: &[Vec<f64>],
        source: StatsSource,
    ) -> Result<Self> {
        let l = mean.len();
        if l == 0 {
            return Err(Error::Empty(
                "statistics need at least one dimension".into(),
            ));
        }
        if covariance.len() != l || covariance.iter().any(|r| r.len() != l) {
            return Err(dim_err!("covariance must be {l}x{l}"));
        }
        let cov = DMatrix::from_fn(l, l, |i, j| covariance[i][j]);
        Self::from_matrix(mean, cov, false, source, 0.0)
    }

    fn from_matrix(
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        robust: bool,
        source: StatsSource,
        ridge: f64,
    ) -> Result<Self> {
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(
                "statistics contain non-finite values".into(),
            ));
        }
        let l = mean.len();
        for i in 0..l {
            for j in 0..i {
                let (a, b) = (covariance[(i, j)], covariance[(j, i)]);
                if (a - b).abs() > SYMMETRY_TOLERANCE * a.abs().max(b.abs()).max(1.0) {
                    return Err(Error::Numeric(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        let factor = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?
            .unpack();
        Self::with_factor(mean, covariance, factor, robust, source, ridge)
    }

    fn with_factor(
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        factor: DMatrix<f64>,
        robust: bool,
        source: StatsSource,
        ridge: f64,
    ) -> Result<Self> {
        Ok(Self {
            mean,
            covariance,
            factor,
            robust,
            source,
            ridge,
        })
    }

    /// Fits with the ridge applied; see [`CohortStats::fit_with`].
    pub fn fit(samples: &[Vec<f64>], robust: bool, source: StatsSource) -> Result<Self> {
        Self::fit_with(
            samples,
            FitOptions {
                robust,
                ridge: true,
                source,
            },
        )
    }

    /// Sample mean and unbiased covariance, or the two-round trimmed refit
    /// when `robust` is set, optionally followed by the diagonal ridge.
    pub fn fit_with(samples: &[Vec<f64>], options: FitOptions) -> Result<Self> {
        let n = samples.len();
        let l = samples.first().map_or(0, Vec::len);
        if l == 0 {
            return Err(Error::Empty("no samples to fit".into()));
        }
        if samples.iter().any(|s| s.len() != l) {
            return Err(dim_err!("samples have inconsistent dimensions"));
        }
        if n <= l {
            return Err(Error::InvalidArgument(format!(
                "fitting {l}-dimensional statistics needs more than {l} samples, got {n}"
            )));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("samples contain non-finite values".into()));
        }
        let mut rows: Vec<usize> = (0..n).collect();
        let (mut mean, mut cov) = moments(samples, &rows);
        if options.robust {
            let keep = (ROBUST_RETENTION * n as f64).ceil() as usize;
            if keep <= l {
                return Err(Error::InvalidArgument(format!(
                    "robust fit keeps {keep} of {n} samples, which does not exceed the dimension {l}"
                )));
            }
            for _ in 0..2 {
                let ranking = Self::from_matrix(
                    mean.clone(),
                    regularised(&cov).0,
                    false,
                    options.source,
                    0.0,
                )?;
                let mut order: Vec<(f64, usize)> = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| ranking.mahalanobis_sq(s).map(|d| (d, i)))
                    .collect::<Result<_>>()?;
                order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let mut subset: Vec<usize> = order[..keep].iter().map(|&(_, i)| i).collect();
                subset.sort_unstable();
                (mean, cov) = moments(samples, &subset);
                rows = subset;
            }
        }
        let (cov, ridge) = if options.ridge {
            regularised(&cov)
        } else {
            (cov, 0.0)
        };
        let factor = data_factor(samples, &rows, &mean, ridge)?;
        Self::with_factor(mean, cov, factor, options.robust, options.source, ridge)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> Vec<Vec<f64>> {
        (0..self.dim())
            .map(|i| (0..self.dim()).map(|j| self.covariance[(i, j)]).collect())
            .collect()
    }

    pub fn robust(&self) -> bool {
        self.robust
    }

    pub fn source(&self) -> StatsSource {
        self.source
    }

    /// Ridge added to the covariance diagonal.
    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// Squared Mahalanobis distance through a triangular solve with the
    /// Cholesky factor.
    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(dim_err!(
                "point has {} coordinates, statistics have {}",
                x.len(),
                self.dim()
            ));
        }
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.mean).map(|(a, m)| a - m));
        let y = self
            .factor
            .solve_lower_triangular(&d)
            .ok_or_else(|| Error::Numeric("triangular solve failed".into()))?;
        Ok(y.iter().map(|v| v * v).sum())
    }

    pub fn mahalanobis(&self, x: &[f64]) -> Result<f64> {
        self.mahalanobis_sq(x).map(f64::sqrt)
    }
}

fn moments(samples: &[Vec<f64>], rows: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
    let l = samples[0].len();
    let n = rows.len() as f64;
    let mut mean = vec![0.0; l];
    for &r in rows {
        for (m, v) in mean.iter_mut().zip(&samples[r]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = DMatrix::zeros(l, l);
    for &r in rows {
        let c: Vec<f64> = samples[r].iter().zip(&mean).map(|(v, m)| v - m).collect();
        for i in 0..l {
            for j in i..l {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..l {
        for j in i..l {
            let v = cov[(i, j)] / (n - 1.0);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Lower-triangular `F` with `F F^T = cov + ridge I`, from a QR decomposition
/// of the centred rows stacked over `sqrt(ridge) I`.
fn data_factor(
    samples: &[Vec<f64>],
    rows: &[usize],
    mean: &[f64],
    ridge: f64,
) -> Result<DMatrix<f64>> {
    let l = mean.len();
    let scale = 1.0 / (rows.len() as f64 - 1.0).sqrt();
    let extra = if ridge > 0.0 { l } else { 0 };
    let stacked = DMatrix::from_fn(rows.len() + extra, l, |r, c| match rows.get(r) {
        Some(&i) => (samples[i][c] - mean[c]) * scale,
        None if r - rows.len() == c => ridge.sqrt(),
        None => 0.0,
    });
    let factor = stacked.qr().r().transpose();
    let top = factor.diagonal().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if factor
        .diagonal()
        .iter()
        .any(|v| !(v.abs() > top * f64::EPSILON * l as f64))
    {
        return Err(Error::Numeric("covariance is not positive definite".into()));
    }
    Ok(factor)
}

/// Adds `RIDGE_SCALE * trace / L` to the diagonal; a zero covariance gets
/// `RIDGE_SCALE` itself.
fn regularised(cov: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let l = cov.nrows();
    let scale = cov.trace() / l as f64;
    let ridge = RIDGE_SCALE * if scale > 0.0 { scale } else { 1.0 };
    let mut out = cov.clone();
    for i in 0..l {
        out[(i, i)] += ridge;
    }
    (out, ridge)
}

/// Per-feature healthy-cohort mean and standard deviation of squared
/// reconstruction errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureNormStats {
    /// Mean and sample standard deviation per feature of an `N x P` error matrix.
    pub fn fit(errors: &[Vec<f64>]) -> Result<Self> {
        let n = errors.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "feature statistics need at least two subjects".into(),
            ));
        }
        let p = errors[0].len();
        if errors.iter().any(|r| r.len() != p) {
            return Err(dim_err!("error rows have inconsistent lengths"));
        }
        let mut mean = vec![0.0; p];
        for row in errors {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; p];
        for row in errors {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / (n - 1) as f64).sqrt())
            .collect();
        let stats = Self { mean, std };
        if stats.mean.iter().chain(&stats.std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature statistics are not finite".into()));
        }
        Ok(stats)
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Features with zero spread, for which z-scores are undefined.
    pub fn degenerate(&self) -> Vec<usize> {
        self.std
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}
