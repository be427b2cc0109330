//! Diagonal-Gaussian algebra for combining per-modality experts.
//!
//! Products of Gaussian densities are Gaussian, so the fused posterior of a
//! product (or weighted product) of experts is available in closed form:
//! precisions add, and the fused mean is the precision-weighted average of
//! the expert means. None of the routines here materialise the product's
//! normalising constant; densities are only ever handled in log space.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::scalar::{ordered_sum, Scalar};

/// Smallest variance admitted when building an expert from network outputs.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Tolerance on the per-latent-dimension sum of gPoE weights.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Gaussian with diagonal covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian<T> {
    mean: Vec<T>,
    var: Vec<T>,
}

impl<T: Scalar> DiagGaussian<T> {
    pub fn new(mean: Vec<T>, var: Vec<T>) -> Result<Self> {
        if mean.len() != var.len() {
            return Err(dim_err!(
                "mean has length {} but variance has length {}",
                mean.len(),
                var.len()
            ));
        }
        if mean.is_empty() {
            return Err(Error::Empty("gaussian with zero dimensions".into()));
        }
        if let Some(i) = mean.iter().position(|m| !m.is_finite()) {
            return Err(Error::NonFinite(format!("mean[{i}] = {}", mean[i])));
        }
        if let Some(i) = var.iter().position(|v| !(v.is_finite() && *v > T::zero())) {
            return Err(Error::InvalidArgument(format!(
                "variance must be positive and finite, var[{i}] = {}",
                var[i]
            )));
        }
        Ok(Self { mean, var })
    }

    /// Standard normal N(0, I) of dimension `dim`.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![T::zero(); dim],
            var: vec![T::one(); dim],
        }
    }

    /// Builds an expert from an encoder's mean and log-variance heads,
    /// flooring the variance at [`VARIANCE_FLOOR`].
    pub fn from_log_var(mean: Vec<T>, log_var: &[T]) -> Result<Self> {
        let floor = T::lit(VARIANCE_FLOOR);
        let var = log_var.iter().map(|lv| lv.exp().max(floor)).collect();
        Self::new(mean, var)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[T] {
        &self.mean
    }

    pub fn var(&self) -> &[T] {
        &self.var
    }

    pub fn precision(&self) -> Vec<T> {
        self.var.iter().map(|v| v.recip()).collect()
    }

    /// Closed-form KL(self || N(0, I)).
    pub fn kl_to_std_normal(&self) -> T {
        kl_to_std_normal(self)
    }

    pub fn log_pdf(&self, x: &[T]) -> Result<T> {
        log_pdf(self, x)
    }
}

/// Per-(modality, latent dimension) weights on the modality simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpoeWeights<T> {
    alpha: Vec<Vec<T>>,
}

impl<T: Scalar> GpoeWeights<T> {
    /// `alpha[m][l]` is the weight of modality `m` on latent dimension `l`.
    pub fn new(alpha: Vec<Vec<T>>) -> Result<Self> {
        let n_modalities = alpha.len();
        if n_modalities == 0 {
            return Err(Error::Empty("gpoe weights with no modalities".into()));
        }
        let dim = alpha[0].len();
        if dim == 0 {
            return Err(Error::Empty(
                "gpoe weights with no latent dimensions".into(),
            ));
        }
        if let Some(m) = alpha.iter().position(|row| row.len() != dim) {
            return Err(dim_err!(
                "weight row {m} has length {} but row 0 has length {dim}",
                alpha[m].len()
            ));
        }
        for (m, row) in alpha.iter().enumerate() {
            for (l, a) in row.iter().enumerate() {
                if !(*a > T::zero() && *a < T::one()) {
                    return Err(Error::InvalidArgument(format!(
                        "alpha[{m}][{l}] = {a} is outside (0, 1)"
                    )));
                }
            }
        }
        let tol = T::lit(SIMPLEX_TOLERANCE).max(T::epsilon() * T::from_count(4 * n_modalities));
        for l in 0..dim {
            let total = ordered_sum(alpha.iter().map(|row| row[l]));
            if (total - T::one()).abs() > tol {
                return Err(Error::InvalidArgument(format!(
                    "weights for latent dimension {l} sum to {total}, expected 1"
                )));
            }
        }
        Ok(Self { alpha })
    }

    /// Uniform weights 1/M for every latent dimension.
    pub fn uniform(n_modalities: usize, dim: usize) -> Result<Self> {
        if n_modalities < 2 {
            // a single modality would need alpha = 1, which is outside the open simplex
            return Err(Error::InvalidArgument(
                "uniform gpoe weights need at least two modalities".into(),
            ));
        }
        let w = T::one() / T::from_count(n_modalities);
        Self::new(vec![vec![w; dim]; n_modalities])
    }

    /// Softmax over the modality axis of an `M x L` logit matrix.
    pub fn from_logits(logits: &[Vec<T>]) -> Result<Self> {
        let n_modalities = logits.len();
        if n_modalities == 0 {
            return Err(Error::Empty("no logit rows".into()));
        }
        let dim = logits[0].len();
        if logits.iter().any(|r| r.len() != dim) {
            return Err(dim_err!("ragged logit matrix"));
        }
        let mut alpha = vec![vec![T::zero(); dim]; n_modalities];
        for l in 0..dim {
            let max = logits.iter().map(|r| r[l]).fold(T::neg_infinity(), T::max);
            let exps: Vec<T> = logits.iter().map(|r| (r[l] - max).exp()).collect();
            let total = ordered_sum(exps.iter().copied());
            for (m, e) in exps.into_iter().enumerate() {
                alpha[m][l] = e / total;
            }
        }
        Self::new(alpha)
    }

    pub fn n_modalities(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn rows(&self) -> &[Vec<T>] {
        &self.alpha
    }

    pub fn get(&self, modality: usize, latent: usize) -> T {
        self.alpha[modality][latent]
    }

    /// Mean weight of each modality across latent dimensions.
    pub fn modality_means(&self) -> Vec<T> {
        let d = T::from_count(self.dim());
        self.alpha
            .iter()
            .map(|row| ordered_sum(row.iter().copied()) / d)
            .collect()
    }
}

/// Uniform mixture of experts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixturePosterior<T> {
    components: Vec<DiagGaussian<T>>,
}

impl<T: Scalar> MixturePosterior<T> {
    pub fn new(components: Vec<DiagGaussian<T>>) -> Result<Self> {
        check_experts(&components)?;
        Ok(Self { components })
    }

    pub fn components(&self) -> &[DiagGaussian<T>] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn weights(&self) -> Vec<T> {
        vec![T::one() / T::from_count(self.components.len()); self.components.len()]
    }

    /// Mean of the mixture, i.e. the average of the component means.
    pub fn mean(&self) -> Vec<T> {
        let m = T::from_count(self.components.len());
        (0..self.dim())
            .map(|i| ordered_sum(self.components.iter().map(|c| c.mean[i])) / m)
            .collect()
    }
}

fn check_experts<T: Scalar>(experts: &[DiagGaussian<T>]) -> Result<usize> {
    let first = experts
        .first()
        .ok_or_else(|| Error::Empty("expert list is empty".into()))?;
    let dim = first.dim();
    if let Some(m) = experts.iter().position(|e| e.dim() != dim) {
        return Err(dim_err!(
            "expert {m} has dimension {} but expert 0 has dimension {dim}",
            experts[m].dim()
        ));
    }
    Ok(dim)
}

/// Product of experts: precisions add, means are precision weighted.
pub fn poe_fuse<T: Scalar>(experts: &[DiagGaussian<T>]) -> Result<DiagGaussian<T>> {
    let dim = check_experts(experts)?;
    let ones = vec![vec![T::one(); dim]; experts.len()];
    weighted_product(experts, &ones)
}

/// Generalised product of experts with simplex-constrained weights.
pub fn gpoe_fuse<T: Scalar>(
    experts: &[DiagGaussian<T>],
    weights: &GpoeWeights<T>,
) -> Result<DiagGaussian<T>> {
    let dim = check_experts(experts)?;
    if weights.n_modalities() != experts.len() || weights.dim() != dim {
        return Err(dim_err!(
            "weights are {}x{} but there are {} experts of dimension {dim}",
            weights.n_modalities(),
            weights.dim(),
            experts.len()
        ));
    }
    weighted_product(experts, weights.rows())
}

/// Weighted product `prod_m q_m^{w_m}` for arbitrary positive exponents.
///
/// The fused precision is `sum_m w_m / var_m`; the fused variance is its
/// reciprocal. Reductions run in ascending modality order.
pub fn weighted_product<T: Scalar>(
    experts: &[DiagGaussian<T>],
    exponents: &[Vec<T>],
) -> Result<DiagGaussian<T>> {
    let dim = check_experts(experts)?;
    if exponents.len() != experts.len() || exponents.iter().any(|r| r.len() != dim) {
        return Err(dim_err!(
            "exponent matrix does not match {} experts of dimension {dim}",
            experts.len()
        ));
    }
    let mut mean = Vec::with_capacity(dim);
    let mut var = Vec::with_capacity(dim);
    for i in 0..dim {
        let mut precision = T::zero();
        let mut weighted_mean = T::zero();
        for (e, w) in experts.iter().zip(exponents) {
            let p = w[i] / e.var[i];
            precision += p;
            weighted_mean += p * e.mean[i];
        }
        if !(precision > T::zero()) {
            return Err(Error::Numeric(format!(
                "fused precision {precision} in dimension {i} is not positive"
            )));
        }
        mean.push(weighted_mean / precision);
        var.push(precision.recip());
    }
    DiagGaussian::new(mean, var)
}

/// KL(q || N(0, I)) = 1/2 sum_i (var_i + mean_i^2 - 1 - ln var_i).
pub fn kl_to_std_normal<T: Scalar>(q: &DiagGaussian<T>) -> T {
    let half = T::lit(0.5);
    ordered_sum(
        q.mean
            .iter()
            .zip(&q.var)
            .map(|(&m, &v)| v + m * m - T::one() - v.ln()),
    ) * half
}

/// Exact log density of a diagonal Gaussian.
pub fn log_pdf<T: Scalar>(g: &DiagGaussian<T>, x: &[T]) -> Result<T> {
    if x.len() != g.dim() {
        return Err(dim_err!(
            "point has length {} but gaussian has {}",
            x.len(),
            g.dim()
        ));
    }
    let half = T::lit(0.5);
    let ln_2pi = (T::PI() + T::PI()).ln();
    Ok(ordered_sum(x.iter().zip(&g.mean).zip(&g.var).map(
        |((&xi, &m), &v)| {
            let d = xi - m;
            -half * (ln_2pi + v.ln() + d * d / v)
        },
    )))
}

/// `mean + sqrt(var) * noise`.
pub fn reparam_sample<T: Scalar>(g: &DiagGaussian<T>, noise: &[T]) -> Result<Vec<T>> {
    if noise.len() != g.dim() {
        return Err(dim_err!(
            "noise has length {} but gaussian has {}",
            noise.len(),
            g.dim()
        ));
    }
    Ok(g.mean
        .iter()
        .zip(&g.var)
        .zip(noise)
        .map(|((&m, &v), &e)| m + v.sqrt() * e)
        .collect())
}

/// Draws a vector of independent standard-normal values.
pub fn standard_normal_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| T::lit(rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

/// Picks a component uniformly, then samples it by reparameterisation.
pub fn moe_sample<T: Scalar, R: Rng + ?Sized>(
    mixture: &MixturePosterior<T>,
    rng: &mut R,
) -> (Vec<T>, usize) {
    let index = rng.random_range(0..mixture.n_components());
    let noise = standard_normal_vec(rng, mixture.dim());
    let sample = moe_sample_with(mixture, index, &noise).expect("noise length matches mixture");
    (sample, index)
}

/// Deterministic variant of [`moe_sample`] with a given component and noise.
pub fn moe_sample_with<T: Scalar>(
    mixture: &MixturePosterior<T>,
    index: usize,
    noise: &[T],
) -> Result<Vec<T>> {
    let component = mixture.components.get(index).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "component {index} out of range for {} components",
            mixture.n_components()
        ))
    })?;
    reparam_sample(component, noise)
}
