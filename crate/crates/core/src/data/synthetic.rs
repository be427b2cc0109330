use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::cohort::{Cohort, CohortLabel, Covariates};
use crate::error::{Error, Result};
use crate::gradnet::Tensor;

pub const DEFAULT_MODALITY_DIMS: [usize; 2] = [82, 70];
pub const DEFAULT_LATENT_DIM: usize = 8;

/// Latent factor model used to simulate multi-modal cohorts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_train: usize,
    pub n_holdout: usize,
    pub n_disease: usize,
    pub latent_dim: usize,
    pub modality_dims: Vec<usize>,
    /// Observation noise standard deviation per modality.
    pub noise_sd: Vec<f64>,
    /// Explicit `latent_dim x P_m` loadings; drawn from the seed when absent.
    pub loadings: Option<Vec<Vec<Vec<f64>>>>,
    /// Shift added to the disease subjects' latents.
    pub shift: f64,
    pub shifted_latents: Vec<usize>,
    /// Disease subjects get shift `shift * s` with `s ~ U(1 - spread, 1 + spread)`,
    /// recorded as their severity.
    pub severity_spread: f64,
    /// Scale of the age and intracranial-volume effects on every feature.
    pub confound_strength: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_holdout: 2000,
            n_disease: 2000,
            latent_dim: DEFAULT_LATENT_DIM,
            modality_dims: DEFAULT_MODALITY_DIMS.to_vec(),
            noise_sd: vec![0.5, 0.5],
            loadings: None,
            shift: 2.0,
            shifted_latents: vec![0, 1, 2],
            severity_spread: 0.0,
            confound_strength: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if self.modality_dims.is_empty() || self.modality_dims.contains(&0) {
            return bad("every modality needs at least one feature".into());
        }
        if self.noise_sd.len() != self.modality_dims.len() {
            return bad(format!(
                "{} noise levels for {} modalities",
                self.noise_sd.len(),
                self.modality_dims.len()
            ));
        }
        if self.noise_sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("noise standard deviations must be finite and non-negative".into());
        }
        if self.shifted_latents.iter().any(|&l| l >= self.latent_dim) {
            return bad("shifted latent index out of range".into());
        }
        if !(0.0..=1.0).contains(&self.severity_spread) {
            return bad("severity_spread must lie in [0, 1]".into());
        }
        if !self.shift.is_finite() || !self.confound_strength.is_finite() {
            return bad("shift and confound_strength must be finite".into());
        }
        if let Some(w) = &self.loadings {
            let ok = w.len() == self.modality_dims.len()
                && w.iter().zip(&self.modality_dims).all(|(m, &p)| {
                    m.len() == self.latent_dim
                        && m.iter()
                            .all(|r| r.len() == p && r.iter().all(|v| v.is_finite()))
                });
            if !ok {
                return bad("loadings must be latent_dim x P_m for every modality".into());
            }
        }
        if self.n_train + self.n_holdout + self.n_disease == 0 {
            return bad("the spec generates no subjects".into());
        }
        Ok(())
    }

    /// Total number of features across modalities.
    pub fn n_features(&self) -> usize {
        self.modality_dims.iter().sum()
    }
}

/// Simulates healthy training, healthy holdout and disease cohorts.
///
/// Loadings (unless given) are `N(0, 1 / latent_dim)` so each feature's
/// latent signal has unit expected variance.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let l = spec.latent_dim;
    let scale = (1.0 / l as f64).sqrt();
    let loadings = match &spec.loadings {
        Some(w) => w.clone(),
        None => spec
            .modality_dims
            .iter()
            .map(|&p| {
                (0..l)
                    .map(|_| {
                        (0..p)
                            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect()
            })
            .collect(),
    };
    let confound_effects: Vec<Vec<[f64; 3]>> = spec
        .modality_dims
        .iter()
        .map(|&p| {
            (0..p)
                .map(|_| {
                    [0; 3].map(|_| spec.confound_strength * rng.sample::<f64, _>(StandardNormal))
                })
                .collect()
        })
        .collect();

    let cohorts = [
        (CohortLabel::HealthyTrain, spec.n_train),
        (CohortLabel::HealthyHoldout, spec.n_holdout),
        (CohortLabel::Disease, spec.n_disease),
    ];
    let n: usize = cohorts.iter().map(|c| c.1).sum();
    let mut values: Vec<Vec<f64>> = spec
        .modality_dims
        .iter()
        .map(|&p| Vec::with_capacity(n * p))
        .collect();
    let mut ids = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut icv = Vec::with_capacity(n);
    let mut severity = Vec::with_capacity(n);
    for (label, count) in cohorts {
        for k in 0..count {
            let mut z: Vec<f64> = (0..l).map(|_| rng.sample(StandardNormal)).collect();
            let s = if label == CohortLabel::Disease {
                let s = 1.0 + spec.severity_spread * rng.random_range(-1.0..=1.0);
                for &j in &spec.shifted_latents {
                    z[j] += spec.shift * s;
                }
                s
            } else {
                0.0
            };
            let a: f64 = rng.random_range(45.0..80.0);
            let v: f64 = 1500.0 + 150.0 * rng.sample::<f64, _>(StandardNormal);
            let (a_std, v_std) = ((a - 62.5) / 10.0, (v - 1500.0) / 150.0);
            for (m, w) in loadings.iter().enumerate() {
                for (j, effect) in confound_effects[m].iter().enumerate() {
                    let signal: f64 = (0..l).map(|i| z[i] * w[i][j]).sum();
                    let conf =
                        effect[0] * a_std + effect[1] * (a_std * a_std - 1.0) + effect[2] * v_std;
                    let eps: f64 = rng.sample(StandardNormal);
                    values[m].push(signal + conf + spec.noise_sd[m] * eps);
                }
            }
            ids.push(format!("{}-{:05}", label_prefix(label), k));
            labels.push(label);
            age.push(a);
            icv.push(v);
            severity.push(s);
        }
    }
    let modalities = values
        .into_iter()
        .zip(&spec.modality_dims)
        .map(|(v, &p)| Tensor::matrix(n, p, v))
        .collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = (0..spec.modality_dims.len())
        .map(|m| format!("modality{m}"))
        .collect();
    let features = spec
        .modality_dims
        .iter()
        .map(|&p| (0..p).map(|j| format!("f{j:03}")).collect())
        .collect();
    Cohort::new(
        names,
        features,
        modalities,
        ids,
        labels,
        Some(Covariates {
            age,
            icv,
            severity: Some(severity),
        }),
    )
}

fn label_prefix(label: CohortLabel) -> &'static str {
    match label {
        CohortLabel::HealthyTrain => "train",
        CohortLabel::HealthyHoldout => "holdout",
        CohortLabel::Disease => "disease",
    }
}

/// Generator settings echoed next to generated files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub version: String,
    pub seed: u64,
    pub spec: SyntheticSpec,
}

impl Provenance {
    pub fn new(spec: &SyntheticSpec) -> Self {
        Self {
            generator: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: spec.seed,
            spec: spec.clone(),
        }
    }
}
