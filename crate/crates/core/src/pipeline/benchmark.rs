use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, Cohort, CohortLabel, PreprocessStats, SyntheticSpec};
use crate::deviation::{DeviationReport, Metric};
use crate::error::{Error, Result};
use crate::mvae::{train, FusionKind, ModelConfig, MvaeModel, TrainingHistory};
use crate::pipeline::evaluate::{evaluate, Evaluation, ModelLabel, ScoredModel, SubjectCovariate};
use crate::pipeline::score::{score_cohort, ScoreOptions};

/// Latent dimensions of the full benchmark table.
pub const BENCHMARK_LATENT_DIMS: [usize; 4] = [5, 10, 15, 20];

/// A model family of the benchmark menu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelVariant {
    pub name: String,
    pub fusion: FusionKind,
    /// Modality of a uni-modal baseline.
    pub modality: usize,
}

impl ModelVariant {
    pub fn new(fusion: FusionKind) -> Self {
        Self {
            name: fusion.to_string(),
            fusion,
            modality: 0,
        }
    }

    pub fn unimodal(modality: usize, modality_name: &str) -> Self {
        Self {
            name: format!("unimodal-{modality_name}"),
            fusion: FusionKind::Unimodal,
            modality,
        }
    }

    /// gPoE, MoE, PoE, concatenation and one uni-modal model per modality.
    pub fn menu(modality_names: &[String]) -> Vec<Self> {
        let mut out: Vec<Self> = [
            FusionKind::Gpoe,
            FusionKind::Moe,
            FusionKind::Poe,
            FusionKind::Concat,
        ]
        .into_iter()
        .map(Self::new)
        .collect();
        out.extend(
            modality_names
                .iter()
                .enumerate()
                .map(|(m, n)| Self::unimodal(m, n)),
        );
        out
    }

    pub fn config(&self, base: &ModelConfig, latent_dim: usize) -> ModelConfig {
        ModelConfig {
            latent_dim,
            fusion: self.fusion,
            modality: self.modality,
            ..base.clone()
        }
    }
}

/// A synthetic cohort, a model menu and a grid of latent dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub data: SyntheticSpec,
    pub base: ModelConfig,
    pub variants: Vec<ModelVariant>,
    pub latent_dims: Vec<usize>,
    pub score: ScoreOptions,
    pub deconfound: bool,
}

impl BenchmarkSpec {
    /// Full menu over [`BENCHMARK_LATENT_DIMS`] on the given data.
    pub fn new(data: SyntheticSpec, base: ModelConfig) -> Self {
        let names: Vec<String> = (0..data.modality_dims.len())
            .map(|m| format!("modality{m}"))
            .collect();
        Self {
            data,
            base,
            variants: ModelVariant::menu(&names),
            latent_dims: BENCHMARK_LATENT_DIMS.to_vec(),
            score: ScoreOptions::default(),
            deconfound: true,
        }
    }
}

/// Training and scoring outcome of one variant at one latent dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub variant: ModelVariant,
    pub latent_dim: usize,
    pub history: TrainingHistory,
    /// Final gPoE weights, `modality x latent`.
    pub alpha: Option<Vec<Vec<f64>>>,
    pub report: DeviationReport,
}

impl BenchmarkRun {
    pub fn label(&self) -> ModelLabel {
        ModelLabel {
            name: self.variant.name.clone(),
            fusion: self.variant.fusion,
            latent_dim: self.latent_dim,
        }
    }

    /// Mean weight of each modality over latent dimensions.
    pub fn mean_alpha(&self) -> Option<Vec<f64>> {
        self.alpha.as_ref().map(|a| {
            a.iter()
                .map(|row| row.iter().sum::<f64>() / row.len() as f64)
                .collect()
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub runs: Vec<BenchmarkRun>,
    pub evaluation: Evaluation,
}

/// Trains a model on the healthy training rows of a preprocessed cohort and scores every subject.
pub fn fit_and_score(
    cohort: &Cohort,
    config: ModelConfig,
    options: &ScoreOptions,
) -> Result<(MvaeModel<f64>, TrainingHistory, DeviationReport)> {
    let mut model = MvaeModel::new(config, &cohort.modality_dims())?;
    let history = train(&mut model, &cohort.modality_data(CohortLabel::HealthyTrain))?;
    let report = score_cohort(&model, cohort, options)?;
    Ok((model, history, report))
}

/// The severity covariate of a cohort keyed by subject id, if recorded.
pub fn severity_covariate(cohort: &Cohort) -> Option<SubjectCovariate> {
    let severity = cohort.covariates()?.severity.as_ref()?;
    Some(SubjectCovariate {
        name: "severity".into(),
        values: cohort
            .subject_ids()
            .iter()
            .cloned()
            .zip(severity.iter().copied())
            .collect(),
    })
}

/// Generates the synthetic cohort, then trains and scores every variant at every latent dimension.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<BenchmarkOutcome> {
    if spec.variants.is_empty() || spec.latent_dims.is_empty() {
        return Err(Error::InvalidArgument(
            "benchmark needs variants and latent dimensions".into(),
        ));
    }
    let raw = generate_synthetic(&spec.data)?;
    let (cohort, _) = PreprocessStats::fit_apply(&raw, spec.deconfound)?;
    let mut runs = Vec::new();
    for &latent_dim in &spec.latent_dims {
        for variant in &spec.variants {
            let (model, history, report) =
                fit_and_score(&cohort, variant.config(&spec.base, latent_dim), &spec.score)?;
            let alpha = if model.alpha_logits_id().is_some() {
                Some(model.get_alpha()?.rows().to_vec())
            } else {
                None
            };
            log::info!(
                "{} L={latent_dim}: {} epochs, best validation loss {:.4}",
                variant.name,
                history.epochs_run(),
                history.best_val_loss()
            );
            runs.push(BenchmarkRun {
                variant: variant.clone(),
                latent_dim,
                history,
                alpha,
                report,
            });
        }
    }
    let scored: Vec<ScoredModel> = runs
        .iter()
        .map(|r| ScoredModel::from_report(r.label(), &r.report))
        .collect();
    let evaluation = evaluate(
        &scored,
        &[Metric::Dml, Metric::Dmf, Metric::Duf],
        severity_covariate(&raw).as_ref(),
    )?;
    Ok(BenchmarkOutcome { runs, evaluation })
}
