use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use log::{info, warn};
use normflux::data::{
    generate_synthetic, load_dir, read_json, save_csv, write_json, write_provenance, Cohort,
    PreprocessStats, Provenance,
};
use normflux::deviation::{
    DeviationReport, Metric, SignificanceResult, DISEASE_COHORT, HOLDOUT_COHORT,
};
use normflux::mvae::{
    fine_tune, run_training, FusionKind, LatentChoice, ModelCheckpoint, MvaeModel, TrainOptions,
    TrainingHistory,
};
use normflux::pipeline::{
    evaluate, score_cohort, severity_covariate, write_plot_csv, Evaluation, ModelLabel,
    ScoreOptions, ScoredModel,
};
use serde::{Deserialize, Serialize};

use crate::config::{Command, RunConfig};
use crate::error::{CliError, CliResult};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const ALPHA_FILE: &str = "alpha.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const DUF_FILE: &str = "duf.csv";
pub const SCORE_SUMMARY_FILE: &str = "score.json";
pub const SIGNIFICANCE_FILE: &str = "significance.json";
pub const SIGNIFICANCE_TABLE_FILE: &str = "significance.csv";
pub const PLOT_FILE: &str = "plot_data.csv";

/// Metadata written next to a deviation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub model: ModelLabel,
    pub modality_order: Vec<String>,
    pub options: ScoreOptions,
    /// Disease-versus-holdout results, when both cohorts were scored.
    pub significance: BTreeMap<Metric, SignificanceResult>,
}

pub fn run_command(command: Command, cfg: &RunConfig) -> CliResult<()> {
    cfg.validate(command)?;
    let out = cfg.out.as_deref().expect("validated");
    fs::create_dir_all(out)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", out.display())))?;
    match command {
        Command::Generate => cmd_generate(cfg, out),
        Command::Train => cmd_train(cfg, out),
        Command::Finetune => cmd_finetune(cfg, out),
        Command::Score => cmd_score(cfg, out),
        Command::Evaluate => cmd_evaluate(cfg, out),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated")
}

fn load_cohort(dir: &Path) -> CliResult<Cohort> {
    let loaded = load_dir(dir)?;
    if !loaded.excluded.is_empty() {
        warn!(
            "excluded {} subjects missing from at least one file: {}",
            loaded.excluded.len(),
            loaded.excluded.join(", ")
        );
    }
    Ok(loaded.cohort)
}

fn preprocess(cfg: &RunConfig, raw: &Cohort) -> CliResult<(Cohort, PreprocessStats)> {
    let deconfound = cfg.deconfound && raw.covariates().is_some();
    if cfg.deconfound && !deconfound {
        warn!("cohort has no covariates; skipping deconfounding");
    }
    Ok(PreprocessStats::fit_apply(raw, deconfound)?)
}

fn cmd_generate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let cohort = generate_synthetic(&cfg.synthetic)?;
    save_csv(&cohort, out)?;
    write_provenance(out, &Provenance::new(&cfg.synthetic))?;
    info!(
        "wrote {} subjects to {}",
        cohort.n_subjects(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let raw = load_cohort(required(&cfg.data_dir))?;
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let (mut model, cohort, pre, resume) = if cfg.resume && ckpt_path.exists() {
        let ckpt = ModelCheckpoint::<f64>::load(&ckpt_path)?;
        if ckpt.config != cfg.model {
            return Err(CliError::Config(format!(
                "{} was trained with a different model configuration",
                ckpt_path.display()
            )));
        }
        let pre = ckpt
            .preprocess
            .clone()
            .ok_or_else(|| CliError::Data("checkpoint has no preprocessing statistics".into()))?;
        let cohort = pre.apply(&raw)?;
        (ckpt.to_model()?, cohort, pre, ckpt.train_state)
    } else {
        let (cohort, pre) = preprocess(cfg, &raw)?;
        (
            MvaeModel::new(cfg.model.clone(), &cohort.modality_dims())?,
            cohort,
            pre,
            None,
        )
    };
    if resume.as_ref().is_some_and(|s| s.finished) {
        info!("checkpoint already holds a finished run");
    }
    let options = TrainOptions {
        max_epochs: None,
        stop_after_epoch: cfg.stop_after_epoch,
    };
    let data = cohort.modality_data(normflux::data::CohortLabel::HealthyTrain);
    let state = run_training(&mut model, &data, options, resume)?;
    info!(
        "{} epochs, best validation loss {:.6} at epoch {}",
        state.history.epochs_run(),
        state.history.best_val_loss(),
        state.history.best_epoch
    );
    write_history(&state.history, &out.join(HISTORY_FILE))?;
    write_alpha(&model, cohort.modality_names(), &out.join(ALPHA_FILE))?;
    let names = cohort.modality_names().to_vec();
    ModelCheckpoint::from_model(&model, names, Some(pre), Some(state)).save(&ckpt_path)?;
    Ok(())
}

fn cmd_finetune(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ckpt = ModelCheckpoint::<f64>::load(required(&cfg.checkpoint))?;
    let mut model = ckpt.to_model()?;
    let raw = load_cohort(required(&cfg.data_dir))?;
    let (cohort, pre) = preprocess(cfg, &raw)?;
    let data = cohort.modality_data(normflux::data::CohortLabel::HealthyTrain);
    let history = fine_tune(&mut model, &data, cfg.model.fine_tune_max_epochs)?;
    info!("fine-tuned for {} epochs", history.epochs_run());
    write_history(&history, &out.join(HISTORY_FILE))?;
    write_alpha(&model, cohort.modality_names(), &out.join(ALPHA_FILE))?;
    let names = cohort.modality_names().to_vec();
    ModelCheckpoint::from_model(&model, names, Some(pre), None).save(&out.join(CHECKPOINT_FILE))?;
    Ok(())
}

fn model_label(cfg: &RunConfig, model: &MvaeModel<f64>, modality_names: &[String]) -> ModelLabel {
    let c = model.config();
    let name = cfg.model_name.clone().unwrap_or_else(|| match c.fusion {
        FusionKind::Unimodal => format!(
            "unimodal-{}",
            modality_names
                .get(c.modality)
                .cloned()
                .unwrap_or_else(|| c.modality.to_string())
        ),
        f => f.to_string(),
    });
    ModelLabel {
        name,
        fusion: c.fusion,
        latent_dim: c.latent_dim,
    }
}

fn cmd_score(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let ckpt = ModelCheckpoint::<f64>::load(required(&cfg.checkpoint))?;
    let model = ckpt.to_model()?;
    let raw = load_cohort(required(&cfg.data_dir))?;
    if !ckpt.modality_names.is_empty() && ckpt.modality_names != raw.modality_names() {
        return Err(CliError::Data(format!(
            "cohort modalities {:?} do not match the checkpoint's {:?}",
            raw.modality_names(),
            ckpt.modality_names
        )));
    }
    let cohort = match &ckpt.preprocess {
        Some(p) => p.apply(&raw)?,
        None => raw,
    };
    let mut options = cfg.score.clone();
    if let LatentChoice::Sample(_) = options.latent {
        options.latent = LatentChoice::Sample(cfg.model.seed);
    }
    let report = score_cohort(&model, &cohort, &options)?;
    report.write_csv(create(&out.join(REPORT_FILE))?)?;
    report.write_duf_csv(create(&out.join(DUF_FILE))?)?;
    let summary = ScoreSummary {
        model: model_label(cfg, &model, cohort.modality_names()),
        modality_order: report.modality_order.clone(),
        options,
        significance: significance_if_possible(&report),
    };
    write_json(&out.join(SCORE_SUMMARY_FILE), &summary)?;
    info!("scored {} subjects", report.subjects.len());
    Ok(())
}

fn significance_if_possible(report: &DeviationReport) -> BTreeMap<Metric, SignificanceResult> {
    let has = |c: &str| report.subjects.iter().any(|s| s.cohort == c);
    if !(has(DISEASE_COHORT) && has(HOLDOUT_COHORT)) {
        return BTreeMap::new();
    }
    [Metric::Dml, Metric::Dmf, Metric::Duf]
        .into_iter()
        .filter_map(|m| report.significance(m).ok().map(|r| (m, r)))
        .collect()
}

fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let mut models = Vec::with_capacity(cfg.reports.len());
    for dir in &cfg.reports {
        let summary_path = dir.join(SCORE_SUMMARY_FILE);
        let report_path = dir.join(REPORT_FILE);
        if !summary_path.exists() || !report_path.exists() {
            return Err(CliError::Data(format!(
                "{} holds no score report",
                dir.display()
            )));
        }
        let summary: ScoreSummary = read_json(&summary_path)?;
        let file = File::open(&report_path)?;
        let subjects = DeviationReport::read_csv(file)?;
        models.push(ScoredModel {
            label: summary.model,
            subjects,
        });
    }
    let covariate = match (&cfg.covariate, &cfg.data_dir) {
        (Some(_), Some(dir)) => {
            let cov = severity_covariate(&load_cohort(dir)?);
            if cov.is_none() {
                warn!(
                    "cohort in {} records no severity; skipping correlations",
                    dir.display()
                );
            }
            cov
        }
        _ => None,
    };
    let evaluation = evaluate(&models, &cfg.metrics, covariate.as_ref())?;
    write_json(&out.join(SIGNIFICANCE_FILE), &evaluation)?;
    write_significance_table(&evaluation, &out.join(SIGNIFICANCE_TABLE_FILE))?;
    write_plot_csv(&models, covariate.as_ref(), create(&out.join(PLOT_FILE))?)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Data(e.to_string())
}

fn write_significance_table(evaluation: &Evaluation, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record([
        "model",
        "fusion",
        "latent_dim",
        "metric",
        "tpr",
        "fpr",
        "ratio",
    ])
    .map_err(csv_err)?;
    for e in &evaluation.entries {
        w.write_record([
            e.model.clone(),
            e.fusion.to_string(),
            e.latent_dim.to_string(),
            e.metric.to_string(),
            e.result.tpr.to_string(),
            e.result.fpr.to_string(),
            e.result.ratio_label(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch losses; epoch 0 holds the initial validation loss.
fn write_history(history: &TrainingHistory, path: &Path) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["epoch", "train_loss", "val_loss"])
        .map_err(csv_err)?;
    w.write_record([
        "0".to_string(),
        String::new(),
        history.initial_val_loss.to_string(),
    ])
    .map_err(csv_err)?;
    for (k, (t, v)) in history.train_loss.iter().zip(&history.val_loss).enumerate() {
        w.write_record([(k + 1).to_string(), t.to_string(), v.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// gPoE weights with one row per modality and one column per latent dimension.
fn write_alpha(model: &MvaeModel<f64>, modality_names: &[String], path: &Path) -> CliResult<()> {
    if model.alpha_logits_id().is_none() {
        return Ok(());
    }
    let alpha = model.get_alpha()?;
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["modality".to_string()];
    header.extend((0..model.latent_dim()).map(|i| format!("z{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in modality_names.iter().zip(alpha.rows()) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
