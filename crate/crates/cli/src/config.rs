use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use normflux::data::{CohortLabel, SyntheticSpec};
use normflux::deviation::Metric;
use normflux::mvae::{FusionKind, LatentChoice, ModelConfig};
use normflux::pipeline::ScoreOptions;

use crate::error::{CliError, CliResult};

/// Every key accepted in a config file or `--set` override.
pub const CONFIG_KEYS: [&str; 38] = [
    "out",
    "data_dir",
    "checkpoint",
    "reports",
    "seed",
    "n_train",
    "n_holdout",
    "n_disease",
    "true_latent_dim",
    "modality_dims",
    "noise_sd",
    "shift",
    "shifted_latents",
    "severity_spread",
    "confound_strength",
    "latent_dim",
    "fusion",
    "modality",
    "encoder_layers",
    "decoder_layers",
    "max_epochs",
    "batch_size",
    "learning_rate",
    "early_stopping_patience",
    "fine_tune_max_epochs",
    "validation_fraction",
    "deconfound",
    "resume",
    "stop_after_epoch",
    "reference",
    "robust",
    "latent",
    "p_threshold",
    "score_cohorts",
    "threads",
    "model_name",
    "metrics",
    "covariate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Finetune,
    Score,
    Evaluate,
}

/// Fully resolved settings of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: Option<PathBuf>,
    /// Cohort directory holding a manifest, as written by `generate`.
    pub data_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    /// Output directories of earlier `score` runs.
    pub reports: Vec<PathBuf>,
    pub synthetic: SyntheticSpec,
    pub model: ModelConfig,
    pub deconfound: bool,
    pub resume: bool,
    pub stop_after_epoch: Option<usize>,
    pub score: ScoreOptions,
    pub model_name: Option<String>,
    pub metrics: Vec<Metric>,
    /// Covariate of `data_dir` correlated with deviations; only `severity` is recorded.
    pub covariate: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out: None,
            data_dir: None,
            checkpoint: None,
            reports: Vec::new(),
            synthetic: SyntheticSpec::default(),
            model: ModelConfig::default(),
            deconfound: true,
            resume: false,
            stop_after_epoch: None,
            score: ScoreOptions::default(),
            model_name: None,
            metrics: vec![Metric::Dml, Metric::Dmf, Metric::Duf],
            covariate: Some("severity".into()),
        }
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, origin: &str) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Config(format!("{origin}:{}: expected `key = value`", i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Parses one `key=value` override.
pub fn parse_override(s: &str) -> CliResult<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn value<T: FromStr>(key: &str, v: &str) -> CliResult<T> {
    v.parse()
        .map_err(|_| CliError::Config(format!("invalid value `{v}` for `{key}`")))
}

fn list<T: FromStr>(key: &str, v: &str) -> CliResult<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| value(key, s))
        .collect()
}

fn flag(key: &str, v: &str) -> CliResult<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(CliError::Config(format!(
            "invalid boolean `{v}` for `{key}`"
        ))),
    }
}

fn lib<T>(key: &str, r: normflux::Result<T>) -> CliResult<T> {
    r.map_err(|e| CliError::Config(format!("`{key}`: {e}")))
}

fn optional(v: &str) -> bool {
    !(v.is_empty() || v.eq_ignore_ascii_case("none"))
}

impl RunConfig {
    /// Applies `key = value` pairs in order; later pairs win and unknown keys are rejected.
    pub fn from_pairs(pairs: &[(String, String)]) -> CliResult<Self> {
        let mut cfg = RunConfig::default();
        let merged: BTreeMap<&str, &str> = pairs
            .iter()
            .map(|(k, v)| (k.as_str(), v.as_str()))
            .collect();
        for (&k, &v) in &merged {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> CliResult<()> {
        let s = &mut self.synthetic;
        let m = &mut self.model;
        match key {
            "out" => self.out = Some(PathBuf::from(v)),
            "data_dir" => self.data_dir = optional(v).then(|| PathBuf::from(v)),
            "checkpoint" => self.checkpoint = optional(v).then(|| PathBuf::from(v)),
            "reports" => {
                self.reports = v
                    .split(',')
                    .map(str::trim)
                    .filter(|p| !p.is_empty())
                    .map(PathBuf::from)
                    .collect()
            }
            "seed" => {
                let seed = value(key, v)?;
                s.seed = seed;
                m.seed = seed;
            }
            "n_train" => s.n_train = value(key, v)?,
            "n_holdout" => s.n_holdout = value(key, v)?,
            "n_disease" => s.n_disease = value(key, v)?,
            "true_latent_dim" => s.latent_dim = value(key, v)?,
            "modality_dims" => s.modality_dims = list(key, v)?,
            "noise_sd" => s.noise_sd = list(key, v)?,
            "shift" => s.shift = value(key, v)?,
            "shifted_latents" => s.shifted_latents = list(key, v)?,
            "severity_spread" => s.severity_spread = value(key, v)?,
            "confound_strength" => s.confound_strength = value(key, v)?,
            "latent_dim" => m.latent_dim = value(key, v)?,
            "fusion" => m.fusion = lib(key, FusionKind::from_str(v))?,
            "modality" => m.modality = value(key, v)?,
            "encoder_layers" => m.encoder_layers = list(key, v)?,
            "decoder_layers" => m.decoder_layers = list(key, v)?,
            "max_epochs" => m.max_epochs = value(key, v)?,
            "batch_size" => m.batch_size = value(key, v)?,
            "learning_rate" => m.learning_rate = value(key, v)?,
            "early_stopping_patience" => m.early_stopping_patience = value(key, v)?,
            "fine_tune_max_epochs" => m.fine_tune_max_epochs = value(key, v)?,
            "validation_fraction" => m.validation_fraction = value(key, v)?,
            "deconfound" => self.deconfound = flag(key, v)?,
            "resume" => self.resume = flag(key, v)?,
            "stop_after_epoch" => {
                self.stop_after_epoch = if optional(v) {
                    Some(value(key, v)?)
                } else {
                    None
                }
            }
            "reference" => self.score.reference = lib(key, CohortLabel::from_str(v))?,
            "robust" => self.score.robust = flag(key, v)?,
            "latent" => {
                self.score.latent = match v {
                    "mean" => LatentChoice::PosteriorMean,
                    "sample" => LatentChoice::Sample(0),
                    _ => {
                        return Err(CliError::Config(format!(
                            "`latent` must be mean or sample, got `{v}`"
                        )))
                    }
                }
            }
            "p_threshold" => self.score.p_threshold = value(key, v)?,
            "score_cohorts" => {
                self.score.cohorts = v
                    .split(',')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(|c| lib(key, CohortLabel::from_str(c)))
                    .collect::<CliResult<_>>()?
            }
            "threads" => {
                self.score.workers = if optional(v) {
                    Some(value(key, v)?)
                } else {
                    None
                }
            }
            "model_name" => self.model_name = optional(v).then(|| v.to_string()),
            "metrics" => {
                self.metrics = v
                    .split(',')
                    .map(str::trim)
                    .filter(|c| !c.is_empty())
                    .map(|c| lib(key, Metric::from_str(c)))
                    .collect::<CliResult<_>>()?
            }
            "covariate" => self.covariate = optional(v).then(|| v.to_string()),
            other => return Err(CliError::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Checks everything `command` needs before any work starts.
    pub fn validate(&self, command: Command) -> CliResult<()> {
        if self.out.is_none() {
            return Err(CliError::Config(
                "no output directory; pass --out DIR".into(),
            ));
        }
        let need = |p: &Option<PathBuf>, key: &str| {
            if p.is_none() {
                Err(CliError::Config(format!(
                    "`{key}` is required for this command"
                )))
            } else {
                Ok(())
            }
        };
        match command {
            Command::Generate => lib("synthetic spec", self.synthetic.validate())?,
            Command::Train => {
                need(&self.data_dir, "data_dir")?;
                lib("model", self.model.validate())?;
            }
            Command::Finetune => {
                need(&self.data_dir, "data_dir")?;
                need(&self.checkpoint, "checkpoint")?;
                if self.model.fine_tune_max_epochs == 0 {
                    return Err(CliError::Config(
                        "`fine_tune_max_epochs` must be positive".into(),
                    ));
                }
            }
            Command::Score => {
                need(&self.data_dir, "data_dir")?;
                need(&self.checkpoint, "checkpoint")?;
                if !(self.score.p_threshold > 0.0 && self.score.p_threshold < 1.0) {
                    return Err(CliError::Config("`p_threshold` must lie in (0, 1)".into()));
                }
                if self.score.cohorts.is_empty() {
                    return Err(CliError::Config("`score_cohorts` is empty".into()));
                }
            }
            Command::Evaluate => {
                if self.reports.is_empty() {
                    return Err(CliError::Config(
                        "`reports` lists no score directories".into(),
                    ));
                }
                if self.metrics.is_empty() {
                    return Err(CliError::Config("`metrics` is empty".into()));
                }
                if self.covariate.as_deref().is_some_and(|c| c != "severity") {
                    return Err(CliError::Config(
                        "`covariate` must be severity or none".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(text: &str) -> Vec<(String, String)> {
        parse_config_text(text, "test").unwrap()
    }

    #[test]
    fn defaults_follow_model_config() {
        let cfg = RunConfig::from_pairs(&[]).unwrap();
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.model.max_epochs, 2000);
        assert_eq!(cfg.model.batch_size, 256);
        assert_eq!(cfg.synthetic, SyntheticSpec::default());
    }

    #[test]
    fn keys_parse_and_later_values_win() {
        let mut p = pairs("# comment\nfusion = unimodal\nmodality = 1\nencoder_layers = 8, 4\nseed = 3 # trailing\n");
        p.push(parse_override("seed=9").unwrap());
        let cfg = RunConfig::from_pairs(&p).unwrap();
        assert_eq!(cfg.model.fusion, FusionKind::Unimodal);
        assert_eq!(cfg.model.modality, 1);
        assert_eq!(cfg.model.encoder_layers, vec![8, 4]);
        assert_eq!((cfg.model.seed, cfg.synthetic.seed), (9, 9));
    }

    #[test]
    fn unknown_and_malformed_entries_rejected() {
        assert!(RunConfig::from_pairs(&pairs("colour = red")).is_err());
        assert!(RunConfig::from_pairs(&pairs("max_epochs = many")).is_err());
        assert!(RunConfig::from_pairs(&pairs("robust = perhaps")).is_err());
        assert!(parse_config_text("just words", "t").is_err());
        assert!(parse_override("novalue").is_err());
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let sample = |k: &str| match k {
            "fusion" => "gpoe",
            "reference" => "healthy_train",
            "score_cohorts" => "disease",
            "latent" => "mean",
            "metrics" => "d_ml",
            "deconfound" | "resume" | "robust" => "true",
            "learning_rate" | "shift" | "severity_spread" | "confound_strength" | "p_threshold" => {
                "0.5"
            }
            "validation_fraction" => "0.2",
            "noise_sd" => "0.5,0.5",
            _ => "1",
        };
        for k in CONFIG_KEYS {
            RunConfig::from_pairs(&[(k.to_string(), sample(k).to_string())])
                .unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn validation_reports_missing_inputs() {
        let mut cfg = RunConfig::from_pairs(&pairs("out = x")).unwrap();
        assert!(cfg.validate(Command::Generate).is_ok());
        assert!(cfg.validate(Command::Train).is_err());
        cfg.data_dir = Some("d".into());
        assert!(cfg.validate(Command::Train).is_ok());
        assert!(cfg.validate(Command::Score).is_err());
        cfg.model.latent_dim = 0;
        assert!(cfg.validate(Command::Train).is_err());
        cfg.out = None;
        assert!(cfg.validate(Command::Generate).is_err());
    }
}
