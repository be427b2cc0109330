use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How per-modality experts are combined into the joint posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Poe,
    Moe,
    Gpoe,
    /// Single-modality baseline; the modality is [`ModelConfig::modality`].
    Unimodal,
    /// One encoder/decoder pair over the concatenation of all modalities.
    Concat,
}

impl FusionKind {
    pub const ALL: [FusionKind; 5] = [
        FusionKind::Poe,
        FusionKind::Moe,
        FusionKind::Gpoe,
        FusionKind::Unimodal,
        FusionKind::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Poe => "poe",
            FusionKind::Moe => "moe",
            FusionKind::Gpoe => "gpoe",
            FusionKind::Unimodal => "unimodal",
            FusionKind::Concat => "concat",
        }
    }

    pub fn is_multimodal(self) -> bool {
        matches!(self, FusionKind::Poe | FusionKind::Moe | FusionKind::Gpoe)
    }
}

impl fmt::Display for FusionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "poe" => Ok(FusionKind::Poe),
            "moe" => Ok(FusionKind::Moe),
            "gpoe" => Ok(FusionKind::Gpoe),
            "unimodal" => Ok(FusionKind::Unimodal),
            "concat" => Ok(FusionKind::Concat),
            other => Err(Error::InvalidArgument(format!("unknown fusion `{other}`"))),
        }
    }
}

/// Architecture and optimisation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub fusion: FusionKind,
    /// Modality used by the uni-modal baseline.
    pub modality: usize,
    pub encoder_layers: Vec<usize>,
    pub decoder_layers: Vec<usize>,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub early_stopping_patience: usize,
    pub fine_tune_max_epochs: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            fusion: FusionKind::Gpoe,
            modality: 0,
            encoder_layers: vec![20, 40],
            decoder_layers: vec![20, 40],
            max_epochs: 2000,
            batch_size: 256,
            learning_rate: 1e-4,
            early_stopping_patience: 50,
            fine_tune_max_epochs: 100,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn with_fusion(mut self, fusion: FusionKind) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.latent_dim < 1 {
            return bad("latent_dim must be at least 1".into());
        }
        if self.early_stopping_patience < 1 {
            return bad("early_stopping_patience must be at least 1".into());
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            ));
        }
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if self.encoder_layers.contains(&0) || self.decoder_layers.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ModelConfig::default();
        assert_eq!(c.latent_dim, 10);
        assert_eq!(c.max_epochs, 2000);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.learning_rate, 1e-4);
        assert_eq!(c.early_stopping_patience, 50);
        assert_eq!(c.fine_tune_max_epochs, 100);
        assert_eq!(c.encoder_layers, vec![20, 40]);
        assert_eq!(c.decoder_layers, vec![20, 40]);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn invalid_settings_rejected() {
        let mut c = ModelConfig {
            latent_dim: 0,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        c.latent_dim = 3;
        c.validation_fraction = 1.0;
        assert!(c.validate().is_err());
        c.validation_fraction = 0.2;
        c.early_stopping_patience = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn fusion_names_round_trip() {
        for f in FusionKind::ALL {
            assert_eq!(f.as_str().parse::<FusionKind>().unwrap(), f);
        }
        assert!("product".parse::<FusionKind>().is_err());
    }
}
