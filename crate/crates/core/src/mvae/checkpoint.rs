use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json, PreprocessStats};
use crate::error::{Error, Result};
use crate::gradnet::ParamsCheckpoint;
use crate::mvae::model::MvaeModel;
use crate::mvae::train::TrainState;
use crate::mvae::ModelConfig;
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "normflux-model";
pub const MODEL_VERSION: u32 = 1;

/// Serialised model: architecture, parameters, preprocessing and an
/// optional resumable training state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct ModelCheckpoint<T> {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub modality_dims: Vec<usize>,
    pub modality_names: Vec<String>,
    pub params: ParamsCheckpoint,
    pub preprocess: Option<PreprocessStats>,
    pub train_state: Option<TrainState<T>>,
}

impl<T: Scalar + Serialize + for<'de> Deserialize<'de>> ModelCheckpoint<T> {
    pub fn from_model(
        model: &MvaeModel<T>,
        modality_names: Vec<String>,
        preprocess: Option<PreprocessStats>,
        train_state: Option<TrainState<T>>,
    ) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            config: model.config().clone(),
            modality_dims: model.modality_dims().to_vec(),
            modality_names,
            params: ParamsCheckpoint::from_store(model.params()),
            preprocess,
            train_state,
        }
    }

    /// Rebuilds the model and loads the stored parameter values.
    pub fn to_model(&self) -> Result<MvaeModel<T>> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(Error::Checkpoint(format!(
                "expected {MODEL_FORMAT} version {MODEL_VERSION}, found {} version {}",
                self.format, self.version
            )));
        }
        self.params.check_header()?;
        let mut model = MvaeModel::new(self.config.clone(), &self.modality_dims)?;
        let stored = self.params.to_store::<T>()?;
        model.params_mut().copy_values_from(&stored).map_err(|e| {
            Error::Checkpoint(format!("parameters do not match the architecture: {e}"))
        })?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path).map_err(|e| match e {
            Error::Json(j) => Error::Checkpoint(format!("{}: {j}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradnet::Tensor;
    use crate::mvae::{run_training, FusionKind, TrainOptions};

    #[test]
    fn round_trip_preserves_model_and_state() {
        let cfg = ModelConfig {
            latent_dim: 2,
            fusion: FusionKind::Gpoe,
            encoder_layers: vec![4],
            decoder_layers: vec![4],
            max_epochs: 3,
            batch_size: 8,
            learning_rate: 1e-2,
            ..ModelConfig::default()
        };
        let mut model = MvaeModel::<f64>::new(cfg, &[3, 2]).unwrap();
        let data = vec![
            Tensor::matrix(20, 3, (0..60).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap(),
            Tensor::matrix(20, 2, (0..40).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap(),
        ];
        let options = TrainOptions {
            stop_after_epoch: Some(2),
            ..TrainOptions::default()
        };
        let state = run_training(&mut model, &data, options, None).unwrap();
        let ckpt =
            ModelCheckpoint::from_model(&model, vec!["a".into(), "b".into()], None, Some(state));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ckpt.save(&path).unwrap();
        let back = ModelCheckpoint::<f64>::load(&path).unwrap();
        assert_eq!(back, ckpt);
        let restored = back.to_model().unwrap();
        assert_eq!(restored.params(), model.params());
        assert_eq!(restored.get_alpha().unwrap(), model.get_alpha().unwrap());
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let model = MvaeModel::<f64>::new(ModelConfig::default(), &[3, 2]).unwrap();
        let mut ckpt = ModelCheckpoint::from_model(&model, vec![], None, None);
        ckpt.modality_dims = vec![4, 2];
        assert!(matches!(ckpt.to_model(), Err(Error::Checkpoint(_))));
        ckpt.modality_dims = vec![3, 2];
        ckpt.version = 9;
        assert!(ckpt.to_model().is_err());
    }
}
