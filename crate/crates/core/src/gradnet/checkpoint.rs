//! Versioned JSON checkpoint of parameter shapes and values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradnet::tensor::{ParamStore, Tensor};
use crate::scalar::Scalar;

pub const PARAMS_FORMAT: &str = "normflux-params";
pub const PARAMS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsCheckpoint {
    pub format: String,
    pub version: u32,
    pub params: Vec<ParamRecord>,
}

impl ParamsCheckpoint {
    pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Self {
        Self {
            format: PARAMS_FORMAT.to_string(),
            version: PARAMS_VERSION,
            params: store
                .iter()
                .map(|(name, t)| ParamRecord {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    values: t.values().iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_store<T: Scalar>(&self) -> Result<ParamStore<T>> {
        self.check_header()?;
        let mut store = ParamStore::new();
        for p in &self.params {
            let values = p.values.iter().map(|&v| T::lit(v)).collect();
            store.add(p.name.clone(), Tensor::new(p.shape.clone(), values)?);
        }
        Ok(store)
    }

    pub fn check_header(&self) -> Result<()> {
        if self.format != PARAMS_FORMAT {
            return Err(Error::Checkpoint(format!(
                "unknown format `{}`",
                self.format
            )));
        }
        if self.version != PARAMS_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {PARAMS_VERSION})",
                self.version
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(s)?;
        c.check_header()?;
        Ok(c)
    }
}
