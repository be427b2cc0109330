use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gradnet::Tensor;
use crate::mvae::select_rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortLabel {
    HealthyTrain,
    HealthyHoldout,
    Disease,
}

impl CohortLabel {
    pub const ALL: [CohortLabel; 3] = [
        CohortLabel::HealthyTrain,
        CohortLabel::HealthyHoldout,
        CohortLabel::Disease,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CohortLabel::HealthyTrain => "healthy_train",
            CohortLabel::HealthyHoldout => "healthy_holdout",
            CohortLabel::Disease => "disease",
        }
    }
}

impl fmt::Display for CohortLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CohortLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy_train" => Ok(CohortLabel::HealthyTrain),
            "healthy_holdout" => Ok(CohortLabel::HealthyHoldout),
            "disease" => Ok(CohortLabel::Disease),
            other => Err(Error::Data(format!("unknown cohort label `{other}`"))),
        }
    }
}

/// Nuisance and clinical covariates, one value per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    pub age: Vec<f64>,
    pub icv: Vec<f64>,
    pub severity: Option<Vec<f64>>,
}

impl Covariates {
    fn select(&self, rows: &[usize]) -> Self {
        let pick = |v: &[f64]| rows.iter().map(|&r| v[r]).collect::<Vec<_>>();
        Self {
            age: pick(&self.age),
            icv: pick(&self.icv),
            severity: self.severity.as_deref().map(pick),
        }
    }
}

/// Subjects with aligned per-modality feature matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Cohort {
    modality_names: Vec<String>,
    feature_names: Vec<Vec<String>>,
    modalities: Vec<Tensor<f64>>,
    subject_ids: Vec<String>,
    labels: Vec<CohortLabel>,
    covariates: Option<Covariates>,
}

impl Cohort {
    pub fn new(
        modality_names: Vec<String>,
        feature_names: Vec<Vec<String>>,
        modalities: Vec<Tensor<f64>>,
        subject_ids: Vec<String>,
        labels: Vec<CohortLabel>,
        covariates: Option<Covariates>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if modalities.is_empty() {
            return Err(Error::Data("a cohort needs at least one modality".into()));
        }
        if modality_names.len() != modalities.len() || feature_names.len() != modalities.len() {
            return Err(dim_err!(
                "modality names, feature names and matrices disagree in count"
            ));
        }
        for (m, (t, names)) in modalities.iter().zip(&feature_names).enumerate() {
            if t.shape().len() != 2 || t.rows() != n || t.cols() != names.len() {
                return Err(dim_err!(
                    "modality {m} is {:?}, expected {n}x{}",
                    t.shape(),
                    names.len()
                ));
            }
            if !t.all_finite() {
                return Err(Error::NonFinite(format!(
                    "modality {} has non-finite values",
                    modality_names[m]
                )));
            }
        }
        if labels.len() != n {
            return Err(dim_err!("{} labels for {n} subjects", labels.len()));
        }
        if let Some(c) = &covariates {
            let sev_ok = c.severity.as_ref().is_none_or(|s| s.len() == n);
            if c.age.len() != n || c.icv.len() != n || !sev_ok {
                return Err(dim_err!("covariates must have one value per subject"));
            }
        }
        Ok(Self {
            modality_names,
            feature_names,
            modalities,
            subject_ids,
            labels,
            covariates,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality_dims(&self) -> Vec<usize> {
        self.modalities.iter().map(Tensor::cols).collect()
    }

    pub fn modality_names(&self) -> &[String] {
        &self.modality_names
    }

    pub fn feature_names(&self) -> &[Vec<String>] {
        &self.feature_names
    }

    /// Feature names across modalities as `modality/feature`.
    pub fn qualified_feature_names(&self, modalities: &[usize]) -> Vec<String> {
        modalities
            .iter()
            .flat_map(|&m| {
                self.feature_names[m]
                    .iter()
                    .map(move |f| format!("{}/{f}", self.modality_names[m]))
            })
            .collect()
    }

    pub fn modalities(&self) -> &[Tensor<f64>] {
        &self.modalities
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn labels(&self) -> &[CohortLabel] {
        &self.labels
    }

    pub fn covariates(&self) -> Option<&Covariates> {
        self.covariates.as_ref()
    }

    pub fn indices(&self, label: CohortLabel) -> Vec<usize> {
        (0..self.n_subjects())
            .filter(|&i| self.labels[i] == label)
            .collect()
    }

    pub fn select(&self, rows: &[usize]) -> Cohort {
        Cohort {
            modality_names: self.modality_names.clone(),
            feature_names: self.feature_names.clone(),
            modalities: self
                .modalities
                .iter()
                .map(|t| select_rows(t, rows))
                .collect(),
            subject_ids: rows.iter().map(|&r| self.subject_ids[r].clone()).collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            covariates: self.covariates.as_ref().map(|c| c.select(rows)),
        }
    }

    pub fn subset(&self, label: CohortLabel) -> Cohort {
        self.select(&self.indices(label))
    }

    /// Per-modality matrices of the subjects carrying `label`.
    pub fn modality_data(&self, label: CohortLabel) -> Vec<Tensor<f64>> {
        let rows = self.indices(label);
        self.modalities
            .iter()
            .map(|t| select_rows(t, &rows))
            .collect()
    }

    pub(crate) fn with_modalities(&self, modalities: Vec<Tensor<f64>>) -> Result<Cohort> {
        Cohort::new(
            self.modality_names.clone(),
            self.feature_names.clone(),
            modalities,
            self.subject_ids.clone(),
            self.labels.clone(),
            self.covariates.clone(),
        )
    }

    pub fn with_covariates(mut self, covariates: Option<Covariates>) -> Result<Cohort> {
        let modalities = std::mem::take(&mut self.modalities);
        Cohort::new(
            self.modality_names,
            self.feature_names,
            modalities,
            self.subject_ids,
            self.labels,
            covariates,
        )
    }
}
