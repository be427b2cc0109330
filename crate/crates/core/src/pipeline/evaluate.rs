use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::deviation::{
    pearson_corr, Correlation, DeviationReport, Metric, SignificanceResult, SubjectDeviation,
    DISEASE_COHORT,
};
use crate::error::{Error, Result};
use crate::mvae::FusionKind;

/// Identity of a scored model variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelLabel {
    pub name: String,
    pub fusion: FusionKind,
    pub latent_dim: usize,
}

/// A model's per-subject scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredModel {
    pub label: ModelLabel,
    pub subjects: Vec<SubjectDeviation>,
}

impl ScoredModel {
    pub fn from_report(label: ModelLabel, report: &DeviationReport) -> Self {
        Self {
            label,
            subjects: report.subjects.clone(),
        }
    }

    fn report(&self) -> DeviationReport {
        DeviationReport {
            subjects: self.subjects.clone(),
            ..DeviationReport::default()
        }
    }
}

/// One cell of the significance table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceEntry {
    pub model: String,
    pub fusion: FusionKind,
    pub latent_dim: usize,
    pub metric: Metric,
    pub result: SignificanceResult,
}

/// Correlation of a deviation score with a clinical covariate in the disease cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub model: String,
    pub latent_dim: usize,
    pub metric: Metric,
    pub covariate: String,
    pub correlation: Correlation,
}

/// Significance ratios indexed as model, metric, latent dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Row order of the table.
    pub models: Vec<String>,
    pub metrics: Vec<Metric>,
    pub latent_dims: Vec<usize>,
    pub table: BTreeMap<String, BTreeMap<Metric, BTreeMap<usize, SignificanceResult>>>,
    pub entries: Vec<SignificanceEntry>,
    pub correlations: Vec<CorrelationEntry>,
}

impl Evaluation {
    pub fn get(
        &self,
        model: &str,
        metric: Metric,
        latent_dim: usize,
    ) -> Option<&SignificanceResult> {
        self.table.get(model)?.get(&metric)?.get(&latent_dim)
    }
}

/// Named per-subject covariate used for correlation analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectCovariate {
    pub name: String,
    pub values: HashMap<String, f64>,
}

/// Builds the significance table and, when a covariate is supplied,
/// disease-cohort Pearson correlations of D_ml and D_mf with it.
///
/// A covariate with zero variance among disease subjects yields no correlation.
pub fn evaluate(
    models: &[ScoredModel],
    metrics: &[Metric],
    covariate: Option<&SubjectCovariate>,
) -> Result<Evaluation> {
    if models.is_empty() {
        return Err(Error::Empty("no scored models to evaluate".into()));
    }
    if metrics.is_empty() {
        return Err(Error::Empty("no metrics to evaluate".into()));
    }
    let mut names: Vec<String> = Vec::new();
    let mut dims: Vec<usize> = Vec::new();
    let mut table: BTreeMap<String, BTreeMap<Metric, BTreeMap<usize, SignificanceResult>>> =
        BTreeMap::new();
    let mut entries = Vec::new();
    let mut correlations = Vec::new();
    for m in models {
        let label = &m.label;
        if !names.contains(&label.name) {
            names.push(label.name.clone());
        }
        if !dims.contains(&label.latent_dim) {
            dims.push(label.latent_dim);
        }
        let report = m.report();
        for &metric in metrics {
            let result = report.significance(metric).map_err(|e| {
                Error::Data(format!(
                    "model {} (L={}): {e}",
                    label.name, label.latent_dim
                ))
            })?;
            let by_dim = table
                .entry(label.name.clone())
                .or_default()
                .entry(metric)
                .or_default();
            if by_dim.insert(label.latent_dim, result).is_some() {
                return Err(Error::Data(format!(
                    "model {} with L={} appears twice",
                    label.name, label.latent_dim
                )));
            }
            entries.push(SignificanceEntry {
                model: label.name.clone(),
                fusion: label.fusion,
                latent_dim: label.latent_dim,
                metric,
                result,
            });
        }
        if let Some(cov) = covariate {
            for metric in [Metric::Dml, Metric::Dmf] {
                if let Some(correlation) = disease_correlation(&m.subjects, metric, cov) {
                    correlations.push(CorrelationEntry {
                        model: label.name.clone(),
                        latent_dim: label.latent_dim,
                        metric,
                        covariate: cov.name.clone(),
                        correlation,
                    });
                }
            }
        }
    }
    dims.sort_unstable();
    Ok(Evaluation {
        models: names,
        metrics: metrics.to_vec(),
        latent_dims: dims,
        table,
        entries,
        correlations,
    })
}

fn disease_correlation(
    subjects: &[SubjectDeviation],
    metric: Metric,
    cov: &SubjectCovariate,
) -> Option<Correlation> {
    let (x, y): (Vec<f64>, Vec<f64>) = subjects
        .iter()
        .filter(|s| s.cohort == DISEASE_COHORT)
        .filter_map(|s| {
            let v = *cov.values.get(&s.subject_id)?;
            let d = match metric {
                Metric::Dml => s.d_ml,
                Metric::Dmf => s.d_mf,
                Metric::Duf => return None,
            };
            Some((d, v))
        })
        .unzip();
    pearson_corr(&x, &y).ok()
}

pub const PLOT_COLUMNS: [&str; 8] = [
    "model",
    "fusion",
    "latent_dim",
    "subject_id",
    "cohort",
    "d_ml",
    "d_mf",
    "d_uf_min_p",
];

/// Long-format per-subject scores of every model for external plotting.
pub fn write_plot_csv<W: Write>(
    models: &[ScoredModel],
    covariate: Option<&SubjectCovariate>,
    w: W,
) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = PLOT_COLUMNS.to_vec();
    if let Some(c) = covariate {
        header.push(&c.name);
    }
    out.write_record(&header)?;
    for m in models {
        for s in &m.subjects {
            let mut row = vec![
                m.label.name.clone(),
                m.label.fusion.to_string(),
                m.label.latent_dim.to_string(),
                s.subject_id.clone(),
                s.cohort.clone(),
                s.d_ml.to_string(),
                s.d_mf.to_string(),
                s.d_uf_min_p.to_string(),
            ];
            if let Some(c) = covariate {
                row.push(
                    c.values
                        .get(&s.subject_id)
                        .map_or_else(String::new, f64::to_string),
                );
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deviation::HOLDOUT_COHORT;

    fn subject(id: &str, cohort: &str, d_ml: f64, flagged: bool) -> SubjectDeviation {
        SubjectDeviation {
            subject_id: id.into(),
            cohort: cohort.into(),
            d_ml,
            d_ml_p: 0.5,
            d_ml_outlier: flagged,
            d_mf: 2.0 * d_ml,
            d_mf_p: 0.5,
            d_mf_outlier: false,
            d_uf_min_p: 1.0,
            d_uf_outlier_features: 0,
            d_uf_outlier: false,
        }
    }

    fn model(name: &str, l: usize) -> ScoredModel {
        ScoredModel {
            label: ModelLabel {
                name: name.into(),
                fusion: FusionKind::Gpoe,
                latent_dim: l,
            },
            subjects: vec![
                subject("d0", DISEASE_COHORT, 3.0, true),
                subject("d1", DISEASE_COHORT, 4.0, true),
                subject("d2", DISEASE_COHORT, 5.0, false),
                subject("h0", HOLDOUT_COHORT, 1.0, true),
                subject("h1", HOLDOUT_COHORT, 1.0, false),
                subject("h2", HOLDOUT_COHORT, 1.0, false),
            ],
        }
    }

    #[test]
    fn single_model_single_metric_is_one_cell() {
        let e = evaluate(&[model("gpoe", 10)], &[Metric::Dml], None).unwrap();
        assert_eq!(e.entries.len(), 1);
        assert_eq!(e.models, vec!["gpoe".to_string()]);
        assert_eq!(e.latent_dims, vec![10]);
        let r = e.get("gpoe", Metric::Dml, 10).unwrap();
        assert!((r.ratio - 2.0).abs() < 1e-12);
        assert!(e.correlations.is_empty());
    }

    #[test]
    fn ratios_match_direct_recomputation() {
        let models = [model("gpoe", 5), model("gpoe", 10), model("moe", 5)];
        let e = evaluate(&models, &[Metric::Dml, Metric::Dmf], None).unwrap();
        assert_eq!(e.entries.len(), 6);
        for m in &models {
            for metric in [Metric::Dml, Metric::Dmf] {
                let direct = m.report().significance(metric).unwrap();
                let got = e.get(&m.label.name, metric, m.label.latent_dim).unwrap();
                assert_eq!(got.tpr, direct.tpr);
                assert_eq!(got.fpr, direct.fpr);
                assert_eq!(got.ratio.is_nan(), direct.ratio.is_nan());
            }
        }
        assert!(evaluate(&[model("a", 5), model("a", 5)], &[Metric::Dml], None).is_err());
        assert!(evaluate(&[], &[Metric::Dml], None).is_err());
    }

    #[test]
    fn correlation_uses_disease_subjects() {
        let cov = SubjectCovariate {
            name: "severity".into(),
            values: [("d0", 1.0), ("d1", 2.0), ("d2", 3.0), ("h0", 100.0)]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        };
        let e = evaluate(&[model("gpoe", 10)], &[Metric::Dml], Some(&cov)).unwrap();
        assert_eq!(e.correlations.len(), 2);
        assert!((e.correlations[0].correlation.r - 1.0).abs() < 1e-12);
        let flat = SubjectCovariate {
            name: "severity".into(),
            values: ["d0", "d1", "d2"]
                .into_iter()
                .map(|k| (k.to_string(), 1.0))
                .collect(),
        };
        let e = evaluate(&[model("gpoe", 10)], &[Metric::Dml], Some(&flat)).unwrap();
        assert!(e.correlations.is_empty());
    }

    #[test]
    fn evaluation_serialises_infinite_ratio() {
        let mut m = model("gpoe", 10);
        m.subjects[3].d_ml_outlier = false;
        let e = evaluate(&[m.clone()], &[Metric::Dml], None).unwrap();
        let json = serde_json::to_string(&e).unwrap();
        assert!(json.contains("\"inf\""));
        let back: Evaluation = serde_json::from_str(&json).unwrap();
        assert!(back.get("gpoe", Metric::Dml, 10).unwrap().is_infinite());
        let mut buf = Vec::new();
        write_plot_csv(&[m], None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), PLOT_COLUMNS.join(","));
        assert_eq!(text.lines().count(), 7);
    }
}
