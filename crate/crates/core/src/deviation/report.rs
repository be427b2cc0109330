use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::deviation::metrics::{significance_ratio, SignificanceResult};
use crate::error::{Error, Result};

/// Column order of the per-subject CSV report.
pub const REPORT_COLUMNS: [&str; 11] = [
    "subject_id",
    "cohort",
    "d_ml",
    "d_ml_p",
    "d_ml_outlier",
    "d_mf",
    "d_mf_p",
    "d_mf_outlier",
    "d_uf_min_p",
    "d_uf_outlier_features",
    "d_uf_outlier",
];

pub const HOLDOUT_COHORT: &str = "healthy_holdout";
pub const DISEASE_COHORT: &str = "disease";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "D_ml")]
    Dml,
    #[serde(rename = "D_mf")]
    Dmf,
    #[serde(rename = "D_uf")]
    Duf,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Dml, Metric::Dmf, Metric::Duf];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Dml => "D_ml",
            Metric::Dmf => "D_mf",
            Metric::Duf => "D_uf",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "d_ml" | "dml" => Ok(Metric::Dml),
            "d_mf" | "dmf" => Ok(Metric::Dmf),
            "d_uf" | "duf" => Ok(Metric::Duf),
            other => Err(Error::InvalidArgument(format!("unknown metric `{other}`"))),
        }
    }
}

/// Deviation scores and outlier calls of one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDeviation {
    pub subject_id: String,
    pub cohort: String,
    pub d_ml: f64,
    pub d_ml_p: f64,
    pub d_ml_outlier: bool,
    pub d_mf: f64,
    pub d_mf_p: f64,
    pub d_mf_outlier: bool,
    pub d_uf_min_p: f64,
    pub d_uf_outlier_features: usize,
    pub d_uf_outlier: bool,
}

impl SubjectDeviation {
    pub fn flagged(&self, metric: Metric) -> bool {
        match metric {
            Metric::Dml => self.d_ml_outlier,
            Metric::Dmf => self.d_mf_outlier,
            Metric::Duf => self.d_uf_outlier,
        }
    }
}

/// Per-subject scores plus the per-feature z-score matrix.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Modality names in the order their features are concatenated.
    pub modality_order: Vec<String>,
    /// Column names of `d_uf`, `modality/feature`.
    pub feature_names: Vec<String>,
    pub subjects: Vec<SubjectDeviation>,
    /// Per-subject, per-feature z-scores; NaN marks degenerate features.
    pub d_uf: Vec<Vec<f64>>,
}

fn bool_text(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

fn parse_field<T: FromStr>(record: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    let raw = record.get(i).unwrap_or("");
    raw.parse().map_err(|_| {
        Error::Data(format!(
            "row {line}: cannot parse `{raw}` in column {}",
            REPORT_COLUMNS[i]
        ))
    })
}

fn parse_flag(record: &csv::StringRecord, i: usize, line: usize) -> Result<bool> {
    match record.get(i) {
        Some("1") => Ok(true),
        Some("0") => Ok(false),
        other => Err(Error::Data(format!(
            "row {line}: expected 0 or 1 in column {}, got {other:?}",
            REPORT_COLUMNS[i]
        ))),
    }
}

impl DeviationReport {
    pub fn cohort_flags(&self, metric: Metric, cohort: &str) -> Vec<bool> {
        self.subjects
            .iter()
            .filter(|s| s.cohort == cohort)
            .map(|s| s.flagged(metric))
            .collect()
    }

    /// Disease-versus-holdout significance ratio of one metric.
    pub fn significance(&self, metric: Metric) -> Result<SignificanceResult> {
        significance_ratio(
            &self.cohort_flags(metric, DISEASE_COHORT),
            &self.cohort_flags(metric, HOLDOUT_COHORT),
        )
    }

    pub fn values(&self, cohort: &str, f: impl Fn(&SubjectDeviation) -> f64) -> Vec<f64> {
        self.subjects
            .iter()
            .filter(|s| s.cohort == cohort)
            .map(f)
            .collect()
    }

    /// Writes one row per subject with the columns of [`REPORT_COLUMNS`].
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(REPORT_COLUMNS)?;
        for s in &self.subjects {
            out.write_record([
                s.subject_id.clone(),
                s.cohort.clone(),
                s.d_ml.to_string(),
                s.d_ml_p.to_string(),
                bool_text(s.d_ml_outlier).into(),
                s.d_mf.to_string(),
                s.d_mf_p.to_string(),
                bool_text(s.d_mf_outlier).into(),
                s.d_uf_min_p.to_string(),
                s.d_uf_outlier_features.to_string(),
                bool_text(s.d_uf_outlier).into(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads the per-subject rows written by [`DeviationReport::write_csv`].
    pub fn read_csv<R: Read>(r: R) -> Result<Vec<SubjectDeviation>> {
        let mut rdr = csv::Reader::from_reader(r);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != REPORT_COLUMNS {
            return Err(Error::Data(format!("unexpected report columns {header:?}")));
        }
        rdr.records()
            .enumerate()
            .map(|(k, rec)| {
                let rec = rec?;
                let line = k + 2;
                Ok(SubjectDeviation {
                    subject_id: rec.get(0).unwrap_or("").to_string(),
                    cohort: rec.get(1).unwrap_or("").to_string(),
                    d_ml: parse_field(&rec, 2, line)?,
                    d_ml_p: parse_field(&rec, 3, line)?,
                    d_ml_outlier: parse_flag(&rec, 4, line)?,
                    d_mf: parse_field(&rec, 5, line)?,
                    d_mf_p: parse_field(&rec, 6, line)?,
                    d_mf_outlier: parse_flag(&rec, 7, line)?,
                    d_uf_min_p: parse_field(&rec, 8, line)?,
                    d_uf_outlier_features: parse_field(&rec, 9, line)?,
                    d_uf_outlier: parse_flag(&rec, 10, line)?,
                })
            })
            .collect()
    }

    /// Writes the per-feature z-scores, one row per subject.
    pub fn write_duf_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["subject_id".to_string(), "cohort".to_string()];
        header.extend(self.feature_names.iter().cloned());
        out.write_record(&header)?;
        for (s, row) in self.subjects.iter().zip(&self.d_uf) {
            let mut rec = vec![s.subject_id.clone(), s.cohort.clone()];
            rec.extend(row.iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(id: &str, cohort: &str, flag: bool) -> SubjectDeviation {
        SubjectDeviation {
            subject_id: id.into(),
            cohort: cohort.into(),
            d_ml: 1.25,
            d_ml_p: 0.5,
            d_ml_outlier: flag,
            d_mf: 0.1 + 0.2,
            d_mf_p: 1e-300,
            d_mf_outlier: false,
            d_uf_min_p: 1.0,
            d_uf_outlier_features: 0,
            d_uf_outlier: flag,
        }
    }

    #[test]
    fn csv_round_trip_and_schema() {
        let report = DeviationReport {
            modality_order: vec!["m0".into()],
            feature_names: vec!["m0/a".into()],
            subjects: vec![
                subject("s1", DISEASE_COHORT, true),
                subject("s2", HOLDOUT_COHORT, false),
            ],
            d_uf: vec![vec![0.5], vec![f64::NAN]],
        };
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), REPORT_COLUMNS.join(","));
        let back = DeviationReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, report.subjects);
        let mut duf = Vec::new();
        report.write_duf_csv(&mut duf).unwrap();
        let text = String::from_utf8(duf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "subject_id,cohort,m0/a");
        assert!(text.contains("s2,healthy_holdout,NaN"));
        let sig = report.significance(Metric::Dml).unwrap();
        assert!(sig.is_infinite());
    }

    #[test]
    fn metric_names() {
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("d_xx".parse::<Metric>().is_err());
    }
}
