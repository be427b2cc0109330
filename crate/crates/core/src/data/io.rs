use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::cohort::{Cohort, CohortLabel, Covariates};
use crate::data::synthetic::Provenance;
use crate::error::{Error, Result};
use crate::gradnet::Tensor;

pub const ID_COLUMN: &str = "subject_id";
pub const LABELS_FILE: &str = "labels.csv";
pub const COVARIATES_FILE: &str = "covariates.csv";
pub const MANIFEST_FILE: &str = "cohort.json";
pub const PROVENANCE_FILE: &str = "provenance.json";

/// Lists the files making up a saved cohort, relative to its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    /// `(modality name, file name)` in modality order.
    pub modalities: Vec<(String, String)>,
    pub labels: String,
    pub covariates: Option<String>,
}

/// Result of ingesting CSV files.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCohort {
    pub cohort: Cohort,
    /// Labelled subjects dropped for missing from at least one file.
    pub excluded: Vec<String>,
}

struct Table {
    header: Vec<String>,
    rows: HashMap<String, Vec<String>>,
    order: Vec<String>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.first().map(String::as_str) != Some(ID_COLUMN) {
        return Err(Error::Data(format!(
            "{}: first column must be `{ID_COLUMN}`",
            path.display()
        )));
    }
    let mut rows = HashMap::new();
    let mut order = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec.get(0).unwrap_or("").to_string();
        if id.is_empty() {
            return Err(Error::Data(format!(
                "{} row {}: empty subject id",
                path.display(),
                k + 2
            )));
        }
        let values: Vec<String> = rec.iter().skip(1).map(str::to_string).collect();
        if values.len() + 1 != header.len() {
            return Err(Error::Data(format!(
                "{} row {}: wrong number of cells",
                path.display(),
                k + 2
            )));
        }
        if rows.insert(id.clone(), values).is_some() {
            return Err(Error::Data(format!(
                "{}: duplicate subject id `{id}`",
                path.display()
            )));
        }
        order.push(id);
    }
    Ok(Table {
        header,
        rows,
        order,
    })
}

fn parse_number(cell: &str, path: &Path, id: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| {
        Error::Data(format!(
            "{}: subject `{id}` has non-numeric cell `{cell}`",
            path.display()
        ))
    })?;
    if !v.is_finite() {
        return Err(Error::Data(format!(
            "{}: subject `{id}` has non-finite value",
            path.display()
        )));
    }
    Ok(v)
}

/// Reads per-modality feature files and a label file, matching subjects by
/// id. Subjects missing from any modality (or the covariate file) are
/// dropped and reported; the label file fixes the subject order.
pub fn load_csv(
    modalities: &[(String, PathBuf)],
    labels: &Path,
    covariates: Option<&Path>,
) -> Result<LoadedCohort> {
    if modalities.is_empty() {
        return Err(Error::Data("no modality files given".into()));
    }
    let label_table = read_table(labels)?;
    if label_table.header.len() != 2 {
        return Err(Error::Data(format!(
            "{}: expected columns `{ID_COLUMN},label`",
            labels.display()
        )));
    }
    let tables: Vec<Table> = modalities
        .iter()
        .map(|(_, p)| read_table(p))
        .collect::<Result<_>>()?;
    let cov_table = covariates.map(read_table).transpose()?;
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for id in &label_table.order {
        let present = tables.iter().all(|t| t.rows.contains_key(id))
            && cov_table.as_ref().is_none_or(|t| t.rows.contains_key(id));
        if present {
            kept.push(id.clone());
        } else {
            excluded.push(id.clone());
        }
    }
    let labelled: HashSet<&String> = label_table.order.iter().collect();
    for (t, (name, _)) in tables.iter().zip(modalities) {
        let unlabelled = t.order.iter().filter(|id| !labelled.contains(id)).count();
        if unlabelled > 0 {
            log::warn!("modality {name}: {unlabelled} subjects have no label and were ignored");
        }
    }
    if !excluded.is_empty() {
        log::warn!(
            "excluded {} subjects missing from at least one file",
            excluded.len()
        );
    }
    let label_values = kept
        .iter()
        .map(|id| label_table.rows[id][0].parse::<CohortLabel>())
        .collect::<Result<Vec<_>>>()?;
    let mut matrices = Vec::with_capacity(tables.len());
    for (t, (_, path)) in tables.iter().zip(modalities) {
        let p = t.header.len() - 1;
        let mut values = Vec::with_capacity(kept.len() * p);
        for id in &kept {
            for cell in &t.rows[id] {
                values.push(parse_number(cell, path, id)?);
            }
        }
        matrices.push(Tensor::matrix(kept.len(), p, values)?);
    }
    let covariates = match (&cov_table, covariates) {
        (Some(t), Some(path)) => Some(read_covariates(t, path, &kept)?),
        _ => None,
    };
    let cohort = Cohort::new(
        modalities.iter().map(|(n, _)| n.clone()).collect(),
        tables.iter().map(|t| t.header[1..].to_vec()).collect(),
        matrices,
        kept,
        label_values,
        covariates,
    )?;
    Ok(LoadedCohort { cohort, excluded })
}

fn read_covariates(t: &Table, path: &Path, ids: &[String]) -> Result<Covariates> {
    let col = |name: &str| t.header.iter().position(|h| h == name).map(|i| i - 1);
    let (Some(a), Some(v)) = (col("age"), col("icv")) else {
        return Err(Error::Data(format!(
            "{}: covariates need `age` and `icv` columns",
            path.display()
        )));
    };
    let s = col("severity");
    let pick = |i: usize| {
        ids.iter()
            .map(|id| parse_number(&t.rows[id][i], path, id))
            .collect::<Result<Vec<_>>>()
    };
    Ok(Covariates {
        age: pick(a)?,
        icv: pick(v)?,
        severity: s.map(pick).transpose()?,
    })
}

fn write_rows(
    path: &Path,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let file = File::create(path)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per modality plus label, covariate and manifest files.
pub fn save_csv(cohort: &Cohort, dir: &Path) -> Result<CohortManifest> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", dir.display())))?;
    let ids = cohort.subject_ids();
    let mut manifest = CohortManifest {
        modalities: Vec::new(),
        labels: LABELS_FILE.into(),
        covariates: None,
    };
    for (m, t) in cohort.modalities().iter().enumerate() {
        let name = cohort.modality_names()[m].clone();
        let file = format!("{name}.csv");
        let mut header = vec![ID_COLUMN.to_string()];
        header.extend(cohort.feature_names()[m].iter().cloned());
        write_rows(
            &dir.join(&file),
            header,
            (0..t.rows()).map(|i| {
                let mut r = vec![ids[i].clone()];
                r.extend(t.row(i).iter().map(f64::to_string));
                r
            }),
        )?;
        manifest.modalities.push((name, file));
    }
    write_rows(
        &dir.join(LABELS_FILE),
        vec![ID_COLUMN.into(), "label".into()],
        ids.iter()
            .zip(cohort.labels())
            .map(|(id, l)| vec![id.clone(), l.to_string()]),
    )?;
    if let Some(c) = cohort.covariates() {
        let mut header = vec![ID_COLUMN.to_string(), "age".into(), "icv".into()];
        if c.severity.is_some() {
            header.push("severity".into());
        }
        write_rows(
            &dir.join(COVARIATES_FILE),
            header,
            (0..ids.len()).map(|i| {
                let mut r = vec![ids[i].clone(), c.age[i].to_string(), c.icv[i].to_string()];
                if let Some(s) = &c.severity {
                    r.push(s[i].to_string());
                }
                r
            }),
        )?;
        manifest.covariates = Some(COVARIATES_FILE.into());
    }
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Loads a cohort saved by [`save_csv`].
pub fn load_dir(dir: &Path) -> Result<LoadedCohort> {
    let manifest: CohortManifest = read_json(&dir.join(MANIFEST_FILE))?;
    let modalities: Vec<(String, PathBuf)> = manifest
        .modalities
        .iter()
        .map(|(n, f)| (n.clone(), dir.join(f)))
        .collect();
    let cov = manifest.covariates.as_ref().map(|f| dir.join(f));
    load_csv(&modalities, &dir.join(&manifest.labels), cov.as_deref())
}

pub fn write_provenance(dir: &Path, provenance: &Provenance) -> Result<()> {
    write_json(&dir.join(PROVENANCE_FILE), provenance)
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)
        .map_err(|e| Error::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate_synthetic, SyntheticSpec};

    fn small() -> Cohort {
        generate_synthetic(&SyntheticSpec {
            n_train: 20,
            n_holdout: 5,
            n_disease: 5,
            modality_dims: vec![4, 3],
            latent_dim: 2,
            shifted_latents: vec![0],
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_csv(&c, dir.path()).unwrap();
        let loaded = load_dir(dir.path()).unwrap();
        assert!(loaded.excluded.is_empty());
        assert_eq!(loaded.cohort, c);
    }

    #[test]
    fn missing_subject_is_excluded_and_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = small();
        save_csv(&c, dir.path()).unwrap();
        let path = dir.path().join("modality1.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let dropped = c.subject_ids()[3].clone();
        let kept: Vec<&str> = text
            .lines()
            .filter(|l| !l.starts_with(&format!("{dropped},")))
            .collect();
        std::fs::write(&path, kept.join("\n") + "\n").unwrap();
        let loaded = load_dir(dir.path()).unwrap();
        assert_eq!(loaded.excluded, vec![dropped]);
        assert_eq!(loaded.cohort.n_subjects(), c.n_subjects() - 1);
    }

    #[test]
    fn malformed_files_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_csv(&small(), dir.path()).unwrap();
        let path = dir.path().join("modality0.csv");
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        let backup = lines.clone();
        lines[2] = lines[1].clone();
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(Error::Data(m)) if m.contains("duplicate")));
        let mut lines = backup;
        let mut cells: Vec<String> = lines[1].split(',').map(str::to_string).collect();
        cells[2] = "abc".into();
        lines[1] = cells.join(",");
        std::fs::write(&path, lines.join("\n")).unwrap();
        assert!(matches!(load_dir(dir.path()), Err(Error::Data(m)) if m.contains("non-numeric")));
    }

    #[test]
    fn unknown_label_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_csv(&small(), dir.path()).unwrap();
        let path = dir.path().join(LABELS_FILE);
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("healthy_train", "healthy", 1);
        std::fs::write(&path, text).unwrap();
        assert!(load_dir(dir.path()).is_err());
    }
}
