use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ChiSquared, ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;

use crate::deviation::stats::{CohortStats, FeatureNormStats, StatsSource};
use crate::error::{dim_err, Error, Result};

/// Upper-tail p-value below which a multivariate distance is an outlier.
pub const LATENT_P_THRESHOLD: f64 = 0.001;

/// Family-wise level divided across features for univariate calls.
pub const FEATURE_FAMILY_ALPHA: f64 = 0.05;

fn expect_source(stats: &CohortStats, source: StatsSource) -> Result<()> {
    if stats.source() != source {
        return Err(Error::InvalidArgument(format!(
            "expected {source:?} statistics, got {:?}",
            stats.source()
        )));
    }
    Ok(())
}

/// Latent Mahalanobis deviation of one encoding.
pub fn d_ml(z: &[f64], stats: &CohortStats) -> Result<f64> {
    expect_source(stats, StatsSource::Latent)?;
    stats.mahalanobis(z)
}

/// Feature-space Mahalanobis deviation of one squared-error vector.
pub fn d_mf(recon_error: &[f64], stats: &CohortStats) -> Result<f64> {
    expect_source(stats, StatsSource::FeatureError)?;
    stats.mahalanobis(recon_error)
}

/// Per-feature z-scores of squared errors; degenerate features score NaN.
pub fn d_uf(recon_error: &[Vec<f64>], stats: &FeatureNormStats) -> Result<Vec<Vec<f64>>> {
    recon_error
        .iter()
        .map(|row| {
            if row.len() != stats.n_features() {
                return Err(dim_err!(
                    "error row has {} features, statistics have {}",
                    row.len(),
                    stats.n_features()
                ));
            }
            Ok(row
                .iter()
                .zip(stats.mean.iter().zip(&stats.std))
                .map(|(d, (m, s))| if *s > 0.0 { (d - m) / s } else { f64::NAN })
                .collect())
        })
        .collect()
}

/// Outcome of a per-subject outlier test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierCall {
    pub p_value: f64,
    pub flagged: bool,
}

/// Upper-tail probability of `d^2` under a chi-square with `dof` degrees of freedom.
pub fn chi_square_sf(d_squared: f64, dof: usize) -> Result<f64> {
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.sf(d_squared.max(0.0)))
}

/// Squared-distance boundary for an upper-tail probability `p`.
pub fn chi_square_threshold(dof: usize, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "tail probability must lie in (0, 1), got {p}"
        )));
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - p))
}

/// Refers squared distances to a chi-square with `dof` degrees of freedom.
pub fn outlier_test_latent(
    distances: &[f64],
    dof: usize,
    p_threshold: f64,
) -> Result<Vec<OutlierCall>> {
    if dof < 1 {
        return Err(Error::InvalidArgument(
            "chi-square test needs at least one degree of freedom".into(),
        ));
    }
    distances
        .iter()
        .map(|&d| {
            let p_value = chi_square_sf(d * d, dof)?;
            Ok(OutlierCall {
                p_value,
                flagged: p_value < p_threshold,
            })
        })
        .collect()
}

/// Two-sided standard-normal tail probability of a z-score.
pub fn normal_two_sided_p(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Per-subject Bonferroni call over feature z-scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureOutlierCall {
    /// Smallest per-feature p-value; 1 when no feature is scored.
    pub min_p_value: f64,
    pub n_flagged_features: usize,
    pub flagged: bool,
}

/// Flags a subject when any feature's two-sided p-value falls below
/// `FEATURE_FAMILY_ALPHA / n_features`. NaN scores are skipped.
pub fn outlier_test_feature(duf: &[Vec<f64>], n_features: usize) -> Vec<FeatureOutlierCall> {
    let threshold = FEATURE_FAMILY_ALPHA / n_features.max(1) as f64;
    duf.iter()
        .map(|row| {
            let ps: Vec<f64> = row
                .iter()
                .filter(|z| !z.is_nan())
                .map(|&z| normal_two_sided_p(z))
                .collect();
            let n_flagged_features = ps.iter().filter(|&&p| p < threshold).count();
            FeatureOutlierCall {
                min_p_value: ps.iter().copied().fold(1.0, f64::min),
                n_flagged_features,
                flagged: n_flagged_features > 0,
            }
        })
        .collect()
}

/// True- and false-positive rates of outlier calls and their ratio.
///
/// A zero false-positive rate gives an infinite ratio, or NaN when no
/// disease subject is flagged either; both serialise as string markers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub tpr: f64,
    pub fpr: f64,
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub ratio: f64,
    pub n_disease: usize,
    pub n_holdout: usize,
    pub disease_outliers: usize,
    pub holdout_outliers: usize,
}

impl SignificanceResult {
    pub fn is_infinite(&self) -> bool {
        self.ratio == f64::INFINITY
    }

    /// Ratio as written to reports: a number, `inf` or `nan`.
    pub fn ratio_label(&self) -> String {
        ratio_text(self.ratio)
    }
}

pub(crate) fn ratio_text(r: f64) -> String {
    if r.is_nan() {
        "nan".into()
    } else if r.is_infinite() {
        "inf".into()
    } else {
        format!("{r}")
    }
}

fn ser_ratio<S: Serializer>(r: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if r.is_finite() {
        s.serialize_f64(*r)
    } else {
        s.serialize_str(&ratio_text(*r))
    }
}

fn de_ratio<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) if t == "nan" => Ok(f64::NAN),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("bad ratio marker `{t}`"))),
    }
}

pub fn significance_ratio(
    disease_flags: &[bool],
    holdout_flags: &[bool],
) -> Result<SignificanceResult> {
    if disease_flags.is_empty() || holdout_flags.is_empty() {
        return Err(Error::Empty(
            "significance ratio needs non-empty disease and holdout cohorts".into(),
        ));
    }
    let disease_outliers = disease_flags.iter().filter(|&&f| f).count();
    let holdout_outliers = holdout_flags.iter().filter(|&&f| f).count();
    let tpr = disease_outliers as f64 / disease_flags.len() as f64;
    let fpr = holdout_outliers as f64 / holdout_flags.len() as f64;
    let ratio = if holdout_outliers == 0 {
        if disease_outliers == 0 {
            f64::NAN
        } else {
            f64::INFINITY
        }
    } else {
        tpr / fpr
    };
    Ok(SignificanceResult {
        tpr,
        fpr,
        ratio,
        n_disease: disease_flags.len(),
        n_holdout: holdout_flags.len(),
        disease_outliers,
        holdout_outliers,
    })
}

/// Sample Pearson correlation with a two-sided t-test p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub p_value: f64,
    pub n: usize,
}

pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(dim_err!(
            "correlation inputs have lengths {} and {}",
            x.len(),
            y.len()
        ));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "correlation needs at least three pairs".into(),
        ));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::InvalidArgument(
            "correlation needs non-zero variance in both inputs".into(),
        ));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let dof = (n - 2) as f64;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (dof / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Numeric(e.to_string()))?;
        2.0 * dist.sf(t.abs())
    };
    Ok(Correlation { r, p_value, n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_stats(l: usize, source: StatsSource) -> CohortStats {
        let eye: Vec<Vec<f64>> = (0..l)
            .map(|i| (0..l).map(|j| f64::from(u8::from(i == j))).collect())
            .collect();
        CohortStats::from_parts(vec![0.0; l], &eye, source).unwrap()
    }

    // Survival of a chi-square with even dof 2k: e^{-x/2} sum_{j<k} (x/2)^j / j!.
    fn even_dof_sf(x: f64, dof: usize) -> f64 {
        let h = x / 2.0;
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..dof / 2 {
            term *= h / j as f64;
            sum += term;
        }
        (-h).exp() * sum
    }

    #[test]
    fn metric_reductions() {
        let s = identity_stats(2, StatsSource::Latent);
        assert_eq!(d_ml(&[0.0, 0.0], &s).unwrap(), 0.0);
        assert_eq!(d_ml(&[3.0, 4.0], &s).unwrap(), 5.0);
        assert!(d_mf(&[3.0, 4.0], &s).is_err());
        let e = identity_stats(2, StatsSource::FeatureError);
        assert_eq!(d_mf(&[0.0, 1.0], &e).unwrap(), 1.0);
    }

    #[test]
    fn duf_scores_and_degenerate_features() {
        let stats = FeatureNormStats {
            mean: vec![1.0, 2.0, 0.5],
            std: vec![0.5, 1.0, 0.0],
        };
        let z = d_uf(&[vec![1.0, 4.0, 0.5]], &stats).unwrap();
        assert_eq!(z[0][0], 0.0);
        assert_eq!(z[0][1], 2.0);
        assert!(z[0][2].is_nan());
        assert!(d_uf(&[vec![1.0]], &stats).is_err());
    }

    #[test]
    fn latent_test_boundary() {
        let calls = outlier_test_latent(&[0.0], 10, LATENT_P_THRESHOLD).unwrap();
        assert_eq!(calls[0].p_value, 1.0);
        assert!(!calls[0].flagged);
        let t = chi_square_threshold(10, 0.001).unwrap();
        assert!((t - 29.588).abs() < 1e-3);
        assert!((even_dof_sf(t, 10) - 0.001).abs() < 1e-9);
        for x in [0.5, 3.0, 10.0, 25.0, 40.0] {
            assert!((chi_square_sf(x, 10).unwrap() - even_dof_sf(x, 10)).abs() < 1e-12);
        }
        let just_inside =
            outlier_test_latent(&[(t * 0.999).sqrt(), (t * 1.001).sqrt()], 10, 0.001).unwrap();
        assert!(!just_inside[0].flagged);
        assert!(just_inside[1].flagged);
    }

    #[test]
    fn feature_test() {
        let calls = outlier_test_feature(&[vec![0.0; 100]], 100);
        assert!(!calls[0].flagged);
        let mut row = vec![0.0; 100];
        row[17] = 6.0;
        let calls = outlier_test_feature(&[row], 100);
        assert!(calls[0].flagged);
        assert!((calls[0].min_p_value - 1.973e-9).abs() < 1e-11);
        assert_eq!(calls[0].n_flagged_features, 1);
    }

    #[test]
    fn significance_cases() {
        let r = significance_ratio(&[true, true], &[true, false]).unwrap();
        assert_eq!(r.ratio, 2.0);
        let r = significance_ratio(&[true, false], &[false, true]).unwrap();
        assert_eq!(r.ratio, 1.0);
        let r = significance_ratio(&[true, false], &[false, false]).unwrap();
        assert!(r.is_infinite());
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"ratio\":\"inf\""), "{json}");
        let back: SignificanceResult = serde_json::from_str(&json).unwrap();
        assert!(back.is_infinite());
        assert!(significance_ratio(&[], &[true]).is_err());
    }

    #[test]
    fn pearson_cases() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let c = pearson_corr(&x, &y).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.p_value, 0.0);
        let orth = [1.0, -1.0, 0.0, -1.0, 1.0];
        assert!(pearson_corr(&x, &orth).unwrap().r.abs() < 1e-12);
        assert!(pearson_corr(&x, &[1.0; 5]).is_err());
        assert!(pearson_corr(&x[..2], &y[..2]).is_err());
    }

    #[test]
    fn pearson_p_matches_closed_form_two_dof() {
        // with n = 4 the t statistic has 2 dof and P(|T| > t) = 1 - t / sqrt(t^2 + 2)
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 4.0];
        let c = pearson_corr(&x, &y).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12);
        let t = c.r * (2.0 / (1.0 - c.r * c.r)).sqrt();
        let expected = 1.0 - t / (t * t + 2.0).sqrt();
        assert!(
            (c.p_value - expected).abs() < 1e-10,
            "{} vs {expected}",
            c.p_value
        );
    }
}
