use std::time::Instant;

use normflux::data::{
    generate_synthetic, load_dir, save_csv, Cohort, PreprocessStats, SyntheticSpec,
};
use normflux::deviation::{
    chi_square_threshold, d_mf, d_ml, outlier_test_latent, CohortStats, DeviationReport,
    FitOptions, Metric, StatsSource, HOLDOUT_COHORT,
};
use normflux::fusion::{gpoe_fuse, kl_to_std_normal, poe_fuse, DiagGaussian, GpoeWeights};
use normflux::gradnet::grad_check;
use normflux::mvae::{train, FusionKind, ModelConfig, MvaeModel, Noise};
use normflux::pipeline::{fit_and_score, ScoreOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const MIN_SEED_WINS: usize = 4;
const LATENT_DIM: usize = 10;
const EPOCHS: usize = 150;
const LEARNING_RATE: f64 = 3e-3;

const FUSION_TOL: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const DEGENERACY_TOL: f64 = 1e-10;
const KL_STANDARD_ERRORS: f64 = 3.0;
const KL_SAMPLES: usize = 1_000_000;
const CALIBRATION_MAX_RATE: f64 = 0.02;
const ORDERING_FACTOR: f64 = 1.5;
const AFFINE_TOL: f64 = 1e-8;
const CHI_SQUARE_TOL: f64 = 1e-3;
const CHI_SQUARE_REFERENCE: f64 = 29.588;

const JOINT_FUSIONS: [FusionKind; 3] = [FusionKind::Gpoe, FusionKind::Moe, FusionKind::Poe];

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn base_config(fusion: FusionKind, modality: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        latent_dim: LATENT_DIM,
        fusion,
        modality,
        max_epochs: EPOCHS,
        learning_rate: LEARNING_RATE,
        seed,
        ..ModelConfig::default()
    }
}

fn prepared(spec: &SyntheticSpec) -> Cohort {
    let raw = generate_synthetic(spec).unwrap();
    PreprocessStats::fit_apply(&raw, true).unwrap().0
}

fn fit(
    cohort: &Cohort,
    fusion: FusionKind,
    modality: usize,
    seed: u64,
) -> (MvaeModel<f64>, DeviationReport) {
    let (model, _, report) = fit_and_score(
        cohort,
        base_config(fusion, modality, seed),
        &ScoreOptions::default(),
    )
    .unwrap();
    (model, report)
}

fn ratio(report: &DeviationReport, metric: Metric) -> f64 {
    report.significance(metric).unwrap().ratio
}

fn gaussian_1d(rng: &mut ChaCha8Rng) -> (f64, f64) {
    (rng.random_range(-5.0..5.0), rng.random_range(0.1..4.0))
}

/// Mean and variance of the density proportional to `prod_k N(x; m_k, v_k)^w_k` by trapezoid quadrature.
fn grid_product(experts: &[(f64, f64)], weights: &[f64]) -> (f64, f64) {
    let sd = experts.iter().map(|e| e.1.sqrt()).fold(0.0, f64::max);
    let lo = experts.iter().map(|e| e.0).fold(f64::INFINITY, f64::min) - 14.0 * sd;
    let hi = experts
        .iter()
        .map(|e| e.0)
        .fold(f64::NEG_INFINITY, f64::max)
        + 14.0 * sd;
    let n = 60_000;
    let h = (hi - lo) / n as f64;
    let xs: Vec<f64> = (0..=n).map(|i| lo + i as f64 * h).collect();
    let logs: Vec<f64> = xs
        .iter()
        .map(|x| {
            experts
                .iter()
                .zip(weights)
                .map(|((m, v), w)| -w * (x - m).powi(2) / (2.0 * v))
                .sum()
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let dens: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let integrate = |f: &dyn Fn(usize) -> f64| {
        let inner: f64 = (1..n).map(f).sum();
        h * (inner + 0.5 * (f(0) + f(n)))
    };
    let z = integrate(&|i| dens[i]);
    let mean = integrate(&|i| dens[i] * xs[i]) / z;
    let var = integrate(&|i| dens[i] * (xs[i] - mean).powi(2)) / z;
    (mean, var)
}

fn fusion_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let pair = [gaussian_1d(&mut rng), gaussian_1d(&mut rng)];
        let experts: Vec<DiagGaussian<f64>> = pair
            .iter()
            .map(|&(m, v)| DiagGaussian::new(vec![m], vec![v]).unwrap())
            .collect();
        let a: f64 = rng.random_range(0.02..0.98);
        let weights = GpoeWeights::new(vec![vec![a], vec![1.0 - a]]).unwrap();
        let poe = poe_fuse(&experts).unwrap();
        let gpoe = gpoe_fuse(&experts, &weights).unwrap();
        for (fused, w) in [(poe, [1.0, 1.0]), (gpoe, [a, 1.0 - a])] {
            let (mean, var) = grid_product(&pair, &w);
            worst = worst
                .max((fused.mean()[0] - mean).abs())
                .max((fused.var()[0] - var).abs());
        }
    }
    outcome(
        worst < FUSION_TOL,
        format!("max deviation from grid product {worst:.2e} (tol {FUSION_TOL:.0e})"),
    )
}

fn gradient_check() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        for fusion in JOINT_FUSIONS {
            let cfg = ModelConfig {
                latent_dim: 3,
                fusion,
                encoder_layers: vec![5, 4],
                decoder_layers: vec![4, 5],
                seed,
                ..ModelConfig::default()
            };
            let dims = [4, 3];
            let mut model = MvaeModel::<f64>::new(cfg, &dims).unwrap();
            for id in model.params().ids().collect::<Vec<_>>() {
                for v in model.params_mut().get_mut(id).values_mut() {
                    *v += rng.random_range(-0.3..0.3);
                }
            }
            let n = 4;
            let x: Vec<_> = dims
                .iter()
                .map(|&d| {
                    normflux::TensorF64::matrix(
                        n,
                        d,
                        (0..n * d).map(|_| rng.random_range(-1.5..1.5)).collect(),
                    )
                    .unwrap()
                })
                .collect();
            let channels = model.channel_inputs(&x).unwrap();
            let noise = Noise::standard(&mut rng, n, 3, model.n_channels());
            let mut store = model.params().clone();
            let report = grad_check(
                &mut store,
                |tape, params| model.loss_on_tape(tape, params, &channels, &noise),
                GRAD_TOL,
            )
            .unwrap();
            worst = worst.max(report.max_rel_error);
            if !report.passed() {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("60 model checks, max relative error {worst:.2e}, {failures} failures (tol {GRAD_TOL:.0e})"),
    )
}

fn degeneracy() -> Outcome {
    let spec = SyntheticSpec {
        n_train: 200,
        n_holdout: 10,
        n_disease: 10,
        modality_dims: vec![12],
        noise_sd: vec![0.5],
        seed: 3,
        ..SyntheticSpec::default()
    };
    let cohort = prepared(&spec);
    let data = cohort.modality_data(normflux::data::CohortLabel::HealthyTrain);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let noise = Noise::standard(&mut rng, data[0].rows(), 4, 1);
    let runs: Vec<(f64, Vec<f64>)> = JOINT_FUSIONS
        .iter()
        .map(|&fusion| {
            let cfg = ModelConfig {
                latent_dim: 4,
                fusion,
                encoder_layers: vec![8],
                decoder_layers: vec![8],
                max_epochs: 5,
                batch_size: 32,
                learning_rate: 1e-2,
                seed: 9,
                ..ModelConfig::default()
            };
            let mut model = MvaeModel::<f64>::new(cfg, &[12]).unwrap();
            let initial = model.loss(&data, &noise).unwrap();
            let history = train(&mut model, &data).unwrap();
            let mut losses = history.train_loss.clone();
            losses.extend(&history.val_loss);
            losses.push(model.loss(&data, &noise).unwrap());
            (initial, losses)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (initial, losses) in &runs[1..] {
        worst = worst.max((initial - runs[0].0).abs());
        for (a, b) in losses.iter().zip(&runs[0].1) {
            worst = worst.max((a - b).abs());
        }
        if losses.len() != runs[0].1.len() {
            worst = f64::INFINITY;
        }
    }
    outcome(
        worst <= DEGENERACY_TOL,
        format!("max loss difference across poe/gpoe/moe with one modality {worst:.2e} (tol {DEGENERACY_TOL:.0e})"),
    )
}

fn kl_monte_carlo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(401);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let d = 3;
        let mean: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let var: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..3.0)).collect();
        let closed = kl_to_std_normal(&DiagGaussian::new(mean.clone(), var.clone()).unwrap());
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..KL_SAMPLES {
            let mut log_ratio = 0.0;
            for i in 0..d {
                let eps: f64 = rng.sample(StandardNormal);
                let z = mean[i] + var[i].sqrt() * eps;
                log_ratio += -0.5 * var[i].ln() - 0.5 * eps * eps + 0.5 * z * z;
            }
            sum += log_ratio;
            sum_sq += log_ratio * log_ratio;
        }
        let n = KL_SAMPLES as f64;
        let estimate = sum / n;
        let se = ((sum_sq / n - estimate * estimate) / (n - 1.0)).sqrt();
        worst = worst.max((estimate - closed).abs() / se);
    }
    outcome(
        worst < KL_STANDARD_ERRORS,
        format!(
            "worst gap {worst:.2} standard errors over 10 gaussians (limit {KL_STANDARD_ERRORS})"
        ),
    )
}

struct DefaultBenchmark {
    /// `[seed][fusion]` reports for the joint fusions.
    reports: Vec<Vec<DeviationReport>>,
}

fn default_benchmark() -> DefaultBenchmark {
    let reports = SEEDS
        .iter()
        .map(|&seed| {
            let cohort = prepared(&SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            });
            JOINT_FUSIONS
                .iter()
                .map(|&f| fit(&cohort, f, 0, seed).1)
                .collect()
        })
        .collect();
    DefaultBenchmark { reports }
}

fn calibration(bench: &DefaultBenchmark) -> Outcome {
    let flags = bench.reports[0][0].cohort_flags(Metric::Dml, HOLDOUT_COHORT);
    let rate = flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64;
    outcome(
        (0.0..=CALIBRATION_MAX_RATE).contains(&rate),
        format!(
            "gpoe holdout D_ml flag rate {rate:.4} over {} subjects (bound {CALIBRATION_MAX_RATE})",
            flags.len()
        ),
    )
}

fn metric_ordering(bench: &DefaultBenchmark) -> Outcome {
    let mut lines = Vec::new();
    let mut passed = true;
    for (k, fusion) in JOINT_FUSIONS.iter().enumerate() {
        let wins = bench
            .reports
            .iter()
            .filter(|per_seed| {
                let (ml, mf) = (
                    ratio(&per_seed[k], Metric::Dml),
                    ratio(&per_seed[k], Metric::Dmf),
                );
                ml >= ORDERING_FACTOR * mf
            })
            .count();
        passed &= wins >= MIN_SEED_WINS;
        lines.push(format!("{fusion} {wins}/5"));
    }
    outcome(
        passed,
        format!(
            "seeds with D_ml ratio >= {ORDERING_FACTOR} x D_mf ratio: {}",
            lines.join(", ")
        ),
    )
}

/// Latents 0-3 load only on modality 0 and latents 4-7 only on modality 1.
fn block_loadings(seed: u64, dims: &[usize], latent_dim: usize) -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let per_block = latent_dim / dims.len();
    dims.iter()
        .enumerate()
        .map(|(m, &p)| {
            (0..latent_dim)
                .map(|l| {
                    (0..p)
                        .map(|_| {
                            let w: f64 = rng.sample(StandardNormal);
                            if l / per_block == m {
                                0.5 * w
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

fn multimodal_advantage() -> Outcome {
    let mut wins = [0usize; 3];
    for &seed in &SEEDS {
        let base = SyntheticSpec::default();
        let spec = SyntheticSpec {
            seed,
            loadings: Some(block_loadings(seed, &base.modality_dims, base.latent_dim)),
            shifted_latents: vec![0, 1, 4, 5],
            ..base
        };
        let cohort = prepared(&spec);
        let best_uni = (0..2)
            .map(|m| ratio(&fit(&cohort, FusionKind::Unimodal, m, seed).1, Metric::Dml))
            .fold(f64::NEG_INFINITY, f64::max);
        for (k, &fusion) in JOINT_FUSIONS.iter().enumerate() {
            if ratio(&fit(&cohort, fusion, 0, seed).1, Metric::Dml) >= best_uni {
                wins[k] += 1;
            }
        }
    }
    let passed = wins.iter().all(|&w| w >= MIN_SEED_WINS);
    let detail = JOINT_FUSIONS
        .iter()
        .zip(wins)
        .map(|(f, w)| format!("{f} {w}/5"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        passed,
        format!("seeds where D_ml ratio >= best uni-modal: {detail}"),
    )
}

fn gpoe_weighting() -> Outcome {
    let mut alphas = Vec::new();
    for &seed in &SEEDS {
        let cohort = prepared(&SyntheticSpec {
            seed,
            noise_sd: vec![0.2, 2.0],
            ..SyntheticSpec::default()
        });
        let (model, _) = fit(&cohort, FusionKind::Gpoe, 0, seed);
        let alpha = model.get_alpha().unwrap();
        let clean = &alpha.rows()[0];
        alphas.push(clean.iter().sum::<f64>() / clean.len() as f64);
    }
    let wins = alphas.iter().filter(|&&a| a > 0.5).count();
    let shown = alphas
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect::<Vec<_>>()
        .join(", ");
    outcome(
        wins >= MIN_SEED_WINS,
        format!("mean alpha of the cleaner modality [{shown}], {wins}/5 above 0.5"),
    )
}

fn affine_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(901);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let d = rng.random_range(2..9);
        let source = if case % 2 == 0 {
            StatsSource::Latent
        } else {
            StatsSource::FeatureError
        };
        let sample = |rng: &mut ChaCha8Rng| -> Vec<f64> {
            (0..d).map(|_| rng.sample(StandardNormal)).collect()
        };
        let a: Vec<Vec<f64>> = (0..d)
            .map(|i| {
                (0..d)
                    .map(|j| rng.sample::<f64, _>(StandardNormal) + if i == j { 3.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
        let recode = |x: &[f64]| -> Vec<f64> {
            a.iter()
                .zip(&b)
                .map(|(row, bi)| row.iter().zip(x).map(|(r, v)| r * v).sum::<f64>() + bi)
                .collect()
        };
        let reference: Vec<Vec<f64>> = (0..80).map(|_| sample(&mut rng)).collect();
        let moved: Vec<Vec<f64>> = reference.iter().map(|x| recode(x)).collect();
        let opts = FitOptions {
            robust: false,
            ridge: false,
            source,
        };
        let s0 = CohortStats::fit_with(&reference, opts).unwrap();
        let s1 = CohortStats::fit_with(&moved, opts).unwrap();
        let metric = match source {
            StatsSource::Latent => d_ml,
            StatsSource::FeatureError => d_mf,
        };
        for _ in 0..5 {
            let q = sample(&mut rng);
            let (d0, d1) = (metric(&q, &s0).unwrap(), metric(&recode(&q), &s1).unwrap());
            worst = worst.max((d0 - d1).abs() / d0.max(1.0));
        }
    }
    outcome(
        worst < AFFINE_TOL,
        format!("max relative change over 50 recodings {worst:.2e} (tol {AFFINE_TOL:.0e})"),
    )
}

/// Survival function of a chi-square with even degrees of freedom `2k`.
fn even_dof_sf(x: f64, k: usize) -> f64 {
    let half = x / 2.0;
    let mut term = 1.0;
    let mut total = 1.0;
    for i in 1..k {
        term *= half / i as f64;
        total += term;
    }
    (-half).exp() * total
}

fn chi_square_boundary() -> Outcome {
    let (dof, p) = (10, 0.001);
    let (mut lo, mut hi) = (0.0, 200.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if even_dof_sf(mid, dof / 2) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let threshold = chi_square_threshold(dof, p).unwrap();
    let calls = outlier_test_latent(
        &[
            (oracle - CHI_SQUARE_TOL).sqrt(),
            (oracle + CHI_SQUARE_TOL).sqrt(),
        ],
        dof,
        p,
    )
    .unwrap();
    let passed = (threshold - oracle).abs() < CHI_SQUARE_TOL
        && (oracle - CHI_SQUARE_REFERENCE).abs() < CHI_SQUARE_TOL
        && !calls[0].flagged
        && calls[1].flagged;
    outcome(
        passed,
        format!(
            "threshold {threshold:.5}, independent quantile {oracle:.5}, boundary flags {}/{}",
            calls[0].flagged, calls[1].flagged
        ),
    )
}

fn pipeline_bytes(dir: &std::path::Path) -> (Vec<u8>, Vec<u8>) {
    let spec = SyntheticSpec {
        n_train: 600,
        n_holdout: 300,
        n_disease: 300,
        seed: 17,
        ..SyntheticSpec::default()
    };
    save_csv(&generate_synthetic(&spec).unwrap(), dir).unwrap();
    let loaded = load_dir(dir).unwrap().cohort;
    let (cohort, _) = PreprocessStats::fit_apply(&loaded, true).unwrap();
    let cfg = ModelConfig {
        max_epochs: 30,
        ..base_config(FusionKind::Gpoe, 0, 17)
    };
    let (_, _, report) = fit_and_score(&cohort, cfg, &ScoreOptions::default()).unwrap();
    let (mut csv, mut duf) = (Vec::new(), Vec::new());
    report.write_csv(&mut csv).unwrap();
    report.write_duf_csv(&mut duf).unwrap();
    (csv, duf)
}

fn reproducibility() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = pipeline_bytes(a.path());
    let second = pipeline_bytes(b.path());
    let same = first == second && !first.0.is_empty();
    outcome(
        same,
        format!(
            "report {} bytes and d_uf table {} bytes, identical: {same}",
            first.0.len(),
            first.1.len()
        ),
    )
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome, f64)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let res = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = if res.passed { "PASS" } else { "FAIL" };
        println!(
            "criterion {id:2} [{tag}] {name}: {} ({secs:.1}s)",
            res.detail
        );
        results.push((id, name, res, secs));
    };
    run(1, "fusion oracle", &mut fusion_oracle);
    run(2, "gradient correctness", &mut gradient_check);
    run(3, "single-modality degeneracy", &mut degeneracy);
    run(4, "kl against monte carlo", &mut kl_monte_carlo);
    let mut bench = None;
    run(5, "holdout calibration", &mut || {
        calibration(bench.insert(default_benchmark()))
    });
    run(6, "metric ordering", &mut || {
        metric_ordering(bench.as_ref().unwrap())
    });
    run(7, "multi-modal advantage", &mut multimodal_advantage);
    run(8, "gpoe weighting", &mut gpoe_weighting);
    run(9, "affine invariance", &mut affine_invariance);
    run(10, "chi-square threshold", &mut chi_square_boundary);
    run(11, "reproducibility", &mut reproducibility);
    let failed: Vec<usize> = results
        .iter()
        .filter(|r| !r.2.passed)
        .map(|r| r.0)
        .collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
