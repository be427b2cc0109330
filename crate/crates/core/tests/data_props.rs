use normflux::data::{
    deconfound, generate_synthetic, load_dir, save_csv, standardize, unstandardize, Cohort,
    CohortLabel, SyntheticSpec,
};
use proptest::prelude::*;

fn spec(seed: u64, n: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_train: n,
        n_holdout: n / 2,
        n_disease: n / 2,
        latent_dim: 2,
        modality_dims: vec![4, 3],
        shifted_latents: vec![1],
        severity_spread: 0.3,
        seed,
        ..SyntheticSpec::default()
    }
}

fn max_abs_diff(a: &Cohort, b: &Cohort) -> f64 {
    a.modalities()
        .iter()
        .zip(b.modalities())
        .flat_map(|(x, y)| {
            x.values()
                .iter()
                .zip(y.values())
                .map(|(u, v)| (u - v).abs())
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generation_is_a_pure_function_of_the_spec(seed in any::<u64>()) {
        let a = generate_synthetic(&spec(seed, 40)).unwrap();
        let b = generate_synthetic(&spec(seed, 40)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn deconfounding_is_idempotent(seed in any::<u64>()) {
        let cohort = generate_synthetic(&spec(seed, 60)).unwrap();
        let (once, _) = deconfound(&cohort).unwrap();
        let (twice, _) = deconfound(&once).unwrap();
        prop_assert!(max_abs_diff(&once, &twice) < 1e-10);
    }

    #[test]
    fn standardisation_round_trips(seed in any::<u64>()) {
        let cohort = generate_synthetic(&spec(seed, 50)).unwrap();
        let (z, stats) = standardize(&cohort, None).unwrap();
        let back = unstandardize(&z, &stats).unwrap();
        prop_assert!(max_abs_diff(&cohort, &back) < 1e-12);
    }

    #[test]
    fn standardisation_ignores_non_training_rows(seed in any::<u64>(), rot in 1usize..30) {
        let cohort = generate_synthetic(&spec(seed, 40)).unwrap();
        let train = cohort.indices(CohortLabel::HealthyTrain);
        let mut others: Vec<usize> = (0..cohort.n_subjects()).filter(|i| !train.contains(i)).collect();
        let k = rot % others.len();
        others.rotate_left(k);
        let rows: Vec<usize> = train.iter().chain(&others).copied().collect();
        let (_, a) = standardize(&cohort, None).unwrap();
        let (_, b) = standardize(&cohort.select(&rows), None).unwrap();
        prop_assert_eq!(a, b);
        let (_, c) = deconfound(&cohort).unwrap();
        let (_, d) = deconfound(&cohort.select(&rows)).unwrap();
        prop_assert_eq!(c, d);
    }
}

#[test]
fn csv_round_trip_is_exact() {
    let cohort = generate_synthetic(&spec(3, 30)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_csv(&cohort, dir.path()).unwrap();
    let loaded = load_dir(dir.path()).unwrap();
    assert!(loaded.excluded.is_empty());
    assert_eq!(loaded.cohort, cohort);
}

#[test]
fn default_generation_is_fast() {
    let start = std::time::Instant::now();
    let cohort = generate_synthetic(&SyntheticSpec::default()).unwrap();
    assert_eq!(cohort.n_subjects(), 6000);
    assert!(start.elapsed().as_secs_f64() < 10.0);
}
