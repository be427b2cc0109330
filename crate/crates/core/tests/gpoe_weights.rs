use normflux::data::{generate_synthetic, CohortLabel, PreprocessStats, SyntheticSpec};
use normflux::mvae::{train, FusionKind, ModelConfig, MvaeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Modality 0 loads on every latent; modality 1 is pure noise.
fn noise_modality_spec(seed: u64) -> SyntheticSpec {
    let (latent, dims) = (4, [24, 24]);
    let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
    let loadings = dims
        .iter()
        .enumerate()
        .map(|(m, &p)| {
            (0..latent)
                .map(|_| {
                    (0..p)
                        .map(|_| if m == 0 { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    SyntheticSpec {
        n_train: 800,
        n_holdout: 10,
        n_disease: 10,
        latent_dim: latent,
        modality_dims: dims.to_vec(),
        loadings: Some(loadings),
        shifted_latents: vec![0],
        seed,
        ..SyntheticSpec::default()
    }
}

#[test]
fn gpoe_upweights_the_informative_modality() {
    let mut above = 0;
    let mut means = Vec::new();
    for seed in 0..5 {
        let raw = generate_synthetic(&noise_modality_spec(seed)).unwrap();
        let (cohort, _) = PreprocessStats::fit_apply(&raw, true).unwrap();
        let cfg = ModelConfig {
            latent_dim: 4,
            fusion: FusionKind::Gpoe,
            max_epochs: 150,
            learning_rate: 3e-3,
            batch_size: 64,
            seed,
            ..ModelConfig::default()
        };
        let mut model = MvaeModel::<f64>::new(cfg, &cohort.modality_dims()).unwrap();
        train(&mut model, &cohort.modality_data(CohortLabel::HealthyTrain)).unwrap();
        let alpha = model.get_alpha().unwrap();
        let mean = alpha.rows()[0].iter().sum::<f64>() / alpha.dim() as f64;
        means.push(mean);
        if mean > 0.5 {
            above += 1;
        }
    }
    assert!(above >= 4, "mean alpha of the informative modality per seed: {means:?}");
}
