use maxva_lab::toyml::{
    is_nonincreasing, minibatch_iter, smoothed_loss, train, tune_eta, BlobConfig, BlobDataset, Model, TrainConfig,
};
use maxva_lab::rng::run_stream;
use maxva_lab::verify::gradient_suite;
use maxva_lab::{Algorithm, OptimizerConfig};

fn eta_grid() -> Vec<f64> {
    (-12..=0).map(|k| 10f64.powf(k as f64 / 4.0)).collect()
}

#[test]
fn gradients_match_finite_differences() {
    let report = gradient_suite(50, 9);
    assert!(report.passed(), "{report}\n{:#?}", report.failures);
}

#[test]
fn smoothed_loss_is_nonincreasing_at_tuned_rate() {
    let data = BlobDataset::generate(&BlobConfig::default()).unwrap();
    for model in [Model::Logistic, Model::Mlp { n_hidden: 8 }] {
        let cfg = TrainConfig {
            model,
            ..TrainConfig::default()
        };
        for alg in Algorithm::ALL {
            let (eta, log) = tune_eta(&data, &OptimizerConfig::new(alg), &cfg, &eta_grid()).unwrap();
            let smooth = smoothed_loss(&log, 50);
            assert!(!smooth.is_empty());
            assert!(is_nonincreasing(&smooth), "{model:?} {alg} at η = {eta}");
        }
    }
}

#[test]
fn training_is_reproducible() {
    let data = BlobDataset::generate(&BlobConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        seed: 4,
        ..TrainConfig::default()
    };
    let opt = OptimizerConfig::new(Algorithm::LaMAdam).with_eta(0.05);
    assert_eq!(train(&data, &opt, &cfg).unwrap(), train(&data, &opt, &cfg).unwrap());
}

#[test]
fn growing_batches_cover_the_budget() {
    let data = BlobDataset::generate(&BlobConfig {
        n_samples: 40,
        ..BlobConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_growth: true,
        ..TrainConfig::default()
    };
    let log = train(&data, &OptimizerConfig::new(Algorithm::MAdam).with_eta(0.01), &cfg).unwrap();
    let sizes: Vec<usize> = minibatch_iter(40, 32, run_stream(cfg.seed, 1), true)
        .unwrap()
        .take(log.len())
        .map(|b| b.len())
        .collect();
    let total: usize = sizes.iter().sum();
    assert!(total >= 120 && total - sizes.last().unwrap() < 120);
    assert_eq!(&sizes[..4], &[1, 2, 3, 4]);
}
