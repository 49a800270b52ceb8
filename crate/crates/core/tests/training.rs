mod common;

use vqa_augment::synthetic::{synthetic_corpus, SyntheticConfig};
use vqa_augment::training::{train, TrainConfig};

#[test]
fn untrained_model_is_near_chance() {
    common::criterion_random_baseline().unwrap();
}

#[test]
fn binomial_band_is_wide_enough() {
    let cov = common::binomial_coverage(500, 0.2, 60, 140);
    assert!(cov > 0.99 && cov <= 1.0, "{cov}");
    let all = common::binomial_coverage(10, 0.3, 0, 10);
    assert!((all - 1.0).abs() < 1e-12);
    // P(X = 0) for Binomial(3, 0.5).
    assert!((common::binomial_coverage(3, 0.5, 0, 0) - 0.125).abs() < 1e-15);
}

#[test]
fn smoothed_loss_decreases() {
    let corpus = synthetic_corpus(&SyntheticConfig::default()).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        ..common::overfit_train_config()
    };
    let out = train(&corpus.rows, &[], &corpus.store, &corpus.table, &common::overfit_model(), &cfg).unwrap();
    let losses: Vec<f64> = out.log.iter().map(|m| m.train_loss).collect();
    let smoothed: Vec<f64> = losses.windows(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
    let rises = smoothed.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises <= 1, "{rises} rises in {smoothed:?}");
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn training_is_deterministic() {
    let corpus = synthetic_corpus(&SyntheticConfig {
        rows: 24,
        test_fraction: 0.25,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 5,
        ..common::overfit_train_config()
    };
    let run = || {
        train(
            &corpus.train_rows(),
            &corpus.test_rows(),
            &corpus.store,
            &corpus.table,
            &common::overfit_model(),
            &cfg,
        )
        .unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.params, b.params);
    assert_eq!(a.best_epoch, b.best_epoch);
    assert!(a.log.iter().zip(&b.log).all(|(x, y)| x.same_values(y)));
    assert!(a.log.iter().all(|m| m.test_acc.is_some()));
}
