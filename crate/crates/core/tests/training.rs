use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trrank_core::tr_models::{
    evaluate, gen_synthetic, gen_synthetic_with, mse_loss, train, train_loss, SyntheticConfig,
    TrLinearModel, TrainConfig,
};
use trrank_core::{RankVector, Shape};

fn twelve() -> Shape {
    Shape::new(vec![12, 12]).unwrap()
}

fn model(ranks: [usize; 4], seed: u64) -> TrLinearModel {
    TrLinearModel::new(&twelve(), &twelve(), &RankVector::new(ranks.to_vec()).unwrap(), seed).unwrap()
}

#[test]
fn true_matrix_has_the_requested_rank() {
    for true_rank in [1, 4, 9] {
        let data = gen_synthetic(233, true_rank).unwrap();
        let w = DMatrix::from_row_slice(144, 144, data.true_matrix.data());
        let sv = w.singular_values();
        let top = sv.max();
        let numerical = sv.iter().filter(|&&s| s > 1e-8 * top).count();
        assert_eq!(numerical, true_rank);
    }
}

#[test]
fn targets_replay_from_the_stored_matrix() {
    let data = gen_synthetic(233, 4).unwrap();
    let cfg = SyntheticConfig { noise_variance: 0.0, ..SyntheticConfig::default() };
    let clean = gen_synthetic_with(&cfg).unwrap();
    assert_eq!(clean.true_matrix, data.true_matrix);
    let w = clean.true_matrix.data();
    for s in 0..10 {
        let x = &clean.train.x[s * 144..(s + 1) * 144];
        for o in 0..144 {
            let y: f64 = (0..144).map(|i| w[o * 144 + i] * x[i]).sum();
            assert!((y - clean.train.y[s * 144 + o]).abs() <= 1e-12);
        }
    }
}

#[test]
fn evaluate_matches_a_loop_oracle() {
    let data = gen_synthetic(7, 4).unwrap();
    let m = model([3, 4, 3, 4], 1);
    let mut total = 0.0;
    for s in 0..data.test.count {
        let y = m.forward(&data.test.x[s * 144..(s + 1) * 144]).unwrap();
        total += mse_loss(&y, &data.test.y[s * 144..(s + 1) * 144]).unwrap();
    }
    let oracle = total / data.test.count as f64;
    assert!((evaluate(&m, &data).unwrap() - oracle).abs() <= 1e-12);
    assert_eq!(evaluate(&m, &data).unwrap(), evaluate(&m, &data).unwrap());
}

#[test]
fn zero_learning_rate_leaves_cores_untouched() {
    let data = gen_synthetic(233, 4).unwrap();
    let m = model([4, 5, 4, 5], 3);
    let cfg = TrainConfig { learning_rate: 0.0, epochs: 2, ..TrainConfig::default() };
    let (trained, report) = train(&m, &data, &cfg).unwrap();
    assert_eq!(trained, m);
    assert_eq!(report.epochs_run, 2);
}

#[test]
fn identical_seeds_give_identical_runs() {
    let data = gen_synthetic(233, 4).unwrap();
    let m = model([3, 3, 3, 3], 9);
    let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
    let (a, ra) = train(&m, &data, &cfg).unwrap();
    let (b, rb) = train(&m, &data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra.per_epoch_train_loss, rb.per_epoch_train_loss);
    assert_eq!(ra.final_test_mse, rb.final_test_mse);
}

#[test]
fn first_epoch_makes_progress() {
    let data = gen_synthetic(233, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
    for n in 0..20 {
        let ranks = [0; 4].map(|_| rng.random_range(3..=15));
        let m = model(ranks, n);
        let before = train_loss(&m, &data).unwrap();
        let (trained, _) = train(&m, &data, &cfg).unwrap();
        let after = train_loss(&trained, &data).unwrap();
        assert!(after < before, "{ranks:?}: {before} -> {after}");
    }
}

#[test]
fn full_rank_fits_noiseless_targets() {
    let cfg = SyntheticConfig { noise_variance: 0.0, ..SyntheticConfig::default() };
    let data = gen_synthetic_with(&cfg).unwrap();
    let m = model([12; 4], 233);
    let (trained, report) = train(&m, &data, &TrainConfig::default()).unwrap();
    let final_train = train_loss(&trained, &data).unwrap();
    assert!(report.epochs_run <= 100);
    assert!(final_train < 1e-3, "train MSE {final_train:e}");
    assert_eq!(trained.input_len(), 144);
}
