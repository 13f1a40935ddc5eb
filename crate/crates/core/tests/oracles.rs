mod common;

use common::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trrank_core::evolve::fast_non_dominated_sort;
use trrank_core::tensor::{contract, gaussian_tensor, AxisPairing};
use trrank_core::tr_format::{init_trf, reconstruct, reconstruct_balanced};
use trrank_core::tr_models::{core_gradients, mse_loss, TrLinearModel, TrLinearStack, Trainable};
use trrank_core::{RankVector, Shape, Tensor};

const TOL: f64 = 1e-10;

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_model(rng: &mut ChaCha8Rng, max_rank: usize) -> TrLinearModel {
    let alpha = rng.random_range(1..=2);
    let beta = rng.random_range(1..=2);
    let f = |rng: &mut ChaCha8Rng, n| {
        Shape::new((0..n).map(|_| rng.random_range(1..=3)).collect::<Vec<_>>()).unwrap()
    };
    let (inf, outf) = (f(rng, alpha), f(rng, beta));
    let ranks: Vec<usize> = (0..alpha + beta).map(|_| rng.random_range(1..=max_rank)).collect();
    TrLinearModel::new(&inf, &outf, &RankVector::new(ranks).unwrap(), rng.random()).unwrap()
}

#[test]
fn contraction_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..60 {
        let a_shape = random_shape(&mut rng, 4, 4);
        let n_pairs = rng.random_range(0..=a_shape.ndim().min(2));
        let mut axes_a: Vec<usize> = (0..a_shape.ndim()).collect();
        for i in (1..axes_a.len()).rev() {
            axes_a.swap(i, rng.random_range(0..=i));
        }
        let paired: Vec<usize> = axes_a[..n_pairs].to_vec();
        let extra = random_shape(&mut rng, 2, 3);
        let mut b_dims: Vec<usize> = paired.iter().map(|&i| a_shape.dims()[i]).collect();
        b_dims.extend_from_slice(extra.dims());
        let mut b_axes: Vec<usize> = (0..b_dims.len()).collect();
        for i in (1..b_axes.len()).rev() {
            b_axes.swap(i, rng.random_range(0..=i));
        }
        // b_axes[n] is where logical axis n of B ends up
        let mut placed = vec![0; b_dims.len()];
        for (n, &pos) in b_axes.iter().enumerate() {
            placed[pos] = b_dims[n];
        }
        let pairs: Vec<(usize, usize)> = paired.iter().enumerate().map(|(n, &ia)| (ia, b_axes[n])).collect();
        let a = gaussian_tensor(a_shape, 0.0, 1.0, case).unwrap();
        let b = gaussian_tensor(Shape::new(placed).unwrap(), 0.0, 1.0, case + 1000).unwrap();
        let fast = contract(&a, &b, &AxisPairing::new(pairs.clone())).unwrap();
        let slow = naive_contract(&a, &b, &pairs);
        assert!(max_abs_diff(fast.data(), &slow) <= TOL, "case {case}");
    }
}

#[test]
fn reconstruction_matches_ring_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for case in 0..60 {
        let dims = random_shape(&mut rng, 5, 3);
        let ranks: Vec<usize> = (0..dims.ndim()).map(|_| rng.random_range(1..=3)).collect();
        let trf = init_trf(&dims, &RankVector::new(ranks).unwrap(), case).unwrap();
        let oracle = naive_reconstruct(&trf);
        assert!(max_abs_diff(reconstruct(&trf).unwrap().data(), &oracle) <= TOL, "case {case}");
        assert!(max_abs_diff(reconstruct_balanced(&trf).unwrap().data(), &oracle) <= TOL);
    }
}

#[test]
fn forward_and_loss_match_materialized_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..60 {
        let model = random_model(&mut rng, 3);
        let batch = rng.random_range(1..=5);
        let x = uniform_vec(&mut rng, batch * model.input_len());
        let t = uniform_vec(&mut rng, batch * model.output_len());
        let y = model.forward_batch(&x, batch).unwrap();
        let oracle = naive_forward(&model, &x, batch);
        assert!(max_abs_diff(&y, &oracle) <= TOL, "case {case}");
        let dense = model.dense_matrix().unwrap();
        let flat: Vec<f64> = naive_dense(&model).concat();
        assert!(max_abs_diff(dense.data(), &flat) <= TOL);
        let loss = mse_loss(&y, &t).unwrap();
        assert!((loss - naive_mse(&oracle, &t)).abs() <= TOL);
    }
}

#[test]
fn sort_matches_pareto_peeling() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..200 {
        let size = rng.random_range(1..=64);
        let pop = random_population(&mut rng, size);
        let objs: Vec<_> = pop.iter().map(|i| i.objectives.unwrap()).collect();
        let mut fast = fast_non_dominated_sort(&pop).unwrap();
        let mut slow = pareto_peel(&objs);
        for f in fast.iter_mut().chain(slow.iter_mut()) {
            f.sort_unstable();
        }
        assert_eq!(fast, slow);
    }
}

#[test]
fn core_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let model = random_model(&mut rng, 3);
        let batch = 4;
        let x = uniform_vec(&mut rng, batch * model.input_len());
        let y = uniform_vec(&mut rng, batch * model.output_len());
        let analytic = core_gradients(&model, &x, &y, batch).unwrap();
        let numeric = finite_difference(&model, &x, &y, batch, 1e-5);
        worst = worst.max(max_relative_error(&analytic, &numeric, 1e-8));
    }
    assert!(worst <= 1e-5, "max relative error {worst:e}");
}

#[test]
fn stack_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    for seed in 0..3 {
        let s = Shape::new(vec![2, 3]).unwrap();
        let layers = (0..2)
            .map(|k| {
                let r = RankVector::new(vec![2, rng.random_range(1..=3), 2, 2]).unwrap();
                TrLinearModel::new(&s, &s, &r, seed * 10 + k).unwrap()
            })
            .collect();
        let stack = TrLinearStack::new(layers).unwrap();
        let batch = 3;
        let x = uniform_vec(&mut rng, batch * 6);
        let y = uniform_vec(&mut rng, batch * 6);
        let (_, analytic) = stack.loss_and_grads(&x, &y, batch).unwrap();
        let numeric = finite_difference(&stack, &x, &y, batch, 1e-5);
        let worst = max_relative_error(&analytic, &numeric, 1e-8);
        assert!(worst <= 1e-5, "max relative error {worst:e}");
    }
}

#[test]
fn zero_core_gives_zero_map() {
    let mut model = TrLinearModel::new(
        &Shape::new(vec![2, 2]).unwrap(),
        &Shape::new(vec![3]).unwrap(),
        &RankVector::new(vec![2, 2, 2]).unwrap(),
        1,
    )
    .unwrap();
    let shape = model.trf().cores()[1].shape().clone();
    model.trf_mut().cores_mut()[1] = Tensor::zeros(shape);
    let y = model.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    assert!(y.iter().all(|&v| v == 0.0));
}
