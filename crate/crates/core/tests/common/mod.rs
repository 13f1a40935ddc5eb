//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use trrank_core::evolve::{Individual, Objectives};
use trrank_core::tensor::{linear_index, multi_index};
use trrank_core::tr_models::{mse_loss, Trainable, TrLinearModel};
use trrank_core::{Shape, Tensor, TensorRingFormat};

fn odometer(dims: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    let total: usize = dims.iter().product();
    (0..total).map(move |mut l| {
        let mut idx = vec![0; dims.len()];
        for ax in (0..dims.len()).rev() {
            idx[ax] = l % dims[ax];
            l /= dims[ax];
        }
        idx
    })
}

/// Nested-loop contraction over `pairs`.
pub fn naive_contract(a: &Tensor, b: &Tensor, pairs: &[(usize, usize)]) -> Vec<f64> {
    let free_a: Vec<usize> = (0..a.ndim()).filter(|i| !pairs.iter().any(|p| p.0 == *i)).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|i| !pairs.iter().any(|p| p.1 == *i)).collect();
    let out_dims: Vec<usize> = free_a
        .iter()
        .map(|&i| a.dims()[i])
        .chain(free_b.iter().map(|&i| b.dims()[i]))
        .collect();
    let sum_dims: Vec<usize> = pairs.iter().map(|p| a.dims()[p.0]).collect();
    let mut out = Vec::new();
    for o in odometer(&out_dims) {
        let mut acc = 0.0;
        for s in odometer(&sum_dims) {
            let mut ia = vec![0; a.ndim()];
            let mut ib = vec![0; b.ndim()];
            for (n, &ax) in free_a.iter().enumerate() {
                ia[ax] = o[n];
            }
            for (n, &ax) in free_b.iter().enumerate() {
                ib[ax] = o[free_a.len() + n];
            }
            for (n, p) in pairs.iter().enumerate() {
                ia[p.0] = s[n];
                ib[p.1] = s[n];
            }
            acc += a.get(&ia).unwrap() * b.get(&ib).unwrap();
        }
        out.push(acc);
    }
    out
}

/// Literal ring sum: every entry is `Σ_{r_0..r_{d-1}} Π_k G_k[r_k, i_k, r_{k+1}]`.
pub fn naive_reconstruct(trf: &TensorRingFormat) -> Vec<f64> {
    let dims = trf.mode_dims().dims();
    let ranks = trf.ranks().as_slice();
    let d = dims.len();
    let mut out = Vec::new();
    for idx in odometer(dims) {
        let mut acc = 0.0;
        for r in odometer(ranks) {
            let mut prod = 1.0;
            for k in 0..d {
                prod *= trf.cores()[k].get(&[r[k], idx[k], r[(k + 1) % d]]).unwrap();
            }
            acc += prod;
        }
        out.push(acc);
    }
    out
}

/// Dense `O × I` matrix from the literal ring sum, input modes first.
pub fn naive_dense(model: &TrLinearModel) -> Vec<Vec<f64>> {
    let full = naive_reconstruct(model.trf());
    let (i_len, o_len) = (model.input_len(), model.output_len());
    let mut m = vec![vec![0.0; i_len]; o_len];
    for i in 0..i_len {
        for o in 0..o_len {
            m[o][i] = full[i * o_len + o];
        }
    }
    m
}

pub fn naive_forward(model: &TrLinearModel, x: &[f64], batch: usize) -> Vec<f64> {
    let m = naive_dense(model);
    let (i_len, o_len) = (model.input_len(), model.output_len());
    let mut y = vec![0.0; batch * o_len];
    for b in 0..batch {
        for o in 0..o_len {
            y[b * o_len + o] = (0..i_len).map(|i| m[o][i] * x[b * i_len + i]).sum();
        }
    }
    y
}

pub fn naive_mse(pred: &[f64], target: &[f64]) -> f64 {
    let mut s = 0.0;
    for (p, t) in pred.iter().zip(target) {
        s += (p - t) * (p - t);
    }
    s / pred.len() as f64
}

/// Central differences of the batch MSE with respect to every core entry.
pub fn finite_difference<M: Trainable + Clone>(
    model: &M,
    x: &[f64],
    y: &[f64],
    batch: usize,
    h: f64,
) -> Vec<Vec<f64>> {
    let n_params = model.params().len();
    (0..n_params)
        .map(|p| {
            let len = model.params()[p].len();
            (0..len)
                .map(|e| {
                    let mut plus = model.clone();
                    plus.params_mut()[p].data_mut()[e] += h;
                    let mut minus = model.clone();
                    minus.params_mut()[p].data_mut()[e] -= h;
                    let lp = mse_loss(&plus.predict(x, batch).unwrap(), y).unwrap();
                    let lm = mse_loss(&minus.predict(x, batch).unwrap(), y).unwrap();
                    (lp - lm) / (2.0 * h)
                })
                .collect()
        })
        .collect()
}

/// Largest entry-wise relative error, with a floor on the denominator.
pub fn max_relative_error(analytic: &[Tensor], numeric: &[Vec<f64>], floor: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, n) in analytic.iter().zip(numeric) {
        for (&av, &nv) in a.data().iter().zip(n) {
            let denom = av.abs().max(nv.abs()).max(floor);
            worst = worst.max((av - nv).abs() / denom);
        }
    }
    worst
}

/// Fronts by repeated extraction of the non-dominated remainder.
pub fn pareto_peel(objs: &[Objectives]) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = (0..objs.len()).collect();
    let mut fronts = Vec::new();
    while !remaining.is_empty() {
        let front: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| {
                !remaining.iter().any(|&j| {
                    let (a, b) = (&objs[j], &objs[i]);
                    a.loss <= b.loss && a.params <= b.params && (a.loss < b.loss || a.params < b.params)
                })
            })
            .collect();
        remaining.retain(|i| !front.contains(i));
        fronts.push(front);
    }
    fronts
}

pub fn random_population<R: Rng>(rng: &mut R, size: usize) -> Vec<Individual> {
    (0..size)
        .map(|n| {
            // coarse values force ties and duplicate objective vectors
            let loss = rng.random_range(0..12) as f64 / 4.0;
            let params = rng.random_range(0..12u64);
            let genome = trrank_core::RankVector::new(vec![n + 1]).unwrap();
            Individual::evaluated(genome, Objectives::new(loss, params))
        })
        .collect()
}

pub fn random_shape<R: Rng>(rng: &mut R, max_ndim: usize, max_dim: usize) -> Shape {
    let nd = rng.random_range(1..=max_ndim);
    Shape::new((0..nd).map(|_| rng.random_range(1..=max_dim)).collect::<Vec<_>>()).unwrap()
}

pub fn uniform_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn index_roundtrip(shape: &Shape, l: usize) -> usize {
    linear_index(&multi_index(l, shape).unwrap(), shape).unwrap()
}
