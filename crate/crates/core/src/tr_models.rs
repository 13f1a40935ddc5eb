//! TR-linear layers, their analytic gradients, Adam training, and the
//! synthetic low-rank regression dataset.
//!
//! A TR-linear layer stores a `Π I × Π O` weight matrix as a tensor ring over
//! the modes `(I_1 … I_α, O_1 … O_β)`. The first α cores are input nodes and
//! the remaining β are output nodes. The dense matrix is never formed: the
//! input nodes merge into `U` of shape `(R_0, I, R_α)`, the output nodes into
//! `V` of shape `(R_α, O, R_0)`, and
//!
//! ```text
//! y[o] = Σ_{r0, rα} Σ_i U[r0, i, rα] · x[i] · V[rα, o, r0]
//! ```
//!
//! which is two skinny GEMMs through a `K = R_0 · R_α` wide bottleneck.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};
use crate::tensor::{contract, AxisPairing, Shape, Tensor};
use crate::tr_format::{init_trf, merge_chain, reconstruct, RankVector, TensorRingFormat};

/// A linear map whose weight matrix is held in tensor-ring format.
#[derive(Clone, Debug, PartialEq)]
pub struct TrLinearModel {
    trf: TensorRingFormat,
    alpha: usize,
}

/// Merged input/output nodes in GEMM-ready layout.
struct Prepared {
    /// `I × K`, column index `r0 · R_α + rα`.
    umat: Vec<f64>,
    /// `K × O`, row index `r0 · R_α + rα`.
    vmat: Vec<f64>,
    k: usize,
}

impl TrLinearModel {
    pub fn new(
        in_factors: &Shape,
        out_factors: &Shape,
        ranks: &RankVector,
        seed: u64,
    ) -> Result<Self> {
        let dims = Shape::new([in_factors.dims(), out_factors.dims()].concat())?;
        Self::from_trf(init_trf(&dims, ranks, seed)?, in_factors.ndim())
    }

    /// Interprets the first `alpha` cores of `trf` as input nodes.
    pub fn from_trf(trf: TensorRingFormat, alpha: usize) -> Result<Self> {
        if alpha == 0 || alpha >= trf.order() {
            return Err(Error::Argument(format!(
                "a TR-linear layer needs at least one input and one output node \
                 (alpha = {alpha}, order = {})",
                trf.order()
            )));
        }
        Ok(TrLinearModel { trf, alpha })
    }

    pub fn trf(&self) -> &TensorRingFormat {
        &self.trf
    }

    pub fn trf_mut(&mut self) -> &mut TensorRingFormat {
        &mut self.trf
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn beta(&self) -> usize {
        self.trf.order() - self.alpha
    }

    pub fn input_len(&self) -> usize {
        self.trf.mode_dims().dims()[..self.alpha].iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.trf.mode_dims().dims()[self.alpha..].iter().product()
    }

    pub fn param_count(&self) -> u64 {
        self.trf.param_count()
    }

    fn bond_in(&self) -> usize {
        self.trf.ranks().as_slice()[0]
    }

    fn bond_mid(&self) -> usize {
        self.trf.ranks().as_slice()[self.alpha]
    }

    fn prepare(&self) -> Result<Prepared> {
        let (r0, ra) = (self.bond_in(), self.bond_mid());
        let (i_len, o_len) = (self.input_len(), self.output_len());
        let u = merge_chain(&self.trf.cores()[..self.alpha])?
            .into_reshaped(Shape::new(vec![r0, i_len, ra])?)?;
        let v = merge_chain(&self.trf.cores()[self.alpha..])?
            .into_reshaped(Shape::new(vec![ra, o_len, r0])?)?;
        Ok(Prepared {
            umat: u.permute(&[1, 0, 2])?.into_data(),
            vmat: v.permute(&[2, 0, 1])?.into_data(),
            k: r0 * ra,
        })
    }

    /// `y = M · x` for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_batch(x, 1)
    }

    /// Row-major batch `(batch × I) → (batch × O)`.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(x, batch)?;
        let prep = self.prepare()?;
        Ok(self.forward_prepared(&prep, x, batch).1)
    }

    fn check_input(&self, x: &[f64], batch: usize) -> Result<()> {
        if x.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "input of {} values for batch {batch} × {}",
                x.len(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn forward_prepared(&self, prep: &Prepared, x: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>) {
        let (i_len, o_len, k) = (self.input_len(), self.output_len(), prep.k);
        let mut z = vec![0.0; batch * k];
        gemm(batch, i_len, k, 1.0, x, Op::N, &prep.umat, Op::N, 0.0, &mut z);
        let mut y = vec![0.0; batch * o_len];
        gemm(batch, k, o_len, 1.0, &z, Op::N, &prep.vmat, Op::N, 0.0, &mut y);
        (z, y)
    }

    /// Given `g = ∂L/∂y` for a batch, returns per-core gradients and, when
    /// requested, `∂L/∂x`.
    fn backward_prepared(
        &self,
        prep: &Prepared,
        x: &[f64],
        z: &[f64],
        g: &[f64],
        batch: usize,
        want_input_grad: bool,
    ) -> Result<(Vec<Tensor>, Option<Vec<f64>>)> {
        let (r0, ra) = (self.bond_in(), self.bond_mid());
        let (i_len, o_len, k) = (self.input_len(), self.output_len(), prep.k);

        let mut d_vmat = vec![0.0; k * o_len];
        gemm(k, batch, o_len, 1.0, z, Op::T, g, Op::N, 0.0, &mut d_vmat);
        let mut d_z = vec![0.0; batch * k];
        gemm(batch, o_len, k, 1.0, g, Op::N, &prep.vmat, Op::T, 0.0, &mut d_z);
        let mut d_umat = vec![0.0; i_len * k];
        gemm(i_len, batch, k, 1.0, x, Op::T, &d_z, Op::N, 0.0, &mut d_umat);
        let d_x = want_input_grad.then(|| {
            let mut d_x = vec![0.0; batch * i_len];
            gemm(batch, k, i_len, 1.0, &d_z, Op::N, &prep.umat, Op::T, 0.0, &mut d_x);
            d_x
        });

        // back to (R0, I, Rα) and (Rα, O, R0)
        let d_u = Tensor::from_vec(Shape::new(vec![i_len, r0, ra])?, d_umat)?.permute(&[1, 0, 2])?;
        let d_v = Tensor::from_vec(Shape::new(vec![r0, ra, o_len])?, d_vmat)?.permute(&[1, 2, 0])?;

        let cores = self.trf.cores();
        let mut grads = chain_gradients(&cores[..self.alpha], &d_u)?;
        grads.extend(chain_gradients(&cores[self.alpha..], &d_v)?);
        Ok((grads, d_x))
    }

    /// Dense `O × I` weight matrix. Only for inspection and testing; the
    /// forward path never builds it.
    pub fn dense_matrix(&self) -> Result<Tensor> {
        let t = reconstruct(&self.trf)?
            .into_reshaped(Shape::new(vec![self.input_len(), self.output_len()])?)?;
        t.permute(&[1, 0])
    }
}

/// Identity bond `(r, 1, r)` used where a chain prefix or suffix is empty.
fn identity_segment(r: usize) -> Tensor {
    let mut t = Tensor::zeros(Shape::new(vec![r, 1, r]).expect("positive"));
    for a in 0..r {
        t.data_mut()[a * r + a] = 1.0;
    }
    t
}

fn flatten_segment(seg: Tensor) -> Result<Tensor> {
    let dims = seg.dims().to_vec();
    let inner = dims[1..dims.len() - 1].iter().product();
    seg.into_reshaped(Shape::new(vec![dims[0], inner, dims[dims.len() - 1]])?)
}

/// Pulls a gradient with respect to a merged chain `(R_a, L…, R_b)` back onto
/// each core of the chain.
fn chain_gradients(chain: &[Tensor], d_merged: &Tensor) -> Result<Vec<Tensor>> {
    let n = chain.len();
    let r_a = chain[0].dims()[0];
    let r_b = chain[n - 1].dims()[2];
    let modes: Vec<usize> = chain.iter().map(|c| c.dims()[1]).collect();
    let mut grads = Vec::with_capacity(n);
    for k in 0..n {
        let left = if k == 0 {
            identity_segment(r_a)
        } else {
            flatten_segment(merge_chain(&chain[..k])?)?
        };
        let right = if k + 1 == n {
            identity_segment(r_b)
        } else {
            flatten_segment(merge_chain(&chain[k + 1..])?)?
        };
        let i_left: usize = modes[..k].iter().product();
        let i_right: usize = modes[k + 1..].iter().product();
        let d5 = d_merged
            .clone()
            .into_reshaped(Shape::new(vec![r_a, i_left, modes[k], i_right, r_b])?)?;
        // (L_k, I_right, R_b, a)
        let t = contract(&d5, &left, &AxisPairing::new([(0, 0), (1, 1)]))?;
        // (L_k, a, b)
        let g = contract(&t, &right, &AxisPairing::new([(1, 1), (2, 2)]))?;
        grads.push(g.permute(&[1, 0, 2])?);
    }
    Ok(grads)
}

/// A composition of TR-linear layers, applied first to last.
#[derive(Clone, Debug, PartialEq)]
pub struct TrLinearStack {
    layers: Vec<TrLinearModel>,
}

impl TrLinearStack {
    pub fn new(layers: Vec<TrLinearModel>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("a stack needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].output_len() != pair[1].input_len() {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} takes {}",
                    pair[0].output_len(),
                    i + 1,
                    pair[1].input_len()
                )));
            }
        }
        Ok(TrLinearStack { layers })
    }

    pub fn layers(&self) -> &[TrLinearModel] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [TrLinearModel] {
        &mut self.layers
    }

    pub fn param_count(&self) -> u64 {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

/// Mean over all elements of the squared difference.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} values, target {}",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty batch".into()));
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Residual gradient `∂ mse / ∂ pred`, returned together with the loss.
fn mse_with_grad(pred: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let scale = 2.0 / pred.len() as f64;
    let mut sum = 0.0;
    let g = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            sum += r * r;
            scale * r
        })
        .collect();
    (sum / pred.len() as f64, g)
}

/// Anything [`train`] can optimise: a flat list of core tensors plus a
/// loss/gradient oracle for a row-major batch.
pub trait Trainable {
    fn input_len(&self) -> usize;
    fn output_len(&self) -> usize;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
    fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>>;
    fn loss_and_grads(&self, x: &[f64], y: &[f64], batch: usize) -> Result<(f64, Vec<Tensor>)>;
}

impl Trainable for TrLinearModel {
    fn input_len(&self) -> usize {
        TrLinearModel::input_len(self)
    }

    fn output_len(&self) -> usize {
        TrLinearModel::output_len(self)
    }

    fn params(&self) -> Vec<&Tensor> {
        self.trf.cores().iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.trf.cores_mut().iter_mut().collect()
    }

    fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.forward_batch(x, batch)
    }

    fn loss_and_grads(&self, x: &[f64], y: &[f64], batch: usize) -> Result<(f64, Vec<Tensor>)> {
        self.check_input(x, batch)?;
        let prep = self.prepare()?;
        let (z, pred) = self.forward_prepared(&prep, x, batch);
        let (loss, g) = mse_with_grad(&pred, y);
        let (grads, _) = self.backward_prepared(&prep, x, &z, &g, batch, false)?;
        Ok((loss, grads))
    }
}

impl Trainable for TrLinearStack {
    fn input_len(&self) -> usize {
        self.layers[0].input_len()
    }

    fn output_len(&self) -> usize {
        self.layers[self.layers.len() - 1].output_len()
    }

    fn params(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.trf.cores()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.trf.cores_mut().iter_mut())
            .collect()
    }

    fn predict(&self, x: &[f64], batch: usize) -> Result<Vec<f64>> {
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer.forward_batch(&h, batch)?;
        }
        Ok(h)
    }

    fn loss_and_grads(&self, x: &[f64], y: &[f64], batch: usize) -> Result<(f64, Vec<Tensor>)> {
        self.layers[0].check_input(x, batch)?;
        let mut preps = Vec::with_capacity(self.layers.len());
        // activations[i] is the input of layer i; the last entry is the output
        let mut activations = vec![x.to_vec()];
        let mut bottlenecks = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prep = layer.prepare()?;
            let (z, out) = layer.forward_prepared(&prep, activations.last().unwrap(), batch);
            preps.push(prep);
            bottlenecks.push(z);
            activations.push(out);
        }
        let (loss, mut g) = mse_with_grad(activations.last().unwrap(), y);
        let mut per_layer = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let (grads, d_x) = layer.backward_prepared(
                &preps[i],
                &activations[i],
                &bottlenecks[i],
                &g,
                batch,
                i > 0,
            )?;
            per_layer.push(grads);
            if let Some(d_x) = d_x {
                g = d_x;
            }
        }
        per_layer.reverse();
        Ok((loss, per_layer.into_iter().flatten().collect()))
    }
}

/// Per-core gradients of `mse_loss(forward(batch_x), batch_y)`.
pub fn core_gradients(
    model: &TrLinearModel,
    batch_x: &[f64],
    batch_y: &[f64],
    batch: usize,
) -> Result<Vec<Tensor>> {
    Ok(model.loss_and_grads(batch_x, batch_y, batch)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrDecay {
    pub factor: f64,
    pub every_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_decay: LrDecay,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-2,
            epochs: 100,
            batch_size: 128,
            lr_decay: LrDecay {
                factor: 0.1,
                every_epochs: 30,
            },
            adam: AdamConfig::default(),
            seed: 233,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.lr_decay.every_epochs == 0 {
            return Err(Error::Config("lr_decay.every_epochs must be at least 1".into()));
        }
        Ok(())
    }

    /// Step-decayed learning rate for 0-based `epoch`.
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let drops = (epoch / self.lr_decay.every_epochs) as i32;
        self.learning_rate * self.lr_decay.factor.powi(drops)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_test_mse: f64,
    pub per_epoch_train_loss: Vec<f64>,
    pub wall_clock_s: f64,
    pub epochs_run: usize,
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(cfg: AdamConfig, params: &[&Tensor]) -> Self {
        Adam {
            cfg,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, params: Vec<&mut Tensor>, grads: &[Tensor], lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.step);
        let c2 = 1.0 - beta2.powi(self.step);
        for (((p, g), m), v) in params
            .into_iter()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Row-major `(count × dim)` input/target pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub count: usize,
}

/// Anything with a train and a test split.
pub trait RegressionData {
    fn train_split(&self) -> &Split;
    fn test_split(&self) -> &Split;
}

/// Mini-batch Adam with step decay; the batch order is a seeded shuffle per
/// epoch and the last partial batch is kept.
pub fn train<M: Trainable + Clone, D: RegressionData + ?Sized>(
    model: &M,
    data: &D,
    cfg: &TrainConfig,
) -> Result<(M, TrainReport)> {
    cfg.validate()?;
    let start = Instant::now();
    let mut model = model.clone();
    let split = data.train_split();
    let (in_len, out_len) = (model.input_len(), model.output_len());
    if split.x.len() != split.count * in_len || split.y.len() != split.count * out_len {
        return Err(Error::Shape("training split does not match the model".into()));
    }
    let mut adam = Adam::new(cfg.adam, &model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.count).collect();
    let mut batch_x = Vec::with_capacity(cfg.batch_size * in_len);
    let mut batch_y = Vec::with_capacity(cfg.batch_size * out_len);
    let mut per_epoch = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cfg.learning_rate_at(epoch);
        let mut weighted = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.extend_from_slice(&split.x[i * in_len..(i + 1) * in_len]);
                batch_y.extend_from_slice(&split.y[i * out_len..(i + 1) * out_len]);
            }
            let (loss, grads) = model.loss_and_grads(&batch_x, &batch_y, chunk.len())?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    loss,
                });
            }
            weighted += loss * chunk.len() as f64;
            adam.update(model.params_mut(), &grads, lr);
        }
        per_epoch.push(weighted / split.count.max(1) as f64);
    }

    let final_test_mse = evaluate(&model, data)?;
    if cfg.epochs > 0 && !final_test_mse.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            loss: final_test_mse,
        });
    }
    Ok((
        model,
        TrainReport {
            final_test_mse,
            per_epoch_train_loss: per_epoch,
            wall_clock_s: start.elapsed().as_secs_f64(),
            epochs_run: cfg.epochs,
        },
    ))
}

fn split_mse<M: Trainable + ?Sized>(model: &M, split: &Split) -> Result<f64> {
    let pred = model.predict(&split.x, split.count)?;
    mse_loss(&pred, &split.y)
}

/// Test-split MSE without touching the parameters.
pub fn evaluate<M: Trainable + ?Sized, D: RegressionData + ?Sized>(model: &M, data: &D) -> Result<f64> {
    split_mse(model, data.test_split())
}

/// Training-split MSE.
pub fn train_loss<M: Trainable + ?Sized, D: RegressionData + ?Sized>(model: &M, data: &D) -> Result<f64> {
    split_mse(model, data.train_split())
}

/// Generation parameters of [`SyntheticDataset`]. Variances, not deviations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub seed: u64,
    pub true_rank: usize,
    pub dim: usize,
    pub input_variance: f64,
    pub noise_variance: f64,
    pub factor_variance: f64,
    pub train_count: usize,
    pub test_count: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            seed: 233,
            true_rank: 4,
            dim: 144,
            input_variance: 0.05,
            noise_variance: 0.05,
            factor_variance: 1.0 / 144f64.sqrt(),
            train_count: 4000,
            test_count: 1000,
        }
    }
}

/// `y = W (x + ε)` with a low-rank `W = A Bᵀ`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset {
    pub config: SyntheticConfig,
    /// `dim × dim`, indexed `[output, input]`.
    pub true_matrix: Tensor,
    pub train: Split,
    pub test: Split,
}

impl RegressionData for SyntheticDataset {
    fn train_split(&self) -> &Split {
        &self.train
    }

    fn test_split(&self) -> &Split {
        &self.test
    }
}

/// Default 144-dimensional dataset: 4000 training and 1000 test pairs.
pub fn gen_synthetic(seed: u64, true_rank: usize) -> Result<SyntheticDataset> {
    gen_synthetic_with(&SyntheticConfig {
        seed,
        true_rank,
        ..SyntheticConfig::default()
    })
}

fn normal(variance: f64) -> Result<Normal<f64>> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Config(format!("variance must be non-negative, got {variance}")));
    }
    Normal::new(0.0, variance.sqrt()).map_err(|e| Error::Config(e.to_string()))
}

pub fn gen_synthetic_with(cfg: &SyntheticConfig) -> Result<SyntheticDataset> {
    let n = cfg.dim;
    if cfg.true_rank == 0 || cfg.true_rank > n {
        return Err(Error::Config(format!(
            "true_rank must be in [1, {n}], got {}",
            cfg.true_rank
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let factor = normal(cfg.factor_variance)?;
    let a: Vec<f64> = (0..n * cfg.true_rank).map(|_| factor.sample(&mut rng)).collect();
    let b: Vec<f64> = (0..n * cfg.true_rank).map(|_| factor.sample(&mut rng)).collect();
    let mut w = vec![0.0; n * n];
    gemm(n, cfg.true_rank, n, 1.0, &a, Op::N, &b, Op::T, 0.0, &mut w);

    let x_dist = normal(cfg.input_variance)?;
    let e_dist = normal(cfg.noise_variance)?;
    let total = cfg.train_count + cfg.test_count;
    let mut xs = Vec::with_capacity(total * n);
    let mut noisy = Vec::with_capacity(total * n);
    for _ in 0..total {
        for _ in 0..n {
            let x = x_dist.sample(&mut rng);
            let e = e_dist.sample(&mut rng);
            xs.push(x);
            noisy.push(x + e);
        }
    }
    let mut ys = vec![0.0; total * n];
    gemm(total, n, n, 1.0, &noisy, Op::N, &w, Op::T, 0.0, &mut ys);

    let cut = cfg.train_count * n;
    Ok(SyntheticDataset {
        config: cfg.clone(),
        true_matrix: Tensor::from_vec(Shape::new(vec![n, n])?, w)?,
        train: Split {
            x: xs[..cut].to_vec(),
            y: ys[..cut].to_vec(),
            count: cfg.train_count,
        },
        test: Split {
            x: xs[cut..].to_vec(),
            y: ys[cut..].to_vec(),
            count: cfg.test_count,
        },
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    seed: u64,
    true_rank: usize,
    counts: DatasetCounts,
    config: SyntheticConfig,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetCounts {
    train: usize,
    test: usize,
    dim: usize,
}

impl SyntheticDataset {
    /// Writes `u64 LE header length`, the JSON header, then the `f64 LE`
    /// payload: W, train x, train y, test x, test y.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&DatasetHeader {
            seed: self.config.seed,
            true_rank: self.config.true_rank,
            counts: DatasetCounts {
                train: self.train.count,
                test: self.test.count,
                dim: self.config.dim,
            },
            config: self.config.clone(),
        })
        .map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = Vec::with_capacity(8 + header.len());
        buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
        buf.extend_from_slice(&header);
        for block in [
            self.true_matrix.data(),
            &self.train.x,
            &self.train.y,
            &self.test.x,
            &self.test.y,
        ] {
            for v in block {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        if bytes.len() < 8 {
            return Err(Error::Format("dataset file too short".into()));
        }
        let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
        let body = bytes
            .get(8..8 + hlen)
            .ok_or_else(|| Error::Format("truncated dataset header".into()))?;
        let header: DatasetHeader =
            serde_json::from_slice(body).map_err(|e| Error::Format(e.to_string()))?;
        let n = header.counts.dim;
        let (tr, te) = (header.counts.train, header.counts.test);
        let payload = &bytes[8 + hlen..];
        let expected = (n * n + 2 * tr * n + 2 * te * n) * 8;
        if payload.len() != expected {
            return Err(Error::Format(format!(
                "dataset payload has {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let mut take = |len: usize| -> Vec<f64> { values.by_ref().take(len).collect() };
        let w = take(n * n);
        let train_x = take(tr * n);
        let train_y = take(tr * n);
        let test_x = take(te * n);
        let test_y = take(te * n);
        Ok(SyntheticDataset {
            config: header.config,
            true_matrix: Tensor::from_vec(Shape::new(vec![n, n])?, w)?,
            train: Split {
                x: train_x,
                y: train_y,
                count: tr,
            },
            test: Split {
                x: test_x,
                y: test_y,
                count: te,
            },
        })
    }
}
