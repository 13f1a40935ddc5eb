//! The tensor-ring format.
//!
//! Core `k` (0-based) has shape `(R_k, L_k, R_{(k+1) mod d})`, so the bond
//! leaving the last core closes the ring back onto `R_0`. An element of the
//! represented tensor is the trace of the product of the selected core slices:
//!
//! ```text
//! T[l_0, …, l_{d-1}] = Σ_{r_0..r_{d-1}} Z0[r_0, l_0, r_1] · Z1[r_1, l_1, r_2] ⋯ Z{d-1}[r_{d-1}, l_{d-1}, r_0]
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{contract, gaussian_tensor_with, AxisPairing, Shape, Tensor};

/// Bond dimensions `R_0 … R_{d-1}` of a ring; all positive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct RankVector(Vec<usize>);

impl RankVector {
    pub fn new(elements: impl Into<Vec<usize>>) -> Result<Self> {
        let elements = elements.into();
        if elements.is_empty() {
            return Err(Error::Argument("rank vector must be non-empty".into()));
        }
        if elements.contains(&0) {
            return Err(Error::Argument(format!(
                "rank elements must be positive, got {elements:?}"
            )));
        }
        Ok(RankVector(elements))
    }

    pub fn uniform(value: usize, len: usize) -> Result<Self> {
        Self::new(vec![value; len])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `R_{(k+1) mod d}`, the bond on the right of core `k`.
    pub fn right_of(&self, k: usize) -> usize {
        self.0[(k + 1) % self.0.len()]
    }

    /// `Some(v)` when every element equals `v`.
    pub fn uniform_value(&self) -> Option<usize> {
        let first = self.0[0];
        self.0.iter().all(|&r| r == first).then_some(first)
    }
}

impl TryFrom<Vec<usize>> for RankVector {
    type Error = Error;

    fn try_from(v: Vec<usize>) -> Result<Self> {
        RankVector::new(v)
    }
}

impl From<RankVector> for Vec<usize> {
    fn from(r: RankVector) -> Self {
        r.0
    }
}

impl std::fmt::Display for RankVector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|r| r.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// A ring of 3-order cores.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorRingFormat {
    cores: Vec<Tensor>,
    mode_dims: Shape,
    ranks: RankVector,
}

/// Serialized metadata accompanying a core payload.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrfMeta {
    pub mode_dims: Vec<usize>,
    pub ranks: Vec<usize>,
    pub seed: u64,
}

fn check_lengths(mode_dims: &Shape, ranks: &RankVector) -> Result<()> {
    if mode_dims.ndim() != ranks.len() {
        return Err(Error::Argument(format!(
            "{} mode dimensions but {} rank elements",
            mode_dims.ndim(),
            ranks.len()
        )));
    }
    Ok(())
}

fn core_shape(mode_dims: &Shape, ranks: &RankVector, k: usize) -> Shape {
    Shape::new(vec![ranks.as_slice()[k], mode_dims.dims()[k], ranks.right_of(k)])
        .expect("positive core dims")
}

impl TensorRingFormat {
    /// Builds a ring from explicit cores, checking cyclic bond agreement.
    pub fn from_cores(cores: Vec<Tensor>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::Argument("a ring needs at least one core".into()));
        }
        let d = cores.len();
        for (k, core) in cores.iter().enumerate() {
            if core.ndim() != 3 {
                return Err(Error::Shape(format!(
                    "core {k} has order {}, expected 3",
                    core.ndim()
                )));
            }
            let next = &cores[(k + 1) % d];
            if core.dims()[2] != next.dims()[0] {
                return Err(Error::Shape(format!(
                    "core {k} right bond {} disagrees with core {} left bond {}",
                    core.dims()[2],
                    (k + 1) % d,
                    next.dims()[0]
                )));
            }
        }
        let ranks = RankVector::new(cores.iter().map(|c| c.dims()[0]).collect::<Vec<_>>())?;
        let mode_dims = Shape::new(cores.iter().map(|c| c.dims()[1]).collect::<Vec<_>>())?;
        Ok(TensorRingFormat {
            cores,
            mode_dims,
            ranks,
        })
    }

    pub fn zeros(mode_dims: &Shape, ranks: &RankVector) -> Result<Self> {
        check_lengths(mode_dims, ranks)?;
        let cores = (0..ranks.len())
            .map(|k| Tensor::zeros(core_shape(mode_dims, ranks, k)))
            .collect();
        Ok(TensorRingFormat {
            cores,
            mode_dims: mode_dims.clone(),
            ranks: ranks.clone(),
        })
    }

    pub fn cores(&self) -> &[Tensor] {
        &self.cores
    }

    pub fn cores_mut(&mut self) -> &mut [Tensor] {
        &mut self.cores
    }

    pub fn mode_dims(&self) -> &Shape {
        &self.mode_dims
    }

    pub fn ranks(&self) -> &RankVector {
        &self.ranks
    }

    pub fn order(&self) -> usize {
        self.cores.len()
    }

    pub fn param_count(&self) -> u64 {
        self.cores.iter().map(|c| c.len() as u64).sum()
    }

    /// Replaces every core; shapes must match the current ones.
    pub fn set_cores(&mut self, cores: Vec<Tensor>) -> Result<()> {
        if cores.len() != self.cores.len()
            || cores.iter().zip(&self.cores).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Shape("replacement cores disagree with ring shape".into()));
        }
        self.cores = cores;
        Ok(())
    }

    /// Little-endian `f64` payload of every core, concatenated in core order.
    pub fn core_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.param_count() as usize * 8);
        for core in &self.cores {
            for v in core.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(meta: &TrfMeta, bytes: &[u8]) -> Result<Self> {
        let mode_dims = Shape::new(meta.mode_dims.clone())?;
        let ranks = RankVector::new(meta.ranks.clone())?;
        let mut trf = Self::zeros(&mode_dims, &ranks)?;
        let expected = trf.param_count() as usize * 8;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "core payload has {} bytes, expected {expected}",
                bytes.len()
            )));
        }
        let mut chunks = bytes.chunks_exact(8);
        for core in trf.cores.iter_mut() {
            for v in core.data_mut() {
                let chunk = chunks.next().expect("length checked");
                *v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            }
        }
        Ok(trf)
    }
}

/// Gaussian cores with `σ_k = 1/√(R_k · R_{k+1})`, reproducible from `seed`.
pub fn init_trf(mode_dims: &Shape, ranks: &RankVector, seed: u64) -> Result<TensorRingFormat> {
    check_lengths(mode_dims, ranks)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cores = Vec::with_capacity(ranks.len());
    for k in 0..ranks.len() {
        let shape = core_shape(mode_dims, ranks, k);
        let sigma = 1.0 / ((ranks.as_slice()[k] * ranks.right_of(k)) as f64).sqrt();
        cores.push(gaussian_tensor_with(shape, 0.0, sigma, &mut rng)?);
    }
    Ok(TensorRingFormat {
        cores,
        mode_dims: mode_dims.clone(),
        ranks: ranks.clone(),
    })
}

/// Merges a contiguous chain of cores `(R_a, L…, R_b)` into one open segment
/// of shape `(R_a, L_i, …, L_j, R_b)`.
pub fn merge_chain(cores: &[Tensor]) -> Result<Tensor> {
    let mut iter = cores.iter();
    let mut acc = iter
        .next()
        .ok_or_else(|| Error::Argument("empty chain".into()))?
        .clone();
    for core in iter {
        acc = join(&acc, core)?;
    }
    Ok(acc)
}

fn join(left: &Tensor, right: &Tensor) -> Result<Tensor> {
    contract(left, right, &AxisPairing::new([(left.ndim() - 1, 0)]))
}

/// Closes an open segment `(R, L…, R)` by tracing its two bond axes.
fn close_ring(segment: &Tensor) -> Result<Tensor> {
    let dims = segment.dims();
    let r = dims[0];
    if dims[dims.len() - 1] != r {
        return Err(Error::Shape("ring segment bonds disagree".into()));
    }
    let inner: usize = dims[1..dims.len() - 1].iter().product();
    let data = segment.data();
    let mut out = vec![0.0; inner];
    for a in 0..r {
        let base = a * inner * r;
        for (l, slot) in out.iter_mut().enumerate() {
            *slot += data[base + l * r + a];
        }
    }
    Tensor::from_vec(Shape::new(dims[1..dims.len() - 1].to_vec())?, out)
}

/// Dense tensor of shape `mode_dims`, contracting the ring left to right.
pub fn reconstruct(trf: &TensorRingFormat) -> Result<Tensor> {
    close_ring(&merge_chain(&trf.cores)?)
}

/// Same as [`reconstruct`] but merges neighbouring segments pairwise.
pub fn reconstruct_balanced(trf: &TensorRingFormat) -> Result<Tensor> {
    let mut segments: Vec<Tensor> = trf.cores.clone();
    while segments.len() > 1 {
        let mut next = Vec::with_capacity(segments.len().div_ceil(2));
        let mut iter = segments.chunks(2);
        for pair in &mut iter {
            match pair {
                [l, r] => next.push(join(l, r)?),
                [single] => next.push(single.clone()),
                _ => unreachable!(),
            }
        }
        segments = next;
    }
    close_ring(&segments[0])
}

/// `Σ_k R_k · L_k · R_{k+1}` in checked integer arithmetic.
pub fn param_count(mode_dims: &Shape, ranks: &RankVector) -> Result<u64> {
    check_lengths(mode_dims, ranks)?;
    let mut total: u64 = 0;
    for (k, &l) in mode_dims.dims().iter().enumerate() {
        let term = (ranks.as_slice()[k] as u64)
            .checked_mul(l as u64)
            .and_then(|v| v.checked_mul(ranks.right_of(k) as u64))
            .and_then(|v| total.checked_add(v));
        total = term.ok_or_else(|| {
            Error::Overflow(format!("parameter count of {mode_dims} with ranks {ranks}"))
        })?;
    }
    Ok(total)
}

/// An unreduced `numerator / denominator` pair with an exact equality test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ratio {
    pub numerator: u64,
    pub denominator: u64,
}

impl Ratio {
    pub fn value(&self) -> f64 {
        self.numerator as f64 / self.denominator as f64
    }

    /// Cross-multiplied comparison against `n / d`.
    pub fn equals(&self, n: u64, d: u64) -> bool {
        self.numerator as u128 * d as u128 == n as u128 * self.denominator as u128
    }
}

fn check_factors(total: usize, factors: &Shape, what: &str) -> Result<()> {
    if factors.numel() != total {
        return Err(Error::Argument(format!(
            "{what} factors {factors} multiply to {}, not {total}",
            factors.numel()
        )));
    }
    Ok(())
}

/// Dense `I × O` parameters over the ring parameters of a TR-linear layer
/// whose ring runs over the input factors then the output factors.
pub fn compression_ratio_linear(
    input_len: usize,
    output_len: usize,
    in_factors: &Shape,
    out_factors: &Shape,
    ranks: &RankVector,
) -> Result<Ratio> {
    check_factors(input_len, in_factors, "input")?;
    check_factors(output_len, out_factors, "output")?;
    let dims = Shape::new([in_factors.dims(), out_factors.dims()].concat())?;
    let denominator = param_count(&dims, ranks)?;
    let numerator = (input_len as u64)
        .checked_mul(output_len as u64)
        .ok_or_else(|| Error::Overflow("dense parameter count".into()))?;
    Ok(Ratio {
        numerator,
        denominator,
    })
}

/// `K²·Cin·Cout / (Σ R²·I_i + Σ R²·O_j + K²·R²)` for a TR convolution with
/// uniform rank `R`.
pub fn compression_ratio_cnn(
    kernel: usize,
    c_in: usize,
    c_out: usize,
    in_factors: &Shape,
    out_factors: &Shape,
    rank: usize,
) -> Result<Ratio> {
    check_factors(c_in, in_factors, "input channel")?;
    check_factors(c_out, out_factors, "output channel")?;
    let overflow = || Error::Overflow("convolution compression ratio".into());
    let k2 = (kernel as u64).checked_mul(kernel as u64).ok_or_else(overflow)?;
    let r2 = (rank as u64).checked_mul(rank as u64).ok_or_else(overflow)?;
    let numerator = k2
        .checked_mul(c_in as u64)
        .and_then(|v| v.checked_mul(c_out as u64))
        .ok_or_else(overflow)?;
    let dim_sum: u64 = in_factors
        .dims()
        .iter()
        .chain(out_factors.dims())
        .map(|&d| d as u64)
        .sum::<u64>()
        .checked_add(k2)
        .ok_or_else(overflow)?;
    let denominator = r2.checked_mul(dim_sum).ok_or_else(overflow)?;
    Ok(Ratio {
        numerator,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(d: &[usize]) -> Shape {
        Shape::new(d.to_vec()).unwrap()
    }

    fn ranks(r: &[usize]) -> RankVector {
        RankVector::new(r.to_vec()).unwrap()
    }

    #[test]
    fn unit_ring() {
        let trf = init_trf(&shape(&[1, 1, 1]), &ranks(&[1, 1, 1]), 5).unwrap();
        assert_eq!(trf.order(), 3);
        assert!(trf.cores().iter().all(|c| c.len() == 1));
        let t = reconstruct(&trf).unwrap();
        let prod: f64 = trf.cores().iter().map(|c| c.data()[0]).product();
        assert!((t.data()[0] - prod).abs() < 1e-15);
    }

    #[test]
    fn init_is_deterministic_and_counts_params() {
        let dims = shape(&[12, 12, 12, 12]);
        let r = ranks(&[3, 4, 5, 6]);
        let a = init_trf(&dims, &r, 9).unwrap();
        let b = init_trf(&dims, &r, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.param_count(), 960);
        assert_eq!(param_count(&dims, &r).unwrap(), 960);
        assert_eq!(param_count(&dims, &RankVector::uniform(4, 4).unwrap()).unwrap(), 768);
        assert!(init_trf(&dims, &ranks(&[3, 4]), 0).is_err());
    }

    #[test]
    fn single_core_ring_is_a_trace() {
        let trf = init_trf(&shape(&[5]), &ranks(&[3]), 1).unwrap();
        let z = &trf.cores()[0];
        let t = reconstruct(&trf).unwrap();
        for l in 0..5 {
            let trace: f64 = (0..3).map(|r| z.get(&[r, l, r]).unwrap()).sum();
            assert!((t.data()[l] - trace).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_one_ring_is_an_outer_product() {
        let trf = init_trf(&shape(&[2, 3, 2]), &ranks(&[1, 1, 1]), 4).unwrap();
        let t = reconstruct(&trf).unwrap();
        for (lin, &v) in t.data().iter().enumerate() {
            let idx = crate::tensor::multi_index(lin, t.shape()).unwrap();
            let prod: f64 = idx
                .iter()
                .enumerate()
                .map(|(k, &l)| trf.cores()[k].get(&[0, l, 0]).unwrap())
                .product();
            assert!((v - prod).abs() < 1e-14);
        }
    }

    #[test]
    fn param_count_overflow_is_reported() {
        let dims = shape(&[1 << 30, 1 << 30]);
        let r = ranks(&[1 << 20, 1 << 20]);
        assert!(matches!(param_count(&dims, &r), Err(Error::Overflow(_))));
    }

    #[test]
    fn linear_ratio_examples() {
        let cr = compression_ratio_linear(
            2048,
            2048,
            &shape(&[64, 32]),
            &shape(&[32, 64]),
            &RankVector::uniform(15, 4).unwrap(),
        )
        .unwrap();
        assert!(cr.equals(4_194_304, 43_200));
        assert!((cr.value() - 97.09).abs() < 0.01);

        let cr1 = compression_ratio_linear(
            12,
            10,
            &shape(&[3, 4]),
            &shape(&[2, 5]),
            &RankVector::uniform(1, 4).unwrap(),
        )
        .unwrap();
        assert!(cr1.equals(120, 3 + 4 + 2 + 5));

        assert!(compression_ratio_linear(
            12,
            10,
            &shape(&[3, 5]),
            &shape(&[2, 5]),
            &RankVector::uniform(1, 4).unwrap()
        )
        .is_err());
    }

    #[test]
    fn non_uniform_linear_ratio_uses_per_edge_products() {
        let r = ranks(&[2, 3, 2, 3]);
        let cr = compression_ratio_linear(16, 16, &shape(&[4, 4]), &shape(&[4, 4]), &r).unwrap();
        // explicit Σ R_k · 4 · R_{k+1}
        let s = r.as_slice();
        let denom: u64 = (0..4).map(|k| (s[k] * 4 * s[(k + 1) % 4]) as u64).sum();
        assert_eq!(denom, 96);
        assert!(cr.equals(256, denom));
    }

    #[test]
    fn cnn_ratio_examples() {
        let cr = compression_ratio_cnn(5, 20, 50, &shape(&[4, 5]), &shape(&[5, 10]), 10).unwrap();
        assert!(cr.equals(25_000, 4_900));
        let r1 = compression_ratio_cnn(3, 6, 8, &shape(&[2, 3]), &shape(&[2, 4]), 1).unwrap();
        assert!(r1.equals(9 * 6 * 8, 2 + 3 + 2 + 4 + 9));
        let r2 = compression_ratio_cnn(3, 6, 8, &shape(&[2, 3]), &shape(&[2, 4]), 2).unwrap();
        assert!((r1.value() / r2.value() - 4.0).abs() < 1e-12);
        assert!(compression_ratio_cnn(3, 7, 8, &shape(&[2, 3]), &shape(&[2, 4]), 2).is_err());
    }

    #[test]
    fn serialization_round_trip() {
        let trf = init_trf(&shape(&[3, 4, 2]), &ranks(&[2, 3, 2]), 17).unwrap();
        let meta = TrfMeta {
            mode_dims: vec![3, 4, 2],
            ranks: vec![2, 3, 2],
            seed: 17,
        };
        let back = TensorRingFormat::from_bytes(&meta, &trf.core_bytes()).unwrap();
        assert_eq!(back, trf);
        assert!(TensorRingFormat::from_bytes(&meta, &[0u8; 8]).is_err());
    }

    #[test]
    fn from_cores_rejects_broken_ring() {
        let a = Tensor::zeros(shape(&[2, 3, 4]));
        let b = Tensor::zeros(shape(&[3, 3, 2]));
        assert!(TensorRingFormat::from_cores(vec![a, b]).is_err());
    }
}
