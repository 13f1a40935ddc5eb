//! Dense row-major tensors of `f64` and pairwise contraction.
//!
//! A [`Tensor`] is a flat buffer plus a [`Shape`]; the last index varies
//! fastest. A 0-order tensor has the empty shape `()` and holds exactly one
//! element, so a fully paired contraction produces one without special cases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{gemm, Op};

/// Ordered dimension lengths; every entry is at least 1.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if let Some(axis) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "dimension {axis} of {dims:?} has length 0"
            )));
        }
        dims.iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Overflow(format!("element count of shape {dims:?}")))?;
        Ok(Shape(dims))
    }

    /// The 0-order shape `()`.
    pub fn scalar() -> Self {
        Shape(Vec::new())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn ndim(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl TryFrom<Vec<usize>> for Shape {
    type Error = Error;

    fn try_from(dims: Vec<usize>) -> Result<Self> {
        Shape::new(dims)
    }
}

impl From<Shape> for Vec<usize> {
    fn from(shape: Shape) -> Self {
        shape.0
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::Shape(format!(
                "{} elements supplied for shape {shape} ({} expected)",
                data.len(),
                shape.numel()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        let data = vec![value; shape.numel()];
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn ndim(&self) -> usize {
        self.shape.ndim()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[linear_index(index, &self.shape)?])
    }

    pub fn set(&mut self, index: &[usize], value: f64) -> Result<()> {
        let at = linear_index(index, &self.shape)?;
        self.data[at] = value;
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    /// Same flat data under a new shape with the same element count.
    pub fn reshape(&self, new_shape: Shape) -> Result<Tensor> {
        self.clone().into_reshaped(new_shape)
    }

    pub fn into_reshaped(self, new_shape: Shape) -> Result<Tensor> {
        if new_shape.numel() != self.shape.numel() {
            return Err(Error::Shape(format!(
                "cannot reshape {} ({} elements) into {new_shape} ({} elements)",
                self.shape,
                self.shape.numel(),
                new_shape.numel()
            )));
        }
        Ok(Tensor {
            shape: new_shape,
            data: self.data,
        })
    }

    /// Reorders axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let nd = self.ndim();
        if perm.len() != nd {
            return Err(Error::Argument(format!(
                "permutation {perm:?} has {} axes, tensor has {nd}",
                perm.len()
            )));
        }
        let mut seen = vec![false; nd];
        for &p in perm {
            if p >= nd || seen[p] {
                return Err(Error::Argument(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let in_strides = self.shape.strides();
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims()[p]).collect();
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let mut out = Vec::with_capacity(self.len());
        let mut counter = vec![0usize; nd];
        let mut offset = 0usize;
        for _ in 0..self.len() {
            out.push(self.data[offset]);
            // odometer increment over the output index, tracking the source offset
            for axis in (0..nd).rev() {
                counter[axis] += 1;
                offset += src_strides[axis];
                if counter[axis] < out_dims[axis] {
                    break;
                }
                offset -= src_strides[axis] * out_dims[axis];
                counter[axis] = 0;
            }
        }
        Ok(Tensor {
            shape: Shape(out_dims),
            data: out,
        })
    }
}

/// Row-major mixed-radix offset of `index` inside `shape` (0-based).
pub fn linear_index(index: &[usize], shape: &Shape) -> Result<usize> {
    if index.len() != shape.ndim() {
        return Err(Error::Argument(format!(
            "index of length {} for a {}-order shape",
            index.len(),
            shape.ndim()
        )));
    }
    let mut offset = 0usize;
    for (axis, (&i, &len)) in index.iter().zip(shape.dims()).enumerate() {
        if i >= len {
            return Err(Error::Bounds {
                axis,
                index: i,
                len,
            });
        }
        offset = offset * len + i;
    }
    Ok(offset)
}

/// Inverse of [`linear_index`].
pub fn multi_index(linear: usize, shape: &Shape) -> Result<Vec<usize>> {
    let total = shape.numel();
    if linear >= total {
        return Err(Error::Bounds {
            axis: 0,
            index: linear,
            len: total,
        });
    }
    let mut index = vec![0; shape.ndim()];
    let mut rest = linear;
    for (slot, &len) in index.iter_mut().zip(shape.dims()).rev() {
        *slot = rest % len;
        rest /= len;
    }
    Ok(index)
}

/// Pairs of `(axis of A, axis of B)` summed over in [`contract`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AxisPairing {
    pairs: Vec<(usize, usize)>,
}

impl AxisPairing {
    pub fn new(pairs: impl Into<Vec<(usize, usize)>>) -> Self {
        AxisPairing {
            pairs: pairs.into(),
        }
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    fn validate(&self, a: &Shape, b: &Shape) -> Result<()> {
        let mut used_a = vec![false; a.ndim()];
        let mut used_b = vec![false; b.ndim()];
        for &(ia, ib) in &self.pairs {
            if ia >= a.ndim() || ib >= b.ndim() {
                return Err(Error::Argument(format!(
                    "pair ({ia},{ib}) out of range for shapes {a} and {b}"
                )));
            }
            if used_a[ia] || used_b[ib] {
                return Err(Error::Argument(format!(
                    "axis repeated in pairing {:?}",
                    self.pairs
                )));
            }
            used_a[ia] = true;
            used_b[ib] = true;
            if a.dims()[ia] != b.dims()[ib] {
                return Err(Error::Shape(format!(
                    "axis {ia} of A has length {} but axis {ib} of B has length {}",
                    a.dims()[ia],
                    b.dims()[ib]
                )));
            }
        }
        Ok(())
    }
}

/// Sums the products of `a` and `b` over every paired axis.
///
/// The result carries A's unpaired axes in order followed by B's unpaired
/// axes in order. Implemented as permute, reshape, then one GEMM.
pub fn contract(a: &Tensor, b: &Tensor, pairing: &AxisPairing) -> Result<Tensor> {
    pairing.validate(a.shape(), b.shape())?;
    let paired_a: Vec<usize> = pairing.pairs.iter().map(|p| p.0).collect();
    let paired_b: Vec<usize> = pairing.pairs.iter().map(|p| p.1).collect();
    let free_a: Vec<usize> = (0..a.ndim()).filter(|i| !paired_a.contains(i)).collect();
    let free_b: Vec<usize> = (0..b.ndim()).filter(|i| !paired_b.contains(i)).collect();

    let m: usize = free_a.iter().map(|&i| a.dims()[i]).product();
    let k: usize = paired_a.iter().map(|&i| a.dims()[i]).product();
    let n: usize = free_b.iter().map(|&i| b.dims()[i]).product();

    let perm_a: Vec<usize> = free_a.iter().chain(&paired_a).copied().collect();
    let perm_b: Vec<usize> = paired_b.iter().chain(&free_b).copied().collect();
    let a_mat = a.permute(&perm_a)?;
    let b_mat = b.permute(&perm_b)?;

    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a_mat.data(), Op::N, b_mat.data(), Op::N, 0.0, &mut out);

    let dims: Vec<usize> = free_a
        .iter()
        .map(|&i| a.dims()[i])
        .chain(free_b.iter().map(|&i| b.dims()[i]))
        .collect();
    Tensor::from_vec(Shape(dims), out)
}

/// I.i.d. normal entries, reproducible from `seed`.
pub fn gaussian_tensor(shape: Shape, mean: f64, stddev: f64, seed: u64) -> Result<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gaussian_tensor_with(shape, mean, stddev, &mut rng)
}

pub fn gaussian_tensor_with<R: rand::Rng + ?Sized>(
    shape: Shape,
    mean: f64,
    stddev: f64,
    rng: &mut R,
) -> Result<Tensor> {
    if !(stddev >= 0.0) {
        return Err(Error::Argument(format!("standard deviation must be >= 0, got {stddev}")));
    }
    let normal = Normal::new(mean, stddev)
        .map_err(|e| Error::Argument(format!("normal({mean}, {stddev}): {e}")))?;
    let data = (0..shape.numel()).map(|_| normal.sample(rng)).collect();
    Tensor::from_vec(shape, data)
}

pub fn frobenius_distance(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "distance between shapes {} and {}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}
