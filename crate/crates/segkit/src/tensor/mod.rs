//! Dense row-major tensors and the reverse-mode differentiation tape.
//!
//! A [`Tensor`] is a plain value: shape plus a flat `f64` buffer. Gradient
//! tracking lives entirely in the [`Tape`]: forward operations push nodes,
//! `backward` walks them in reverse. Tapes are rebuilt every forward pass;
//! parameters persist outside the tape and re-enter as leaves.

mod tape;

pub mod check;
pub mod io;

pub use check::finite_difference_check;
pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};

/// Maximum supported rank: N, C, H, W plus one spare axis.
pub const MAX_RANK: usize = 5;

/// Denominator guard: divisions snap |d| < GUARD to signed GUARD,
/// log arguments clamp to [GUARD, 1 - GUARD].
pub const GUARD: f64 = 1e-12;

/// Dense N-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::ShapeMismatch(format!(
                "rank {} outside 1..={MAX_RANK}",
                shape.len()
            )));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch(format!(
                "zero-length axis in {shape:?}"
            )));
        }
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {expect} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
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

    /// Single element of a [1]-shaped tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::NotScalar(self.data.len()));
        }
        Ok(self.data[0])
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        let mut flat = 0;
        for (i, &d) in index.iter().zip(&self.shape) {
            debug_assert!(*i < d);
            flat = flat * d + i;
        }
        flat
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::new(shape, self.data.clone())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// Right-aligned broadcast of `src` onto `target` shape. Every axis of
/// `src` must equal the corresponding target axis or be 1.
pub(crate) fn broadcast_to(src: &Tensor, target: &[usize]) -> Result<Vec<f64>> {
    if src.shape() == target {
        return Ok(src.data().to_vec());
    }
    let strides = broadcast_strides(src.shape(), target)?;
    let n: usize = target.iter().product();
    let mut out = vec![0.0; n];
    let mut index = vec![0usize; target.len()];
    for slot in out.iter_mut() {
        let mut src_flat = 0;
        for (i, s) in index.iter().zip(&strides) {
            src_flat += i * s;
        }
        *slot = src.data()[src_flat];
        bump_index(&mut index, target);
    }
    Ok(out)
}

/// Sum a `target`-shaped gradient back down to `src_shape`.
pub(crate) fn reduce_to(grad: &[f64], target: &[usize], src_shape: &[usize]) -> Result<Tensor> {
    if src_shape == target {
        return Tensor::new(src_shape.to_vec(), grad.to_vec());
    }
    let strides = broadcast_strides(src_shape, target)?;
    let mut out = Tensor::zeros(src_shape);
    let mut index = vec![0usize; target.len()];
    for &g in grad {
        let mut src_flat = 0;
        for (i, s) in index.iter().zip(&strides) {
            src_flat += i * s;
        }
        out.data[src_flat] += g;
        bump_index(&mut index, target);
    }
    Ok(out)
}

/// Per-target-axis stride into `src` (0 on broadcast axes).
fn broadcast_strides(src: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if src.len() > target.len() {
        return Err(Error::ShapeMismatch(format!(
            "cannot broadcast {src:?} to {target:?}"
        )));
    }
    let offset = target.len() - src.len();
    let mut row_major = vec![0usize; src.len()];
    let mut acc = 1;
    for d in (0..src.len()).rev() {
        row_major[d] = acc;
        acc *= src[d];
    }
    let mut strides = vec![0usize; target.len()];
    for d in 0..src.len() {
        let t = target[offset + d];
        if src[d] == t {
            strides[offset + d] = row_major[d];
        } else if src[d] == 1 {
            strides[offset + d] = 0;
        } else {
            return Err(Error::ShapeMismatch(format!(
                "cannot broadcast {src:?} to {target:?}"
            )));
        }
    }
    Ok(strides)
}

fn bump_index(index: &mut [usize], shape: &[usize]) {
    for d in (0..shape.len()).rev() {
        index[d] += 1;
        if index[d] < shape[d] {
            return;
        }
        index[d] = 0;
    }
}
