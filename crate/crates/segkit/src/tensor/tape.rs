use super::{broadcast_to, reduce_to, Tensor, GUARD};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`]. Only meaningful for the tape that
/// produced it; one tape per training session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// grad wrt output, parent values, output value -> grad per parent.
type BackFn = Box<dyn Fn(&Tensor, &[&Tensor], &Tensor) -> Vec<Tensor>>;

struct Node {
    value: Tensor,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackFn>,
}

/// Elementwise binary operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElemKind {
    Add,
    Sub,
    Mul,
    Div,
    Max,
}

/// Define-by-run operation record. Nodes are appended in forward order,
/// so parents always precede children; backward is a single reverse sweep
/// with a fixed accumulation order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Enter a leaf value. Gradients are collected for it when
    /// `requires_grad` is set.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, vec![], None, requires_grad)
    }

    /// Leaf that never receives a gradient (inputs, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(
        &mut self,
        value: Tensor,
        parents: Vec<Var>,
        backward: Option<BackFn>,
        requires_grad: bool,
    ) -> Var {
        debug_assert!(parents.iter().all(|p| p.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            requires_grad,
            parents,
            backward,
        });
        Var(self.nodes.len() - 1)
    }

    /// Record `value` computed from `parents`; grad flows when any parent
    /// requires it.
    pub(crate) fn push_op(&mut self, value: Tensor, parents: Vec<Var>, backward: BackFn) -> Var {
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.push(value, parents, Some(backward), rg)
    }

    // ── elementwise ────────────────────────────────────────────────

    pub fn elementwise(&mut self, kind: ElemKind, a: Var, b: Var) -> Result<Var> {
        let out_shape = self.value(a).shape().to_vec();
        let av = self.value(a).data().to_vec();
        let bv = broadcast_to(self.value(b), &out_shape)?;
        let b_shape = self.value(b).shape().to_vec();

        let data: Vec<f64> = match kind {
            ElemKind::Add => av.iter().zip(&bv).map(|(x, y)| x + y).collect(),
            ElemKind::Sub => av.iter().zip(&bv).map(|(x, y)| x - y).collect(),
            ElemKind::Mul => av.iter().zip(&bv).map(|(x, y)| x * y).collect(),
            ElemKind::Div => av
                .iter()
                .zip(&bv)
                .map(|(x, y)| x / guard_denominator(*y))
                .collect(),
            ElemKind::Max => av.iter().zip(&bv).map(|(x, y)| x.max(*y)).collect(),
        };
        let value = Tensor::new(out_shape.clone(), data)?;

        let back: BackFn = Box::new(move |grad, parents, _out| {
            let a_val = parents[0].data();
            let b_full = broadcast_to(parents[1], grad.shape()).expect("shape checked forward");
            let g = grad.data();
            let (ga, gb): (Vec<f64>, Vec<f64>) = match kind {
                ElemKind::Add => (g.to_vec(), g.to_vec()),
                ElemKind::Sub => (g.to_vec(), g.iter().map(|x| -x).collect()),
                ElemKind::Mul => (
                    g.iter().zip(&b_full).map(|(g, b)| g * b).collect(),
                    g.iter().zip(a_val).map(|(g, a)| g * a).collect(),
                ),
                ElemKind::Div => {
                    let denom: Vec<f64> = b_full.iter().map(|&b| guard_denominator(b)).collect();
                    (
                        g.iter().zip(&denom).map(|(g, d)| g / d).collect(),
                        g.iter()
                            .zip(a_val.iter().zip(&denom))
                            .map(|(g, (a, d))| -g * a / (d * d))
                            .collect(),
                    )
                }
                ElemKind::Max => (
                    g.iter()
                        .zip(a_val.iter().zip(&b_full))
                        .map(|(g, (a, b))| if a >= b { *g } else { 0.0 })
                        .collect(),
                    g.iter()
                        .zip(a_val.iter().zip(&b_full))
                        .map(|(g, (a, b))| if a >= b { 0.0 } else { *g })
                        .collect(),
                ),
            };
            let ga = Tensor::new(grad.shape().to_vec(), ga).unwrap();
            let gb = reduce_to(&gb, grad.shape(), &b_shape).unwrap();
            vec![ga, gb]
        });
        Ok(self.push_op(value, vec![a, b], back))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemKind::Div, a, b)
    }

    pub fn emax(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElemKind::Max, a, b)
    }

    /// y = a * mul + add with scalar constants.
    pub fn scale_shift(&mut self, a: Var, mul: f64, add: f64) -> Var {
        let value = self.value(a).map(|x| x * mul + add);
        let back: BackFn = Box::new(move |grad, _parents, _out| vec![grad.map(|g| g * mul)]);
        self.push_op(value, vec![a], back)
    }

    // ── matmul ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ash, bsh) = (self.value(a).shape(), self.value(b).shape());
        if ash.len() != 2 || bsh.len() != 2 {
            return Err(Error::ShapeMismatch(format!(
                "matmul wants rank-2 operands, got {ash:?} x {bsh:?}"
            )));
        }
        if ash[1] != bsh[0] {
            return Err(Error::ShapeMismatch(format!(
                "matmul inner dims differ: {ash:?} x {bsh:?}"
            )));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], data)?;

        let back: BackFn = Box::new(move |grad, parents, _out| {
            let (a_val, b_val) = (parents[0].data(), parents[1].data());
            let g = grad.data();
            // dA = G·Bᵀ, dB = Aᵀ·G
            let bt = transpose_raw(b_val, k, n);
            let da = matmul_raw(g, &bt, m, n, k);
            let at = transpose_raw(a_val, m, k);
            let db = matmul_raw(&at, g, k, m, n);
            vec![
                Tensor::new(vec![m, k], da).unwrap(),
                Tensor::new(vec![k, n], db).unwrap(),
            ]
        });
        Ok(self.push_op(value, vec![a, b], back))
    }

    // ── shape ops ──────────────────────────────────────────────────

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let old_shape = self.value(a).shape().to_vec();
        let back: BackFn = Box::new(move |grad, _parents, _out| {
            vec![grad.reshaped(old_shape.clone()).unwrap()]
        });
        Ok(self.push_op(value, vec![a], back))
    }

    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::ShapeMismatch("concat of zero parts".into()));
        }
        let first = self.value(parts[0]).shape().to_vec();
        if axis >= first.len() {
            return Err(Error::ShapeMismatch(format!(
                "concat axis {axis} out of range for {first:?}"
            )));
        }
        let mut axis_total = 0;
        let mut part_axis_lens = Vec::with_capacity(parts.len());
        for &p in parts {
            let sh = self.value(p).shape();
            if sh.len() != first.len()
                || sh
                    .iter()
                    .zip(&first)
                    .enumerate()
                    .any(|(d, (a, b))| d != axis && a != b)
            {
                return Err(Error::ShapeMismatch(format!(
                    "concat parts disagree off-axis: {sh:?} vs {first:?}"
                )));
            }
            axis_total += sh[axis];
            part_axis_lens.push(sh[axis]);
        }
        let mut out_shape = first.clone();
        out_shape[axis] = axis_total;

        let outer: usize = first[..axis].iter().product();
        let tail: usize = first[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            for (i, &p) in parts.iter().enumerate() {
                let block = part_axis_lens[i] * tail;
                let src = self.value(p).data();
                data.extend_from_slice(&src[o * block..(o + 1) * block]);
            }
        }
        let value = Tensor::new(out_shape, data)?;

        let lens = part_axis_lens.clone();
        let back: BackFn = Box::new(move |grad, parents, _out| {
            let g = grad.data();
            let mut outs: Vec<Tensor> = parents.iter().map(|p| Tensor::zeros(p.shape())).collect();
            let mut cursor = 0;
            for o in 0..outer {
                for (i, out) in outs.iter_mut().enumerate() {
                    let block = lens[i] * tail;
                    out.data_mut()[o * block..(o + 1) * block]
                        .copy_from_slice(&g[cursor..cursor + block]);
                    cursor += block;
                }
            }
            outs
        });
        Ok(self.push_op(value, parts.to_vec(), back))
    }

    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() || start + len > shape[axis] || len == 0 {
            return Err(Error::ShapeMismatch(format!(
                "slice [{start}, {}) on axis {axis} of {shape:?}",
                start + len
            )));
        }
        let mut out_shape = shape.clone();
        out_shape[axis] = len;
        let outer: usize = shape[..axis].iter().product();
        let tail: usize = shape[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(out_shape.iter().product());
        for o in 0..outer {
            let base = (o * shape[axis] + start) * tail;
            data.extend_from_slice(&src[base..base + len * tail]);
        }
        let value = Tensor::new(out_shape, data)?;

        let back: BackFn = Box::new(move |grad, parents, _out| {
            let mut out = Tensor::zeros(parents[0].shape());
            let axis_len = parents[0].shape()[axis];
            let g = grad.data();
            for o in 0..outer {
                let base = (o * axis_len + start) * tail;
                out.data_mut()[base..base + len * tail]
                    .copy_from_slice(&g[o * len * tail..(o + 1) * len * tail]);
            }
            vec![out]
        });
        Ok(self.push_op(value, vec![a], back))
    }

    /// Pad the last two axes by `pad` on every side.
    pub fn pad2d(&mut self, a: Var, pad: usize, fill: f64) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if shape.len() < 2 {
            return Err(Error::ShapeMismatch(format!(
                "pad2d wants rank >= 2, got {shape:?}"
            )));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let (oh, ow) = (h + 2 * pad, w + 2 * pad);
        let mut out_shape = shape.clone();
        let r = shape.len();
        out_shape[r - 2] = oh;
        out_shape[r - 1] = ow;
        let planes: usize = shape[..r - 2].iter().product();

        let src = self.value(a).data();
        let mut data = vec![fill; planes * oh * ow];
        for p in 0..planes {
            for y in 0..h {
                let dst = (p * oh + y + pad) * ow + pad;
                let s = (p * h + y) * w;
                data[dst..dst + w].copy_from_slice(&src[s..s + w]);
            }
        }
        let value = Tensor::new(out_shape, data)?;

        let back: BackFn = Box::new(move |grad, parents, _out| {
            let mut out = Tensor::zeros(parents[0].shape());
            let g = grad.data();
            for p in 0..planes {
                for y in 0..h {
                    let dst = (p * h + y) * w;
                    let s = (p * oh + y + pad) * ow + pad;
                    out.data_mut()[dst..dst + w].copy_from_slice(&g[s..s + w]);
                }
            }
            vec![out]
        });
        Ok(self.push_op(value, vec![a], back))
    }

    // ── reductions ─────────────────────────────────────────────────

    /// Sum of all elements; fixed left-to-right accumulation.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = 0.0;
        for &x in self.value(a).data() {
            acc += x;
        }
        let back: BackFn = Box::new(move |grad, parents, _out| {
            let g = grad.data()[0];
            vec![Tensor::full(parents[0].shape(), g)]
        });
        self.push_op(Tensor::scalar(acc), vec![a], back)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale_shift(s, 1.0 / n, 0.0)
    }

    // ── backward ───────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates a gradient per
    /// reachable node that requires one; d(loss)/d(loss) = 1.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::ShapeMismatch("backward on an empty tape".into()));
        }
        let loss_len = self.value(loss).len();
        if loss_len != 1 {
            return Err(Error::NotScalar(loss_len));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let Some(back) = self.nodes[i].backward.as_ref() else {
                continue; // leaf
            };
            let grad = grads[i].as_ref().unwrap();
            let parent_vals: Vec<&Tensor> = self.nodes[i]
                .parents
                .iter()
                .map(|p| &self.nodes[p.0].value)
                .collect();
            let parent_grads = back(grad, &parent_vals, &self.nodes[i].value);
            debug_assert_eq!(parent_grads.len(), self.nodes[i].parents.len());
            for (p, g) in self.nodes[i].parents.clone().iter().zip(parent_grads) {
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.nodes[p.0].value.shape());
                match &mut grads[p.0] {
                    Some(acc) => {
                        for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradient map produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

pub(crate) fn guard_denominator(d: f64) -> f64 {
    if d.abs() < GUARD {
        GUARD.copysign(if d == 0.0 { 1.0 } else { d })
    } else {
        d
    }
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let row = &b[p * n..(p + 1) * n];
            let dst = &mut c[i * n..(i + 1) * n];
            for (d, &bv) in dst.iter_mut().zip(row) {
                *d += av * bv;
            }
        }
    }
    c
}

fn transpose_raw(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
