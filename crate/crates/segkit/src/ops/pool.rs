//! Pooling: windowed max / average and adaptive (binned) average pooling.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Max,
    Average,
}

impl Tape {
    /// Windowed pooling over NCHW input, valid extent only. Max pooling
    /// routes its gradient to the argmax element (first occurrence in
    /// row-major scan order on ties); average distributes uniformly.
    pub fn pool2d(
        &mut self,
        kind: PoolKind,
        input: Var,
        window: usize,
        stride: usize,
    ) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "pool2d wants NCHW, got {shape:?}"
            )));
        }
        if window == 0 || stride == 0 {
            return Err(Error::BadConfig("pool window/stride must be positive".into()));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if window > h || window > w {
            return Err(Error::ShapeMismatch(format!(
                "pool window {window} exceeds spatial {h}x{w}"
            )));
        }
        let oh = (h - window) / stride + 1;
        let ow = (w - window) / stride + 1;

        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * oh * ow];
        // argmax flat indices, saved for the backward pass
        let mut argmax = vec![0usize; if kind == PoolKind::Max { out.len() } else { 0 }];
        let inv_area = 1.0 / (window * window) as f64;

        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let oi = (plane * oh + oy) * ow + ox;
                    match kind {
                        PoolKind::Max => {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = 0;
                            for ky in 0..window {
                                for kx in 0..window {
                                    let i = (oy * stride + ky) * w + ox * stride + kx;
                                    if src[i] > best {
                                        best = src[i];
                                        best_i = i;
                                    }
                                }
                            }
                            out[oi] = best;
                            argmax[oi] = plane * h * w + best_i;
                        }
                        PoolKind::Average => {
                            let mut acc = 0.0;
                            for ky in 0..window {
                                for kx in 0..window {
                                    acc += src[(oy * stride + ky) * w + ox * stride + kx];
                                }
                            }
                            out[oi] = acc * inv_area;
                        }
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let mut dx = Tensor::zeros(parents[0].shape());
            let g = grad.data();
            match kind {
                PoolKind::Max => {
                    for (gi, &src_i) in argmax.iter().enumerate() {
                        dx.data_mut()[src_i] += g[gi];
                    }
                }
                PoolKind::Average => {
                    let dxs = dx.data_mut();
                    for plane in 0..n * c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let gv = g[(plane * oh + oy) * ow + ox] * inv_area;
                                for ky in 0..window {
                                    for kx in 0..window {
                                        dxs[plane * h * w
                                            + (oy * stride + ky) * w
                                            + ox * stride
                                            + kx] += gv;
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push_op(value, vec![input], back))
    }

    /// Partition H and W into `bins` contiguous ranges (sizes differing by
    /// at most one) and average each.
    pub fn adaptive_avg_pool(&mut self, input: Var, bins: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "adaptive_avg_pool wants NCHW, got {shape:?}"
            )));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        if bins == 0 || bins > h || bins > w {
            return Err(Error::BinTooMany {
                bins,
                extent: h.min(w),
            });
        }

        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * bins * bins];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            for by in 0..bins {
                let (y0, y1) = (by * h / bins, (by + 1) * h / bins);
                for bx in 0..bins {
                    let (x0, x1) = (bx * w / bins, (bx + 1) * w / bins);
                    let mut acc = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            acc += src[y * w + xx];
                        }
                    }
                    out[(plane * bins + by) * bins + bx] =
                        acc / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        let value = Tensor::new(vec![n, c, bins, bins], out)?;

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let mut dx = Tensor::zeros(parents[0].shape());
            let g = grad.data();
            let dxs = dx.data_mut();
            for plane in 0..n * c {
                for by in 0..bins {
                    let (y0, y1) = (by * h / bins, (by + 1) * h / bins);
                    for bx in 0..bins {
                        let (x0, x1) = (bx * w / bins, (bx + 1) * w / bins);
                        let gv = g[(plane * bins + by) * bins + bx]
                            / ((y1 - y0) * (x1 - x0)) as f64;
                        for y in y0..y1 {
                            for xx in x0..x1 {
                                dxs[plane * h * w + y * w + xx] += gv;
                            }
                        }
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push_op(value, vec![input], back))
    }
}
