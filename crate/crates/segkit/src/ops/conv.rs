//! Spatial convolutions over NCHW tensors: standard, atrous (dilated),
//! depthwise (grouped), and transposed.
//!
//! Two deliberately separate forward paths exist: [`conv_plane_standard`]
//! knows nothing about dilation, [`conv_plane_atrous`] samples its input
//! with stride `r` between kernel taps. A rate-1 atrous convolution must
//! be bit-identical to the standard path; the test suites verify this.

use rayon::prelude::*;

use super::{ConvSpec, Padding};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Output length and leading pad for one spatial axis.
pub fn conv_output_len(
    len: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<(usize, usize)> {
    let eff = (kernel - 1) * dilation + 1;
    match padding {
        Padding::Valid => {
            if eff > len {
                return Err(Error::KernelTooLarge {
                    kernel: eff,
                    extent: len,
                });
            }
            Ok(((len - eff) / stride + 1, 0))
        }
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + eff).saturating_sub(len);
            Ok((out, total / 2))
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geom {
    n: usize,
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
    groups: usize,
}

impl Geom {
    fn in_per_group(&self) -> usize {
        self.in_c / self.groups
    }

    fn out_per_group(&self) -> usize {
        self.out_c / self.groups
    }
}

fn resolve_geom(
    input_shape: &[usize],
    weight_shape: &[usize],
    stride: usize,
    dilation: usize,
    padding: Padding,
    groups: usize,
) -> Result<Geom> {
    if input_shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d input must be NCHW, got {input_shape:?}"
        )));
    }
    if weight_shape.len() != 4 {
        return Err(Error::ShapeMismatch(format!(
            "conv2d weights must be OxIxKhxKw, got {weight_shape:?}"
        )));
    }
    let (n, in_c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    let (out_c, w_in, kh, kw) = (
        weight_shape[0],
        weight_shape[1],
        weight_shape[2],
        weight_shape[3],
    );
    if in_c % groups != 0 || out_c % groups != 0 {
        return Err(Error::ShapeMismatch(format!(
            "channels {in_c}->{out_c} not divisible into {groups} groups"
        )));
    }
    if w_in != in_c / groups {
        return Err(Error::ShapeMismatch(format!(
            "weights expect {w_in} input channels per group, input has {} ({} groups)",
            in_c / groups,
            groups
        )));
    }
    let (oh, pad_h) = conv_output_len(h, kh, stride, dilation, padding)?;
    let (ow, pad_w) = conv_output_len(w, kw, stride, dilation, padding)?;
    Ok(Geom {
        n,
        in_c,
        h,
        w,
        out_c,
        kh,
        kw,
        stride,
        dilation,
        pad_h,
        pad_w,
        oh,
        ow,
        groups,
    })
}

/// One output plane of a plain convolution. No dilation anywhere in the
/// loop: kernel taps are adjacent input pixels.
#[allow(clippy::too_many_arguments)]
pub fn conv_plane_standard(
    x: &[f64],
    w: &[f64],
    bias: f64,
    in_c_range: std::ops::Range<usize>,
    (h, iw): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    (pad_h, pad_w): (usize, usize),
    (oh, ow): (usize, usize),
    out: &mut [f64],
) {
    let kw_total = kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = bias;
            for (icg, ic) in in_c_range.clone().enumerate() {
                let x_plane = &x[ic * h * iw..(ic + 1) * h * iw];
                let w_plane = &w[icg * kw_total..(icg + 1) * kw_total];
                for ky in 0..kh {
                    let iy = (oy * stride + ky) as isize - pad_h as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let row = &x_plane[iy as usize * iw..(iy as usize + 1) * iw];
                    for kx in 0..kw {
                        let ix = (ox * stride + kx) as isize - pad_w as isize;
                        if ix < 0 || ix as usize >= iw {
                            continue;
                        }
                        acc += row[ix as usize] * w_plane[ky * kw + kx];
                    }
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
}

/// One output plane of an atrous convolution: input is sampled with
/// stride `dilation` between kernel taps.
#[allow(clippy::too_many_arguments)]
pub fn conv_plane_atrous(
    x: &[f64],
    w: &[f64],
    bias: f64,
    in_c_range: std::ops::Range<usize>,
    (h, iw): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    dilation: usize,
    (pad_h, pad_w): (usize, usize),
    (oh, ow): (usize, usize),
    out: &mut [f64],
) {
    let kw_total = kh * kw;
    for oy in 0..oh {
        for ox in 0..ow {
            let mut acc = bias;
            for (icg, ic) in in_c_range.clone().enumerate() {
                let x_plane = &x[ic * h * iw..(ic + 1) * h * iw];
                let w_plane = &w[icg * kw_total..(icg + 1) * kw_total];
                for ky in 0..kh {
                    let iy = (oy * stride + ky * dilation) as isize - pad_h as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    let row = &x_plane[iy as usize * iw..(iy as usize + 1) * iw];
                    for kx in 0..kw {
                        let ix = (ox * stride + kx * dilation) as isize - pad_w as isize;
                        if ix < 0 || ix as usize >= iw {
                            continue;
                        }
                        acc += row[ix as usize] * w_plane[ky * kw + kx];
                    }
                }
            }
            out[oy * ow + ox] = acc;
        }
    }
}

fn forward(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    g: Geom,
    force_atrous_path: bool,
) -> Result<Tensor> {
    if let Some(b) = bias {
        if b.shape() != [g.out_c] {
            return Err(Error::ShapeMismatch(format!(
                "bias shape {:?} vs {} output channels",
                b.shape(),
                g.out_c
            )));
        }
    }
    let x = input.data();
    let w = weights.data();
    let plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.out_c * plane];
    let ipg = g.in_per_group();
    let opg = g.out_per_group();
    let w_per_out = ipg * g.kh * g.kw;

    out.par_chunks_mut(plane).enumerate().for_each(|(idx, slab)| {
        let (n, oc) = (idx / g.out_c, idx % g.out_c);
        let group = oc / opg;
        let in_range = group * ipg..(group + 1) * ipg;
        let x_img = &x[n * g.in_c * g.h * g.w..(n + 1) * g.in_c * g.h * g.w];
        let w_oc = &w[oc * w_per_out..(oc + 1) * w_per_out];
        let b = bias.map(|b| b.data()[oc]).unwrap_or(0.0);
        if g.dilation == 1 && !force_atrous_path {
            conv_plane_standard(
                x_img,
                w_oc,
                b,
                in_range,
                (g.h, g.w),
                (g.kh, g.kw),
                g.stride,
                (g.pad_h, g.pad_w),
                (g.oh, g.ow),
                slab,
            );
        } else {
            conv_plane_atrous(
                x_img,
                w_oc,
                b,
                in_range,
                (g.h, g.w),
                (g.kh, g.kw),
                g.stride,
                g.dilation,
                (g.pad_h, g.pad_w),
                (g.oh, g.ow),
                slab,
            );
        }
    });
    Tensor::new(vec![g.n, g.out_c, g.oh, g.ow], out)
}

/// Standard-path forward with no dilation parameter at all.
pub fn conv2d_forward_standard(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    padding: Padding,
    groups: usize,
) -> Result<Tensor> {
    let g = resolve_geom(input.shape(), weights.shape(), stride, 1, padding, groups)?;
    forward(input, weights, bias, g, false)
}

/// Atrous-path forward; rate 1 must reproduce the standard path bit for bit.
pub fn conv2d_forward_atrous(
    input: &Tensor,
    weights: &Tensor,
    bias: Option<&Tensor>,
    stride: usize,
    dilation: usize,
    padding: Padding,
    groups: usize,
) -> Result<Tensor> {
    let g = resolve_geom(
        input.shape(),
        weights.shape(),
        stride,
        dilation,
        padding,
        groups,
    )?;
    forward(input, weights, bias, g, true)
}

/// Combined scatter backward: one sweep accumulates input, weight, and
/// bias gradients in a fixed order.
fn backward(
    grad: &Tensor,
    input: &Tensor,
    weights: &Tensor,
    has_bias: bool,
    g: Geom,
) -> Vec<Tensor> {
    let go = grad.data();
    let x = input.data();
    let w = weights.data();
    let mut dx = Tensor::zeros(input.shape());
    let mut dw = Tensor::zeros(weights.shape());
    let mut db = vec![0.0; g.out_c];
    let ipg = g.in_per_group();
    let opg = g.out_per_group();
    let w_per_out = ipg * g.kh * g.kw;

    {
        let dxs = dx.data_mut();
        let dws = dw.data_mut();
        for n in 0..g.n {
            for oc in 0..g.out_c {
                let group = oc / opg;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let gv = go[((n * g.out_c + oc) * g.oh + oy) * g.ow + ox];
                        if gv == 0.0 {
                            continue;
                        }
                        db[oc] += gv;
                        for icg in 0..ipg {
                            let ic = group * ipg + icg;
                            for ky in 0..g.kh {
                                let iy = (oy * g.stride + ky * g.dilation) as isize
                                    - g.pad_h as isize;
                                if iy < 0 || iy as usize >= g.h {
                                    continue;
                                }
                                for kx in 0..g.kw {
                                    let ix = (ox * g.stride + kx * g.dilation) as isize
                                        - g.pad_w as isize;
                                    if ix < 0 || ix as usize >= g.w {
                                        continue;
                                    }
                                    let xi =
                                        ((n * g.in_c + ic) * g.h + iy as usize) * g.w + ix as usize;
                                    let wi = oc * w_per_out + (icg * g.kh + ky) * g.kw + kx;
                                    dxs[xi] += gv * w[wi];
                                    dws[wi] += gv * x[xi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let mut outs = vec![dx, dw];
    if has_bias {
        outs.push(Tensor::from_vec(db));
    }
    outs
}

impl Tape {
    /// 2D convolution per `spec`. Weights are O x I/groups x Kh x Kw;
    /// depthwise specs expect per-channel weights C x 1 x Kh x Kw.
    pub fn conv2d(
        &mut self,
        input: Var,
        weights: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        spec.validate()?;
        let in_c = if self.value(input).rank() == 4 {
            self.value(input).shape()[1]
        } else {
            0
        };
        let groups = if spec.depthwise { in_c.max(1) } else { 1 };
        if spec.depthwise && spec.out_channels != in_c {
            return Err(Error::ShapeMismatch(format!(
                "depthwise conv wants out_channels == in_channels, got {} vs {in_c}",
                spec.out_channels
            )));
        }
        let g = resolve_geom(
            self.value(input).shape(),
            self.value(weights).shape(),
            spec.stride,
            spec.dilation_rate,
            spec.padding,
            groups,
        )?;
        if g.out_c != spec.out_channels {
            return Err(Error::ShapeMismatch(format!(
                "spec wants {} output channels, weights provide {}",
                spec.out_channels, g.out_c
            )));
        }
        if (g.kh, g.kw) != spec.kernel {
            return Err(Error::ShapeMismatch(format!(
                "spec kernel {:?} vs weight kernel {:?}",
                spec.kernel,
                (g.kh, g.kw)
            )));
        }
        let value = forward(
            self.value(input),
            self.value(weights),
            bias.map(|b| self.value(b)),
            g,
            false,
        )?;
        let has_bias = bias.is_some();
        let mut parents = vec![input, weights];
        if let Some(b) = bias {
            parents.push(b);
        }
        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            backward(grad, parents[0], parents[1], has_bias, g)
        });
        Ok(self.push_op(value, parents, back))
    }

    /// Per-channel convolution: channel c of the output depends only on
    /// channel c of the input.
    pub fn depthwise_conv2d(
        &mut self,
        input: Var,
        per_channel_weights: Var,
        bias: Option<Var>,
        spec: &ConvSpec,
    ) -> Result<Var> {
        let mut spec = *spec;
        spec.depthwise = true;
        self.conv2d(input, per_channel_weights, bias, &spec)
    }

    /// Transposed convolution ("up-convolution"). Weights are
    /// I x O x Kh x Kw; output spatial is (in - 1) * stride + kernel,
    /// so kernel == stride scales exactly by the stride.
    pub fn transposed_conv2d(&mut self, input: Var, weights: Var, stride: usize) -> Result<Var> {
        let ish = self.value(input).shape().to_vec();
        let wsh = self.value(weights).shape().to_vec();
        if ish.len() != 4 || wsh.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "transposed_conv2d wants NCHW input and IxOxKhxKw weights, got {ish:?} / {wsh:?}"
            )));
        }
        if stride == 0 {
            return Err(Error::BadConfig("transposed conv stride 0".into()));
        }
        let (n, in_c, h, w) = (ish[0], ish[1], ish[2], ish[3]);
        let (w_i, out_c, kh, kw) = (wsh[0], wsh[1], wsh[2], wsh[3]);
        if w_i != in_c {
            return Err(Error::ShapeMismatch(format!(
                "weights expect {w_i} input channels, input has {in_c}"
            )));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;

        let x = self.value(input).data();
        let wd = self.value(weights).data();
        let plane = oh * ow;
        let mut out = vec![0.0; n * out_c * plane];
        out.par_chunks_mut(plane).enumerate().for_each(|(idx, slab)| {
            let (ni, oc) = (idx / out_c, idx % out_c);
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0.0;
                    for ky in 0..kh {
                        if y < ky || (y - ky) % stride != 0 {
                            continue;
                        }
                        let iy = (y - ky) / stride;
                        if iy >= h {
                            continue;
                        }
                        for kx in 0..kw {
                            if xo < kx || (xo - kx) % stride != 0 {
                                continue;
                            }
                            let ix = (xo - kx) / stride;
                            if ix >= w {
                                continue;
                            }
                            for ic in 0..in_c {
                                acc += x[((ni * in_c + ic) * h + iy) * w + ix]
                                    * wd[((ic * out_c + oc) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    slab[y * ow + xo] = acc;
                }
            }
        });
        let value = Tensor::new(vec![n, out_c, oh, ow], out)?;

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let g = grad.data();
            let x = parents[0].data();
            let wd = parents[1].data();
            let mut dx = Tensor::zeros(parents[0].shape());
            let mut dw = Tensor::zeros(parents[1].shape());
            {
                let dxs = dx.data_mut();
                let dws = dw.data_mut();
                for ni in 0..n {
                    for ic in 0..in_c {
                        for iy in 0..h {
                            for ix in 0..w {
                                let xi = ((ni * in_c + ic) * h + iy) * w + ix;
                                let xv = x[xi];
                                for oc in 0..out_c {
                                    for ky in 0..kh {
                                        for kx in 0..kw {
                                            let gi = ((ni * out_c + oc) * oh + iy * stride + ky)
                                                * ow
                                                + ix * stride
                                                + kx;
                                            let wi = ((ic * out_c + oc) * kh + ky) * kw + kx;
                                            dxs[xi] += g[gi] * wd[wi];
                                            dws[wi] += g[gi] * xv;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            vec![dx, dw]
        });
        Ok(self.push_op(value, vec![input, weights], back))
    }
}
