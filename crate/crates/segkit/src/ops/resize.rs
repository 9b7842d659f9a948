//! Spatial resampling: bilinear interpolation (half-pixel centers,
//! align-corners false) and nearest-neighbor upsampling.

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Source coordinate and blend weight for one output index under the
/// half-pixel convention, clamped to the input extent.
fn bilinear_axis(out_i: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    let scale = in_len as f64 / out_len as f64;
    let src = ((out_i as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(in_len - 1);
    (lo, hi, src - lo as f64)
}

impl Tape {
    /// Bilinear resample of an NCHW tensor to an arbitrary spatial size.
    /// Constants stay constant; scale composition is exact.
    pub fn bilinear_resize(&mut self, input: Var, out_h: usize, out_w: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "bilinear_resize wants NCHW, got {shape:?}"
            )));
        }
        if out_h == 0 || out_w == 0 {
            return Err(Error::ShapeMismatch("zero output size".into()));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);

        let rows: Vec<(usize, usize, f64)> =
            (0..out_h).map(|i| bilinear_axis(i, h, out_h)).collect();
        let cols: Vec<(usize, usize, f64)> =
            (0..out_w).map(|i| bilinear_axis(i, w, out_w)).collect();

        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * out_h * out_w];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
            for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                    let top = src[y0 * w + x0] * (1.0 - wx) + src[y0 * w + x1] * wx;
                    let bot = src[y1 * w + x0] * (1.0 - wx) + src[y1 * w + x1] * wx;
                    dst[oy * out_w + ox] = top * (1.0 - wy) + bot * wy;
                }
            }
        }
        let value = Tensor::new(vec![n, c, out_h, out_w], out)?;

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let mut dx = Tensor::zeros(parents[0].shape());
            let g = grad.data();
            let dxs = dx.data_mut();
            for plane in 0..n * c {
                let base = plane * h * w;
                for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                        let gv = g[(plane * out_h + oy) * out_w + ox];
                        dxs[base + y0 * w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                        dxs[base + y0 * w + x1] += gv * (1.0 - wy) * wx;
                        dxs[base + y1 * w + x0] += gv * wy * (1.0 - wx);
                        dxs[base + y1 * w + x1] += gv * wy * wx;
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push_op(value, vec![input], back))
    }

    /// Bilinear upsample by an integral scale factor in {2, 4, 8}.
    pub fn bilinear_upsample(&mut self, input: Var, scale: usize) -> Result<Var> {
        if !matches!(scale, 2 | 4 | 8) {
            return Err(Error::BadConfig(format!(
                "bilinear_upsample scale {scale} not in {{2, 4, 8}}"
            )));
        }
        let shape = self.value(input).shape();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "bilinear_upsample wants NCHW, got {shape:?}"
            )));
        }
        let (h, w) = (shape[2], shape[3]);
        self.bilinear_resize(input, h * scale, w * scale)
    }

    /// Each output pixel copies its source pixel; gradient sums the
    /// replicated positions.
    pub fn nearest_upsample(&mut self, input: Var, scale: usize) -> Result<Var> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 {
            return Err(Error::ShapeMismatch(format!(
                "nearest_upsample wants NCHW, got {shape:?}"
            )));
        }
        if scale == 0 {
            return Err(Error::BadConfig("nearest_upsample scale 0".into()));
        }
        let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let (oh, ow) = (h * scale, w * scale);

        let x = self.value(input).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &x[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for oy in 0..oh {
                let row = &src[(oy / scale) * w..(oy / scale + 1) * w];
                for ox in 0..ow {
                    dst[oy * ow + ox] = row[ox / scale];
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out)?;

        let back = Box::new(move |grad: &Tensor, parents: &[&Tensor], _out: &Tensor| {
            let mut dx = Tensor::zeros(parents[0].shape());
            let g = grad.data();
            let dxs = dx.data_mut();
            for plane in 0..n * c {
                let base = plane * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        dxs[base + (oy / scale) * w + ox / scale] +=
                            g[(plane * oh + oy) * ow + ox];
                    }
                }
            }
            vec![dx]
        });
        Ok(self.push_op(value, vec![input], back))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn constant_stays_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 2, 3, 3], 4.25));
        let y = tape.bilinear_upsample(x, 2).unwrap();
        for &v in tape.value(y).data() {
            assert_eq!(v, 4.25);
        }
    }

    #[test]
    fn single_source_pixel_broadcasts() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 1], &[7.0]));
        let y = tape.bilinear_upsample(x, 4).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 4, 4]);
        for &v in tape.value(y).data() {
            assert_eq!(v, 7.0);
        }
    }

    #[test]
    fn half_pixel_weights_on_two_pixels() {
        // 2x1 input [0, 1] scale 2 -> [0, 0.25, 0.75, 1] along H.
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 1], &[0.0, 1.0]));
        let y = tape.bilinear_upsample(x, 2).unwrap();
        let got = tape.value(y).data();
        // output is 4x2; read column 0 of each row
        let want = [0.0, 0.25, 0.75, 1.0];
        for (oy, b) in want.iter().enumerate() {
            let a = got[oy * 2];
            assert!((a - b).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn closed_form_weights_scale_four() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 1], &[0.0, 1.0]));
        let y = tape.bilinear_upsample(x, 4).unwrap();
        let want = [0.0, 0.0, 0.125, 0.375, 0.625, 0.875, 1.0, 1.0];
        for (oy, b) in want.iter().enumerate() {
            let a = tape.value(y).data()[oy * 4];
            assert!((a - b).abs() < 1e-12, "row {oy}: {a} vs {b}");
        }
    }

    #[test]
    fn nearest_replicates() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 1, 2], &[0.0, 1.0]));
        let y = tape.nearest_upsample(x, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn nearest_multiset_is_input_repeated() {
        let data: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 1, 2, 3], &data));
        let y = tape.nearest_upsample(x, 2).unwrap();
        let mut got: Vec<f64> = tape.value(y).data().to_vec();
        got.sort_by(f64::total_cmp);
        let mut want: Vec<f64> = data.iter().flat_map(|&v| [v; 4]).collect();
        want.sort_by(f64::total_cmp);
        assert_eq!(got, want);
    }

    #[test]
    fn nearest_grad_sums_replicas() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[1, 1, 1, 1], &[2.0]), true);
        let y = tape.nearest_upsample(x, 2).unwrap();
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn upsample_scale_must_be_supported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        assert!(tape.bilinear_upsample(x, 3).is_err());
    }
}
