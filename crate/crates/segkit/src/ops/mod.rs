//! The neural layer vocabulary: convolutions (standard, atrous, depthwise,
//! transposed), pooling, batch normalization, upsampling, dense layers, and
//! activations. All ops are recorded on the [`Tape`](crate::tensor::Tape)
//! and differentiable unless noted.

mod act;
mod conv;
mod dense;
mod norm;
mod pool;
mod resize;

pub use act::{ActKind, LEAKY_SLOPE};
pub use conv::{
    conv2d_forward_atrous, conv2d_forward_standard, conv_output_len, conv_plane_atrous,
    conv_plane_standard,
};
pub use norm::{update_running, BatchMoments, BatchNormState, BN_EPSILON, BN_MOMENTUM};
pub use pool::PoolKind;

use crate::error::{Error, Result};

/// Padding policy for spatial convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output spatial size is ceil(input / stride); zeros added as needed,
    /// the extra pixel (odd totals) goes to the bottom/right.
    Same,
    /// No padding; output is floor((in - effective_kernel) / stride) + 1.
    Valid,
}

/// Declarative description of one convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    /// Atrous rate r: the stride with which the kernel samples its input.
    /// 1 is a standard convolution.
    pub dilation_rate: usize,
    pub padding: Padding,
    pub depthwise: bool,
}

impl ConvSpec {
    pub fn new(out_channels: usize, kernel: usize) -> Self {
        ConvSpec {
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            dilation_rate: 1,
            padding: Padding::Same,
            depthwise: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, r: usize) -> Self {
        self.dilation_rate = r;
        self
    }

    pub fn padding(mut self, p: Padding) -> Self {
        self.padding = p;
        self
    }

    pub fn depthwise(mut self) -> Self {
        self.depthwise = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.out_channels == 0
            || self.kernel.0 == 0
            || self.kernel.1 == 0
            || self.stride == 0
            || self.dilation_rate == 0
        {
            return Err(Error::BadConfig(format!(
                "conv spec has a zero field: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Thread pool cap from SEGKIT_THREADS; call once at process start.
pub fn init_thread_pool() {
    use std::sync::Once;
    static ONCE: Once = Once::new();
    ONCE.call_once(|| {
        if let Ok(v) = std::env::var("SEGKIT_THREADS") {
            if let Ok(n) = v.trim().parse::<usize>() {
                if n > 0 {
                    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
                }
            }
        }
    });
}
