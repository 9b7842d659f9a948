//! Expansive path with skip concatenation: at each level an
//! up-convolution halves the channels, the same-stride encoder feature is
//! concatenated, and two 3x3 conv + ReLU layers fuse them. A final 1x1
//! convolution maps to class logits at full resolution.

use super::ModelConfig;
use crate::backbone::{Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Ctx, ParamStore, TransposedConv2d};
use crate::ops::{ActKind, ConvSpec};
use crate::tensor::Var;

struct UpStep {
    up: TransposedConv2d,
    fuse1: ConvBnAct,
    fuse2: ConvBnAct,
}

pub struct UnetDecoder {
    steps: Vec<UpStep>,
    head: Conv2d,
}

impl UnetDecoder {
    pub fn build(cfg: &ModelConfig, encoder: &Encoder, store: &mut ParamStore) -> Result<Self> {
        let ch = &encoder.stage_channels;
        if encoder.stage_strides != vec![2, 4, 8, 16, 32] {
            return Err(Error::BadConfig(
                "unet needs the full stride-2..32 pyramid".into(),
            ));
        }
        let mut steps = Vec::with_capacity(4);
        let mut in_ch = ch[4];
        for j in 0..4 {
            let skip_ch = ch[3 - j];
            let half = (in_ch / 2).max(1);
            let name = format!("decoder.up{j}");
            let up = TransposedConv2d::new(store, &format!("{name}.tconv"), in_ch, half, 2);
            let fuse1 = ConvBnAct::without_bn(
                store,
                &format!("{name}.fuse1"),
                half + skip_ch,
                ConvSpec::new(skip_ch, 3),
                Some(ActKind::Relu),
            );
            let fuse2 = ConvBnAct::without_bn(
                store,
                &format!("{name}.fuse2"),
                skip_ch,
                ConvSpec::new(skip_ch, 3),
                Some(ActKind::Relu),
            );
            steps.push(UpStep { up, fuse1, fuse2 });
            in_ch = skip_ch;
        }
        let head = Conv2d::new(store, "head", in_ch, ConvSpec::new(cfg.num_classes, 1));
        Ok(UnetDecoder { steps, head })
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        let mut x = pyramid.levels[4].var;
        for (j, step) in self.steps.iter().enumerate() {
            x = step.up.forward(ctx, x)?;
            let skip = pyramid.levels[3 - j].var;
            x = ctx.tape.concat(1, &[x, skip])?;
            x = step.fuse1.forward(ctx, x)?;
            x = step.fuse2.forward(ctx, x)?;
        }
        let x = ctx.tape.bilinear_upsample(x, 2)?;
        self.head.forward(ctx, x)
    }

    pub fn conv_layer_count(&self) -> usize {
        self.steps.len() * 3 + 1
    }
}
