//! Feature pyramid decoder: 1x1 lateral projections, nearest-neighbor
//! top-down upsampling merged by element-wise addition, and a semantic
//! head that sums the per-level maps at stride 4 before projecting to
//! class logits.

use super::ModelConfig;
use crate::backbone::{Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Ctx, ParamStore};
use crate::ops::{ActKind, ConvSpec};
use crate::tensor::Var;

pub struct FpnDecoder {
    pub(crate) laterals: Vec<Conv2d>,
    level_convs: Vec<ConvBnAct>,
    fuse: ConvBnAct,
    head: Conv2d,
    pub width: usize,
}

impl FpnDecoder {
    pub fn build(cfg: &ModelConfig, encoder: &Encoder, store: &mut ParamStore) -> Result<Self> {
        if encoder.stage_strides != vec![2, 4, 8, 16, 32] {
            return Err(Error::BadConfig(
                "fpn needs the stride-4..32 pyramid".into(),
            ));
        }
        let w = cfg.decoder_width;
        let mut laterals = Vec::with_capacity(4);
        let mut level_convs = Vec::with_capacity(4);
        // levels 1..4 of the pyramid: strides 4, 8, 16, 32
        for (j, &ch) in encoder.stage_channels[1..].iter().enumerate() {
            laterals.push(Conv2d::new(
                store,
                &format!("decoder.lateral{j}"),
                ch,
                ConvSpec::new(w, 1),
            ));
            level_convs.push(ConvBnAct::without_bn(
                store,
                &format!("decoder.level{j}"),
                w,
                ConvSpec::new(w, 3),
                Some(ActKind::Relu),
            ));
        }
        let fuse = ConvBnAct::without_bn(
            store,
            "decoder.fuse",
            w,
            ConvSpec::new(w, 3),
            Some(ActKind::Relu),
        );
        let head = Conv2d::new(store, "head", w, ConvSpec::new(cfg.num_classes, 1));
        Ok(FpnDecoder {
            laterals,
            level_convs,
            fuse,
            head,
            width: w,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        // bottom-up features at strides 4..32 are pyramid levels 1..4
        let mut lats = Vec::with_capacity(4);
        for (j, lateral) in self.laterals.iter().enumerate() {
            lats.push(lateral.forward(ctx, pyramid.levels[j + 1].var)?);
        }
        // top-down: deepest lateral is P5; upsample by 2 and add
        let mut tops = vec![lats[3]];
        for j in (0..3).rev() {
            let up = ctx.tape.nearest_upsample(*tops.last().unwrap(), 2)?;
            tops.push(ctx.tape.add(lats[j], up)?);
        }
        tops.reverse(); // now P2, P3, P4, P5

        // semantic head: per-level 3x3 conv, upsample to stride 4, sum
        let mut sum: Option<Var> = None;
        for (j, conv) in self.level_convs.iter().enumerate() {
            let mut y = conv.forward(ctx, tops[j])?;
            let scale = 1usize << j;
            if scale > 1 {
                y = ctx.tape.bilinear_upsample(y, scale)?;
            }
            sum = Some(match sum {
                Some(acc) => ctx.tape.add(acc, y)?,
                None => y,
            });
        }
        let fused = self.fuse.forward(ctx, sum.expect("four levels"))?;
        let logits = self.head.forward(ctx, fused)?;
        ctx.tape.bilinear_upsample(logits, 4)
    }

    pub fn conv_layer_count(&self) -> usize {
        self.laterals.len() + self.level_convs.len() + 2
    }
}
