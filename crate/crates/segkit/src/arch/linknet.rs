//! Link decoder: each block bottlenecks to a quarter of its input
//! channels, up-convolves by two, projects to the next encoder width,
//! and is ADDED (not concatenated) to the corresponding encoder feature.

use super::ModelConfig;
use crate::backbone::{Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Ctx, ParamStore, TransposedConv2d};
use crate::ops::{ActKind, ConvSpec};
use crate::tensor::Var;

pub(crate) struct LinkBlock {
    squeeze: ConvBnAct,
    up: TransposedConv2d,
    pub(crate) expand: ConvBnAct,
    pub bottleneck: usize,
}

pub struct LinknetDecoder {
    pub(crate) blocks: Vec<LinkBlock>,
    final_up: TransposedConv2d,
    final_conv: ConvBnAct,
    head: Conv2d,
}

impl LinknetDecoder {
    pub fn build(cfg: &ModelConfig, encoder: &Encoder, store: &mut ParamStore) -> Result<Self> {
        if encoder.stage_strides != vec![2, 4, 8, 16, 32] {
            return Err(Error::BadConfig(
                "linknet needs the full stride-2..32 pyramid".into(),
            ));
        }
        let ch = &encoder.stage_channels;
        let mut blocks = Vec::with_capacity(4);
        for j in 0..4 {
            let m = ch[4 - j];
            let n = ch[3 - j];
            let quarter = (m / 4).max(1);
            let name = format!("decoder.block{j}");
            blocks.push(LinkBlock {
                squeeze: ConvBnAct::new(
                    store,
                    &format!("{name}.squeeze"),
                    m,
                    ConvSpec::new(quarter, 1),
                    Some(ActKind::Relu),
                ),
                up: TransposedConv2d::new(store, &format!("{name}.up"), quarter, quarter, 2),
                expand: ConvBnAct::new(
                    store,
                    &format!("{name}.expand"),
                    quarter,
                    ConvSpec::new(n, 1),
                    Some(ActKind::Relu),
                ),
                bottleneck: quarter,
            });
        }
        let final_up = TransposedConv2d::new(store, "decoder.final_up", ch[0], cfg.decoder_width, 2);
        let final_conv = ConvBnAct::new(
            store,
            "decoder.final_conv",
            cfg.decoder_width,
            ConvSpec::new(cfg.decoder_width, 3),
            Some(ActKind::Relu),
        );
        let head = Conv2d::new(
            store,
            "head",
            cfg.decoder_width,
            ConvSpec::new(cfg.num_classes, 1),
        );
        Ok(LinknetDecoder {
            blocks,
            final_up,
            final_conv,
            head,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        let mut x = pyramid.levels[4].var;
        for (j, block) in self.blocks.iter().enumerate() {
            let y = block.squeeze.forward(ctx, x)?;
            let y = block.up.forward(ctx, y)?;
            let y = block.expand.forward(ctx, y)?;
            // the link: decoder output + encoder feature, same channels
            x = ctx.tape.add(y, pyramid.levels[3 - j].var)?;
        }
        let x = self.final_up.forward(ctx, x)?;
        let x = self.final_conv.forward(ctx, x)?;
        self.head.forward(ctx, x)
    }

    /// Bottleneck width of decoder block `j` (m/4 of its input).
    pub fn bottleneck_channels(&self, j: usize) -> usize {
        self.blocks[j].bottleneck
    }

    pub fn conv_layer_count(&self) -> usize {
        self.blocks.len() * 3 + 3
    }
}
