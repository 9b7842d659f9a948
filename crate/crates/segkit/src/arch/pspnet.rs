//! Pyramid pooling over a stride-8 feature map: sub-region average
//! pooling at several bin counts, 1x1 reduction of each pooled map to
//! 1/N of the source channels, bilinear upsampling back, and channel
//! concatenation with the source before the classifier.

use super::ModelConfig;
use crate::backbone::{Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Ctx, ParamStore};
use crate::ops::{ActKind, ConvSpec};
use crate::tensor::Var;

pub struct PspnetDecoder {
    bins: Vec<usize>,
    branch_convs: Vec<ConvBnAct>,
    fuse: ConvBnAct,
    head: Conv2d,
    pub branch_channels: usize,
    pub concat_channels: usize,
}

impl PspnetDecoder {
    pub fn build(cfg: &ModelConfig, encoder: &Encoder, store: &mut ParamStore) -> Result<Self> {
        if encoder.output_stride != 8 {
            return Err(Error::BadConfig(
                "pspnet wants an output-stride-8 encoder".into(),
            ));
        }
        let source_ch = *encoder.stage_channels.last().unwrap();
        let bins = cfg.pyramid_bins.clone();
        let n = bins.len();
        let branch_channels = (source_ch / n).max(1);
        let mut branch_convs = Vec::with_capacity(n);
        for (i, _) in bins.iter().enumerate() {
            branch_convs.push(ConvBnAct::new(
                store,
                &format!("decoder.branch{i}"),
                source_ch,
                ConvSpec::new(branch_channels, 1),
                Some(ActKind::Relu),
            ));
        }
        let concat_channels = source_ch + n * branch_channels;
        let fuse = ConvBnAct::new(
            store,
            "decoder.fuse",
            concat_channels,
            ConvSpec::new(cfg.decoder_width, 3),
            Some(ActKind::Relu),
        );
        let head = Conv2d::new(
            store,
            "head",
            cfg.decoder_width,
            ConvSpec::new(cfg.num_classes, 1),
        );
        Ok(PspnetDecoder {
            bins,
            branch_convs,
            fuse,
            head,
            branch_channels,
            concat_channels,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        let source = pyramid.deepest().var;
        let shape = ctx.tape.value(source).shape().to_vec();
        let (h, w) = (shape[2], shape[3]);

        let mut parts = vec![source];
        for (bin, conv) in self.bins.iter().zip(&self.branch_convs) {
            let pooled = ctx.tape.adaptive_avg_pool(source, *bin)?;
            let reduced = conv.forward(ctx, pooled)?;
            let back = ctx.tape.bilinear_resize(reduced, h, w)?;
            parts.push(back);
        }
        let stacked = ctx.tape.concat(1, &parts)?;
        let fused = self.fuse.forward(ctx, stacked)?;
        let logits = self.head.forward(ctx, fused)?;
        ctx.tape.bilinear_upsample(logits, 8)
    }

    pub fn conv_layer_count(&self) -> usize {
        self.branch_convs.len() + 2
    }
}
