//! Atrous spatial pyramid pooling over the encoder output, then a light
//! decoder: upsample the ASPP features, concatenate with a 1x1-reduced
//! stride-4 low-level feature, refine with 3x3 convolutions, and
//! bilinearly upsample by four to full resolution.

use super::ModelConfig;
use crate::backbone::{Encoder, FeaturePyramid};
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBnAct, Ctx, ParamStore};
use crate::ops::{ActKind, ConvSpec};
use crate::tensor::Var;

/// Channel width of the reduced low-level feature before concatenation.
const LOW_LEVEL_CHANNELS: usize = 48;

pub struct DeeplabDecoder {
    aspp_point: ConvBnAct,
    pub(crate) aspp_atrous: Vec<ConvBnAct>,
    aspp_pool_conv: ConvBnAct,
    aspp_project: ConvBnAct,
    low_reduce: ConvBnAct,
    refine1: ConvBnAct,
    refine2: ConvBnAct,
    head: Conv2d,
    pub rates: Vec<usize>,
}

impl DeeplabDecoder {
    pub fn build(cfg: &ModelConfig, encoder: &Encoder, store: &mut ParamStore) -> Result<Self> {
        if encoder.output_stride != cfg.output_stride {
            return Err(Error::BadConfig(format!(
                "encoder output stride {} does not match config {}",
                encoder.output_stride, cfg.output_stride
            )));
        }
        let rates = cfg.effective_atrous_rates();
        let w = cfg.decoder_width;
        let deep_ch = *encoder.stage_channels.last().unwrap();
        let low_ch = encoder.stage_channels[1]; // stride 4

        let aspp_point = ConvBnAct::new(
            store,
            "decoder.aspp.point",
            deep_ch,
            ConvSpec::new(w, 1),
            Some(ActKind::Relu),
        );
        let mut aspp_atrous = Vec::with_capacity(rates.len());
        for (i, &r) in rates.iter().enumerate() {
            aspp_atrous.push(ConvBnAct::new(
                store,
                &format!("decoder.aspp.rate{i}"),
                deep_ch,
                ConvSpec::new(w, 3).dilation(r),
                Some(ActKind::Relu),
            ));
        }
        let aspp_pool_conv = ConvBnAct::new(
            store,
            "decoder.aspp.pool",
            deep_ch,
            ConvSpec::new(w, 1),
            Some(ActKind::Relu),
        );
        let aspp_project = ConvBnAct::new(
            store,
            "decoder.aspp.project",
            w * (2 + rates.len()),
            ConvSpec::new(w, 1),
            Some(ActKind::Relu),
        );
        let low_reduce = ConvBnAct::new(
            store,
            "decoder.low_reduce",
            low_ch,
            ConvSpec::new(LOW_LEVEL_CHANNELS, 1),
            Some(ActKind::Relu),
        );
        let refine1 = ConvBnAct::new(
            store,
            "decoder.refine1",
            w + LOW_LEVEL_CHANNELS,
            ConvSpec::new(w, 3),
            Some(ActKind::Relu),
        );
        let refine2 = ConvBnAct::new(
            store,
            "decoder.refine2",
            w,
            ConvSpec::new(w, 3),
            Some(ActKind::Relu),
        );
        let head = Conv2d::new(store, "head", w, ConvSpec::new(cfg.num_classes, 1));
        Ok(DeeplabDecoder {
            aspp_point,
            aspp_atrous,
            aspp_pool_conv,
            aspp_project,
            low_reduce,
            refine1,
            refine2,
            head,
            rates,
        })
    }

    pub fn forward(&self, ctx: &mut Ctx, pyramid: &FeaturePyramid) -> Result<Var> {
        let deep = pyramid.deepest().var;
        let dshape = ctx.tape.value(deep).shape().to_vec();
        let (dh, dw) = (dshape[2], dshape[3]);

        let mut branches = vec![self.aspp_point.forward(ctx, deep)?];
        for conv in &self.aspp_atrous {
            branches.push(conv.forward(ctx, deep)?);
        }
        // image-level pooling branch
        let pooled = ctx.tape.adaptive_avg_pool(deep, 1)?;
        let pooled = self.aspp_pool_conv.forward(ctx, pooled)?;
        branches.push(ctx.tape.bilinear_resize(pooled, dh, dw)?);

        let stacked = ctx.tape.concat(1, &branches)?;
        let aspp = self.aspp_project.forward(ctx, stacked)?;

        // decoder: bring ASPP features to the stride-4 low-level size
        let low = pyramid.levels[1].var;
        let lshape = ctx.tape.value(low).shape().to_vec();
        let up = ctx.tape.bilinear_resize(aspp, lshape[2], lshape[3])?;
        let low = self.low_reduce.forward(ctx, low)?;
        let cat = ctx.tape.concat(1, &[up, low])?;
        let x = self.refine1.forward(ctx, cat)?;
        let x = self.refine2.forward(ctx, x)?;
        let logits = self.head.forward(ctx, x)?;
        ctx.tape.bilinear_upsample(logits, 4)
    }

    pub fn conv_layer_count(&self) -> usize {
        // point + atrous branches + pool conv + project + low reduce
        // + two refines + head
        self.aspp_atrous.len() + 7
    }
}
