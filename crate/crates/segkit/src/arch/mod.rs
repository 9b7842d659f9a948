//! The five encoder-decoder architectures, each composable over any
//! backbone family and producing per-pixel class logits at input
//! resolution, with a softmax prediction head.

#[cfg(test)]
mod tests;

mod deeplab;
mod fpn;
mod linknet;
mod pspnet;
mod unet;

pub use deeplab::DeeplabDecoder;
pub use fpn::FpnDecoder;
pub use linknet::LinknetDecoder;
pub use pspnet::PspnetDecoder;
pub use unet::UnetDecoder;

use serde::{Deserialize, Serialize};

use crate::backbone::{
    build_backbone, build_backbone_with_output_stride, BackboneSpec, Encoder, ENCODER_PREFIX,
};
use crate::error::{Error, Result};
use crate::metrics::argmax_channel;
use crate::nn::{check_input_batch, Ctx, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Unet,
    Fpn,
    Linknet,
    Pspnet,
    Deeplabv3plus,
}

pub const ALL_ARCHITECTURES: [Architecture; 5] = [
    Architecture::Unet,
    Architecture::Fpn,
    Architecture::Linknet,
    Architecture::Pspnet,
    Architecture::Deeplabv3plus,
];

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unet" => Ok(Architecture::Unet),
            "fpn" => Ok(Architecture::Fpn),
            "linknet" => Ok(Architecture::Linknet),
            "pspnet" => Ok(Architecture::Pspnet),
            "deeplabv3plus" | "deeplab" => Ok(Architecture::Deeplabv3plus),
            other => Err(Error::BadConfig(format!("unknown architecture {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Unet => "unet",
            Architecture::Fpn => "fpn",
            Architecture::Linknet => "linknet",
            Architecture::Pspnet => "pspnet",
            Architecture::Deeplabv3plus => "deeplabv3plus",
        }
    }
}

/// Declarative description of one architecture + backbone + head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub backbone: BackboneSpec,
    /// K, the class count of the softmax head.
    pub num_classes: usize,
    pub decoder_width: usize,
    /// Encoder output stride for deeplabv3plus: 8 or 16.
    pub output_stride: u32,
    /// Pyramid pooling bin sizes for pspnet.
    pub pyramid_bins: Vec<usize>,
    /// ASPP dilation rates for deeplabv3plus; empty selects the default
    /// for the configured output stride.
    pub atrous_rates: Vec<usize>,
}

impl ModelConfig {
    pub fn new(architecture: Architecture, backbone: BackboneSpec, num_classes: usize) -> Self {
        ModelConfig {
            architecture,
            backbone,
            num_classes,
            decoder_width: 64,
            output_stride: 16,
            pyramid_bins: vec![1, 2, 3, 6],
            atrous_rates: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes < 2 {
            return Err(Error::BadConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.decoder_width == 0 {
            return Err(Error::BadConfig("decoder_width must be positive".into()));
        }
        if !matches!(self.output_stride, 8 | 16) {
            return Err(Error::BadConfig(format!(
                "output_stride {} not in {{8, 16}}",
                self.output_stride
            )));
        }
        if self.pyramid_bins.is_empty()
            || self.pyramid_bins.windows(2).any(|p| p[1] <= p[0])
        {
            return Err(Error::BadConfig(format!(
                "pyramid_bins must be strictly increasing, got {:?}",
                self.pyramid_bins
            )));
        }
        let rates = self.effective_atrous_rates();
        for (i, r) in rates.iter().enumerate() {
            if *r == 0 || rates[..i].contains(r) {
                return Err(Error::BadConfig(format!(
                    "atrous_rates must be distinct and positive, got {rates:?}"
                )));
            }
        }
        Ok(())
    }

    /// Defaults: [6, 12, 18] at output stride 16, halved at 8.
    pub fn effective_atrous_rates(&self) -> Vec<usize> {
        if !self.atrous_rates.is_empty() {
            return self.atrous_rates.clone();
        }
        match self.output_stride {
            8 => vec![3, 6, 9],
            _ => vec![6, 12, 18],
        }
    }
}

enum DecoderNet {
    Unet(UnetDecoder),
    Fpn(FpnDecoder),
    Linknet(LinknetDecoder),
    Pspnet(PspnetDecoder),
    Deeplab(DeeplabDecoder),
}

/// A built architecture: parameters plus the encoder/decoder wiring.
pub struct Model {
    pub cfg: ModelConfig,
    pub store: ParamStore,
    encoder: Encoder,
    decoder: DecoderNet,
    frozen_encoder: bool,
}

/// One forward pass: the tape it ran on plus handles into it.
pub struct ForwardPass {
    pub tape: Tape,
    pub binding: crate::nn::Binding,
    pub logits: Var,
}

impl Model {
    pub fn build(cfg: &ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut store = ParamStore::new(seed);
        let encoder = match cfg.architecture {
            Architecture::Pspnet => {
                build_backbone_with_output_stride(&cfg.backbone, &mut store, 8)?
            }
            Architecture::Deeplabv3plus => {
                build_backbone_with_output_stride(&cfg.backbone, &mut store, cfg.output_stride)?
            }
            _ => build_backbone(&cfg.backbone, &mut store)?,
        };
        let decoder = match cfg.architecture {
            Architecture::Unet => DecoderNet::Unet(UnetDecoder::build(cfg, &encoder, &mut store)?),
            Architecture::Fpn => DecoderNet::Fpn(FpnDecoder::build(cfg, &encoder, &mut store)?),
            Architecture::Linknet => {
                DecoderNet::Linknet(LinknetDecoder::build(cfg, &encoder, &mut store)?)
            }
            Architecture::Pspnet => {
                DecoderNet::Pspnet(PspnetDecoder::build(cfg, &encoder, &mut store)?)
            }
            Architecture::Deeplabv3plus => {
                DecoderNet::Deeplab(DeeplabDecoder::build(cfg, &encoder, &mut store)?)
            }
        };
        Ok(Model {
            cfg: cfg.clone(),
            store,
            encoder,
            decoder,
            frozen_encoder: false,
        })
    }

    /// Run one batch (N x 3 x H x W, spatial divisible by 32) to logits
    /// N x K x H x W on a fresh tape.
    pub fn forward(&mut self, batch: &Tensor, training: bool) -> Result<ForwardPass> {
        check_input_batch(batch)?;
        let mut tape = Tape::new();
        let binding = self.store.bind(&mut tape);
        let input = tape.constant(batch.clone());
        let logits = {
            let mut ctx = Ctx::new(&mut tape, &mut self.store, &binding, training);
            let pyramid = self.encoder.forward(&mut ctx, input)?;
            match &self.decoder {
                DecoderNet::Unet(d) => d.forward(&mut ctx, &pyramid)?,
                DecoderNet::Fpn(d) => d.forward(&mut ctx, &pyramid)?,
                DecoderNet::Linknet(d) => d.forward(&mut ctx, &pyramid)?,
                DecoderNet::Pspnet(d) => d.forward(&mut ctx, &pyramid)?,
                DecoderNet::Deeplab(d) => d.forward(&mut ctx, &pyramid)?,
            }
        };
        let out_shape = tape.value(logits).shape();
        debug_assert_eq!(out_shape[1], self.cfg.num_classes);
        debug_assert_eq!(&out_shape[2..], &batch.shape()[2..]);
        Ok(ForwardPass {
            tape,
            binding,
            logits,
        })
    }

    /// Softmax probabilities and the argmax label map for a batch.
    pub fn predict(&mut self, batch: &Tensor) -> Result<(Tensor, Vec<u32>)> {
        let mut pass = self.forward(batch, false)?;
        let probs = pass.tape.softmax_channel(pass.logits)?;
        let probs = pass.tape.value(probs).clone();
        let labels = argmax_channel(&probs)?;
        Ok((probs, labels))
    }

    /// Exclude every encoder parameter from gradient updates; forward
    /// behavior is unchanged (frozen batch norm runs in inference mode).
    pub fn freeze_encoder(&mut self) {
        self.store.set_trainable_by_prefix(ENCODER_PREFIX, false);
        self.frozen_encoder = true;
    }

    pub fn unfreeze_encoder(&mut self) {
        self.store.set_trainable_by_prefix(ENCODER_PREFIX, true);
        self.frozen_encoder = false;
    }

    pub fn encoder_frozen(&self) -> bool {
        self.frozen_encoder
    }

    pub fn num_classes(&self) -> usize {
        self.cfg.num_classes
    }

    pub fn parameter_count(&self) -> usize {
        self.store.element_count()
    }

    /// Convolution layers (standard + transposed) in encoder and decoder.
    pub fn conv_layer_count(&self) -> usize {
        let decoder = match &self.decoder {
            DecoderNet::Unet(d) => d.conv_layer_count(),
            DecoderNet::Fpn(d) => d.conv_layer_count(),
            DecoderNet::Linknet(d) => d.conv_layer_count(),
            DecoderNet::Pspnet(d) => d.conv_layer_count(),
            DecoderNet::Deeplab(d) => d.conv_layer_count(),
        };
        self.encoder.conv_layer_count() + decoder
    }
}
