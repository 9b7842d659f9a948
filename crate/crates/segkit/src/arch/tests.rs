use super::*;
use crate::backbone::BackboneFamily;
use crate::tensor::Tensor;

fn small_backbone(family: BackboneFamily) -> BackboneSpec {
    let mut spec = BackboneSpec::new(family);
    spec.base_width = 8;
    spec.depth_per_stage = vec![1, 1, 1, 1];
    spec
}

fn small_config(arch: Architecture, family: BackboneFamily, classes: usize) -> ModelConfig {
    let mut cfg = ModelConfig::new(arch, small_backbone(family), classes);
    cfg.decoder_width = 16;
    cfg
}

fn batch(n: usize, h: usize, w: usize) -> Tensor {
    let len = n * 3 * h * w;
    let data: Vec<f64> = (0..len).map(|i| ((i as f64) * 0.137).sin() * 0.5 + 0.5).collect();
    Tensor::new(vec![n, 3, h, w], data).unwrap()
}

#[test]
fn logits_shape_for_every_architecture() {
    for arch in ALL_ARCHITECTURES {
        let cfg = small_config(arch, BackboneFamily::Resnet, 5);
        let mut model = Model::build(&cfg, 11).unwrap();
        let x = batch(1, 64, 64);
        let pass = model.forward(&x, false).unwrap();
        assert_eq!(
            pass.tape.value(pass.logits).shape(),
            &[1, 5, 64, 64],
            "{arch:?}"
        );
    }
}

#[test]
fn input_must_divide_by_32() {
    let cfg = small_config(Architecture::Unet, BackboneFamily::Vgg, 2);
    let mut model = Model::build(&cfg, 0).unwrap();
    let x = Tensor::zeros(&[1, 3, 48, 64]);
    assert!(matches!(
        model.forward(&x, false),
        Err(Error::InputNotDivisible { .. })
    ));
}

#[test]
fn canonical_unet_counts_23_conv_layers() {
    // five levels, two convs per level, up-convolutions, final 1x1
    let mut backbone = BackboneSpec::new(BackboneFamily::Vgg);
    backbone.base_width = 8;
    backbone.depth_per_stage = vec![2, 2, 2, 2];
    let cfg = ModelConfig::new(Architecture::Unet, backbone, 22);
    let model = Model::build(&cfg, 0).unwrap();
    assert_eq!(model.conv_layer_count(), 23);
}

#[test]
fn unet_depends_on_skip_connections() {
    // zeroing an encoder feature before the decoder changes the output
    let cfg = small_config(Architecture::Unet, BackboneFamily::Vgg, 2);
    let mut store = ParamStore::new(5);
    let encoder = build_backbone(&cfg.backbone, &mut store).unwrap();
    let decoder = UnetDecoder::build(&cfg, &encoder, &mut store).unwrap();

    let x = batch(1, 32, 32);
    let run = |store: &mut ParamStore, ablate: bool| {
        let mut tape = Tape::new();
        let bind = store.bind(&mut tape);
        let input = tape.constant(x.clone());
        let mut ctx = Ctx::new(&mut tape, store, &bind, false);
        let mut pyramid = encoder.forward(&mut ctx, input).unwrap();
        if ablate {
            let shape = ctx.tape.value(pyramid.levels[2].var).shape().to_vec();
            pyramid.levels[2].var = ctx.tape.constant(Tensor::zeros(&shape));
        }
        let logits = decoder.forward(&mut ctx, &pyramid).unwrap();
        tape.value(logits).clone()
    };
    let normal = run(&mut store, false);
    let ablated = run(&mut store, true);
    assert_ne!(normal.data(), ablated.data());
}

#[test]
fn fpn_laterals_share_decoder_width() {
    for family in [BackboneFamily::Densenet, BackboneFamily::Mobilenet] {
        let cfg = small_config(Architecture::Fpn, family, 3);
        let mut store = ParamStore::new(2);
        let encoder = build_backbone(&cfg.backbone, &mut store).unwrap();
        let decoder = FpnDecoder::build(&cfg, &encoder, &mut store).unwrap();
        for lateral in &decoder.laterals {
            assert_eq!(store.value(lateral.weight).shape()[0], cfg.decoder_width);
        }
    }
}

#[test]
fn fpn_p5_only_still_produces_logits() {
    let cfg = small_config(Architecture::Fpn, BackboneFamily::Resnet, 4);
    let mut store = ParamStore::new(3);
    let encoder = build_backbone(&cfg.backbone, &mut store).unwrap();
    let decoder = FpnDecoder::build(&cfg, &encoder, &mut store).unwrap();
    // zero the P2..P4 lateral weights and biases so only P5 contributes
    let ids: Vec<_> = store
        .iter()
        .filter(|(_, p)| {
            p.name.starts_with("decoder.lateral0")
                || p.name.starts_with("decoder.lateral1")
                || p.name.starts_with("decoder.lateral2")
        })
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let shape = store.value(id).shape().to_vec();
        store.set_value(id, Tensor::zeros(&shape));
    }
    let x = batch(1, 64, 64);
    let mut tape = Tape::new();
    let bind = store.bind(&mut tape);
    let input = tape.constant(x);
    let mut ctx = Ctx::new(&mut tape, &mut store, &bind, false);
    let pyramid = encoder.forward(&mut ctx, input).unwrap();
    let logits = decoder.forward(&mut ctx, &pyramid).unwrap();
    assert_eq!(tape.value(logits).shape(), &[1, 4, 64, 64]);
}

#[test]
fn linknet_bottleneck_is_quarter_and_links_add() {
    let cfg = small_config(Architecture::Linknet, BackboneFamily::Resnet, 2);
    let mut store = ParamStore::new(4);
    let encoder = build_backbone(&cfg.backbone, &mut store).unwrap();
    let decoder = LinknetDecoder::build(&cfg, &encoder, &mut store).unwrap();
    let ch = &encoder.stage_channels;
    for j in 0..4 {
        assert_eq!(decoder.bottleneck_channels(j), (ch[4 - j] / 4).max(1));
    }
    // additive link: the expand conv emits exactly the encoder width
    for (j, block) in decoder.blocks.iter().enumerate() {
        assert_eq!(store.value(block.expand.conv.weight).shape()[0], ch[3 - j]);
    }
}

#[test]
fn pspnet_branch_widths_follow_one_over_n() {
    let mut backbone = BackboneSpec::new(BackboneFamily::Vgg);
    backbone.base_width = 4; // stage 4 target: 64 channels
    backbone.depth_per_stage = vec![1, 1, 1, 1];
    let cfg = ModelConfig::new(Architecture::Pspnet, backbone, 3);
    let mut store = ParamStore::new(0);
    let encoder = build_backbone_with_output_stride(&cfg.backbone, &mut store, 8).unwrap();
    assert_eq!(*encoder.stage_channels.last().unwrap(), 64);
    let decoder = PspnetDecoder::build(&cfg, &encoder, &mut store).unwrap();
    assert_eq!(decoder.branch_channels, 16); // 64 / 4 bins
    assert_eq!(decoder.concat_channels, 64 + 4 * 16);
}

#[test]
fn pspnet_feature_is_one_eighth_of_input() {
    let cfg = small_config(Architecture::Pspnet, BackboneFamily::Resnet, 2);
    let mut model = Model::build(&cfg, 1).unwrap();
    let x = batch(1, 64, 64);
    let pass = model.forward(&x, false).unwrap();
    assert_eq!(pass.tape.value(pass.logits).shape(), &[1, 2, 64, 64]);
    // the encoder itself was built for output stride 8
    assert_eq!(model.encoder.output_stride, 8);
    assert_eq!(model.encoder.stage_strides, vec![2, 4, 8, 8, 8]);
}

#[test]
fn deeplab_aspp_operates_at_output_stride() {
    for (os, expect) in [(16u32, 4usize), (8, 8)] {
        let mut cfg = small_config(Architecture::Deeplabv3plus, BackboneFamily::Mobilenet, 2);
        cfg.output_stride = os;
        let model = Model::build(&cfg, 1).unwrap();
        assert_eq!(model.encoder.output_stride, os);
        let deepest = *model.encoder.stage_strides.last().unwrap();
        assert_eq!(64 / deepest as usize, expect);
    }
}

#[test]
fn deeplab_rate_one_uses_standard_convolution() {
    let mut cfg = small_config(Architecture::Deeplabv3plus, BackboneFamily::Vgg, 2);
    cfg.atrous_rates = vec![1];
    let mut model = Model::build(&cfg, 1).unwrap();
    if let DecoderNet::Deeplab(d) = &model.decoder {
        assert_eq!(d.rates, vec![1]);
        assert_eq!(d.aspp_atrous[0].conv.spec.dilation_rate, 1);
    } else {
        panic!("expected deeplab decoder");
    }
    let x = batch(1, 64, 64);
    let pass = model.forward(&x, false).unwrap();
    assert_eq!(pass.tape.value(pass.logits).shape(), &[1, 2, 64, 64]);
}

#[test]
fn deeplab_decoder_upsamples_four_then_four() {
    // at output stride 16 the decoder path is exactly two x4 upsamplings:
    // ASPP (stride 16) -> stride 4 -> full resolution
    let cfg = small_config(Architecture::Deeplabv3plus, BackboneFamily::Resnet, 2);
    let model = Model::build(&cfg, 0).unwrap();
    assert_eq!(*model.encoder.stage_strides.last().unwrap(), 16);
    // stride 16 -> 4 is x4, and the final head upsample is x4 by contract
}

#[test]
fn predict_probabilities_sum_to_one_and_match_argmax() {
    let cfg = small_config(Architecture::Fpn, BackboneFamily::Vgg, 4);
    let mut model = Model::build(&cfg, 7).unwrap();
    let x = batch(1, 32, 32);
    let (probs, labels) = model.predict(&x).unwrap();
    let hw = 32 * 32;
    for p in 0..hw {
        let total: f64 = (0..4).map(|c| probs.data()[c * hw + p]).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(labels[p] < 4);
    }
    // argmax of probabilities equals argmax of logits
    let pass = model.forward(&x, false).unwrap();
    let logits_map = argmax_channel(pass.tape.value(pass.logits)).unwrap();
    assert_eq!(labels, logits_map);
}

#[test]
fn forward_is_deterministic() {
    let cfg = small_config(Architecture::Linknet, BackboneFamily::Efficientnet, 3);
    let mut model = Model::build(&cfg, 9).unwrap();
    let x = batch(2, 32, 32);
    let a = model.forward(&x, false).unwrap();
    let b = model.forward(&x, false).unwrap();
    for (x, y) in a
        .tape
        .value(a.logits)
        .data()
        .iter()
        .zip(b.tape.value(b.logits).data())
    {
        assert_eq!(x.to_bits(), y.to_bits());
    }
}

#[test]
fn parameter_count_per_config_snapshot() {
    let cfg = small_config(Architecture::Unet, BackboneFamily::Resnet, 2);
    let a = Model::build(&cfg, 0).unwrap();
    let b = Model::build(&cfg, 123).unwrap();
    assert_eq!(a.parameter_count(), b.parameter_count());
    assert_eq!(a.parameter_count(), 499386);
}

#[test]
fn freeze_excludes_encoder_parameters() {
    let cfg = small_config(Architecture::Fpn, BackboneFamily::Vgg, 2);
    let mut model = Model::build(&cfg, 3).unwrap();
    model.freeze_encoder();
    assert!(!model.store.any_trainable_with_prefix("encoder."));
    assert!(model.store.any_trainable_with_prefix("decoder."));
    model.unfreeze_encoder();
    assert!(model.store.any_trainable_with_prefix("encoder."));
}

#[test]
fn config_validation_catches_bad_fields() {
    let mut cfg = small_config(Architecture::Pspnet, BackboneFamily::Vgg, 1);
    assert!(cfg.validate().is_err()); // K < 2
    cfg.num_classes = 3;
    cfg.pyramid_bins = vec![2, 2];
    assert!(cfg.validate().is_err()); // not strictly increasing
    cfg.pyramid_bins = vec![1, 2];
    cfg.output_stride = 12;
    assert!(cfg.validate().is_err());
    cfg.output_stride = 8;
    cfg.atrous_rates = vec![4, 4];
    assert!(cfg.validate().is_err()); // duplicate rates
    cfg.atrous_rates = vec![2, 4];
    assert!(cfg.validate().is_ok());
}
