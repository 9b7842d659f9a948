use segkit::arch::{Architecture, ModelConfig, ALL_ARCHITECTURES};
use segkit::backbone::{BackboneFamily, BackboneSpec};

fn probe(arch: Architecture, base: usize, depth: Vec<usize>, dec: usize, family: BackboneFamily) {
    let mut backbone = BackboneSpec::new(family);
    backbone.base_width = base;
    backbone.depth_per_stage = depth;
    let mut cfg = ModelConfig::new(arch, backbone, 2);
    cfg.decoder_width = dec;
    if arch == Architecture::Pspnet { cfg.pyramid_bins = vec![1, 2, 4]; }
    if arch == Architecture::Deeplabv3plus { cfg.output_stride = 8; cfg.atrous_rates = vec![1, 2, 3]; }
    let start = std::time::Instant::now();
    match segkit::selftest::overfit_smoke_with(cfg, 300, 1e-4) {
        Ok(o) => println!(
            "{:?} base={} dec={} {:?}: ce={:.4} acc={:.4} steps={} reached={:?} ({:.1}s)",
            arch, base, dec, family, o.final_ce, o.final_accuracy, o.steps_run, o.reached_at,
            start.elapsed().as_secs_f64()
        ),
        Err(e) => println!("{arch:?}: ERROR {e}"),
    }
}

fn main() {
    let which: Vec<String> = std::env::args().skip(1).collect();
    for arch in ALL_ARCHITECTURES {
        if !which.is_empty() && !which.contains(&format!("{arch:?}").to_lowercase()) { continue; }
        match arch {
            Architecture::Linknet => probe(arch, 16, vec![1,1,1,1], 64, BackboneFamily::Vgg),
            Architecture::Pspnet => probe(arch, 16, vec![1,1,1,1], 64, BackboneFamily::Vgg),
            Architecture::Deeplabv3plus => probe(arch, 16, vec![1,1,1,1], 64, BackboneFamily::Vgg),
            _ => probe(arch, 8, vec![1,1,1,1], 16, BackboneFamily::Vgg),
        }
    }
}
