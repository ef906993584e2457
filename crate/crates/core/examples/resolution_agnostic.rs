//! Trains on 32x32 renders of the pointwise task, then renders 4x outputs
//! from the same low-resolution inputs and compares them with 128x128
//! analytic targets.
//!
//! Usage: `cargo run --release --example resolution_agnostic -- [steps]`

use stainfield::encoders::{Backbone, ConvEncoderConfig};
use stainfield::evaluation::texture_metrics;
use stainfield::inference::{translate, Scale};
use stainfield::losses::LossConfig;
use stainfield::model::ModelConfig;
use stainfield::synth::{apply_mapping, BlobField, Mapping};
use stainfield::training::{LrSchedule, PairedPatch, TrainConfig, Trainer};

fn main() -> stainfield::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let render = |seed: u64, size: usize| -> stainfield::Result<PairedPatch> {
        let source = BlobField::new(seed, 8).render(size, size)?;
        let target = apply_mapping(Mapping::Pointwise, &source)?;
        PairedPatch::new(source, target, format!("s{seed}_{size}"))
    };
    let train: Vec<PairedPatch> = (0..32).map(|s| render(s, 32)).collect::<Result<_, _>>()?;
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
        max_steps: Some(steps),
        model: ModelConfig {
            backbone: Backbone::ConvOnly,
            conv: ConvEncoderConfig { num_layers: 2, output_channels: 16, ..Default::default() },
            embed_dim: 16,
            hidden: vec![64, 64],
            ..Default::default()
        },
        loss: LossConfig::pixel_only(),
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    trainer.run(&train, |_| Ok(()))?;
    let model = trainer.model();

    let (mut lr_psnr, mut hr_psnr) = (0.0, 0.0);
    let seeds = 1000..1008u64;
    for seed in seeds.clone() {
        let lr = render(seed, 32)?;
        let hr = render(seed, 128)?;
        lr_psnr += texture_metrics(&translate(model, &lr.source, Scale::one(), None)?, &lr.target)?.psnr;
        let up = translate(model, &lr.source, Scale::new(4, 1)?, None)?;
        hr_psnr += texture_metrics(&up, &hr.target)?.psnr;
    }
    let n = seeds.count() as f64;
    println!("LR PSNR at 32x32:  {:.2} dB", lr_psnr / n);
    println!("HR PSNR at 128x128: {:.2} dB", hr_psnr / n);
    Ok(())
}
