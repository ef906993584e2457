//! Trains a small fused-backbone model on the contextual synthetic task and
//! reports held-out PSNR against the analytic targets.
//!
//! Usage: `cargo run --release --example train_synthetic -- [steps]`

use stainfield::encoders::{AttnEncoderConfig, ConvEncoderConfig};
use stainfield::evaluation::texture_metrics;
use stainfield::losses::LossConfig;
use stainfield::model::ModelConfig;
use stainfield::synth::{generate_pair, Mapping, SynthSpec};
use stainfield::training::{smooth, LrSchedule, PairedPatch, TrainConfig, Trainer};

fn main() -> stainfield::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(300);
    let pair = |seed| generate_pair(&SynthSpec { seed, mapping: Mapping::Contextual, ..Default::default() });
    let train: Vec<PairedPatch> = (0..64).map(pair).collect::<Result<_, _>>()?;
    let held_out: Vec<PairedPatch> = (1000..1008).map(pair).collect::<Result<_, _>>()?;

    let cfg = TrainConfig {
        learning_rate: 1e-3,
        lr_schedule: LrSchedule::Cosine { final_fraction: 0.05 },
        max_steps: Some(steps),
        model: ModelConfig {
            conv: ConvEncoderConfig { num_layers: 4, output_channels: 16, ..Default::default() },
            attention: AttnEncoderConfig { embed_dim: 32, num_heads: 4, depth: 2, window_size: 8, mlp_ratio: 2, output_channels: 16, ..Default::default() },
            embed_dim: 16,
            hidden: vec![64, 64],
            ..Default::default()
        },
        loss: LossConfig::pixel_only(),
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    println!("{} parameters", trainer.model().num_parameters());
    trainer.run(&train, |t| {
        if t.steps() % 50 == 0 {
            println!("step {:4}  loss {:.5}", t.steps(), t.history().last().unwrap().total);
        }
        Ok(())
    })?;

    let totals: Vec<f64> = trainer.history().iter().map(|r| r.total).collect();
    let s = smooth(&totals, 20);
    println!("smoothed loss {:.5} -> {:.5}", s[0], s[s.len() - 1]);
    let mut psnr = 0.0;
    for p in &held_out {
        psnr += texture_metrics(&trainer.model().translate(&p.source)?, &p.target)?.psnr;
    }
    println!("held-out PSNR {:.2} dB", psnr / held_out.len() as f64);
    Ok(())
}
