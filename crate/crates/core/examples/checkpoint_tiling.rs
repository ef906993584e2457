//! Saves a model, reloads it, and checks that whole-image and tiled
//! inference agree away from tile seams.

use stainfield::encoders::{AttnEncoderConfig, ConvEncoderConfig};
use stainfield::inference::{translate, Scale, Tiling};
use stainfield::model::{ImplicitModel, ModelConfig};
use stainfield::synth::BlobField;

fn main() -> stainfield::Result<()> {
    let cfg = ModelConfig {
        conv: ConvEncoderConfig { num_layers: 2, output_channels: 8, ..Default::default() },
        attention: AttnEncoderConfig { embed_dim: 16, num_heads: 2, depth: 2, window_size: 8, mlp_ratio: 2, output_channels: 8, ..Default::default() },
        embed_dim: 8,
        hidden: vec![32, 32],
        seed: 7,
        ..Default::default()
    };
    let model = ImplicitModel::new(cfg)?;
    let dir = std::env::temp_dir().join("stainfield-checkpoint-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("model.safetensors");
    model.save(&path, &Default::default())?;
    let loaded = ImplicitModel::load(&path)?;
    println!("{} parameters, {} bytes on disk", loaded.num_parameters(), std::fs::metadata(&path)?.len());

    let image = BlobField::new(3, 8).render(64, 64)?;
    let whole = translate(&loaded, &image, Scale::one(), None)?;
    let same = translate(&model, &image, Scale::one(), None)?;
    println!("reloaded model bit-identical: {}", whole.data() == same.data());
    let tiled = translate(&loaded, &image, Scale::one(), Some(Tiling { tile: 32, overlap: 16 }))?;
    let worst = whole.data().iter().zip(tiled.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("largest whole vs tiled difference: {worst:.2e}");
    let up = translate(&loaded, &image, Scale::new(5, 2)?, Some(Tiling::new(32)))?;
    println!("scale 5/2: {}x{} -> {}x{}", image.height(), image.width(), up.height(), up.width());
    Ok(())
}
