//! Writes a small synthetic paired dataset and reloads it.
//!
//! Usage: `cargo run --example synthetic_data -- [out_dir] [mapping]`

use stainfield::synth::{generate_dataset, load_dataset, Mapping, SynthSpec};

fn main() -> stainfield::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(Into::into).unwrap_or_else(|| std::env::temp_dir().join("stainfield-synthetic"));
    let mapping: Mapping = args.next().as_deref().unwrap_or("contextual").parse()?;
    let spec = SynthSpec { mapping, ..Default::default() };
    let manifest = generate_dataset(&spec, 8, &out)?;
    println!("{} pairs ({:?}, {}x{}) in {}", manifest.pairs.len(), mapping, spec.size, spec.size, out.display());
    for pair in load_dataset(&out)?.iter().take(3) {
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        println!("  {}: source mean {:.3}, target mean {:.3}", pair.id, mean(pair.source.data()), mean(pair.target.data()));
    }
    Ok(())
}
