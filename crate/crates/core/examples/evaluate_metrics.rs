//! Texture, distribution and segmentation metrics on a perturbed copy of a
//! synthetic set, rendered as a table.

use stainfield::evaluation::{evaluate_sets, render_table, EvalConfig, EvalMode, TableFormat};
use stainfield::synth::{generate_pair, Mapping, SynthSpec};
use stainfield::RasterImage;

fn main() -> stainfield::Result<()> {
    let refs: Vec<RasterImage> = (0..8)
        .map(|seed| generate_pair(&SynthSpec { seed, mapping: Mapping::Contextual, ..Default::default() }).map(|p| p.target))
        .collect::<Result<_, _>>()?;
    let shifted: Vec<RasterImage> = refs
        .iter()
        .map(|r| RasterImage::from_fn(r.height(), r.width(), 3, |y, x, k| (r.get(y, x, k) + 0.05).min(1.0)))
        .collect::<Result<_, _>>()?;
    let blurred: Vec<RasterImage> = refs
        .iter()
        .map(|r| {
            let (h, w, _) = r.dims();
            RasterImage::from_fn(h, w, 3, |y, x, k| {
                let mut s = 0.0;
                for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                    s += r.get((y + dy).min(h - 1), (x + dx).min(w - 1), k);
                }
                s / 4.0
            })
        })
        .collect::<Result<_, _>>()?;

    let cfg = EvalConfig { mode: EvalMode::All, ..Default::default() };
    let reports = vec![
        evaluate_sets(&refs, &refs, "reference", &cfg)?,
        evaluate_sets(&shifted, &refs, "brightened", &cfg)?,
        evaluate_sets(&blurred, &refs, "blurred", &cfg)?,
    ];
    print!("{}", render_table(&reports, TableFormat::Markdown));
    for (name, m) in &reports[2].segmentation {
        println!("blurred {name}: dice {:.3} tpr {:.3} tnr {:.3}", m.dice, m.tpr, m.tnr);
    }
    Ok(())
}
