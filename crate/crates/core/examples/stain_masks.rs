//! Colour deconvolution of a synthetic brightfield image and the derived DAB
//! mask, next to the three mIF channel masks of a fluorescence-like image.
//!
//! Usage: `cargo run --example stain_masks -- [mask_dir]`

use stainfield::evaluation::{beer_lambert, color_deconvolution, ihc_dab_mask, mif_channel_masks, Morphology};
use stainfield::{BitDepth, RasterImage};

fn main() -> stainfield::Result<()> {
    let out = std::env::args().nth(1).map(std::path::PathBuf::from);
    let (h, w) = (48, 48);
    // Hematoxylin everywhere, DAB inside a disc.
    let ihc = RasterImage::from_fn(h, w, 3, |r, c, k| {
        let d = ((r as f64 - 20.0).powi(2) + (c as f64 - 28.0).powi(2)).sqrt();
        let dab = if d < 10.0 { 0.9 } else { 0.0 };
        beer_lambert([0.3, 0.05, dab])[k].clamp(0.0, 1.0)
    })?;
    let conc = color_deconvolution(&ihc)?;
    let peak = |k: usize| conc.channel(k).into_iter().fold(0.0f64, f64::max);
    println!("peak concentrations  H {:.3}  E {:.3}  DAB {:.3}", peak(0), peak(1), peak(2));
    let (dab, otsu) = ihc_dab_mask(&ihc)?;
    println!("DAB mask: {} positive pixels, threshold {:?}", dab.count(), otsu.map(|o| o.threshold));

    let mif = RasterImage::from_fn(h, w, 3, |r, c, k| match k {
        0 => ((r / 6 + c / 6) % 2) as f64 * 0.8,
        1 => if c < w / 2 { 0.6 } else { 0.05 },
        _ => if r > 36 && c > 36 { 0.9 } else { 0.0 },
    })?;
    let masks = mif_channel_masks(&mif, &Morphology::default())?;
    for (name, m) in masks.named() {
        println!("mIF {name}: {} positive pixels", m.count());
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(&dir)?;
        dab.to_image().save(dir.join("dab.png"), BitDepth::Eight)?;
        for (name, m) in masks.named() {
            m.to_image().save(dir.join(format!("{name}.png")), BitDepth::Eight)?;
        }
        println!("masks written to {}", dir.display());
    }
    Ok(())
}
