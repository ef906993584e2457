//! Synthetic paired data with exactly known targets.
//!
//! Sources are smooth fields of Gaussian blobs defined on the continuous
//! square `[-1, 1]²`, so the same scene can be rendered at any resolution.
//! Targets are a fixed function of the clean source:
//!
//! * `pointwise`: `t_k(x) = 1 − s_{(k+1) mod 3}(x)`
//! * `contextual`: the mean of `s` over the 3×3 neighborhood of `x` and all
//!   channels, coded as [`HIGH`] above 0.5 and [`LOW`] otherwise
//! * `longrange`: `s(x)` inside the quadrant whose clean mean is largest and
//!   zero elsewhere
//!
//! Noise, when requested, is added to the source only.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::axis_coordinate;
use crate::image::{BitDepth, RasterImage};
use crate::training::PairedPatch;

/// Colour code for neighborhoods brighter than one half.
pub const HIGH: [f64; 3] = [0.8, 0.35, 0.3];
pub const LOW: [f64; 3] = [0.3, 0.45, 0.8];

const CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mapping {
    #[default]
    Pointwise,
    Contextual,
    Longrange,
}

impl std::str::FromStr for Mapping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointwise" => Ok(Self::Pointwise),
            "contextual" => Ok(Self::Contextual),
            "longrange" => Ok(Self::Longrange),
            other => Err(invalid(format!("unknown mapping `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub size: usize,
    pub blob_count: usize,
    pub mapping: Mapping,
    pub noise_std: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { seed: 0, size: 32, blob_count: 8, mapping: Mapping::Pointwise, noise_std: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct Blob {
    center: [f64; 2],
    sigma: f64,
    weights: [f64; CHANNELS],
}

/// The continuous scene behind one seed.
#[derive(Debug, Clone)]
pub struct BlobField {
    base: [f64; CHANNELS],
    blobs: Vec<Blob>,
}

impl BlobField {
    pub fn new(seed: u64, blob_count: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = std::array::from_fn(|_| rng.random_range(0.05..0.25));
        let blobs = (0..blob_count)
            .map(|_| {
                let center = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let sigma = rng.random_range(0.15..0.4);
                let amp = rng.random_range(0.4..0.9);
                let weights = std::array::from_fn(|_| amp * rng.random_range(0.2..1.0));
                Blob { center, sigma, weights }
            })
            .collect();
        Self { base, blobs }
    }

    /// Field value at `(x, y)`, clipped to `[0, 1]`.
    pub fn value(&self, x: f64, y: f64) -> [f64; CHANNELS] {
        let mut v = self.base;
        for b in &self.blobs {
            let d2 = (x - b.center[0]).powi(2) + (y - b.center[1]).powi(2);
            let g = (-d2 / (2.0 * b.sigma * b.sigma)).exp();
            for (vk, wk) in v.iter_mut().zip(&b.weights) {
                *vk += wk * g;
            }
        }
        v.map(|c| c.clamp(0.0, 1.0))
    }

    /// Samples the field at the cell centers of an `h×w` raster.
    pub fn render(&self, h: usize, w: usize) -> Result<RasterImage> {
        let mut data = Vec::with_capacity(h * w * CHANNELS);
        for i in 0..h {
            for j in 0..w {
                data.extend(self.value(axis_coordinate(j, w), axis_coordinate(i, h)));
            }
        }
        RasterImage::new(h, w, CHANNELS, data)
    }
}

fn check_rgb(s: &RasterImage) -> Result<()> {
    if s.channels() != CHANNELS {
        return Err(invalid(format!("mappings need {CHANNELS}-channel sources")));
    }
    Ok(())
}

/// The exact target for a clean source.
pub fn apply_mapping(mapping: Mapping, source: &RasterImage) -> Result<RasterImage> {
    check_rgb(source)?;
    let (h, w, _) = source.dims();
    match mapping {
        Mapping::Pointwise => RasterImage::from_fn(h, w, CHANNELS, |r, c, k| 1.0 - source.get(r, c, (k + 1) % CHANNELS)),
        Mapping::Contextual => {
            let mean = |r: usize, c: usize| {
                let mut s = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let y = (r as i64 + dy).clamp(0, h as i64 - 1) as usize;
                        let x = (c as i64 + dx).clamp(0, w as i64 - 1) as usize;
                        s += source.pixel(y, x).iter().sum::<f64>();
                    }
                }
                s / (9 * CHANNELS) as f64
            };
            RasterImage::from_fn(h, w, CHANNELS, |r, c, k| if mean(r, c) > 0.5 { HIGH[k] } else { LOW[k] })
        }
        Mapping::Longrange => {
            let q = brightest_quadrant(source);
            RasterImage::from_fn(h, w, CHANNELS, |r, c, k| {
                if quadrant(r, c, h, w) == q {
                    source.get(r, c, k)
                } else {
                    0.0
                }
            })
        }
    }
}

/// Quadrant index `2·(bottom) + (right)`; the top/left halves take the extra
/// row or column of odd sizes.
pub fn quadrant(r: usize, c: usize, h: usize, w: usize) -> usize {
    2 * (r >= h.div_ceil(2)) as usize + (c >= w.div_ceil(2)) as usize
}

/// Quadrant with the largest mean over pixels and channels; ties go to the
/// lowest index.
pub fn brightest_quadrant(source: &RasterImage) -> usize {
    let (h, w, _) = source.dims();
    let mut sum = [0.0; 4];
    let mut n = [0usize; 4];
    for r in 0..h {
        for c in 0..w {
            let q = quadrant(r, c, h, w);
            sum[q] += source.pixel(r, c).iter().sum::<f64>();
            n[q] += 1;
        }
    }
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for q in 0..4 {
        if n[q] > 0 && sum[q] / n[q] as f64 > best_v {
            best_v = sum[q] / n[q] as f64;
            best = q;
        }
    }
    best
}

/// One pair from `spec`, plus the clean source it was derived from.
#[derive(Debug, Clone)]
pub struct SynthPair {
    pub pair: PairedPatch,
    pub clean: RasterImage,
}

pub fn generate(spec: &SynthSpec) -> Result<SynthPair> {
    if spec.size < 16 {
        return Err(invalid(format!("synthetic size must be at least 16, got {}", spec.size)));
    }
    if !(spec.noise_std >= 0.0 && spec.noise_std.is_finite()) {
        return Err(invalid("noise_std must be non-negative"));
    }
    let clean = BlobField::new(spec.seed, spec.blob_count).render(spec.size, spec.size)?;
    let target = apply_mapping(spec.mapping, &clean)?;
    let source = if spec.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x5EED);
        let normal = Normal::new(0.0, spec.noise_std).expect("valid std");
        let data = clean.data().iter().map(|v| (v + normal.sample(&mut rng)).clamp(0.0, 1.0)).collect();
        RasterImage::new(spec.size, spec.size, CHANNELS, data)?
    } else {
        clean.clone()
    };
    let pair = PairedPatch::new(source, target, format!("synth_{}_{}", mapping_name(spec.mapping), spec.seed))?;
    Ok(SynthPair { pair, clean })
}

pub fn generate_pair(spec: &SynthSpec) -> Result<PairedPatch> {
    Ok(generate(spec)?.pair)
}

fn mapping_name(m: Mapping) -> &'static str {
    match m {
        Mapping::Pointwise => "pointwise",
        Mapping::Contextual => "contextual",
        Mapping::Longrange => "longrange",
    }
}

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub seed: u64,
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub spec: SynthSpec,
    pub pairs: Vec<ManifestEntry>,
}

/// Writes `n` pairs with seeds `spec.seed..spec.seed+n` as 16-bit PNGs plus
/// `manifest.json`.
pub fn generate_dataset(spec: &SynthSpec, n: usize, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let seed = spec.seed + i as u64;
        let p = generate_pair(&SynthSpec { seed, ..spec.clone() })?;
        let (s, t) = (format!("pair_{i:04}_source.png"), format!("pair_{i:04}_target.png"));
        p.source.save(dir.join(&s), BitDepth::Sixteen)?;
        p.target.save(dir.join(&t), BitDepth::Sixteen)?;
        pairs.push(ManifestEntry { id: format!("pair_{i:04}"), seed, source: s, target: t });
    }
    let manifest = Manifest { schema_version: MANIFEST_SCHEMA, spec: spec.clone(), pairs };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads a paired directory: from `manifest.json` when present, otherwise
/// every `<id>_source.<ext>` with a matching `<id>_target.<ext>`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<PairedPatch>> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let entries: Vec<(String, PathBuf, PathBuf)> = if manifest_path.exists() {
        let m: Manifest = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
        if m.schema_version != MANIFEST_SCHEMA {
            return Err(Error::Format { what: "manifest", message: format!("unsupported schema {}", m.schema_version) });
        }
        m.pairs.into_iter().map(|e| (e.id, dir.join(e.source), dir.join(e.target))).collect()
    } else {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
            if let Some((id, ext)) = name.rsplit_once('.').and_then(|(stem, ext)| stem.strip_suffix("_source").map(|id| (id.to_string(), ext.to_string()))) {
                let target = dir.join(format!("{id}_target.{ext}"));
                if target.exists() {
                    found.push((id, path, target));
                }
            }
        }
        found.sort();
        found
    };
    if entries.is_empty() {
        return Err(invalid(format!("no image pairs found in {}", dir.display())));
    }
    entries
        .into_iter()
        .map(|(id, s, t)| PairedPatch::new(RasterImage::load(s)?, RasterImage::load(t)?, id))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct re-statement of each mapping, pixel by pixel.
    fn oracle(mapping: Mapping, s: &RasterImage) -> Vec<f64> {
        let (h, w, _) = s.dims();
        let at = |r: i64, c: i64, k: usize| s.get(r.clamp(0, h as i64 - 1) as usize, c.clamp(0, w as i64 - 1) as usize, k);
        let mut q_means = [(0.0, 0usize); 4];
        for r in 0..h {
            for c in 0..w {
                let q = if r < (h + 1) / 2 { 0 } else { 2 } + if c < (w + 1) / 2 { 0 } else { 1 };
                q_means[q].0 += s.get(r, c, 0) + s.get(r, c, 1) + s.get(r, c, 2);
                q_means[q].1 += 1;
            }
        }
        let mut best = 0;
        for q in 1..4 {
            if q_means[q].0 / q_means[q].1 as f64 > q_means[best].0 / q_means[best].1 as f64 {
                best = q;
            }
        }
        let mut out = Vec::new();
        for r in 0..h as i64 {
            for c in 0..w as i64 {
                let mut m = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        m += at(r + dy, c + dx, 0) + at(r + dy, c + dx, 1) + at(r + dy, c + dx, 2);
                    }
                }
                m /= 27.0;
                let q = if (r as usize) < (h + 1) / 2 { 0 } else { 2 } + if (c as usize) < (w + 1) / 2 { 0 } else { 1 };
                for k in 0..3 {
                    out.push(match mapping {
                        Mapping::Pointwise => 1.0 - at(r, c, [1, 2, 0][k]),
                        Mapping::Contextual => {
                            if m > 0.5 {
                                HIGH[k]
                            } else {
                                LOW[k]
                            }
                        }
                        Mapping::Longrange => {
                            if q == best {
                                at(r, c, k)
                            } else {
                                0.0
                            }
                        }
                    });
                }
            }
        }
        out
    }

    #[test]
    fn constant_sources() {
        let s = RasterImage::filled(4, 4, 3, 0.3).unwrap();
        let t = apply_mapping(Mapping::Pointwise, &s).unwrap();
        assert!(t.data().iter().all(|v| (v - 0.7).abs() < 1e-15));
        let s = RasterImage::filled(4, 4, 3, 0.6).unwrap();
        let t = apply_mapping(Mapping::Contextual, &s).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert_eq!(t.pixel(r, c), &HIGH);
            }
        }
    }

    #[test]
    fn pointwise_permutes_channels() {
        let s = RasterImage::new(1, 1, 3, vec![0.1, 0.2, 0.3]).unwrap();
        let t = apply_mapping(Mapping::Pointwise, &s).unwrap();
        assert_eq!(t.data(), &[0.8, 0.7, 0.9]);
    }

    #[test]
    fn contextual_step_edge_flips_within_one_column() {
        let k = 5;
        let s = RasterImage::from_fn(6, 12, 3, |_, c, _| if c >= k { 0.9 } else { 0.1 }).unwrap();
        let t = apply_mapping(Mapping::Contextual, &s).unwrap();
        for r in 0..6 {
            // mean at column k-1: 3 of 9 columns bright → 0.1·6/9 + 0.9·3/9 ≈ 0.367
            assert_eq!(t.pixel(r, k - 2), &LOW);
            assert_eq!(t.pixel(r, k - 1), &LOW);
            // column k: two bright columns of three → 0.633
            assert_eq!(t.pixel(r, k), &HIGH);
            assert_eq!(t.pixel(r, k + 1), &HIGH);
        }
    }

    #[test]
    fn mappings_match_direct_oracle() {
        for mapping in [Mapping::Pointwise, Mapping::Contextual, Mapping::Longrange] {
            for seed in 0..5 {
                let p = generate(&SynthSpec { seed, size: 17, mapping, noise_std: 0.05, ..Default::default() }).unwrap();
                assert_eq!(p.pair.target.data(), oracle(mapping, &p.clean).as_slice(), "{mapping:?} {seed}");
                if seed == 0 {
                    assert_ne!(p.pair.source, p.clean);
                }
            }
        }
    }

    #[test]
    fn longrange_is_not_local() {
        // identical 3×3 neighborhoods around (1,1), different brightest quadrant
        let a = RasterImage::from_fn(16, 16, 3, |r, c, _| if r >= 8 && c >= 8 { 0.9 } else { 0.2 }).unwrap();
        let b = RasterImage::from_fn(16, 16, 3, |_, _, _| 0.2).unwrap();
        let b = RasterImage::from_fn(16, 16, 3, |r, c, k| if r < 3 && c < 3 { 0.2 } else { b.get(r, c, k) * 0.5 }).unwrap();
        for dy in 0..3 {
            for dx in 0..3 {
                assert_eq!(a.pixel(dy, dx), b.pixel(dy, dx));
            }
        }
        let (ta, tb) = (apply_mapping(Mapping::Longrange, &a).unwrap(), apply_mapping(Mapping::Longrange, &b).unwrap());
        assert_ne!(ta.pixel(1, 1), tb.pixel(1, 1));
    }

    #[test]
    fn field_is_resolution_independent() {
        let f = BlobField::new(3, 6);
        let hr = f.render(64, 64).unwrap();
        let lr = f.render(32, 32).unwrap();
        assert_eq!(hr.dims(), (64, 64, 3));
        // a 32×32 cell center is the corner shared by four 64×64 cells
        let c = f.value(axis_coordinate(5, 32), axis_coordinate(7, 32));
        assert_eq!(lr.pixel(7, 5), &c);
        assert!(generate(&SynthSpec { size: 8, ..Default::default() }).is_err());
    }

    #[test]
    fn dataset_files_manifest_and_determinism() {
        let spec = SynthSpec { seed: 4, size: 16, mapping: Mapping::Contextual, ..Default::default() };
        let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let m = generate_dataset(&spec, 4, d1.path()).unwrap();
        generate_dataset(&spec, 4, d2.path()).unwrap();
        assert_eq!(m.pairs.len(), 4);
        assert_eq!(m.pairs[3].seed, 7);
        let pngs = std::fs::read_dir(d1.path()).unwrap().filter(|e| e.as_ref().unwrap().path().extension().unwrap() == "png").count();
        assert_eq!(pngs, 8);
        for e in std::fs::read_dir(d1.path()).unwrap() {
            let name = e.unwrap().file_name();
            assert_eq!(std::fs::read(d1.path().join(&name)).unwrap(), std::fs::read(d2.path().join(&name)).unwrap());
        }
        let loaded = load_dataset(d1.path()).unwrap();
        assert_eq!(loaded.len(), 4);
        assert!(loaded.iter().all(|p| p.source.dims() == (16, 16, 3) && p.target.dims() == (16, 16, 3)));
        std::fs::remove_file(d1.path().join("manifest.json")).unwrap();
        assert_eq!(load_dataset(d1.path()).unwrap().len(), 4);
    }
}
