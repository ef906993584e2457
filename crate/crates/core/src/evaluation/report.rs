//! Set-level evaluation and metric tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::distribution::{distribution_metrics, DistributionMetrics, Embedder, FlattenEmbedder, StatsEmbedder};
use super::mask::BinaryMask;
use super::otsu::Morphology;
use super::segmentation::{segmentation_metrics, SegmentationMetrics};
use super::stain::{ihc_dab_mask, mif_channel_masks};
use super::texture::{texture_metrics, TextureMetrics};
use crate::error::{invalid, shape, Error, Result};
use crate::image::RasterImage;

pub const REPORT_SCHEMA: u32 = 1;

/// Which metric families to compute. `texture` also includes the
/// distribution metric; `all` runs every family, both mask pipelines
/// included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Mif,
    Ihc,
    Texture,
    #[default]
    All,
}

impl EvalMode {
    fn texture(self) -> bool {
        matches!(self, Self::Texture | Self::All)
    }

    fn mif(self) -> bool {
        matches!(self, Self::Mif | Self::All)
    }

    fn ihc(self) -> bool {
        matches!(self, Self::Ihc | Self::All)
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mif" => Ok(Self::Mif),
            "ihc" => Ok(Self::Ihc),
            "texture" => Ok(Self::Texture),
            "all" => Ok(Self::All),
            other => Err(invalid(format!("unknown evaluation mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Stats,
    Flatten,
}

impl EmbedderKind {
    pub fn build(self) -> Box<dyn Embedder> {
        match self {
            Self::Stats => Box::new(StatsEmbedder),
            Self::Flatten => Box::new(FlattenEmbedder),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub mode: EvalMode,
    pub morphology: Morphology,
    pub embedder: EmbedderKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub model: String,
    pub n_images: usize,
    pub mode: EvalMode,
    /// Per-image values averaged over the set.
    pub texture: Option<TextureMetrics>,
    pub distribution: Option<DistributionMetrics>,
    /// Per mask channel, per-image values averaged over the set.
    pub segmentation: BTreeMap<String, SegmentationMetrics>,
    pub conventions: Vec<String>,
}

impl MetricReport {
    /// Mean of one segmentation field over channels.
    pub fn segmentation_mean(&self, f: impl Fn(&SegmentationMetrics) -> f64) -> Option<f64> {
        if self.segmentation.is_empty() {
            return None;
        }
        Some(self.segmentation.values().map(f).sum::<f64>() / self.segmentation.len() as f64)
    }
}

/// Named masks of one image under `mode`.
pub fn image_masks(image: &RasterImage, mode: EvalMode, morph: &Morphology) -> Result<Vec<(String, BinaryMask)>> {
    let mut out = Vec::new();
    if mode.mif() {
        let m = mif_channel_masks(image, morph)?;
        out.extend(m.named().into_iter().map(|(n, mask)| (n.to_string(), mask.clone())));
    }
    if mode.ihc() {
        out.push(("dab".to_string(), ihc_dab_mask(image)?.0));
    }
    Ok(out)
}

fn mean_texture(v: &[TextureMetrics]) -> TextureMetrics {
    let n = v.len() as f64;
    TextureMetrics {
        psnr: v.iter().map(|m| m.psnr).sum::<f64>() / n,
        ssim: v.iter().map(|m| m.ssim).sum::<f64>() / n,
        mse: v.iter().map(|m| m.mse).sum::<f64>() / n,
    }
}

fn mean_segmentation(v: &[SegmentationMetrics]) -> SegmentationMetrics {
    let n = v.len() as f64;
    let avg = |f: fn(&SegmentationMetrics) -> f64| v.iter().map(f).sum::<f64>() / n;
    SegmentationMetrics {
        dice: avg(|m| m.dice),
        iou: avg(|m| m.iou),
        hd: avg(|m| m.hd),
        tpr: avg(|m| m.tpr),
        tnr: avg(|m| m.tnr),
    }
}

/// Evaluates predictions against references paired by position.
pub fn evaluate_sets(pred: &[RasterImage], reference: &[RasterImage], model: &str, cfg: &EvalConfig) -> Result<MetricReport> {
    if pred.is_empty() || pred.len() != reference.len() {
        return Err(shape(format!("{} predictions for {} references", pred.len(), reference.len())));
    }
    let mut conventions = Vec::new();
    let (texture, distribution) = if cfg.mode.texture() {
        let t = pred.iter().zip(reference).map(|(p, r)| texture_metrics(p, r)).collect::<Result<Vec<_>>>()?;
        let d = distribution_metrics(pred, reference, cfg.embedder.build().as_ref())?;
        conventions.push("texture metrics on 8-bit levels; PSNR capped at 100 dB".to_string());
        if d.regularized {
            conventions.push(format!("FID covariances regularized by {}·I (set smaller than embedding)", super::distribution::COV_JITTER));
        }
        (Some(mean_texture(&t)), Some(d))
    } else {
        (None, None)
    };
    let mut per_channel: BTreeMap<String, Vec<SegmentationMetrics>> = BTreeMap::new();
    if cfg.mode.mif() || cfg.mode.ihc() {
        for (p, r) in pred.iter().zip(reference) {
            let pm = image_masks(p, cfg.mode, &cfg.morphology)?;
            let rm = image_masks(r, cfg.mode, &cfg.morphology)?;
            for ((name, a), (_, b)) in pm.iter().zip(&rm) {
                per_channel.entry(name.clone()).or_default().push(segmentation_metrics(a, b)?);
            }
        }
        conventions.push("both masks empty: dice=iou=1, hd=0; one mask empty: dice=iou=0, hd=image diagonal".to_string());
        conventions.push("empty tpr/tnr denominators count as 1".to_string());
    }
    Ok(MetricReport {
        schema_version: REPORT_SCHEMA,
        model: model.to_string(),
        n_images: pred.len(),
        mode: cfg.mode,
        texture,
        distribution,
        segmentation: per_channel.into_iter().map(|(k, v)| (k, mean_segmentation(&v))).collect(),
        conventions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Csv,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            other => Err(invalid(format!("unknown table format `{other}`"))),
        }
    }
}

pub const TABLE_COLUMNS: [&str; 8] = ["Model", "PSNR", "SSIM", "MSE", "FID", "Dice", "IoU", "HD"];

/// One row per report; missing metrics are left blank (`-` in Markdown).
pub fn render_table(reports: &[MetricReport], format: TableFormat) -> String {
    let blank = if format == TableFormat::Markdown { "-" } else { "" };
    let num = |v: Option<f64>, digits: usize| v.map_or(blank.to_string(), |x| format!("{x:.digits$}"));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.model.clone(),
                num(r.texture.map(|t| t.psnr), 2),
                num(r.texture.map(|t| t.ssim), 4),
                num(r.texture.map(|t| t.mse), 2),
                num(r.distribution.as_ref().map(|d| d.fid), 4),
                num(r.segmentation_mean(|m| m.dice), 4),
                num(r.segmentation_mean(|m| m.iou), 4),
                num(r.segmentation_mean(|m| m.hd), 2),
            ]
        })
        .collect();
    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", TABLE_COLUMNS.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
            for row in rows {
                let _ = writeln!(out, "| {} |", row.join(" | "));
            }
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(TABLE_COLUMNS).expect("in-memory write");
            for row in rows {
                w.write_record(&row).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn images(n: usize, v: f64) -> Vec<RasterImage> {
        (0..n)
            .map(|i| RasterImage::from_fn(16, 16, 3, |r, c, k| if (r + i) % 8 < 4 && c > 3 { v } else { 0.05 * k as f64 }).unwrap())
            .collect()
    }

    #[test]
    fn self_evaluation_is_perfect() {
        let a = images(3, 0.9);
        let r = evaluate_sets(&a, &a, "ref", &EvalConfig::default()).unwrap();
        assert_eq!(r.texture.unwrap().psnr, 100.0);
        assert!(r.distribution.as_ref().unwrap().fid <= 1e-6);
        assert_eq!(r.segmentation.keys().collect::<Vec<_>>(), vec!["cd3", "dab", "dapi", "panck"]);
        assert!(r.segmentation.values().all(|m| m.dice == 1.0 && m.hd == 0.0));
    }

    #[test]
    fn mode_selects_families() {
        let a = images(2, 0.9);
        let t = evaluate_sets(&a, &a, "m", &EvalConfig { mode: EvalMode::Texture, ..Default::default() }).unwrap();
        assert!(t.segmentation.is_empty() && t.texture.is_some());
        let m = evaluate_sets(&a, &a, "m", &EvalConfig { mode: EvalMode::Mif, ..Default::default() }).unwrap();
        assert!(m.texture.is_none() && m.segmentation.len() == 3);
        assert!(evaluate_sets(&a, &a[..1], "m", &EvalConfig::default()).is_err());
    }

    #[test]
    fn table_has_one_row_per_report() {
        let a = images(2, 0.9);
        let b = images(2, 0.6);
        let cfg = EvalConfig::default();
        let reports = vec![evaluate_sets(&a, &a, "alpha", &cfg).unwrap(), evaluate_sets(&b, &a, "beta", &cfg).unwrap()];
        let md = render_table(&reports, TableFormat::Markdown);
        let lines: Vec<&str> = md.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], "| Model | PSNR | SSIM | MSE | FID | Dice | IoU | HD |");
        assert!(lines[3].starts_with("| beta |"));
        let csv = render_table(&reports, TableFormat::Csv);
        assert_eq!(csv.lines().next().unwrap(), "Model,PSNR,SSIM,MSE,FID,Dice,IoU,HD");
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn report_json_round_trip() {
        let a = images(2, 0.9);
        let r = evaluate_sets(&a, &a, "x", &EvalConfig::default()).unwrap();
        let back: MetricReport = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
