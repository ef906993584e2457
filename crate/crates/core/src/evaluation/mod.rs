//! Staining-accuracy evaluation: texture (PSNR, SSIM, MSE), distribution
//! (FID with a pluggable embedder) and segmentation metrics on masks derived
//! from mIF channels or from the DAB component of IHC images.

mod distribution;
mod mask;
mod otsu;
mod report;
mod segmentation;
mod stain;
mod texture;

pub use distribution::{
    distribution_metrics, fid_from_embeddings, DistributionMetrics, Embedder, FlattenEmbedder, StatsEmbedder, COV_JITTER,
};
pub use mask::BinaryMask;
pub use otsu::{bin_of, dilate, histogram, median, otsu_threshold, threshold_mask, Morphology, Otsu};
pub use report::{
    evaluate_sets, image_masks, render_table, EmbedderKind, EvalConfig, EvalMode, MetricReport, TableFormat, REPORT_SCHEMA,
    TABLE_COLUMNS,
};
pub use segmentation::{directed_hausdorff, hausdorff, segmentation_metrics, squared_distance_transform, SegmentationMetrics};
pub use stain::{
    beer_lambert, color_deconvolution, ihc_dab_mask, mif_channel_masks, stain_matrix, MifMasks, StainKind, DAB, DAB_MIN_RANGE, EOSIN,
    HEMATOXYLIN, OD_EPS,
};
pub use texture::{mse, psnr, psnr_from_mse, quantize, ssim, texture_metrics, TextureMetrics, PSNR_CAP};
