//! Command-line front end: `generate-data`, `train`, `infer`, `evaluate` and
//! `report`.
//!
//! Structured settings come from a config file (`--config`, TOML or JSON by
//! extension); flags override the file, and the file overrides built-in
//! defaults. Failures print one line `error: <kind>: <message>` on stderr and
//! exit with status 1; malformed command lines print usage and exit with 2.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::evaluation::{
    evaluate_sets, image_masks, render_table, EvalConfig, EvalMode, MetricReport, TableFormat,
};
use crate::image::{BitDepth, RasterImage};
use crate::inference::{translate, Scale, Tiling};
use crate::model::ImplicitModel;
use crate::provenance::Provenance;
use crate::synth::{generate_dataset, load_dataset, Mapping, SynthSpec};
use crate::training::{TrainConfig, Trainer};

pub const CHECKPOINT_FILE: &str = "model.safetensors";
pub const HISTORY_FILE: &str = "loss_history.csv";
pub const RESOLVED_CONFIG_FILE: &str = "train_config.json";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Parser)]
#[command(name = "stainfield", version, about = "Implicit-function virtual staining: data, training, inference, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Config file (TOML, or JSON for `.json` paths).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output location.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic paired dataset with a manifest.
    GenerateData {
        /// Synthetic-task description; same format as `--config`.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        mapping: Option<Mapping>,
        #[arg(long)]
        size: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on a paired directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        /// Cap on optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Print the loss every this many steps (0 disables).
        #[arg(long, default_value_t = 50)]
        log_every: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Translate an image or a directory of images at a given scale.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output scale: integer, decimal or fraction (`4`, `0.5`, `3/2`).
        #[arg(long)]
        scale: Option<Scale>,
        /// Tile core size in pixels; omitted means whole-image inference.
        #[arg(long)]
        tile: Option<usize>,
        #[arg(long)]
        overlap: Option<usize>,
        /// Output bit depth, 8 or 16.
        #[arg(long)]
        depth: Option<u8>,
        /// Output container, `png` or `tiff`.
        #[arg(long)]
        format: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Compare predictions with references and write a metric report.
    Evaluate {
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long)]
        mode: Option<EvalMode>,
        /// Name of the model in the report; defaults to the prediction
        /// directory name.
        #[arg(long)]
        model: Option<String>,
        /// Write the binary masks of both sides as PNGs here.
        #[arg(long)]
        dump_masks: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Render one table row per report JSON.
    Report {
        reports: Vec<PathBuf>,
        /// `markdown` or `csv`.
        #[arg(long, default_value = "markdown")]
        format: TableFormat,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
struct Failure {
    kind: &'static str,
    message: String,
}

type Outcome<T> = std::result::Result<T, Failure>;

fn fail(kind: &'static str, message: impl Into<String>) -> Failure {
    Failure { kind, message: message.into() }
}

fn missing(flag: &str) -> Failure {
    fail("missing-flag", format!("--{flag} is required"))
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        let kind = match &e {
            crate::Error::InvalidArgument(_) => "invalid-argument",
            crate::Error::ShapeMismatch(_) => "shape-mismatch",
            crate::Error::Config(_) => "config",
            crate::Error::Checkpoint { .. } => "checkpoint",
            crate::Error::NonFiniteLoss { .. } => "non-finite-loss",
            crate::Error::Format { .. } => "format",
            crate::Error::Io(_) => "io",
            crate::Error::Image(_) => "image",
            crate::Error::Json(_) => "json",
        };
        fail(kind, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        fail("io", e.to_string())
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::GenerateData { spec, n, mapping, size, common } => generate(spec, n, mapping, size, common),
        Command::Train { data, steps, lr, log_every, common } => train(data, steps, lr, log_every, common),
        Command::Infer { checkpoint, input, scale, tile, overlap, depth, format, common } => {
            infer(checkpoint, input, InferFlags { scale, tile, overlap, depth, format }, common)
        }
        Command::Evaluate { pred, reference, mode, model, dump_masks, common } => {
            evaluate(pred, reference, mode, model, dump_masks, common)
        }
        Command::Report { reports, format, common } => report(reports, format, common),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, f.message.replace('\n', " "));
            1
        }
    }
}

fn load_config<T: DeserializeOwned>(path: &Path) -> Outcome<T> {
    let text = std::fs::read_to_string(path).map_err(|e| fail("io", format!("{}: {e}", path.display())))?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        serde_json::from_str(&text).map_err(|e| fail("config", format!("{}: {e}", path.display())))
    } else {
        toml::from_str(&text).map_err(|e| fail("config", format!("{}: {e}", path.display())))
    }
}

fn config_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Outcome<T> {
    path.map_or_else(|| Ok(T::default()), load_config)
}

fn generate(spec_path: Option<PathBuf>, n: Option<usize>, mapping: Option<Mapping>, size: Option<usize>, common: Common) -> Outcome<()> {
    let n = n.ok_or_else(|| missing("n"))?;
    let out = common.out.ok_or_else(|| missing("out"))?;
    let mut spec: SynthSpec = config_or_default(spec_path.as_deref().or(common.config.as_deref()))?;
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(m) = mapping {
        spec.mapping = m;
    }
    if let Some(s) = size {
        spec.size = s;
    }
    let manifest = generate_dataset(&spec, n, &out)?;
    Provenance::new("generate-data", Some(spec.seed), &spec)?.write_for(out.join("manifest.json"))?;
    println!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
    Ok(())
}

fn train(data: Option<PathBuf>, steps: Option<usize>, lr: Option<f64>, log_every: usize, common: Common) -> Outcome<()> {
    let data = data.ok_or_else(|| missing("data"))?;
    let out = common.out.ok_or_else(|| missing("out"))?;
    let mut cfg: TrainConfig = config_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.model.seed = s;
    }
    if steps.is_some() {
        cfg.max_steps = steps;
    }
    if let Some(lr) = lr {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;
    let dataset = load_dataset(&data)?;
    std::fs::create_dir_all(&out)?;
    let mut prov = Provenance::new("train", Some(cfg.seed), &cfg)?;
    let manifest = data.join("manifest.json");
    if manifest.exists() {
        prov.add_input(&manifest)?;
    }
    let checkpoint_every = cfg.checkpoint_every;
    let mut trainer = Trainer::new(cfg.clone())?;
    trainer.run(&dataset, |t| {
        let rec = t.history().last().expect("a step was recorded");
        if log_every > 0 && rec.step % log_every == 0 {
            eprintln!("step {} total {:.6} implicit {:.6} perceptual {:.6}", rec.step, rec.total, rec.implicit_loss, rec.perceptual_loss);
        }
        if let Some(every) = checkpoint_every {
            if rec.step % every == 0 {
                let path = out.join(format!("checkpoint_step{:06}.safetensors", rec.step));
                t.save_checkpoint(&path)?;
                prov.write_for(&path)?;
            }
        }
        Ok(())
    })?;
    let ckpt = out.join(CHECKPOINT_FILE);
    trainer.save_checkpoint(&ckpt)?;
    prov.write_for(&ckpt)?;
    let hist = out.join(HISTORY_FILE);
    trainer.write_history(&hist)?;
    prov.write_for(&hist)?;
    std::fs::write(out.join(RESOLVED_CONFIG_FILE), serde_json::to_string_pretty(&cfg).map_err(crate::Error::from)? + "\n")?;
    let last = trainer.history().last().map_or(f64::NAN, |r| r.total);
    println!("trained {} steps, final loss {last:.6}, checkpoint {}", trainer.steps(), ckpt.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum OutputFormat {
    #[default]
    Png,
    Tiff,
}

impl OutputFormat {
    fn extension(self) -> &'static str {
        match self {
            Self::Png => "png",
            Self::Tiff => "tiff",
        }
    }
}

/// Inference settings as read from `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct InferConfig {
    scale: Scale,
    tiling: Option<Tiling>,
    bit_depth: u8,
    format: OutputFormat,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self { scale: Scale::one(), tiling: None, bit_depth: 16, format: OutputFormat::Png }
    }
}

struct InferFlags {
    scale: Option<Scale>,
    tile: Option<usize>,
    overlap: Option<usize>,
    depth: Option<u8>,
    format: Option<String>,
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "tif" | "tiff"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Source,
    Target,
}

/// Images under `path` keyed by pair id. A paired directory (manifest, or
/// `<id>_source`/`<id>_target` files) contributes the files of `role`; any
/// other directory contributes every image, keyed by file stem.
fn collect_images(path: &Path, role: Role) -> Outcome<BTreeMap<String, PathBuf>> {
    let suffix = match role {
        Role::Source => "_source",
        Role::Target => "_target",
    };
    let key = |p: &Path| {
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        stem.strip_suffix(suffix).map(str::to_string).unwrap_or(stem)
    };
    if path.is_file() {
        return Ok(BTreeMap::from([(key(path), path.to_path_buf())]));
    }
    if !path.is_dir() {
        return Err(fail("io", format!("{} does not exist", path.display())));
    }
    let manifest = path.join("manifest.json");
    if manifest.exists() {
        let m: crate::synth::Manifest = load_config(&manifest)?;
        return Ok(m
            .pairs
            .into_iter()
            .map(|e| {
                let file = if role == Role::Source { e.source } else { e.target };
                (e.id, path.join(file))
            })
            .collect());
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image(p))
        .collect();
    let paired = files.iter().any(|p| p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with(suffix)));
    if paired {
        files.retain(|p| p.file_stem().is_some_and(|s| s.to_string_lossy().ends_with(suffix)));
    }
    let map: BTreeMap<String, PathBuf> = files.into_iter().map(|p| (key(&p), p)).collect();
    if map.is_empty() {
        return Err(fail("invalid-argument", format!("no images found in {}", path.display())));
    }
    Ok(map)
}

fn infer(checkpoint: Option<PathBuf>, input: Option<PathBuf>, flags: InferFlags, common: Common) -> Outcome<()> {
    let checkpoint = checkpoint.ok_or_else(|| missing("checkpoint"))?;
    let input = input.ok_or_else(|| missing("input"))?;
    let out = common.out.ok_or_else(|| missing("out"))?;
    let mut cfg: InferConfig = config_or_default(common.config.as_deref())?;
    if let Some(s) = flags.scale {
        cfg.scale = s;
    }
    if let Some(t) = flags.tile {
        cfg.tiling = Some(Tiling { tile: t, overlap: cfg.tiling.map_or(Tiling::new(t).overlap, |x| x.overlap) });
    }
    if let Some(o) = flags.overlap {
        let t = cfg.tiling.as_mut().ok_or_else(|| fail("invalid-argument", "--overlap needs --tile"))?;
        t.overlap = o;
    }
    if let Some(d) = flags.depth {
        cfg.bit_depth = d;
    }
    if let Some(f) = flags.format {
        cfg.format = match f.to_ascii_lowercase().as_str() {
            "png" => OutputFormat::Png,
            "tif" | "tiff" => OutputFormat::Tiff,
            other => return Err(fail("invalid-argument", format!("unknown output format `{other}`"))),
        };
    }
    let depth = match cfg.bit_depth {
        8 => BitDepth::Eight,
        16 => BitDepth::Sixteen,
        other => return Err(fail("invalid-argument", format!("bit depth must be 8 or 16, got {other}"))),
    };
    let model = ImplicitModel::load(&checkpoint)?;
    let inputs = collect_images(&input, Role::Source)?;
    std::fs::create_dir_all(&out)?;
    let record = serde_json::json!({ "infer": &cfg, "model": model.config() });
    let base = Provenance::new("infer", common.seed, &record)?.with_checkpoint(&checkpoint)?;
    for (id, path) in &inputs {
        let image = RasterImage::load(path)?;
        let pred = translate(&model, &image, cfg.scale, cfg.tiling)?;
        let dest = out.join(format!("{id}.{}", cfg.format.extension()));
        pred.save(&dest, depth)?;
        let mut prov = base.clone();
        prov.add_input(path)?;
        prov.write_for(&dest)?;
    }
    println!("translated {} image(s) at scale {} into {}", inputs.len(), cfg.scale, out.display());
    Ok(())
}

fn evaluate(
    pred: Option<PathBuf>,
    reference: Option<PathBuf>,
    mode: Option<EvalMode>,
    model: Option<String>,
    dump_masks: Option<PathBuf>,
    common: Common,
) -> Outcome<()> {
    let pred = pred.ok_or_else(|| missing("pred"))?;
    let reference = reference.ok_or_else(|| missing("ref"))?;
    let out = common.out.ok_or_else(|| missing("out"))?;
    let out = if out.is_dir() { out.join(REPORT_FILE) } else { out };
    let mut cfg: EvalConfig = config_or_default(common.config.as_deref())?;
    if let Some(m) = mode {
        cfg.mode = m;
    }
    let preds = collect_images(&pred, Role::Source)?;
    let refs = collect_images(&reference, Role::Target)?;
    let mut prov = Provenance::new("evaluate", common.seed, &cfg)?;
    let (mut p_imgs, mut r_imgs, mut ids) = (Vec::new(), Vec::new(), Vec::new());
    for (id, p) in &preds {
        let r = refs.get(id).ok_or_else(|| fail("invalid-argument", format!("no reference image for `{id}`")))?;
        p_imgs.push(RasterImage::load(p)?);
        r_imgs.push(RasterImage::load(r)?);
        prov.inputs.insert(format!("pred/{}", file_name(p)), crate::provenance::file_sha256(p)?);
        prov.inputs.insert(format!("ref/{}", file_name(r)), crate::provenance::file_sha256(r)?);
        ids.push(id.clone());
    }
    let name = model.unwrap_or_else(|| file_name(&pred));
    let report = evaluate_sets(&p_imgs, &r_imgs, &name, &cfg)?;
    if let Some(dir) = dump_masks {
        std::fs::create_dir_all(&dir)?;
        for ((id, p), r) in ids.iter().zip(&p_imgs).zip(&r_imgs) {
            for (side, img) in [("pred", p), ("ref", r)] {
                for (channel, mask) in image_masks(img, cfg.mode, &cfg.morphology)? {
                    let dest = dir.join(format!("{id}_{channel}_{side}.png"));
                    mask.to_image().save(&dest, BitDepth::Eight)?;
                }
            }
        }
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&out, serde_json::to_string_pretty(&report).map_err(crate::Error::from)? + "\n")?;
    prov.write_for(&out)?;
    print!("{}", render_table(std::slice::from_ref(&report), TableFormat::Markdown));
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

fn report(paths: Vec<PathBuf>, format: TableFormat, common: Common) -> Outcome<()> {
    if paths.is_empty() {
        return Err(fail("missing-argument", "at least one report JSON is required"));
    }
    let mut reports = Vec::with_capacity(paths.len());
    let mut prov = Provenance::new("report", common.seed, &serde_json::json!({ "format": format!("{format:?}").to_lowercase() }))?;
    for p in &paths {
        let r: MetricReport = load_config(p)?;
        prov.add_input(p)?;
        reports.push(r);
    }
    let table = render_table(&reports, format);
    if let Some(out) = common.out {
        if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&out, &table)?;
        prov.write_for(&out)?;
    }
    print!("{table}");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_two_and_missing_flags_exit_one() {
        assert_eq!(run(["stainfield", "frobnicate"]), 2);
        assert_eq!(run(["stainfield", "train", "--bogus"]), 2);
        assert_eq!(run(["stainfield", "train", "--out", "/nonexistent"]), 1);
        assert_eq!(run(["stainfield", "report"]), 1);
    }

    #[test]
    fn paired_directories_are_keyed_by_id() {
        let dir = tempfile::tempdir().unwrap();
        let img = RasterImage::filled(4, 4, 3, 0.5).unwrap();
        for name in ["a_source.png", "a_target.png", "b_source.png", "b_target.png"] {
            img.save(dir.path().join(name), BitDepth::Eight).unwrap();
        }
        let src = collect_images(dir.path(), Role::Source).unwrap();
        assert_eq!(src.keys().collect::<Vec<_>>(), ["a", "b"]);
        assert!(src["a"].ends_with("a_source.png"));
        let tgt = collect_images(dir.path(), Role::Target).unwrap();
        assert!(tgt["b"].ends_with("b_target.png"));
    }
}
