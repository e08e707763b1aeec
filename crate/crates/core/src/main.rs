use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tripath::data::{load_manifest, synth_dataset, Split, SynthOptions};
use tripath::harness::{
    ablate, evaluate, export_predictions, gradcam, load_checkpoint, metrics_from_dirs, predict_masks, train,
    write_gradcam, PathSelector, RunConfig,
};

#[derive(Parser)]
#[command(name = "tripath", version, about = "Multi-class change detection on bi-temporal image pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        val: usize,
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[arg(long, default_value_t = 8)]
        patch: usize,
    },
    /// Train a model.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint on a split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Dataset directory; defaults to the one the checkpoint was trained on.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and score the baseline, +MLHA and +Path+MLHA variants.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Write predicted class maps (and comparison images when labeled).
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Grad-CAM heatmaps for one sample.
    Gradcam {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long = "class")]
        target_class: usize,
        /// `backbone`, `third_path` or `both`.
        #[arg(long, default_value = "both")]
        path: String,
        #[arg(long, default_value = "val")]
        split: Split,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Score a directory of predicted masks against ground truth.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Change classes N; read from the dataset manifest next to `gt` when omitted.
        #[arg(long)]
        classes: Option<usize>,
    },
}

fn run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common, fallback: &Path) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| fallback.to_path_buf());
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, &text)?;
    println!("{text}");
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { common, count, size, classes, val, test, patch } => {
            let root = common.out.clone().context("--out is required")?;
            let mut opts = SynthOptions::new(common.seed.unwrap_or(7), count, size, classes);
            opts.val_count = val;
            opts.test_count = test;
            opts.patch_size = patch;
            let m = synth_dataset(&root, &opts)?;
            info!("wrote {} training pairs to {}", m.len(), root.display());
        }
        Command::Train { common } => {
            let cfg = run_config(&common)?;
            let outcome = train(&cfg)?;
            info!("best {:?}; checkpoints in {}", outcome.best, cfg.output_dir.display());
        }
        Command::Eval { common, checkpoint, split, data } => {
            let ck = load_checkpoint(&checkpoint)?;
            let root = data.unwrap_or(ck.config.data.root.clone());
            let manifest = load_manifest(&root, split)?;
            let (report, _) = evaluate(&ck.model, &manifest, &ck.config.data.normalization, ck.config.optim.batch_size)?;
            let dir = out_dir(&common, checkpoint.parent().unwrap_or(Path::new(".")))?;
            write_json(&dir.join(format!("metrics_{split}.json")), &report)?;
        }
        Command::Ablate { common } => {
            let cfg = run_config(&common)?;
            let table = ablate(&cfg)?;
            println!("{}", table.to_markdown());
        }
        Command::Predict { common, checkpoint, split, data } => {
            let ck = load_checkpoint(&checkpoint)?;
            let root = data.unwrap_or(ck.config.data.root.clone());
            let manifest = load_manifest(&root, split)?;
            let preds = predict_masks(&ck.model, &manifest, &ck.config.data.normalization, ck.config.optim.batch_size)?;
            let dir = out_dir(&common, &ck.config.output_dir.join(format!("predict_{split}")))?;
            export_predictions(&dir, &manifest, &preds)?;
            info!("wrote {} predictions to {}", preds.len(), dir.display());
        }
        Command::Gradcam { common, checkpoint, sample, target_class, path, split, data } => {
            let ck = load_checkpoint(&checkpoint)?;
            let root = data.unwrap_or(ck.config.data.root.clone());
            let manifest = load_manifest(&root, split)?;
            let idx = manifest
                .index_of(&sample)
                .with_context(|| format!("sample `{sample}` is not in the {split} split"))?;
            let pair = manifest.load_pair(idx)?;
            let selectors: Vec<PathSelector> = match path.as_str() {
                "both" => PathSelector::ALL.to_vec(),
                p => vec![p.parse()?],
            };
            let mut maps = Vec::new();
            for sel in selectors {
                maps.push((sel, gradcam(&ck.model, &pair, &ck.config.data.normalization, target_class, sel)?));
            }
            let dir = out_dir(&common, &ck.config.output_dir.join("gradcam"))?;
            write_gradcam(&dir, &format!("{sample}_class{target_class}"), &pair.image_t2, &maps)?;
            info!("wrote heatmaps to {}", dir.display());
        }
        Command::Metrics { common, pred, gt, classes } => {
            let (n, names) = match classes {
                Some(n) => (n, (1..=n).map(|c| format!("change_{c}")).collect()),
                None => {
                    let root = gt.parent().context("cannot locate the dataset manifest")?;
                    let m = load_manifest(root, Split::Train)?;
                    (m.num_classes, m.class_names)
                }
            };
            if n == 0 {
                bail!("--classes must be at least 1");
            }
            let report = metrics_from_dirs(&pred, &gt, n, &names)?;
            let dir = out_dir(&common, Path::new("."))?;
            write_json(&dir.join("metrics.json"), &report)?;
        }
    }
    Ok(())
}
