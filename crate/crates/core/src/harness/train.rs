use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use log::info;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};
use tripath_autograd::{no_grad, AdamW, Module};

use super::checkpoint::{save_checkpoint, BestMetric};
use super::config::RunConfig;
use crate::data::{load_manifest, make_batches, DatasetManifest, Normalization};
use crate::error::{Error, Result};
use crate::loss::{argmax_classes, total_loss};
use crate::metrics::{ConfusionMatrix, MetricsReport};
use crate::model::TriPathModel;
use crate::nn::Phase;

pub const TRAIN_LOG: &str = "train_log.jsonl";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(rename = "OA")]
    pub oa: Option<f64>,
    #[serde(rename = "mIoU")]
    pub miou: Option<f64>,
    #[serde(rename = "SeK")]
    pub sek: Option<f64>,
    #[serde(rename = "F_scd")]
    pub f_scd: Option<f64>,
}

pub struct TrainOutcome {
    pub model: TriPathModel,
    pub history: Vec<EpochRecord>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub best: Option<BestMetric>,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub fingerprint_before: String,
    pub fingerprint_after: String,
}

/// Load the configured manifests and reconcile the class count.
fn prepare(config: &RunConfig) -> Result<(RunConfig, DatasetManifest, Option<DatasetManifest>)> {
    config.validate()?;
    let train = load_manifest(&config.data.root, config.data.train_split)?;
    let val = match load_manifest(&config.data.root, config.data.val_split) {
        Ok(m) if !m.is_empty() && m.labeled => Some(m),
        Ok(_) => None,
        Err(e) => return Err(e),
    };
    let mut config = config.clone();
    config.model.num_classes = train.num_classes;
    Ok((config, train, val))
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let (config, train_set, val_set) = prepare(config)?;
    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    config.save(out.join("config.json"))?;

    let mut model = TriPathModel::new(&config.model, config.seed)?;
    let fingerprint_before = model.frozen_fingerprint();
    let o = &config.optim;
    let mut optimizer = AdamW::new(o.lr, o.weight_decay);
    let loader = make_batches(&train_set, o.batch_size, config.data.augment, config.seed)?
        .with_normalization(config.data.normalization)
        .preload()?;
    let val_set = val_set.as_ref().unwrap_or(&train_set);
    info!(
        "training {} trainable / {} total parameters on {} pairs",
        model.trainable_params().iter().map(|p| p.numel()).sum::<usize>(),
        model.num_params(),
        train_set.len()
    );

    let mut log = BufWriter::new(File::create(out.join(TRAIN_LOG))?);
    let mut history = Vec::new();
    let mut step_losses = Vec::new();
    let mut best: Option<BestMetric> = None;
    let best_path = out.join(BEST_CHECKPOINT);
    let last_path = out.join(LAST_CHECKPOINT);
    let max_steps = o.max_steps.unwrap_or(usize::MAX);

    for epoch in 0..o.epochs {
        let mut epoch_losses = Vec::new();
        for batch in loader.epoch(epoch as u64) {
            if step_losses.len() >= max_steps {
                break;
            }
            let batch = batch?;
            let masks = batch.masks.as_ref().ok_or_else(|| Error::InvalidArg("training split is unlabeled".into()))?;
            let output = model.forward(&batch.t1, &batch.t2, Phase::Train)?;
            let loss = total_loss(&output.logits, masks.view(), &config.loss)?;
            let value = loss.total.item();
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss(batch.sample_ids.join(", ")));
            }
            let grads = loss.total.backward();
            optimizer.step(model.params_mut(), &grads);
            epoch_losses.push(value);
            step_losses.push(value);
        }
        let done = step_losses.len() >= max_steps || epoch + 1 == o.epochs;
        if epoch_losses.is_empty() {
            break;
        }
        let train_loss = epoch_losses.iter().sum::<f64>() / epoch_losses.len() as f64;
        let report = if (epoch + 1) % o.validate_every == 0 || done {
            Some(evaluate(&model, val_set, &config.data.normalization, o.batch_size)?.0)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            oa: report.as_ref().and_then(|r| r.oa),
            miou: report.as_ref().and_then(|r| r.miou),
            sek: report.as_ref().and_then(|r| r.sek),
            f_scd: report.as_ref().and_then(|r| r.f_scd),
        };
        writeln!(log, "{}", serde_json::to_string(&record)?)?;
        log.flush()?;
        info!("epoch {epoch}: loss {train_loss:.5}, mIoU {:?}", record.miou);
        if report.is_some() {
            let value = record.miou;
            let improved = match &best {
                None => true,
                Some(b) => value.unwrap_or(f64::NEG_INFINITY) > b.value.unwrap_or(f64::NEG_INFINITY),
            };
            if improved {
                best = Some(BestMetric { name: "mIoU".into(), value, epoch });
                save_checkpoint(&best_path, &config, &model, &optimizer, epoch, best.as_ref())?;
            }
        }
        history.push(record);
        if done {
            break;
        }
    }
    let last_epoch = history.last().map(|r| r.epoch).unwrap_or(0);
    save_checkpoint(&last_path, &config, &model, &optimizer, last_epoch, best.as_ref())?;
    let fingerprint_after = model.frozen_fingerprint();
    Ok(TrainOutcome {
        model,
        history,
        step_losses,
        best,
        best_checkpoint: best_path,
        last_checkpoint: last_path,
        fingerprint_before,
        fingerprint_after,
    })
}

/// Predicted label maps keyed by sample id, in manifest order.
pub type Predictions = Vec<(String, Array2<u8>)>;

/// Per-sample predicted class maps, in manifest order.
pub fn predict_masks(
    model: &TriPathModel,
    manifest: &DatasetManifest,
    norm: &Normalization,
    batch_size: usize,
) -> Result<Predictions> {
    let loader = make_batches(manifest, batch_size, false, 0)?.with_normalization(*norm).sequential();
    let mut out = Vec::with_capacity(manifest.len());
    no_grad(|| {
        for batch in loader.epoch(0) {
            let batch = batch?;
            let logits = model.forward(&batch.t1, &batch.t2, Phase::Eval)?.logits;
            let pred = argmax_classes(logits.value());
            for (id, p) in batch.sample_ids.iter().zip(pred.axis_iter(Axis(0))) {
                out.push((id.clone(), p.to_owned()));
            }
        }
        Ok(out)
    })
}

/// Metrics over a labeled manifest, plus the predictions they came from.
pub fn evaluate(
    model: &TriPathModel,
    manifest: &DatasetManifest,
    norm: &Normalization,
    batch_size: usize,
) -> Result<(MetricsReport, Predictions)> {
    if !manifest.labeled {
        return Err(Error::InvalidArg(format!("split `{}` has no labels", manifest.split)));
    }
    let preds = predict_masks(model, manifest, norm, batch_size)?;
    let mut pairs = Vec::with_capacity(preds.len());
    for (i, (_, p)) in preds.iter().enumerate() {
        let gt = manifest.load_pair(i)?.mask.expect("labeled split");
        pairs.push((p.iter().copied().collect::<Vec<u8>>(), gt.iter().copied().collect::<Vec<u8>>()));
    }
    let cm = ConfusionMatrix::from_pairs(manifest.num_classes, &pairs)?;
    Ok((cm.report(&manifest.class_names), preds))
}
