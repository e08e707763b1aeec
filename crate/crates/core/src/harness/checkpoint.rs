//! Single-file training checkpoints.
//!
//! A checkpoint is a tensor archive with these entries:
//!
//! ```text
//! param/<name>     every model weight, frozen ones included
//! buffer/<name>    batch-norm running statistics
//! adam_m/<name>    optimizer first moments
//! adam_v/<name>    optimizer second moments
//! ```
//!
//! and a metadata block
//! `{config, epoch, optimizer_steps, best_metric, frozen_fingerprint}`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tripath_autograd::{AdamW, Module};

use super::config::RunConfig;
use crate::archive::TensorArchive;
use crate::error::{Error, Result};
use crate::model::TriPathModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMetric {
    pub name: String,
    pub value: Option<f64>,
    pub epoch: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Meta {
    config: RunConfig,
    epoch: usize,
    optimizer_steps: u64,
    best_metric: Option<BestMetric>,
    frozen_fingerprint: String,
}

/// A restored training state.
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: TriPathModel,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub best_metric: Option<BestMetric>,
    pub frozen_fingerprint: String,
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &RunConfig,
    model: &TriPathModel,
    optimizer: &AdamW,
    epoch: usize,
    best_metric: Option<&BestMetric>,
) -> Result<()> {
    let meta = Meta {
        config: config.clone(),
        epoch,
        optimizer_steps: optimizer.steps_taken(),
        best_metric: best_metric.cloned(),
        frozen_fingerprint: model.frozen_fingerprint(),
    };
    let mut ar = TensorArchive::new(serde_json::to_value(meta)?);
    for p in model.params() {
        ar.insert(format!("param/{}", p.name()), p.value().clone());
    }
    for b in model.buffers() {
        ar.insert(format!("buffer/{}", b.name()), b.get());
    }
    for (name, (m, v)) in optimizer.moments() {
        ar.insert(format!("adam_m/{name}"), m.clone());
        ar.insert(format!("adam_v/{name}"), v.clone());
    }
    ar.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let ar = TensorArchive::load(path.as_ref())?;
    let meta: Meta = serde_json::from_value(ar.metadata.clone())
        .map_err(|e| Error::Checkpoint(format!("bad metadata in {}: {e}", path.as_ref().display())))?;
    let mut model = TriPathModel::new(&meta.config.model, meta.config.seed)?;
    for p in model.params_mut() {
        let key = format!("param/{}", p.name());
        let t = ar.tensors.get(&key).ok_or(Error::MissingTensor(key))?;
        if t.shape() != p.shape() {
            return Err(Error::ShapeMismatch(format!("`{}`: {:?} vs {:?}", p.name(), t.shape(), p.shape())));
        }
        p.set_value(t.clone());
    }
    for b in model.buffers() {
        let key = format!("buffer/{}", b.name());
        let t = ar.tensors.get(&key).ok_or(Error::MissingTensor(key))?;
        b.set(t.clone());
    }
    let fp = model.frozen_fingerprint();
    if fp != meta.frozen_fingerprint {
        return Err(Error::Checkpoint(format!(
            "frozen weights do not match the recorded fingerprint ({fp} vs {})",
            meta.frozen_fingerprint
        )));
    }
    let mut moments = BTreeMap::new();
    for (key, m) in &ar.tensors {
        if let Some(name) = key.strip_prefix("adam_m/") {
            let v = ar
                .tensors
                .get(&format!("adam_v/{name}"))
                .ok_or_else(|| Error::MissingTensor(format!("adam_v/{name}")))?;
            moments.insert(name.to_string(), (m.clone(), v.clone()));
        }
    }
    let mut optimizer = AdamW::new(meta.config.optim.lr, meta.config.optim.weight_decay);
    optimizer.restore(meta.optimizer_steps, moments);
    Ok(Checkpoint {
        config: meta.config,
        model,
        optimizer,
        epoch: meta.epoch,
        best_metric: meta.best_metric,
        frozen_fingerprint: meta.frozen_fingerprint,
    })
}
