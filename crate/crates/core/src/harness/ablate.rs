use std::fmt::Write as _;
use std::fs;

use serde::{Deserialize, Serialize};
use tripath_autograd::Module;

use super::checkpoint::load_checkpoint;
use super::config::RunConfig;
use super::train::{evaluate, train};
use crate::data::load_manifest;
use crate::error::Result;
use crate::metrics::MetricsReport;

/// The variants compared, as `(name, use_third_path, use_mlha)`.
pub const ABLATION_GRID: [(&str, bool, bool); 3] = [("baseline", false, false), ("+MLHA", false, true), ("+Path+MLHA", true, true)];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub use_third_path: bool,
    pub use_mlha: bool,
    pub num_params: usize,
    pub trainable_params: usize,
    pub frozen_fingerprint: String,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn cell(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{:.2}", 100.0 * v))
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Variant | Path | MLHA | Params | Trainable | OA | mIoU | SeK | F_scd |\n");
        s.push_str("|---|---|---|---:|---:|---:|---:|---:|---:|\n");
        let mark = |b: bool| if b { "yes" } else { "no" };
        for r in &self.rows {
            let m = &r.report;
            writeln!(
                s,
                "| {} | {} | {} | {} | {} | {} | {} | {} | {} |",
                r.name,
                mark(r.use_third_path),
                mark(r.use_mlha),
                r.num_params,
                r.trainable_params,
                cell(m.oa),
                cell(m.miou),
                cell(m.sek),
                cell(m.f_scd)
            )
            .unwrap();
        }
        s
    }
}

/// Train and evaluate every grid variant with the same seed. Each variant
/// writes its run under `<output_dir>/<index>_<name>`; the table goes to
/// `ablation.md` and `ablation.json`.
pub fn ablate(config: &RunConfig) -> Result<AblationTable> {
    config.validate()?;
    let mut rows = Vec::new();
    for (i, (name, path, mlha)) in ABLATION_GRID.iter().enumerate() {
        let mut cfg = config.clone();
        cfg.model.use_third_path = *path;
        cfg.model.use_mlha = *mlha;
        let slug: String = name.chars().filter(|c| c.is_alphanumeric()).collect::<String>().to_lowercase();
        cfg.output_dir = config.output_dir.join(format!("{i}_{slug}"));
        let outcome = train(&cfg)?;
        let best = load_checkpoint(&outcome.best_checkpoint)?;
        let eval_split = match load_manifest(&cfg.data.root, cfg.data.val_split) {
            Ok(m) if !m.is_empty() && m.labeled => m,
            _ => load_manifest(&cfg.data.root, cfg.data.train_split)?,
        };
        let (report, _) = evaluate(&best.model, &eval_split, &cfg.data.normalization, cfg.optim.batch_size)?;
        rows.push(AblationRow {
            name: name.to_string(),
            use_third_path: *path,
            use_mlha: *mlha,
            num_params: best.model.num_params(),
            trainable_params: best.model.trainable_params().iter().map(|p| p.numel()).sum(),
            frozen_fingerprint: best.frozen_fingerprint,
            report,
        });
    }
    let table = AblationTable { rows };
    fs::create_dir_all(&config.output_dir)?;
    fs::write(config.output_dir.join("ablation.md"), table.to_markdown())?;
    fs::write(config.output_dir.join("ablation.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}
