//! Training runs, best-epoch selection, inference and late fusion.
//!
//! A run directory produced by [`train`] contains:
//!
//! ```text
//! config.toml          run configuration
//! loss_log.csv         step,cls1,cls2,cont,emb,total
//! history.csv          one row per epoch: losses and validation metrics
//! checkpoints/epoch_NNN.{safetensors,json}
//! summary.json         best epoch by validation ERS
//! ```

mod config;
mod optim;
mod predictions;
mod trainer;
mod tsn;

pub use config::RunConfig;
pub use optim::Sgd;
pub use predictions::{fuse_scores, read_predictions, write_predictions, PredictionRecord};
pub use trainer::Trainer;
pub use tsn::{CheckpointMeta, InputBatch, TsnModel};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{evaluate, MetricsReport};
use crate::model::PredictionSet;
use crate::taxonomy::EmotionTaxonomy;

/// Per-epoch record of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the epoch's step losses.
    pub loss: LossBreakdown,
    pub val: Option<MetricsReport>,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str = "epoch,lr,cls1,cls2,cont,emb,total,val_mAP,val_mRA,val_mR2,val_ERS";

    pub fn val_ers(&self) -> f64 {
        self.val.as_ref().map_or(f64::NAN, |m| m.ers)
    }

    pub fn csv_row(&self) -> String {
        let l = &self.loss;
        let mut s = format!(
            "{},{},{},{},{},{},{}",
            self.epoch, self.lr, l.cls1, l.cls2, l.cont, l.emb, l.total
        );
        match &self.val {
            Some(m) => write!(s, ",{},{},{},{}", m.map, m.mra, m.mr2, m.ers).unwrap(),
            None => s.push_str(",,,,"),
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub history: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
}

/// Index of the highest validation ERS; ties go to the earliest epoch and NaN
/// entries (epochs without validation) are ignored.
pub fn select_best_epoch(val_ers: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_ers.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

fn mean_breakdown(steps: &[(usize, LossBreakdown)]) -> LossBreakdown {
    let n = steps.len().max(1) as f64;
    let sum = |f: fn(&LossBreakdown) -> f64| steps.iter().map(|(_, b)| f(b)).sum::<f64>() / n;
    LossBreakdown::new(sum(|b| b.cls1), sum(|b| b.cls2), sum(|b| b.cont), sum(|b| b.emb))
}

fn append(path: &Path, text: &str) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Scores a model's `k`-segment predictions on a dataset.
pub fn validate(model: &TsnModel, dataset: &Dataset, k: usize) -> Result<MetricsReport> {
    let records = model.predict(dataset, k)?;
    let keyed: Vec<_> = records.iter().map(|r| (r.key(), r.to_prediction_set())).collect();
    evaluate(&keyed, dataset, model.config().threshold)
}

/// Trains one network for `config.epochs` epochs, writing logs, history and a
/// checkpoint per epoch under `run_dir`.
pub fn train(
    config: &RunConfig,
    taxonomy: &EmotionTaxonomy,
    train_set: &Dataset,
    val_set: Option<&Dataset>,
    run_dir: &Path,
) -> Result<RunSummary> {
    config.validate()?;
    let ckpt_dir = run_dir.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    write(&run_dir.join("config.toml"), &config.to_toml())?;
    let loss_log = run_dir.join("loss_log.csv");
    let history_csv = run_dir.join("history.csv");
    write(&loss_log, &format!("{}\n", LossBreakdown::CSV_HEADER))?;
    write(&history_csv, &format!("{}\n", HistoryRow::CSV_HEADER))?;

    let mut trainer = Trainer::new(config, taxonomy)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut checkpoints = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let steps = trainer.train_epoch(train_set, epoch)?;
        let mut lines = String::new();
        for (step, b) in &steps {
            lines.push_str(&b.csv_row(*step));
            lines.push('\n');
        }
        append(&loss_log, &lines)?;

        let due = config.validate_every > 0
            && ((epoch + 1) % config.validate_every == 0 || epoch + 1 == config.epochs);
        let val = match val_set {
            Some(v) if due => Some(validate(trainer.model(), v, config.k_test)?),
            _ => None,
        };
        let row = HistoryRow {
            epoch,
            lr: config.learning_rate(epoch),
            loss: mean_breakdown(&steps),
            val,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} val ERS {:.5}",
            row.loss.total,
            row.val_ers()
        );
        append(&history_csv, &format!("{}\n", row.csv_row()))?;
        let stem = format!("epoch_{epoch:03}");
        checkpoints.push(trainer.model().save(&ckpt_dir, &stem, epoch, Some(row.val_ers()))?);
        history.push(row);
    }

    let ers: Vec<f64> = history.iter().map(HistoryRow::val_ers).collect();
    let best_epoch = select_best_epoch(&ers);
    let summary = RunSummary {
        run_dir: run_dir.to_path_buf(),
        best_checkpoint: best_epoch.map(|e| checkpoints[e].clone()),
        best_epoch,
        history,
    };
    write(&run_dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Loads a checkpoint and predicts every instance with `k_test` uniform segments.
pub fn predict(checkpoint: &Path, dataset: &Dataset, k_test: usize) -> Result<Vec<PredictionRecord>> {
    let (model, _) = TsnModel::load(checkpoint)?;
    model.predict(dataset, k_test)
}

/// Keyed prediction sets for [`evaluate`].
pub fn keyed(records: &[PredictionRecord]) -> Vec<(crate::data::InstanceKey, PredictionSet)> {
    records.iter().map(|r| (r.key(), r.to_prediction_set())).collect()
}
