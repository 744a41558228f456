//! Prediction files (JSON lines) and late score fusion across networks.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{InstanceAnnotation, InstanceKey};
use crate::error::{Error, Result};
use crate::model::PredictionSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub clip_id: String,
    pub person_id: u32,
    pub categorical: Vec<f64>,
    pub continuous: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(inst: &InstanceAnnotation, p: &PredictionSet) -> Self {
        Self {
            clip_id: inst.clip_id.clone(),
            person_id: inst.person_id,
            categorical: p.categorical.clone(),
            continuous: p.continuous.clone(),
        }
    }

    pub fn key(&self) -> InstanceKey {
        InstanceKey {
            clip_id: self.clip_id.clone(),
            person_id: self.person_id,
        }
    }

    pub fn to_prediction_set(&self) -> PredictionSet {
        PredictionSet {
            categorical: self.categorical.clone(),
            continuous: self.continuous.clone(),
            projected: Vec::new(),
        }
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let r = serde_json::from_str(&line).map_err(|e| Error::Annotation {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("malformed prediction: {e}"),
        })?;
        records.push(r);
    }
    Ok(records)
}

/// Average score fusion: elementwise mean of categorical scores and continuous
/// values across networks. Inputs must list the same instances in the same order.
pub fn fuse_scores(inputs: &[Vec<PredictionRecord>]) -> Result<Vec<PredictionRecord>> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::invalid("nothing to fuse"))?;
    for (i, other) in inputs.iter().enumerate().skip(1) {
        if other.len() != first.len() {
            return Err(Error::invalid(format!(
                "prediction set {i} has {} instances, expected {}",
                other.len(),
                first.len()
            )));
        }
    }
    let n = inputs.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(row, base)| {
            let mut categorical = vec![0.0; base.categorical.len()];
            let mut continuous = vec![0.0; base.continuous.len()];
            for (i, set) in inputs.iter().enumerate() {
                let r = &set[row];
                if r.key() != base.key() {
                    return Err(Error::invalid(format!(
                        "prediction set {i} row {row} is {}, expected {}",
                        r.key(),
                        base.key()
                    )));
                }
                if r.categorical.len() != categorical.len() || r.continuous.len() != continuous.len() {
                    return Err(Error::invalid(format!("prediction set {i} row {row} has a different width")));
                }
                categorical.iter_mut().zip(&r.categorical).for_each(|(a, v)| *a += v);
                continuous.iter_mut().zip(&r.continuous).for_each(|(a, v)| *a += v);
            }
            Ok(PredictionRecord {
                clip_id: base.clip_id.clone(),
                person_id: base.person_id,
                categorical: categorical.into_iter().map(|v| v / n).collect(),
                continuous: continuous.into_iter().map(|v| v / n).collect(),
            })
        })
        .collect()
}
