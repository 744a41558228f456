//! Challenge evaluation: per-class average precision and ROC AUC, per-dimension
//! coefficient of determination, and the Emotion Recognition Score
//! `ERS = ½·(mR² + ½·(mAP + mRA))`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::{binarize_targets, Dataset, InstanceKey};
use crate::error::{Error, Result};
use crate::model::PredictionSet;
use crate::{NUM_CATEGORIES, NUM_VAD};

/// Why a class or dimension could not be scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("no positive labels")]
    NoPositives,
    #[error("labels contain a single class")]
    SingleClass,
    #[error("undefined R²: constant targets")]
    ConstantTargets,
    #[error("need at least two points")]
    TooFewPoints,
    #[error("scores and labels differ in length")]
    LengthMismatch,
}

/// Step-integral AP: `Σ_k (R_k − R_{k−1})·P_k` over ranks by descending score.
///
/// Ties keep input order (stable sort).
pub fn average_precision(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let positives = labels.iter().filter(|&&l| l == 1).count();
    if positives == 0 {
        return Err(MetricError::NoPositives);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut ap = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            hits += 1;
            // Recall rises by 1/P exactly at positive ranks.
            ap += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(ap / positives as f64)
}

/// Mann–Whitney AUC with half credit for tied positive/negative pairs.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch);
    }
    let p = labels.iter().filter(|&&l| l == 1).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(MetricError::SingleClass);
    }
    // Sum of positive ranks with average ranks over ties.
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p * n) as f64)
}

/// `1 − SS_res / SS_tot` with `SS_tot` about the target mean.
pub fn r_squared(preds: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if preds.len() != targets.len() {
        return Err(MetricError::LengthMismatch);
    }
    if targets.len() < 2 {
        return Err(MetricError::TooFewPoints);
    }
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let ss_tot: f64 = targets.iter().map(|t| (t - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(MetricError::ConstantTargets);
    }
    let ss_res: f64 = preds.iter().zip(targets).map(|(p, t)| (t - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn compute_ers(map: f64, mra: f64, mr2: f64) -> f64 {
    0.5 * (mr2 + 0.5 * (map + mra))
}

/// Per-class and summary metrics. Skipped classes/dimensions are `None` and
/// excluded from the means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ap: Vec<Option<f64>>,
    pub auc: Vec<Option<f64>>,
    pub r2: Vec<Option<f64>>,
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "mRA")]
    pub mra: f64,
    #[serde(rename = "mR2")]
    pub mr2: f64,
    pub ers: f64,
    pub counts: MetricCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCounts {
    pub instances: usize,
    /// Class indices excluded from mAP (no positive labels).
    pub ap_skipped: Vec<usize>,
    /// Class indices excluded from mRA (a single label value).
    pub auc_skipped: Vec<usize>,
    /// Dimension indices excluded from mR² (constant targets).
    pub r2_skipped: Vec<usize>,
}

/// Mean of the defined entries; NaN when none is defined.
fn mean_defined(values: &[Option<f64>]) -> f64 {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    }
}

fn skipped(values: &[Option<f64>]) -> Vec<usize> {
    values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.is_none().then_some(i))
        .collect()
}

/// Scores `predictions[i]` against `ground_truth[i]`.
///
/// Ground-truth categorical scores are binarized at `threshold`.
pub fn evaluate_aligned(
    predictions: &[&PredictionSet],
    categorical: &[&[f64]],
    vad: &[&[f64]],
    threshold: f64,
) -> Result<MetricsReport> {
    let n = predictions.len();
    if n == 0 || categorical.len() != n || vad.len() != n {
        return Err(Error::invalid("predictions and annotations differ in count"));
    }
    for p in predictions {
        if p.categorical.len() != NUM_CATEGORIES || p.continuous.len() != NUM_VAD {
            return Err(Error::invalid(format!(
                "predictions need {NUM_CATEGORIES} categorical and {NUM_VAD} continuous values"
            )));
        }
    }
    let labels: Vec<Vec<u8>> = categorical.iter().map(|c| binarize_targets(c, threshold)).collect();

    let mut ap = Vec::with_capacity(NUM_CATEGORIES);
    let mut auc = Vec::with_capacity(NUM_CATEGORIES);
    for c in 0..NUM_CATEGORIES {
        let s: Vec<f64> = predictions.iter().map(|p| p.categorical[c]).collect();
        let l: Vec<u8> = labels.iter().map(|l| l[c]).collect();
        ap.push(average_precision(&s, &l).ok());
        auc.push(roc_auc(&s, &l).ok());
    }
    let r2: Vec<Option<f64>> = (0..NUM_VAD)
        .map(|d| {
            let p: Vec<f64> = predictions.iter().map(|p| p.continuous[d]).collect();
            let t: Vec<f64> = vad.iter().map(|v| v[d]).collect();
            r_squared(&p, &t).ok()
        })
        .collect();

    let map = mean_defined(&ap);
    let mra = mean_defined(&auc);
    let mr2 = mean_defined(&r2);
    Ok(MetricsReport {
        counts: MetricCounts {
            instances: n,
            ap_skipped: skipped(&ap),
            auc_skipped: skipped(&auc),
            r2_skipped: skipped(&r2),
        },
        ers: compute_ers(map, mra, mr2),
        ap,
        auc,
        r2,
        map,
        mra,
        mr2,
    })
}

/// Scores keyed predictions against a dataset; every instance needs exactly one prediction.
pub fn evaluate(
    predictions: &[(InstanceKey, PredictionSet)],
    annotations: &Dataset,
    threshold: f64,
) -> Result<MetricsReport> {
    let mut by_key: HashMap<&InstanceKey, &PredictionSet> = HashMap::new();
    for (k, p) in predictions {
        if by_key.insert(k, p).is_some() {
            return Err(Error::invalid(format!("duplicate prediction for {k}")));
        }
    }
    if by_key.len() != annotations.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} instances",
            by_key.len(),
            annotations.len()
        )));
    }
    let mut preds = Vec::with_capacity(annotations.len());
    for inst in &annotations.instances {
        let key = inst.key();
        preds.push(
            *by_key
                .get(&key)
                .ok_or_else(|| Error::invalid(format!("no prediction for {key}")))?,
        );
    }
    let cats: Vec<&[f64]> = annotations.instances.iter().map(|i| i.categorical.as_slice()).collect();
    let vads: Vec<&[f64]> = annotations.instances.iter().map(|i| i.vad.as_slice()).collect();
    evaluate_aligned(&preds, &cats, &vads, threshold)
}
