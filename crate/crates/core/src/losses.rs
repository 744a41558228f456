//! Training objectives.
//!
//! The total loss is the unweighted sum of four terms:
//!
//! - `cls1`: binary cross-entropy between predicted scores and the thresholded targets,
//! - `cls2`: mean squared error between predicted scores and the raw crowd scores,
//! - `cont`: mean squared error on valence / arousal / dominance,
//! - `emb`: Euclidean distance between the projected feature and the mean word
//!   embedding of the positive labels.
//!
//! Each term is averaged over its classes/dimensions and then over the batch;
//! samples without positive labels are left out of the `emb` average.
//!
//! The plain `f64` functions with explicit gradients are the reference
//! definitions. [`batch_loss`] is the differentiable tensor version used for
//! training.

use candle_core::{DType, Tensor, D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HeadOutputs;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingDistance {
    /// `‖p − t‖₂`.
    #[default]
    Euclidean,
    /// `‖p − t‖₂²`.
    SquaredEuclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub cls1: f64,
    pub cls2: f64,
    pub cont: f64,
    pub emb: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(cls1: f64, cls2: f64, cont: f64, emb: f64) -> Self {
        Self {
            cls1,
            cls2,
            cont,
            emb,
            total: cls1 + cls2 + cont + emb,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.cls1, self.cls2, self.cont, self.emb, self.total]
            .iter()
            .all(|v| v.is_finite())
    }

    pub const CSV_HEADER: &'static str = "step,cls1,cls2,cont,emb,total";

    pub fn csv_row(&self, step: usize) -> String {
        format!(
            "{step},{},{},{},{},{}",
            self.cls1, self.cls2, self.cont, self.emb, self.total
        )
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

/// Mean binary cross-entropy over classes.
pub fn loss_cls1(pred: &[f64], target: &[f64]) -> f64 {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_prob(p);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum::<f64>()
        / n
}

/// Gradient of [`loss_cls1`] with respect to `pred`; zero where the clamp is active.
pub fn grad_cls1(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                0.0
            } else {
                (-t / p + (1.0 - t) / (1.0 - p)) / n
            }
        })
        .collect()
}

fn mse(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / pred.len() as f64
}

fn grad_mse(pred: &[f64], target: &[f64]) -> Vec<f64> {
    let n = pred.len() as f64;
    pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect()
}

/// Mean squared error between predicted and crowd scores.
pub fn loss_cls2(pred: &[f64], scores: &[f64]) -> f64 {
    mse(pred, scores)
}

pub fn grad_cls2(pred: &[f64], scores: &[f64]) -> Vec<f64> {
    grad_mse(pred, scores)
}

/// Mean squared error on the continuous dimensions.
pub fn loss_cont(pred: &[f64], vad: &[f64]) -> f64 {
    mse(pred, vad)
}

pub fn grad_cont(pred: &[f64], vad: &[f64]) -> Vec<f64> {
    grad_mse(pred, vad)
}

/// Distance between the projected feature and the target embedding.
pub fn loss_emb(projected: &[f64], target: &[f64], distance: EmbeddingDistance) -> Result<f64> {
    if projected.len() != target.len() {
        return Err(Error::invalid(format!(
            "embedding dimension mismatch: {} vs {}",
            projected.len(),
            target.len()
        )));
    }
    let sq: f64 = projected
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(match distance {
        EmbeddingDistance::Euclidean => sq.sqrt(),
        EmbeddingDistance::SquaredEuclidean => sq,
    })
}

/// Gradient of [`loss_emb`]; the Euclidean variant uses subgradient 0 at `projected == target`.
pub fn grad_emb(projected: &[f64], target: &[f64], distance: EmbeddingDistance) -> Vec<f64> {
    let diff: Vec<f64> = projected.iter().zip(target).map(|(p, t)| p - t).collect();
    match distance {
        EmbeddingDistance::SquaredEuclidean => diff.iter().map(|d| 2.0 * d).collect(),
        EmbeddingDistance::Euclidean => {
            let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
            if norm == 0.0 {
                vec![0.0; diff.len()]
            } else {
                diff.iter().map(|d| d / norm).collect()
            }
        }
    }
}

/// Targets and predictions of one sample, for the reference batch loss.
pub struct SampleLoss<'a> {
    pub categorical: &'a [f64],
    pub binary_target: &'a [f64],
    pub scores: &'a [f64],
    pub continuous: &'a [f64],
    pub vad: &'a [f64],
    pub projected: &'a [f64],
    /// `None` when the sample has no positive labels.
    pub embedding_target: Option<&'a [f64]>,
}

/// Reference batch loss: per-term batch means, `emb` averaged over samples with positives.
pub fn total_loss(samples: &[SampleLoss<'_>], use_emb: bool, distance: EmbeddingDistance) -> Result<LossBreakdown> {
    if samples.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let n = samples.len() as f64;
    let mut cls1 = 0.0;
    let mut cls2 = 0.0;
    let mut cont = 0.0;
    let mut emb = 0.0;
    let mut emb_count = 0usize;
    for s in samples {
        cls1 += loss_cls1(s.categorical, s.binary_target);
        cls2 += loss_cls2(s.categorical, s.scores);
        cont += loss_cont(s.continuous, s.vad);
        if let (true, Some(t)) = (use_emb, s.embedding_target) {
            emb += loss_emb(s.projected, t, distance)?;
            emb_count += 1;
        }
    }
    let emb = if emb_count > 0 { emb / emb_count as f64 } else { 0.0 };
    Ok(LossBreakdown::new(cls1 / n, cls2 / n, cont / n, emb))
}

/// Batched training targets, one row per instance.
pub struct BatchTargets {
    /// Thresholded labels, B×26.
    pub binary: Tensor,
    /// Crowd scores, B×26.
    pub scores: Tensor,
    /// B×3.
    pub vad: Tensor,
    /// Mean positive-label embedding, B×D (zeros where `emb_mask` is 0).
    pub embedding: Tensor,
    /// 1 where the sample has at least one positive label, length B.
    pub emb_mask: Tensor,
}

fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}

/// Differentiable batch loss over instance-level outputs.
///
/// Returns the scalar total (for backpropagation) and its breakdown.
pub fn batch_loss(
    out: &HeadOutputs,
    targets: &BatchTargets,
    use_emb: bool,
    distance: EmbeddingDistance,
) -> Result<(Tensor, LossBreakdown)> {
    let p = out.categorical.clamp(BCE_EPS, 1.0 - BCE_EPS)?;
    let t = &targets.binary;
    // −[t ln p + (1 − t) ln(1 − p)]
    let one_minus_p = p.affine(-1.0, 1.0)?;
    let one_minus_t = t.affine(-1.0, 1.0)?;
    let bce = (t.mul(&p.log()?)? + one_minus_t.mul(&one_minus_p.log()?)?)?.neg()?;
    let cls1 = bce.mean_all()?;
    let cls2 = (&out.categorical - &targets.scores)?.sqr()?.mean_all()?;
    let cont = (&out.continuous - &targets.vad)?.sqr()?.mean_all()?;

    let mut total = ((&cls1 + &cls2)? + &cont)?;
    let mut emb_value = 0.0;
    if use_emb {
        let diff = (&out.projected - &targets.embedding)?;
        let per_sample = match distance {
            EmbeddingDistance::SquaredEuclidean => diff.sqr()?.sum(D::Minus1)?,
            EmbeddingDistance::Euclidean => {
                // ‖d‖ written as d · stopgrad(d / ‖d‖): same value, gradient d/‖d‖, and 0 at d = 0.
                let norm = diff.sqr()?.sum_keepdim(D::Minus1)?.sqrt()?.detach();
                let safe = (&norm + norm.eq(0.0)?.to_dtype(norm.dtype())?)?;
                let unit = diff.detach().broadcast_div(&safe)?;
                (&diff * unit)?.sum(D::Minus1)?
            }
        };
        let mask = &targets.emb_mask;
        let count = scalar(&mask.sum_all()?)?;
        if count > 0.0 {
            let emb = ((per_sample * mask)?.sum_all()? / count)?;
            emb_value = scalar(&emb)?;
            total = (total + emb)?;
        }
    }

    let breakdown = LossBreakdown {
        cls1: scalar(&cls1)?,
        cls2: scalar(&cls2)?,
        cont: scalar(&cont)?,
        emb: emb_value,
        total: scalar(&total)?,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cls1_examples() {
        let mut target = vec![0.0; 26];
        target[3] = 1.0;
        let pred: Vec<f64> = target.clone();
        assert!(loss_cls1(&pred, &target) < 1e-6);
        let half = vec![0.5; 26];
        assert!((loss_cls1(&half, &target) - std::f64::consts::LN_2).abs() < 1e-12);
        let l = loss_cls1(&[0.9, 0.2], &[1.0, 0.0]);
        assert!((l - 0.164252033486018).abs() < 1e-12);
    }

    #[test]
    fn mse_examples() {
        let s = [0.1, 0.5, 0.9];
        assert_eq!(loss_cls2(&s, &s), 0.0);
        let shifted: Vec<f64> = s.iter().map(|v| v + 0.1).collect();
        assert!((loss_cls2(&shifted, &s) - 0.01).abs() < 1e-12);
        // (0.2² + 0.4² + 0.6²) / 3
        assert!((loss_cont(&[0.2, 0.0, 1.0], &[0.0, 0.4, 0.4]) - 0.56 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn emb_examples() {
        let e = EmbeddingDistance::Euclidean;
        assert_eq!(loss_emb(&[1.0, 2.0], &[1.0, 2.0], e).unwrap(), 0.0);
        assert_eq!(loss_emb(&[1.0, 3.0], &[1.0, 2.0], e).unwrap(), 1.0);
        assert_eq!(loss_emb(&[1.0, 2.0, 2.0], &[0.0; 3], e).unwrap(), 3.0);
        assert_eq!(
            loss_emb(&[1.0, 2.0, 2.0], &[0.0; 3], EmbeddingDistance::SquaredEuclidean).unwrap(),
            9.0
        );
        assert!(loss_emb(&[1.0], &[1.0, 2.0], e).is_err());
        assert_eq!(grad_emb(&[1.0, 2.0], &[1.0, 2.0], e), vec![0.0, 0.0]);
    }

    #[test]
    fn total_is_sum_and_skips_missing_positives() {
        let b = LossBreakdown::new(1.0, 1.0, 1.0, 1.0);
        assert_eq!(b.total, 4.0);

        let cat = [0.3; 26];
        let tgt = [0.0; 26];
        let sample = SampleLoss {
            categorical: &cat,
            binary_target: &tgt,
            scores: &tgt,
            continuous: &[0.5, 0.5, 0.5],
            vad: &[0.2, 0.4, 0.6],
            projected: &[5.0, 5.0],
            embedding_target: None,
        };
        let b = total_loss(&[sample], true, EmbeddingDistance::Euclidean).unwrap();
        assert_eq!(b.emb, 0.0);
        assert_eq!(b.total, b.cls1 + b.cls2 + b.cont);
    }
}
