//! The differentiable batch loss against the f64 reference definitions.

use candle_core::{Device, Tensor, Var};
use emotion_tsn::losses::{self, batch_loss, total_loss, BatchTargets, EmbeddingDistance, SampleLoss};
use emotion_tsn::model::HeadOutputs;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const B: usize = 4;
const C: usize = 26;
const D: usize = 5;

struct Toy {
    cat: Vec<Vec<f64>>,
    bin: Vec<Vec<f64>>,
    scores: Vec<Vec<f64>>,
    cont: Vec<Vec<f64>>,
    vad: Vec<Vec<f64>>,
    proj: Vec<Vec<f64>>,
    emb: Vec<Option<Vec<f64>>>,
}

fn toy(seed: u64) -> Toy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = |rows: usize, cols: usize, lo: f64, hi: f64| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|_| (0..cols).map(|_| rng.random_range(lo..hi)).collect())
            .collect()
    };
    let scores = m(B, C, 0.0, 1.0);
    let bin = scores
        .iter()
        .map(|r| r.iter().map(|&s| if s >= 0.5 { 1.0 } else { 0.0 }).collect())
        .collect();
    let emb_rows = m(B, D, -1.0, 1.0);
    Toy {
        cat: m(B, C, 0.05, 0.95),
        bin,
        scores,
        cont: m(B, 3, 0.0, 1.0),
        vad: m(B, 3, 0.0, 1.0),
        proj: m(B, D, -1.0, 1.0),
        // The last sample has no positives.
        emb: emb_rows
            .into_iter()
            .enumerate()
            .map(|(i, r)| (i + 1 < B).then_some(r))
            .collect(),
    }
}

fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let flat: Vec<f32> = rows.iter().flatten().map(|&v| v as f32).collect();
    Tensor::from_vec(flat, (rows.len(), rows[0].len()), &Device::Cpu).unwrap()
}

fn targets(t: &Toy) -> BatchTargets {
    let emb: Vec<Vec<f64>> = t.emb.iter().map(|e| e.clone().unwrap_or(vec![0.0; D])).collect();
    let mask: Vec<f32> = t.emb.iter().map(|e| e.is_some() as u8 as f32).collect();
    BatchTargets {
        binary: tensor(&t.bin),
        scores: tensor(&t.scores),
        vad: tensor(&t.vad),
        embedding: tensor(&emb),
        emb_mask: Tensor::from_vec(mask, B, &Device::Cpu).unwrap(),
    }
}

fn reference(t: &Toy, use_emb: bool, d: EmbeddingDistance) -> losses::LossBreakdown {
    let samples: Vec<SampleLoss> = (0..B)
        .map(|i| SampleLoss {
            categorical: &t.cat[i],
            binary_target: &t.bin[i],
            scores: &t.scores[i],
            continuous: &t.cont[i],
            vad: &t.vad[i],
            projected: &t.proj[i],
            embedding_target: t.emb[i].as_deref(),
        })
        .collect();
    total_loss(&samples, use_emb, d).unwrap()
}

#[test]
fn batch_loss_matches_reference_breakdown() {
    for seed in 0..5 {
        let t = toy(seed);
        for d in [EmbeddingDistance::Euclidean, EmbeddingDistance::SquaredEuclidean] {
            for use_emb in [true, false] {
                let out = HeadOutputs {
                    categorical: tensor(&t.cat),
                    continuous: tensor(&t.cont),
                    projected: tensor(&t.proj),
                };
                let (total, got) = batch_loss(&out, &targets(&t), use_emb, d).unwrap();
                let want = reference(&t, use_emb, d);
                for (a, b) in [
                    (got.cls1, want.cls1),
                    (got.cls2, want.cls2),
                    (got.cont, want.cont),
                    (got.emb, want.emb),
                    (got.total, want.total),
                    (total.to_scalar::<f32>().unwrap() as f64, want.total),
                ] {
                    assert!((a - b).abs() < 1e-5, "{a} vs {b}");
                }
                if !use_emb {
                    assert_eq!(got.emb, 0.0);
                }
            }
        }
    }
}

#[test]
fn autograd_matches_analytic_gradients() {
    let t = toy(11);
    let d = EmbeddingDistance::Euclidean;
    let cat = Var::from_tensor(&tensor(&t.cat)).unwrap();
    let cont = Var::from_tensor(&tensor(&t.cont)).unwrap();
    let proj = Var::from_tensor(&tensor(&t.proj)).unwrap();
    let out = HeadOutputs {
        categorical: cat.as_tensor().clone(),
        continuous: cont.as_tensor().clone(),
        projected: proj.as_tensor().clone(),
    };
    let (total, _) = batch_loss(&out, &targets(&t), true, d).unwrap();
    let grads = total.backward().unwrap();
    let get = |v: &Var| grads.get(v).unwrap().to_vec2::<f32>().unwrap();
    let (g_cat, g_cont, g_proj) = (get(&cat), get(&cont), get(&proj));

    let b = B as f64;
    let with_emb = t.emb.iter().filter(|e| e.is_some()).count() as f64;
    for i in 0..B {
        let c1 = losses::grad_cls1(&t.cat[i], &t.bin[i]);
        let c2 = losses::grad_cls2(&t.cat[i], &t.scores[i]);
        for j in 0..C {
            let want = (c1[j] + c2[j]) / b;
            assert!((g_cat[i][j] as f64 - want).abs() < 1e-4 * want.abs().max(1.0), "cat {i},{j}");
        }
        let gc = losses::grad_cont(&t.cont[i], &t.vad[i]);
        for j in 0..3 {
            assert!((g_cont[i][j] as f64 - gc[j] / b).abs() < 1e-5);
        }
        let ge = match &t.emb[i] {
            Some(e) => losses::grad_emb(&t.proj[i], e, d).iter().map(|g| g / with_emb).collect(),
            None => vec![0.0; D],
        };
        for j in 0..D {
            assert!((g_proj[i][j] as f64 - ge[j]).abs() < 1e-5, "proj {i},{j}");
        }
    }
}

#[test]
fn exact_embedding_prediction_has_zero_finite_gradient() {
    let target = vec![vec![0.25, -0.5, 1.0]];
    let proj = Var::from_tensor(&tensor(&target)).unwrap();
    let out = HeadOutputs {
        categorical: Tensor::full(0.5f32, (1, C), &Device::Cpu).unwrap(),
        continuous: Tensor::zeros((1, 3), candle_core::DType::F32, &Device::Cpu).unwrap(),
        projected: proj.as_tensor().clone(),
    };
    let t = BatchTargets {
        binary: Tensor::zeros((1, C), candle_core::DType::F32, &Device::Cpu).unwrap(),
        scores: Tensor::zeros((1, C), candle_core::DType::F32, &Device::Cpu).unwrap(),
        vad: Tensor::zeros((1, 3), candle_core::DType::F32, &Device::Cpu).unwrap(),
        embedding: tensor(&target),
        emb_mask: Tensor::ones(1, candle_core::DType::F32, &Device::Cpu).unwrap(),
    };
    let (total, b) = batch_loss(&out, &t, true, EmbeddingDistance::Euclidean).unwrap();
    assert_eq!(b.emb, 0.0);
    let g = total.backward().unwrap().get(&proj).unwrap().to_vec2::<f32>().unwrap();
    assert!(g[0].iter().all(|&v| v == 0.0), "{g:?}");
}

#[test]
fn sample_without_positives_alone_contributes_no_embedding_loss() {
    let cat = vec![0.3; C];
    let bin = vec![0.0; C];
    let s = SampleLoss {
        categorical: &cat,
        binary_target: &bin,
        scores: &cat,
        continuous: &[0.1, 0.2, 0.3],
        vad: &[0.2, 0.2, 0.2],
        projected: &[5.0, 5.0],
        embedding_target: None,
    };
    let b = total_loss(&[s], true, EmbeddingDistance::Euclidean).unwrap();
    assert_eq!(b.emb, 0.0);
    assert!((b.total - (b.cls1 + b.cls2 + b.cont)).abs() < 1e-12);
}
