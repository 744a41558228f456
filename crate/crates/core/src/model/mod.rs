//! Per-stream backbones, the three prediction heads, segment consensus and partial batch norm.
//!
//! An [`EmotionNet`] extracts a feature vector per snippet. With a context
//! backbone the body and context features are concatenated (body first)
//! before the heads. The heads produce 26 logistic categorical scores, 3
//! continuous values and a linear projection into the word-embedding space.

mod backbone;
mod layers;
mod params;

pub use backbone::{Backbone, BackbonePreset, ResNet, TinyConvNet};
pub use layers::{sigmoid, BatchNorm2d, Linear};
pub use params::{Init, ParamStore};

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::{Snippet, StreamKind};
use crate::{NUM_CATEGORIES, NUM_VAD};

/// Which streams a network consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    RgbB,
    RgbC,
    /// Body and context RGB fused at the feature level.
    RgbBc,
    FlowB,
}

impl NetworkKind {
    /// Stream fed to the primary backbone.
    pub fn primary_stream(self) -> StreamKind {
        match self {
            NetworkKind::RgbB | NetworkKind::RgbBc => StreamKind::RgbB,
            NetworkKind::RgbC => StreamKind::RgbC,
            NetworkKind::FlowB => StreamKind::FlowB,
        }
    }

    pub fn context_stream(self) -> Option<StreamKind> {
        (self == NetworkKind::RgbBc).then_some(StreamKind::RgbC)
    }

    pub fn streams(self) -> Vec<StreamKind> {
        std::iter::once(self.primary_stream())
            .chain(self.context_stream())
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            NetworkKind::RgbB => "rgb_b",
            NetworkKind::RgbC => "rgb_c",
            NetworkKind::RgbBc => "rgb_bc",
            NetworkKind::FlowB => "flow_b",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub kind: NetworkKind,
    pub backbone: BackbonePreset,
    pub context_backbone: BackbonePreset,
    pub embedding_dim: usize,
    /// Frames per flow snippet; sets the flow backbone's input width.
    pub flow_snippet_len: usize,
}

/// Per-instance outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub categorical: Vec<f64>,
    pub continuous: Vec<f64>,
    pub projected: Vec<f64>,
}

/// Elementwise mean of segment-level predictions.
pub fn consensus(preds: &[PredictionSet]) -> Result<PredictionSet> {
    let first = preds
        .first()
        .ok_or_else(|| Error::invalid("consensus over zero predictions"))?;
    let shape = |p: &PredictionSet| (p.categorical.len(), p.continuous.len(), p.projected.len());
    if preds.iter().any(|p| shape(p) != shape(first)) {
        return Err(Error::invalid("consensus over predictions of different sizes"));
    }
    let mean = |field: fn(&PredictionSet) -> &Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; field(first).len()];
        for p in preds {
            acc.iter_mut().zip(field(p)).for_each(|(a, v)| *a += v);
        }
        acc.into_iter().map(|a| a / preds.len() as f64).collect()
    };
    Ok(PredictionSet {
        categorical: mean(|p| &p.categorical),
        continuous: mean(|p| &p.continuous),
        projected: mean(|p| &p.projected),
    })
}

/// Batched head outputs, one row per snippet (or per instance after consensus).
pub struct HeadOutputs {
    /// Logistic scores, N×26.
    pub categorical: Tensor,
    /// N×3.
    pub continuous: Tensor,
    /// N×D.
    pub projected: Tensor,
}

impl HeadOutputs {
    /// Averages groups of `k` consecutive rows: (B·K)×F → B×F.
    pub fn consensus(&self, k: usize) -> Result<HeadOutputs> {
        let avg = |t: &Tensor| -> candle_core::Result<Tensor> {
            let (n, f) = t.dims2()?;
            t.reshape((n / k, k, f))?.mean(1)
        };
        Ok(HeadOutputs {
            categorical: avg(&self.categorical)?,
            continuous: avg(&self.continuous)?,
            projected: avg(&self.projected)?,
        })
    }

    pub fn to_prediction_sets(&self) -> Result<Vec<PredictionSet>> {
        let rows = |t: &Tensor| -> candle_core::Result<Vec<Vec<f64>>> {
            t.to_dtype(candle_core::DType::F64)?.to_vec2::<f64>()
        };
        let cat = rows(&self.categorical)?;
        let cont = rows(&self.continuous)?;
        let proj = rows(&self.projected)?;
        Ok(cat
            .into_iter()
            .zip(cont)
            .zip(proj)
            .map(|((categorical, continuous), projected)| PredictionSet {
                categorical,
                continuous,
                projected,
            })
            .collect())
    }
}

/// Stacks snippets of one stream into an N×C×H×W tensor.
pub fn snippets_to_tensor(snippets: &[&Snippet], device: &Device) -> Result<Tensor> {
    let first = snippets
        .first()
        .ok_or_else(|| Error::invalid("no snippets to stack"))?;
    let shape = (first.channels, first.height, first.width);
    let mut data = Vec::with_capacity(snippets.len() * first.data.len());
    for s in snippets {
        if (s.channels, s.height, s.width) != shape || s.stream != first.stream {
            return Err(Error::invalid("snippets of mixed stream or shape in one batch"));
        }
        data.extend_from_slice(&s.data);
    }
    Ok(Tensor::from_vec(
        data,
        (snippets.len(), shape.0, shape.1, shape.2),
        device,
    )?)
}

pub struct EmotionNet {
    config: NetConfig,
    body: Box<dyn Backbone>,
    context: Option<Box<dyn Backbone>>,
    head_cat: Linear,
    head_cont: Linear,
    head_emb: Linear,
    device: Device,
}

impl EmotionNet {
    pub fn new(config: &NetConfig, store: &mut ParamStore) -> Result<Self> {
        let in_channels = config.kind.primary_stream().channels(config.flow_snippet_len);
        let body = config.backbone.build(store, "body", in_channels)?;
        let context = match config.kind.context_stream() {
            Some(stream) => Some(config.context_backbone.build(store, "context", stream.channels(1))?),
            None => None,
        };
        let fused = body.out_dim() + context.as_ref().map_or(0, |c| c.out_dim());
        Ok(Self {
            config: config.clone(),
            body,
            context,
            head_cat: Linear::new(store, "head_cat", fused, NUM_CATEGORIES)?,
            head_cont: Linear::new(store, "head_cont", fused, NUM_VAD)?,
            head_emb: Linear::new(store, "head_emb", fused, config.embedding_dim)?,
            device: store.device().clone(),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn kind(&self) -> NetworkKind {
        self.config.kind
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn head_cat(&self) -> &Linear {
        &self.head_cat
    }

    /// Concatenated (body, context) feature vector per snippet.
    pub fn features(&self, body: &Tensor, context: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let fb = self.body.forward(body, train)?;
        match (&self.context, context) {
            (Some(net), Some(ctx)) => {
                if ctx.dim(0)? != body.dim(0)? {
                    return Err(Error::invalid("body and context batches differ in size"));
                }
                let fc = net.forward(ctx, train)?;
                Ok(Tensor::cat(&[&fb, &fc], 1)?)
            }
            (None, None) => Ok(fb),
            (Some(_), None) => Err(Error::invalid(format!(
                "{} network requires a context input",
                self.kind().name()
            ))),
            (None, Some(_)) => Err(Error::invalid(format!(
                "{} network takes no context input",
                self.kind().name()
            ))),
        }
    }

    pub fn forward(&self, body: &Tensor, context: Option<&Tensor>, train: bool) -> Result<HeadOutputs> {
        let f = self.features(body, context, train)?;
        Ok(HeadOutputs {
            categorical: sigmoid(&self.head_cat.forward(&f)?)?,
            continuous: self.head_cont.forward(&f)?,
            projected: self.head_emb.forward(&f)?,
        })
    }

    /// Evaluation-mode prediction for a single snippet (and its context snippet).
    pub fn forward_snippet(&self, body: &Snippet, context: Option<&Snippet>) -> Result<PredictionSet> {
        if body.stream != self.kind().primary_stream() {
            return Err(Error::invalid(format!(
                "{} network got a {:?} snippet",
                self.kind().name(),
                body.stream
            )));
        }
        if let Some(ctx) = context {
            if Some(ctx.stream) != self.kind().context_stream() {
                return Err(Error::invalid(format!(
                    "{} network got a {:?} context snippet",
                    self.kind().name(),
                    ctx.stream
                )));
            }
        }
        let b = snippets_to_tensor(&[body], &self.device)?;
        let c = context
            .map(|c| snippets_to_tensor(&[c], &self.device))
            .transpose()?;
        let out = self.forward(&b, c.as_ref(), false)?;
        Ok(out.to_prediction_sets()?.remove(0))
    }

    pub fn norm_layers(&self) -> Vec<&BatchNorm2d> {
        let mut v = self.body.norm_layers();
        if let Some(c) = &self.context {
            v.extend(c.norm_layers());
        }
        v
    }

    /// Freezes running statistics of every normalization layer except the first
    /// one of each backbone. Returns the number of frozen layers.
    pub fn apply_partial_bn(&mut self) -> usize {
        let mut frozen = 0;
        let backbones = std::iter::once(&mut self.body).chain(self.context.as_mut());
        for backbone in backbones {
            let mut layers = backbone.norm_layers_mut();
            if layers.is_empty() {
                log::warn!("partial BN: backbone has no normalization layers");
                continue;
            }
            for bn in layers.iter_mut().skip(1) {
                bn.set_frozen(true);
                frozen += 1;
            }
        }
        frozen
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    fn net(kind: NetworkKind) -> (EmotionNet, ParamStore) {
        let mut store = ParamStore::new(5, &Device::Cpu);
        let cfg = NetConfig {
            kind,
            backbone: BackbonePreset::Tiny { widths: [4, 4, 8, 8] },
            context_backbone: BackbonePreset::Tiny { widths: [4, 4, 8, 8] },
            embedding_dim: 6,
            flow_snippet_len: 5,
        };
        (EmotionNet::new(&cfg, &mut store).unwrap(), store)
    }

    fn snippet(stream: StreamKind, channels: usize, fill: f32) -> Snippet {
        Snippet {
            stream,
            channels,
            height: 16,
            width: 16,
            data: vec![fill; channels * 256],
            frames: vec![0],
        }
    }

    #[test]
    fn zero_input_gives_logistic_of_bias() {
        let (net, _) = net(NetworkKind::RgbB);
        let p = net.forward_snippet(&snippet(StreamKind::RgbB, 3, 0.0), None).unwrap();
        let bias: Vec<f32> = net.head_cat().bias().to_vec1().unwrap();
        for (s, b) in p.categorical.iter().zip(bias) {
            let want = 1.0 / (1.0 + (-(b as f64)).exp());
            assert!((s - want).abs() < 1e-6, "{s} vs {want}");
        }
        assert_eq!(p.projected.len(), 6);
        assert_eq!(p.continuous.len(), 3);
    }

    #[test]
    fn context_required_iff_configured() {
        let (body_only, _) = net(NetworkKind::RgbB);
        let ctx = snippet(StreamKind::RgbC, 3, 0.1);
        assert!(body_only
            .forward_snippet(&snippet(StreamKind::RgbB, 3, 0.1), Some(&ctx))
            .is_err());
        let (fused, _) = net(NetworkKind::RgbBc);
        assert!(fused.forward_snippet(&snippet(StreamKind::RgbB, 3, 0.1), None).is_err());
        assert!(fused
            .forward_snippet(&snippet(StreamKind::RgbB, 3, 0.1), Some(&ctx))
            .is_ok());
        // Wrong primary stream kind.
        assert!(fused.forward_snippet(&ctx, Some(&ctx)).is_err());
    }

    #[test]
    fn eval_forward_is_deterministic() {
        let (a, _) = net(NetworkKind::FlowB);
        let (b, _) = net(NetworkKind::FlowB);
        let s = snippet(StreamKind::FlowB, 10, 0.3);
        let pa = a.forward_snippet(&s, None).unwrap();
        assert_eq!(pa, a.forward_snippet(&s, None).unwrap());
        assert_eq!(pa, b.forward_snippet(&s, None).unwrap());
    }

    #[test]
    fn consensus_examples() {
        let p = |c0: f64| PredictionSet {
            categorical: vec![c0, 1.0],
            continuous: vec![0.5],
            projected: vec![2.0, -1.0],
        };
        // Identical segments average back to themselves (up to summation rounding).
        let same = consensus(&[p(0.2), p(0.2), p(0.2)]).unwrap();
        assert!((same.categorical[0] - 0.2).abs() < 1e-15);
        assert_eq!(same.projected, vec![2.0, -1.0]);
        let fused = consensus(&[p(0.2), p(0.4)]).unwrap();
        assert!((fused.categorical[0] - 0.3).abs() < 1e-15);
        assert!(consensus(&[]).is_err());
    }

    #[test]
    fn tensor_consensus_matches_rowwise_mean() {
        let x = Tensor::arange(0f32, 12.0, &Device::Cpu).unwrap().reshape((4, 3)).unwrap();
        let out = HeadOutputs {
            categorical: x.clone(),
            continuous: x.clone(),
            projected: x,
        }
        .consensus(2)
        .unwrap();
        let v: Vec<Vec<f32>> = out.categorical.to_vec2().unwrap();
        assert_eq!(v, vec![vec![1.5, 2.5, 3.5], vec![7.5, 8.5, 9.5]]);
    }

    #[test]
    fn partial_bn_freezes_all_but_first() {
        let (mut n, _) = net(NetworkKind::RgbBc);
        assert_eq!(n.apply_partial_bn(), 6);
        let frozen: Vec<bool> = n.norm_layers().iter().map(|b| b.is_frozen()).collect();
        assert_eq!(frozen, vec![false, true, true, true, false, true, true, true]);
    }

    #[test]
    fn batch_norm_running_stats_follow_freeze_flag() {
        let (mut n, _) = net(NetworkKind::RgbB);
        n.apply_partial_bn();
        let x = (Tensor::ones((4, 3, 16, 16), DType::F32, &Device::Cpu).unwrap() * 3.0).unwrap();
        n.forward(&x, None, true).unwrap();
        let layers = n.norm_layers();
        let m0: Vec<f32> = layers[0].running_mean().to_vec1().unwrap();
        let m1: Vec<f32> = layers[1].running_mean().to_vec1().unwrap();
        assert!(m0.iter().any(|&v| v != 0.0));
        assert!(m1.iter().all(|&v| v == 0.0));
    }
}
