//! A configured network with its parameters: batching of sampled snippets,
//! segment-consensus inference and checkpoint I/O.

use std::path::{Path, PathBuf};

use candle_core::{Device, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::predictions::PredictionRecord;
use crate::data::{Dataset, InstanceAnnotation};
use crate::error::{Error, Result};
use crate::model::{consensus, snippets_to_tensor, EmotionNet, HeadOutputs, ParamStore, PredictionSet};
use crate::sampler::{sample_segments_with, SampleMode, SamplePlan};
use crate::streams::{Snippet, SnippetLoader};

/// JSON sidecar written next to every checkpoint's parameter file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub val_ers: Option<f64>,
    pub streams: Vec<String>,
    pub config_hash: String,
    pub embedding_dim: usize,
    pub config: RunConfig,
}

pub struct TsnModel {
    config: RunConfig,
    embedding_dim: usize,
    store: ParamStore,
    net: EmotionNet,
    loader: SnippetLoader,
}

/// Input tensors for a batch of instances, K snippets per instance, instance-major.
pub struct InputBatch {
    pub body: Tensor,
    pub context: Option<Tensor>,
    pub k: usize,
}

impl TsnModel {
    pub fn new(config: &RunConfig, embedding_dim: usize) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut store = ParamStore::new(config.seed, &device);
        let mut net = EmotionNet::new(&config.net_config(embedding_dim), &mut store)?;
        if let Some(path) = &config.init_weights {
            let n = store.load_matching(path)?;
            log::info!("loaded {n} tensors from {}", path.display());
        }
        if config.partial_bn {
            net.apply_partial_bn();
        }
        Ok(Self {
            config: config.clone(),
            embedding_dim,
            store,
            net,
            loader: SnippetLoader::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn net(&self) -> &EmotionNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut EmotionNet {
        &mut self.net
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    /// Plans `k` segments for an instance, snippet length set by the network's primary stream.
    pub fn plan(&self, inst: &InstanceAnnotation, k: usize, mode: SampleMode, rng: &mut dyn RngCore) -> SamplePlan {
        let len = self.config.snippet_len(self.net.kind().primary_stream());
        sample_segments_with(inst.n_frames(), k, len, mode, rng)
    }

    /// Body and optional context snippets for each planned segment.
    pub fn snippets(&self, dataset: &Dataset, inst: &InstanceAnnotation, plan: &SamplePlan) -> Result<(Vec<Snippet>, Option<Vec<Snippet>>)> {
        let settings = self.config.stream_settings();
        let kind = self.net.kind();
        let body = self.loader.load(dataset, inst, plan, kind.primary_stream(), &settings)?;
        let context = match kind.context_stream() {
            Some(stream) => {
                // Context is a single RGB frame at the same segment positions.
                let rgb_plan = SamplePlan {
                    snippet_len: 1,
                    ..plan.clone()
                };
                Some(self.loader.load(dataset, inst, &rgb_plan, stream, &settings)?)
            }
            None => None,
        };
        Ok((body, context))
    }

    pub fn batch(&self, dataset: &Dataset, instances: &[&InstanceAnnotation], k: usize, mode: SampleMode, rng: &mut dyn RngCore) -> Result<InputBatch> {
        let mut body = Vec::new();
        let mut context = Vec::new();
        for inst in instances {
            let plan = self.plan(inst, k, mode, rng);
            let (b, c) = self.snippets(dataset, inst, &plan)?;
            body.extend(b);
            if let Some(c) = c {
                context.extend(c);
            }
        }
        let device = self.net.device();
        let body_t = snippets_to_tensor(&body.iter().collect::<Vec<_>>(), device)?;
        let context_t = if context.is_empty() {
            None
        } else {
            Some(snippets_to_tensor(&context.iter().collect::<Vec<_>>(), device)?)
        };
        Ok(InputBatch {
            body: body_t,
            context: context_t,
            k,
        })
    }

    /// Instance-level outputs after averaging over segments.
    pub fn forward(&self, batch: &InputBatch, train: bool) -> Result<HeadOutputs> {
        self.net
            .forward(&batch.body, batch.context.as_ref(), train)?
            .consensus(batch.k)
    }

    /// Evaluation-mode predictions of each of the `k` uniformly placed segments.
    pub fn predict_segments(&self, dataset: &Dataset, inst: &InstanceAnnotation, k: usize) -> Result<Vec<PredictionSet>> {
        // Test-mode sampling draws nothing from the generator.
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        let batch = self.batch(dataset, &[inst], k, SampleMode::TestUniform, &mut unused)?;
        self.net
            .forward(&batch.body, batch.context.as_ref(), false)?
            .to_prediction_sets()
    }

    /// Segment consensus over `k` uniformly placed segments.
    pub fn predict_instance(&self, dataset: &Dataset, inst: &InstanceAnnotation, k: usize) -> Result<PredictionSet> {
        consensus(&self.predict_segments(dataset, inst, k)?)
    }

    pub fn predict(&self, dataset: &Dataset, k: usize) -> Result<Vec<PredictionRecord>> {
        dataset
            .instances
            .iter()
            .map(|inst| {
                let p = self.predict_instance(dataset, inst, k)?;
                Ok(PredictionRecord::new(inst, &p))
            })
            .collect()
    }

    pub fn meta(&self, epoch: usize, val_ers: Option<f64>) -> CheckpointMeta {
        CheckpointMeta {
            epoch,
            val_ers: val_ers.filter(|v| v.is_finite()),
            streams: self
                .net
                .kind()
                .streams()
                .iter()
                .map(|s| serde_json::to_value(s).unwrap().as_str().unwrap().to_string())
                .collect(),
            config_hash: self.config.hash(),
            embedding_dim: self.embedding_dim,
            config: self.config.clone(),
        }
    }

    /// Writes `<stem>.safetensors` and `<stem>.json` in `dir`; returns the parameter path.
    pub fn save(&self, dir: &Path, stem: &str, epoch: usize, val_ers: Option<f64>) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let params = dir.join(format!("{stem}.safetensors"));
        self.store.save(&params)?;
        let sidecar = params.with_extension("json");
        let json = serde_json::to_string_pretty(&self.meta(epoch, val_ers))?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        Ok(params)
    }

    /// Loads a checkpoint from its parameter file or its JSON sidecar.
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta)> {
        let params = path.with_extension("safetensors");
        let sidecar = path.with_extension("json");
        let text = std::fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let config = RunConfig {
            init_weights: None,
            ..meta.config.clone()
        };
        let model = Self::new(&config, meta.embedding_dim)?;
        model.store.load(&params)?;
        Ok((model, meta))
    }
}
