use std::collections::BTreeMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::RunConfig;
use super::optim::Sgd;
use super::tsn::TsnModel;
use crate::data::{binarize_targets, Dataset, InstanceAnnotation};
use crate::error::{Error, Result};
use crate::losses::{batch_loss, BatchTargets, LossBreakdown};
use crate::sampler::SampleMode;
use crate::taxonomy::EmotionTaxonomy;

/// Single-writer optimization loop over one network.
pub struct Trainer {
    model: TsnModel,
    taxonomy: EmotionTaxonomy,
    optimizer: Sgd,
    rng: ChaCha8Rng,
    step: usize,
}

impl Trainer {
    pub fn new(config: &RunConfig, taxonomy: &EmotionTaxonomy) -> Result<Self> {
        let model = TsnModel::new(config, taxonomy.dim())?;
        Ok(Self {
            model,
            taxonomy: taxonomy.clone(),
            optimizer: Sgd::new(config.momentum, config.weight_decay),
            // Separate stream from parameter init so sampling does not depend on model size.
            rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9_7f4a_7c15)),
            step: 0,
        })
    }

    pub fn model(&self) -> &TsnModel {
        &self.model
    }

    pub fn into_model(self) -> TsnModel {
        self.model
    }

    pub fn config(&self) -> &RunConfig {
        self.model.config()
    }

    /// Optimization steps taken so far.
    pub fn steps(&self) -> usize {
        self.step
    }

    fn targets(&self, instances: &[&InstanceAnnotation]) -> Result<BatchTargets> {
        let cfg = self.model.config();
        let b = instances.len();
        let d = self.taxonomy.dim();
        let mut binary = Vec::with_capacity(b * crate::NUM_CATEGORIES);
        let mut scores = Vec::with_capacity(b * crate::NUM_CATEGORIES);
        let mut vad = Vec::with_capacity(b * crate::NUM_VAD);
        let mut embedding = Vec::with_capacity(b * d);
        let mut mask = Vec::with_capacity(b);
        for inst in instances {
            binary.extend(binarize_targets(&inst.categorical, cfg.threshold).iter().map(|&v| v as f32));
            scores.extend(inst.categorical.iter().map(|&v| v as f32));
            vad.extend(inst.vad.iter().map(|&v| v as f32));
            let positives = inst.positives(cfg.threshold);
            if positives.is_empty() {
                embedding.extend(std::iter::repeat_n(0.0f32, d));
                mask.push(0.0f32);
            } else {
                let mean = self.taxonomy.mean_positive_embedding(&positives)?;
                embedding.extend(mean.iter().map(|&v| v as f32));
                mask.push(1.0);
            }
        }
        let dev = self.model.net().device();
        Ok(BatchTargets {
            binary: Tensor::from_vec(binary, (b, crate::NUM_CATEGORIES), dev)?,
            scores: Tensor::from_vec(scores, (b, crate::NUM_CATEGORIES), dev)?,
            vad: Tensor::from_vec(vad, (b, crate::NUM_VAD), dev)?,
            embedding: Tensor::from_vec(embedding, (b, d), dev)?,
            emb_mask: Tensor::from_vec(mask, b, dev)?,
        })
    }

    /// Samples, forwards and differentiates one batch without updating parameters.
    fn loss_and_grads(&mut self, dataset: &Dataset, indices: &[usize]) -> Result<(LossBreakdown, GradStore)> {
        let instances: Vec<&InstanceAnnotation> = indices.iter().map(|&i| &dataset.instances[i]).collect();
        let cfg = self.model.config().clone();
        let batch = self
            .model
            .batch(dataset, &instances, cfg.k_train, SampleMode::TrainRandom, &mut self.rng)?;
        let out = self.model.forward(&batch, true)?;
        let targets = self.targets(&instances)?;
        let (total, breakdown) = batch_loss(&out, &targets, cfg.use_emb, cfg.emb_distance)?;
        if !breakdown.is_finite() {
            let names: Vec<String> = instances.iter().map(|i| i.key().to_string()).collect();
            return Err(Error::NonFiniteLoss {
                step: self.step,
                instances: names.join(", "),
            });
        }
        Ok((breakdown, total.backward()?))
    }

    /// One SGD step on the given instances.
    pub fn step(&mut self, dataset: &Dataset, indices: &[usize], lr: f64) -> Result<LossBreakdown> {
        let (breakdown, grads) = self.loss_and_grads(dataset, indices)?;
        self.optimizer.step(self.model.store(), &grads, lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// L2 norm of the gradient of every trainable parameter for one batch.
    pub fn gradient_norms(&mut self, dataset: &Dataset, indices: &[usize]) -> Result<BTreeMap<String, f64>> {
        let (_, grads) = self.loss_and_grads(dataset, indices)?;
        let mut norms = BTreeMap::new();
        for (name, var) in self.model.store().trainable() {
            let n = match grads.get(var) {
                Some(g) => g.sqr()?.sum_all()?.sqrt()?.to_scalar::<f32>()? as f64,
                None => 0.0,
            };
            norms.insert(name.clone(), n);
        }
        Ok(norms)
    }

    /// A shuffled pass over the dataset in mini-batches; returns each step's losses.
    pub fn train_epoch(&mut self, dataset: &Dataset, epoch: usize) -> Result<Vec<(usize, LossBreakdown)>> {
        if dataset.is_empty() {
            return Err(Error::invalid("empty training set"));
        }
        let lr = self.model.config().learning_rate(epoch);
        let batch_size = self.model.config().batch_size;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut self.rng);
        let mut log = Vec::new();
        for chunk in order.chunks(batch_size) {
            let step = self.step;
            log.push((step, self.step(dataset, chunk, lr)?));
        }
        Ok(log)
    }
}
