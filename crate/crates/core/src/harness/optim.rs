use std::collections::HashMap;

use candle_core::backprop::GradStore;
use candle_core::Tensor;

use crate::error::Result;
use crate::model::ParamStore;

/// Stochastic gradient descent with heavy-ball momentum and L2 weight decay:
/// `v ← μ·v + (g + λ·w)`, `w ← w − lr·v` (the velocity starts at the first gradient).
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: HashMap<String, Tensor>,
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &ParamStore, grads: &GradStore, lr: f64) -> Result<()> {
        for (name, var) in store.trainable() {
            let Some(g) = grads.get(var) else { continue };
            // Gradients carry the backward graph; keeping them would chain every step's graph.
            let mut g = g.detach();
            if self.weight_decay != 0.0 {
                g = (g + (var.as_tensor().detach() * self.weight_decay)?)?;
            }
            let v = match self.velocity.get(name) {
                Some(prev) if self.momentum != 0.0 => ((prev * self.momentum)? + g)?,
                _ => g,
            };
            var.set(&(var.as_tensor().detach() - (&v * lr)?)?)?;
            self.velocity.insert(name.clone(), v);
        }
        Ok(())
    }
}
