//! Named parameter storage with seeded initialization and safetensors I/O.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// Uniform on `[-bound, bound]`.
    Uniform(f64),
}

/// All variables of a network, keyed by dotted name.
///
/// Trainable parameters and running-statistics buffers live side by side so a
/// checkpoint is one safetensors file; only the former are handed to the optimizer.
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    buffers: BTreeSet<String>,
    rng: ChaCha8Rng,
    device: Device,
    dtype: DType,
}

impl ParamStore {
    pub fn new(seed: u64, device: &Device) -> Self {
        Self {
            vars: BTreeMap::new(),
            buffers: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            device: device.clone(),
            dtype: DType::F32,
        }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn make(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if self.vars.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Const(c) => vec![c as f32; n],
            Init::Uniform(b) => (0..n)
                .map(|_| self.rng.random_range(-b..=b) as f32)
                .collect(),
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        self.vars.insert(name.to_string(), var.clone());
        Ok(var)
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.make(name, shape, init)
    }

    /// Non-trainable state such as batch-norm running statistics.
    pub fn buffer(&mut self, name: &str, shape: &[usize], value: f64) -> Result<Var> {
        let v = self.make(name, shape, Init::Const(value))?;
        self.buffers.insert(name.to_string());
        Ok(v)
    }

    pub fn trainable(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter().filter(|(k, _)| !self.buffers.contains(*k))
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.vars.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.vars.keys()
    }

    pub fn num_trainable(&self) -> usize {
        self.trainable().map(|(_, v)| v.elem_count()).sum()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors: HashMap<String, Tensor> = self
            .vars
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        candle_core::safetensors::save(&tensors, path)?;
        Ok(())
    }

    /// Loads every variable from `path`; the file must match this store exactly.
    pub fn load(&self, path: &Path) -> Result<()> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        if let Some(missing) = self.vars.keys().find(|k| !loaded.contains_key(*k)) {
            return Err(Error::invalid(format!(
                "{}: missing tensor {missing}",
                path.display()
            )));
        }
        if let Some(extra) = loaded.keys().find(|k| !self.vars.contains_key(*k)) {
            return Err(Error::invalid(format!(
                "{}: unexpected tensor {extra}",
                path.display()
            )));
        }
        self.assign(loaded, path).map(|_| ())
    }

    /// Loads the subset of variables present in `path` (e.g. external backbone
    /// weights). Returns how many were assigned.
    pub fn load_matching(&self, path: &Path) -> Result<usize> {
        let loaded = candle_core::safetensors::load(path, &self.device)?;
        let matching = loaded
            .into_iter()
            .filter(|(k, _)| self.vars.contains_key(k))
            .collect();
        self.assign(matching, path)
    }

    fn assign(&self, tensors: HashMap<String, Tensor>, path: &Path) -> Result<usize> {
        let mut n = 0;
        for (name, t) in tensors {
            let var = &self.vars[&name];
            if var.dims() != t.dims() {
                return Err(Error::invalid(format!(
                    "{}: tensor {name} has shape {:?}, expected {:?}",
                    path.display(),
                    t.dims(),
                    var.dims()
                )));
            }
            var.set(&t.to_dtype(self.dtype)?)?;
            n += 1;
        }
        Ok(n)
    }
}
