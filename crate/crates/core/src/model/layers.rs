use candle_core::{Tensor, Var, D};

use super::params::{Init, ParamStore};
use crate::error::Result;

/// Numerically stable logistic function, `(tanh(x/2) + 1) / 2`.
pub fn sigmoid(x: &Tensor) -> candle_core::Result<Tensor> {
    (x.affine(0.5, 0.0)?.tanh()? + 1.0)? * 0.5
}

pub struct Conv2d {
    weight: Var,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    /// Bias-free convolution (always followed by batch norm here).
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self> {
        let fan_in = (in_c * kernel * kernel) as f64;
        let weight = store.param(
            &format!("{name}.weight"),
            &[out_c, in_c, kernel, kernel],
            Init::Uniform((6.0 / fan_in).sqrt()),
        )?;
        Ok(Self {
            weight,
            stride,
            padding,
        })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.conv2d(self.weight.as_tensor(), self.padding, self.stride, 1, 1)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims()[1]
    }
}

pub struct Linear {
    pub(crate) weight: Var,
    pub(crate) bias: Var,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize) -> Result<Self> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.param(&format!("{name}.weight"), &[out_dim, in_dim], Init::Uniform(bound))?;
        let bias = store.param(&format!("{name}.bias"), &[out_dim], Init::Uniform(bound))?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        x.matmul(&self.weight.as_tensor().t()?)?
            .broadcast_add(self.bias.as_tensor())
    }

    pub fn bias(&self) -> &Tensor {
        self.bias.as_tensor()
    }
}

/// Batch normalization over N×C×H×W with running statistics.
///
/// When `frozen`, the layer normalizes with its running statistics in both
/// training and evaluation and never updates them; the affine parameters stay
/// trainable.
pub struct BatchNorm2d {
    weight: Var,
    bias: Var,
    running_mean: Var,
    running_var: Var,
    momentum: f64,
    eps: f64,
    frozen: bool,
}

impl BatchNorm2d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            weight: store.param(&format!("{name}.weight"), &[channels], Init::Const(1.0))?,
            bias: store.param(&format!("{name}.bias"), &[channels], Init::Const(0.0))?,
            running_mean: store.buffer(&format!("{name}.running_mean"), &[channels], 0.0)?,
            running_var: store.buffer(&format!("{name}.running_var"), &[channels], 1.0)?,
            momentum: 0.1,
            eps: 1e-5,
            frozen: false,
        })
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn running_mean(&self) -> Tensor {
        self.running_mean.as_tensor().detach()
    }

    pub fn running_var(&self) -> Tensor {
        self.running_var.as_tensor().detach()
    }

    pub fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let c = x.dim(1)?;
        let (mean, var) = if train && !self.frozen {
            let mean = x.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;
            let centred = x.broadcast_sub(&mean)?;
            let var = centred.sqr()?.mean_keepdim(0)?.mean_keepdim(2)?.mean_keepdim(3)?;

            let n = (x.elem_count() / c) as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            let m = self.momentum;
            let batch_mean = mean.detach().flatten_all()?;
            let batch_var = (var.detach().flatten_all()? * unbiased)?;
            self.running_mean
                .set(&((self.running_mean.as_tensor() * (1.0 - m))? + (batch_mean * m)?)?)?;
            self.running_var
                .set(&((self.running_var.as_tensor() * (1.0 - m))? + (batch_var * m)?)?)?;
            (mean, var)
        } else {
            (
                self.running_mean().reshape((1, c, 1, 1))?,
                self.running_var().reshape((1, c, 1, 1))?,
            )
        };
        let xhat = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        xhat.broadcast_mul(&self.weight.as_tensor().reshape((1, c, 1, 1))?)?
            .broadcast_add(&self.bias.as_tensor().reshape((1, c, 1, 1))?)
    }
}

/// Spatial mean over H×W: N×C×H×W → N×C.
pub fn global_avg_pool(x: &Tensor) -> candle_core::Result<Tensor> {
    x.mean(D::Minus1)?.mean(D::Minus1)
}
