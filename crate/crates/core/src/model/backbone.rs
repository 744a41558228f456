//! Image → feature-vector extractors.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use super::layers::{global_avg_pool, BatchNorm2d, Conv2d};
use super::params::ParamStore;
use crate::error::{Error, Result};

/// A convolutional feature extractor: N×C×H×W → N×F.
pub trait Backbone: Send + Sync {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor>;

    fn in_channels(&self) -> usize;

    fn out_dim(&self) -> usize;

    /// Normalization layers in forward order.
    fn norm_layers(&self) -> Vec<&BatchNorm2d>;

    fn norm_layers_mut(&mut self) -> Vec<&mut BatchNorm2d>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackbonePreset {
    /// Four conv–BN–ReLU stages with 2× max pooling between them.
    Tiny { widths: [usize; 4] },
    /// Bottleneck residual network, 50 layers.
    Resnet50,
    /// Bottleneck residual network, 101 layers.
    Resnet101,
}

impl Default for BackbonePreset {
    fn default() -> Self {
        BackbonePreset::Tiny {
            widths: [16, 32, 64, 128],
        }
    }
}

impl BackbonePreset {
    pub fn build(&self, store: &mut ParamStore, name: &str, in_channels: usize) -> Result<Box<dyn Backbone>> {
        Ok(match self {
            BackbonePreset::Tiny { widths } => Box::new(TinyConvNet::new(store, name, in_channels, *widths)?),
            BackbonePreset::Resnet50 => Box::new(ResNet::new(store, name, in_channels, &[3, 4, 6, 3], 64)?),
            BackbonePreset::Resnet101 => Box::new(ResNet::new(store, name, in_channels, &[3, 4, 23, 3], 64)?),
        })
    }
}

fn check_input(x: &Tensor, in_channels: usize) -> Result<()> {
    let dims = x.dims();
    if dims.len() != 4 || dims[1] != in_channels {
        return Err(Error::invalid(format!(
            "backbone expects N×{in_channels}×H×W input, got {dims:?}"
        )));
    }
    Ok(())
}

/// Small CPU-friendly backbone (~100k parameters with the default widths).
pub struct TinyConvNet {
    convs: Vec<Conv2d>,
    norms: Vec<BatchNorm2d>,
    out_dim: usize,
}

impl TinyConvNet {
    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, widths: [usize; 4]) -> Result<Self> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        let mut c = in_channels;
        for (i, &w) in widths.iter().enumerate() {
            convs.push(Conv2d::new(store, &format!("{name}.stage{i}.conv"), c, w, 3, 1, 1)?);
            norms.push(BatchNorm2d::new(store, &format!("{name}.stage{i}.bn"), w)?);
            c = w;
        }
        Ok(Self {
            convs,
            norms,
            out_dim: c,
        })
    }
}

impl Backbone for TinyConvNet {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        check_input(x, self.in_channels())?;
        let mut h = x.clone();
        let last = self.convs.len() - 1;
        for (i, (conv, bn)) in self.convs.iter().zip(&self.norms).enumerate() {
            h = bn.forward(&conv.forward(&h)?, train)?.relu()?;
            let (_, _, hh, ww) = h.dims4()?;
            if i < last && hh >= 2 && ww >= 2 {
                h = h.max_pool2d(2)?;
            }
        }
        Ok(global_avg_pool(&h)?)
    }

    fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn norm_layers(&self) -> Vec<&BatchNorm2d> {
        self.norms.iter().collect()
    }

    fn norm_layers_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        self.norms.iter_mut().collect()
    }
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(store: &mut ParamStore, name: &str, in_c: usize, width: usize, stride: usize) -> Result<Self> {
        let out_c = width * ResNet::EXPANSION;
        let downsample = if stride != 1 || in_c != out_c {
            Some((
                Conv2d::new(store, &format!("{name}.downsample.0"), in_c, out_c, 1, stride, 0)?,
                BatchNorm2d::new(store, &format!("{name}.downsample.1"), out_c)?,
            ))
        } else {
            None
        };
        Ok(Self {
            conv1: Conv2d::new(store, &format!("{name}.conv1"), in_c, width, 1, 1, 0)?,
            bn1: BatchNorm2d::new(store, &format!("{name}.bn1"), width)?,
            conv2: Conv2d::new(store, &format!("{name}.conv2"), width, width, 3, stride, 1)?,
            bn2: BatchNorm2d::new(store, &format!("{name}.bn2"), width)?,
            conv3: Conv2d::new(store, &format!("{name}.conv3"), width, out_c, 1, 1, 0)?,
            bn3: BatchNorm2d::new(store, &format!("{name}.bn3"), out_c)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> candle_core::Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, train)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?, train)?;
        let shortcut = match &self.downsample {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?, train)?,
            None => x.clone(),
        };
        (h + shortcut)?.relu()
    }

    fn norms(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1, &self.bn2, &self.bn3];
        if let Some((_, bn)) = &self.downsample {
            v.push(bn);
        }
        v
    }

    fn norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1, &mut self.bn2, &mut self.bn3];
        if let Some((_, bn)) = &mut self.downsample {
            v.push(bn);
        }
        v
    }
}

/// Bottleneck residual network with torchvision parameter naming, so exported
/// weights can be loaded by name.
pub struct ResNet {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    blocks: Vec<Bottleneck>,
    out_dim: usize,
}

impl ResNet {
    const EXPANSION: usize = 4;

    pub fn new(store: &mut ParamStore, name: &str, in_channels: usize, depths: &[usize; 4], base: usize) -> Result<Self> {
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), in_channels, base, 7, 2, 3)?;
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), base)?;
        let mut blocks = Vec::new();
        let mut in_c = base;
        for (stage, &depth) in depths.iter().enumerate() {
            let width = base << stage;
            for b in 0..depth {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                let block_name = format!("{name}.layer{}.{b}", stage + 1);
                blocks.push(Bottleneck::new(store, &block_name, in_c, width, stride)?);
                in_c = width * Self::EXPANSION;
            }
        }
        Ok(Self {
            conv1,
            bn1,
            blocks,
            out_dim: in_c,
        })
    }
}

impl Backbone for ResNet {
    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        check_input(x, self.in_channels())?;
        let h = self.bn1.forward(&self.conv1.forward(x)?, train)?.relu()?;
        // 3×3/2 max pool with one pixel of padding; zero padding is exact after ReLU.
        let mut h = h
            .pad_with_zeros(2, 1, 1)?
            .pad_with_zeros(3, 1, 1)?
            .max_pool2d_with_stride(3, 2)?;
        for block in &self.blocks {
            h = block.forward(&h, train)?;
        }
        Ok(global_avg_pool(&h)?)
    }

    fn in_channels(&self) -> usize {
        self.conv1.in_channels()
    }

    fn out_dim(&self) -> usize {
        self.out_dim
    }

    fn norm_layers(&self) -> Vec<&BatchNorm2d> {
        let mut v = vec![&self.bn1];
        v.extend(self.blocks.iter().flat_map(|b| b.norms()));
        v
    }

    fn norm_layers_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut v = vec![&mut self.bn1];
        v.extend(self.blocks.iter_mut().flat_map(|b| b.norms_mut()));
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn tiny_output_width_and_param_count() {
        let mut store = ParamStore::new(0, &Device::Cpu);
        let net = BackbonePreset::default().build(&mut store, "b", 3).unwrap();
        assert_eq!(net.out_dim(), 128);
        let n = store.num_trainable();
        assert!((90_000..110_000).contains(&n), "{n}");
        let x = Tensor::zeros((2, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.forward(&x, false).unwrap().dims(), &[2, 128]);
    }

    #[test]
    fn rejects_wrong_channel_count() {
        let mut store = ParamStore::new(0, &Device::Cpu);
        let net = BackbonePreset::default().build(&mut store, "b", 10).unwrap();
        let x = Tensor::zeros((1, 3, 16, 16), DType::F32, &Device::Cpu).unwrap();
        assert!(net.forward(&x, false).is_err());
    }

    #[test]
    fn resnet50_preset_shape() {
        let mut store = ParamStore::new(0, &Device::Cpu);
        let net = BackbonePreset::Resnet50.build(&mut store, "body", 3).unwrap();
        assert_eq!(net.out_dim(), 2048);
        // 53 norm layers: stem + 16 blocks × 3 + 4 downsample.
        assert_eq!(net.norm_layers().len(), 53);
        assert!(store.get("body.layer1.0.downsample.0.weight").is_some());
        let x = Tensor::zeros((1, 3, 32, 32), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(net.forward(&x, false).unwrap().dims(), &[1, 2048]);
    }
}
