//! Frozen classification backbones used as feature extractors.
//!
//! Parameter names follow the torchvision layout (`layer1.0.conv1.weight`,
//! `features.0.weight`, ...) so exported ImageNet weights load directly.
//! Without a weight file the backbone is initialised from a seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Conv2d, FrozenBatchNorm, Init};
use super::weights;
use crate::autograd::{Module, Param, Var};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::ImageTensor;

const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BackboneKind {
    ResNet18,
    Vgg19,
}

impl fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackboneKind::ResNet18 => "resnet18",
            BackboneKind::Vgg19 => "vgg19",
        })
    }
}

impl FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet18" | "resnet-18" => Ok(BackboneKind::ResNet18),
            "vgg19" | "vgg-19" => Ok(BackboneKind::Vgg19),
            other => Err(Error::Config(format!("unknown backbone '{other}'"))),
        }
    }
}

impl BackboneKind {
    pub fn stages(self) -> &'static [&'static str] {
        match self {
            BackboneKind::ResNet18 => &["layer1", "layer2", "layer3", "layer4"],
            BackboneKind::Vgg19 => &["relu1_2", "relu2_2", "relu3_4", "relu4_4", "relu5_4"],
        }
    }

    pub fn default_stage(self) -> &'static str {
        match self {
            BackboneKind::ResNet18 => "layer2",
            BackboneKind::Vgg19 => "relu4_4",
        }
    }

    /// Spatial stride of the features at `stage`.
    pub fn stride(self, stage: &str) -> Result<usize> {
        let idx = self
            .stages()
            .iter()
            .position(|s| *s == stage)
            .ok_or_else(|| Error::Config(format!("backbone {self} has no stage '{stage}'")))?;
        Ok(match self {
            BackboneKind::ResNet18 => 4 << idx,
            BackboneKind::Vgg19 => 1 << idx,
        })
    }

    /// Channels of the features at `stage`.
    pub fn channels(self, stage: &str) -> Result<usize> {
        let idx = self
            .stages()
            .iter()
            .position(|s| *s == stage)
            .ok_or_else(|| Error::Config(format!("backbone {self} has no stage '{stage}'")))?;
        Ok(match self {
            BackboneKind::ResNet18 => 64 << idx,
            BackboneKind::Vgg19 => [64, 128, 256, 512, 512][idx],
        })
    }
}

#[derive(Debug, Clone)]
struct BasicBlock<T: Float> {
    conv1: Conv2d<T>,
    bn1: FrozenBatchNorm<T>,
    conv2: Conv2d<T>,
    bn2: FrozenBatchNorm<T>,
    downsample: Option<(Conv2d<T>, FrozenBatchNorm<T>)>,
}

impl<T: Float> BasicBlock<T> {
    fn new(name: &str, cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        let init = Init::KaimingFanOut;
        BasicBlock {
            conv1: Conv2d::frozen(&format!("{name}.conv1"), cin, cout, 3, stride, 1, false, init, rng),
            bn1: FrozenBatchNorm::new(&format!("{name}.bn1"), cout),
            conv2: Conv2d::frozen(&format!("{name}.conv2"), cout, cout, 3, 1, 1, false, init, rng),
            bn2: FrozenBatchNorm::new(&format!("{name}.bn2"), cout),
            downsample: (stride != 1 || cin != cout).then(|| {
                (
                    Conv2d::frozen(&format!("{name}.downsample.0"), cin, cout, 1, stride, 0, false, init, rng),
                    FrozenBatchNorm::new(&format!("{name}.downsample.1"), cout),
                )
            }),
        }
    }

    fn forward(&self, x: &Var<T>) -> Var<T> {
        let h = self.bn1.forward(&self.conv1.forward(x)).relu();
        let h = self.bn2.forward(&self.conv2.forward(&h));
        let skip = match &self.downsample {
            Some((c, bn)) => bn.forward(&c.forward(x)),
            None => x.clone(),
        };
        h.add(&skip).relu()
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        v.extend(self.conv2.params());
        v.extend(self.bn2.params());
        if let Some((c, bn)) = &self.downsample {
            v.extend(c.params());
            v.extend(bn.params());
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        v.extend(self.conv2.params_mut());
        v.extend(self.bn2.params_mut());
        if let Some((c, bn)) = &mut self.downsample {
            v.extend(c.params_mut());
            v.extend(bn.params_mut());
        }
        v
    }
}

#[derive(Debug, Clone)]
struct ResNet18<T: Float> {
    conv1: Conv2d<T>,
    bn1: FrozenBatchNorm<T>,
    layers: Vec<[BasicBlock<T>; 2]>,
}

impl<T: Float> ResNet18<T> {
    fn new(depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let widths = [64, 128, 256, 512];
        let layers = (0..depth)
            .map(|i| {
                let cin = if i == 0 { 64 } else { widths[i - 1] };
                let stride = if i == 0 { 1 } else { 2 };
                let name = format!("layer{}", i + 1);
                [
                    BasicBlock::new(&format!("{name}.0"), cin, widths[i], stride, rng),
                    BasicBlock::new(&format!("{name}.1"), widths[i], widths[i], 1, rng),
                ]
            })
            .collect();
        ResNet18 {
            conv1: Conv2d::frozen("conv1", 3, 64, 7, 2, 3, false, Init::KaimingFanOut, rng),
            bn1: FrozenBatchNorm::new("bn1", 64),
            layers,
        }
    }

    fn forward(&self, x: &Var<T>) -> Var<T> {
        let mut h = self.bn1.forward(&self.conv1.forward(x)).relu().max_pool2d(3, 2, 1);
        for layer in &self.layers {
            for block in layer {
                h = block.forward(&h);
            }
        }
        h
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv1.params();
        v.extend(self.bn1.params());
        for layer in &self.layers {
            for b in layer {
                v.extend(b.params());
            }
        }
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.bn1.params_mut());
        for layer in &mut self.layers {
            for b in layer {
                v.extend(b.params_mut());
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
enum VggOp<T: Float> {
    Conv(Conv2d<T>),
    Pool,
}

#[derive(Debug, Clone)]
struct Vgg19<T: Float> {
    ops: Vec<VggOp<T>>,
}

impl<T: Float> Vgg19<T> {
    /// Builds the layers up to and including the `depth`-th block's last conv.
    fn new(depth: usize, rng: &mut ChaCha8Rng) -> Self {
        let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 4), (512, 4), (512, 4)];
        let mut ops = Vec::new();
        let mut idx = 0;
        let mut cin = 3;
        for (b, &(width, reps)) in blocks.iter().enumerate().take(depth) {
            if b > 0 {
                ops.push(VggOp::Pool);
                idx += 1;
            }
            for _ in 0..reps {
                let name = format!("features.{idx}");
                ops.push(VggOp::Conv(Conv2d::frozen(&name, cin, width, 3, 1, 1, true, Init::KaimingFanOut, rng)));
                // conv + relu occupy two torchvision indices
                idx += 2;
                cin = width;
            }
        }
        Vgg19 { ops }
    }

    fn forward(&self, x: &Var<T>) -> Var<T> {
        let mut h = x.clone();
        for op in &self.ops {
            h = match op {
                VggOp::Conv(c) => c.forward(&h).relu(),
                VggOp::Pool => h.max_pool2d(2, 2, 0),
            };
        }
        h
    }

    fn convs(&self) -> impl Iterator<Item = &Conv2d<T>> {
        self.ops.iter().filter_map(|o| match o {
            VggOp::Conv(c) => Some(c),
            VggOp::Pool => None,
        })
    }
}

#[derive(Debug, Clone)]
enum Net<T: Float> {
    ResNet(ResNet18<T>),
    Vgg(Vgg19<T>),
}

/// A frozen backbone truncated at a named stage. Inputs are images in `[0, 1]`
/// and are renormalised with ImageNet statistics internally.
#[derive(Debug, Clone)]
pub struct FeatureExtractor<T: Float> {
    kind: BackboneKind,
    stage: String,
    net: Net<T>,
}

impl<T: Float> FeatureExtractor<T> {
    /// Seed-initialised backbone.
    pub fn seeded(kind: BackboneKind, stage: &str, seed: u64) -> Result<Self> {
        let depth = kind
            .stages()
            .iter()
            .position(|s| *s == stage)
            .ok_or_else(|| Error::Config(format!("backbone {kind} has no stage '{stage}'")))?
            + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match kind {
            BackboneKind::ResNet18 => Net::ResNet(ResNet18::new(depth, &mut rng)),
            BackboneKind::Vgg19 => Net::Vgg(Vgg19::new(depth, &mut rng)),
        };
        Ok(FeatureExtractor {
            kind,
            stage: stage.to_string(),
            net,
        })
    }

    /// Backbone with weights read from a safetensors file using torchvision
    /// names. Tensors beyond the truncation stage are ignored.
    pub fn from_safetensors(kind: BackboneKind, stage: &str, path: &Path) -> Result<Self> {
        let mut fe = Self::seeded(kind, stage, 0)?;
        weights::load_into(&mut fe.params_mut(), path, false)?;
        Ok(fe)
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn stride(&self) -> usize {
        self.kind.stride(&self.stage).expect("validated at construction")
    }

    /// `x`: (N, 3, H, W) in `[0, 1]` -> (N, C, H/stride, W/stride).
    pub fn forward(&self, x: &Var<T>) -> Result<Var<T>> {
        if x.ndim() != 4 || x.shape()[1] != 3 {
            return Err(Error::Shape(format!(
                "feature extractor expects (N, 3, H, W) input, got {:?}",
                x.shape()
            )));
        }
        let (_, _, h, w) = x.dims4();
        let s = self.stride();
        if h < s || w < s {
            return Err(Error::Shape(format!(
                "input {h}x{w} is smaller than the backbone stride {s}"
            )));
        }
        let mean = ArrayD::from_shape_fn(IxDyn(&[1, 3, 1, 1]), |i| T::cast(IMAGENET_MEAN[i[1]]));
        let inv_std = ArrayD::from_shape_fn(IxDyn(&[1, 3, 1, 1]), |i| T::cast(1.0 / IMAGENET_STD[i[1]]));
        let z = x.sub(&Var::constant(mean)).mul(&Var::constant(inv_std));
        Ok(match &self.net {
            Net::ResNet(n) => n.forward(&z),
            Net::Vgg(n) => n.forward(&z),
        })
    }

    /// Features of a single image as an (C, h, w) array in 64-bit.
    pub fn extract(&self, img: &ImageTensor) -> Result<ndarray::Array3<f64>> {
        if img.channels() != 3 {
            return Err(Error::Shape(format!("expected a 3-channel image, got {}", img.channels())));
        }
        let f = crate::autograd::no_grad(|| self.forward(&Var::constant(img.to_batch::<T>())))?;
        let v = f.value();
        let s = v.shape();
        Ok(ndarray::Array3::from_shape_fn((s[1], s[2], s[3]), |(c, i, j)| v[[0, c, i, j]].as_f64()))
    }
}

impl<T: Float> Module<T> for FeatureExtractor<T> {
    fn params(&self) -> Vec<&Param<T>> {
        match &self.net {
            Net::ResNet(n) => n.params(),
            Net::Vgg(n) => n.convs().flat_map(|c| c.params()).collect(),
        }
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        match &mut self.net {
            Net::ResNet(n) => n.params_mut(),
            Net::Vgg(n) => n
                .ops
                .iter_mut()
                .filter_map(|o| match o {
                    VggOp::Conv(c) => Some(c),
                    VggOp::Pool => None,
                })
                .flat_map(|c| c.params_mut())
                .collect(),
        }
    }
}
