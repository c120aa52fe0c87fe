use std::fmt;
use std::str::FromStr;

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::flex_conv::FlexConv;
use super::layers::{Conv2d, Init};
use crate::autograd::{no_grad, Module, Param, Var};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::ImageTensor;

const SLOPE: f64 = 0.2;
const NORM_EPS: f64 = 1e-5;
const INIT: Init = Init::Normal(0.02);

/// Translation direction. `AB` maps the low-quality domain to the high-quality one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    AB,
    BA,
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::AB => "AB",
            Direction::BA => "BA",
        })
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AB" => Ok(Direction::AB),
            "BA" => Ok(Direction::BA),
            other => Err(Error::Config(format!("unknown direction '{other}' (expected AB or BA)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub levels: usize,
    pub base_channels: usize,
    pub use_superres_head: bool,
    /// Resolution ratio between domain B and domain A (1 or 2).
    pub superres_factor: usize,
    pub fusion_enabled: bool,
    pub direction: Direction,
}

impl GeneratorConfig {
    pub fn new(direction: Direction) -> Self {
        GeneratorConfig {
            levels: 3,
            base_channels: 32,
            use_superres_head: true,
            superres_factor: 2,
            fusion_enabled: true,
            direction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels != 3 {
            return Err(Error::Config(format!("generator levels must be 3, got {}", self.levels)));
        }
        if self.base_channels == 0 {
            return Err(Error::Config("base_channels must be positive".into()));
        }
        if !matches!(self.superres_factor, 1 | 2) {
            return Err(Error::Config(format!(
                "superres_factor must be 1 or 2, got {}",
                self.superres_factor
            )));
        }
        Ok(())
    }

    pub fn input_channels(&self) -> usize {
        if self.fusion_enabled {
            6
        } else {
            3
        }
    }

    /// Output spatial dims for an input of `(h, w)`.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        let r = self.superres_factor;
        match self.direction {
            Direction::AB => (h * r, w * r),
            Direction::BA => (h / r, w / r),
        }
    }

    /// Spatial divisibility an input must satisfy.
    pub fn input_multiple(&self) -> usize {
        match self.direction {
            Direction::AB => 4,
            Direction::BA => 4 * self.superres_factor,
        }
    }
}

/// One pyramid tier: two conv/norm/activation blocks and a flexible conv whose
/// output is pixel-shuffled back to full resolution.
#[derive(Debug, Clone)]
struct Tier<T: Float> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    flex: FlexConv<T>,
    shuffle: usize,
}

impl<T: Float> Tier<T> {
    fn new<R: Rng>(name: &str, cin: usize, c: usize, shuffle: usize, rng: &mut R) -> Self {
        Tier {
            conv1: Conv2d::new(&format!("{name}.conv1"), cin, c, 3, 1, 1, false, INIT, rng),
            conv2: Conv2d::new(&format!("{name}.conv2"), c, c, 3, 1, 1, false, INIT, rng),
            flex: FlexConv::new(&format!("{name}.flex"), c, c * shuffle * shuffle, 3, true, INIT, rng),
            shuffle,
        }
    }

    fn forward(&self, x: &Var<T>) -> Var<T> {
        let h = self.conv1.forward(x).instance_norm(NORM_EPS).leaky_relu(SLOPE);
        let h = self.conv2.forward(&h).instance_norm(NORM_EPS).leaky_relu(SLOPE);
        self.flex.forward(&h).pixel_shuffle(self.shuffle).leaky_relu(SLOPE)
    }

    fn params(&self) -> Vec<&Param<T>> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.flex.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.flex.params_mut());
        v
    }
}

/// Multi-level generator with optional RGB conditioning.
///
/// The three tiers see the fused input at scales 1, 1/2 and 1/4. Their
/// outputs meet at full resolution and feed a direction-specific head: the
/// `AB` generator upsamples by `superres_factor` (learned conv + pixel shuffle
/// when `use_superres_head`, bilinear otherwise) and the `BA` generator area-pools.
#[derive(Debug, Clone)]
pub struct Generator<T: Float> {
    config: GeneratorConfig,
    tiers: Vec<Tier<T>>,
    fuse: Conv2d<T>,
    head: Conv2d<T>,
}

impl<T: Float> Generator<T> {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let c = config.base_channels;
        let cin = config.input_channels();
        let tiers = (0..config.levels)
            .map(|i| Tier::new(&format!("tier{i}"), cin, c, 1 << i, rng))
            .collect();
        let r = config.superres_factor;
        let fuse_out = match config.direction {
            Direction::AB if config.use_superres_head => c * r * r,
            _ => c,
        };
        Ok(Generator {
            config,
            tiers,
            fuse: Conv2d::new("fuse", 3 * c, fuse_out, 3, 1, 1, true, INIT, rng),
            head: Conv2d::new("head", c, 3, 3, 1, 1, true, INIT, rng),
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Batched forward pass. `ir`: (N, 3, H, W); `rgb`: (N, 3, H, W) or `None`
    /// for the all-zero condition.
    pub fn forward(&self, ir: &Var<T>, rgb: Option<&Var<T>>) -> Result<Var<T>> {
        if ir.ndim() != 4 || ir.shape()[1] != 3 {
            return Err(Error::Shape(format!("generator expects (N, 3, H, W) input, got {:?}", ir.shape())));
        }
        let (n, _, h, w) = ir.dims4();
        let m = self.config.input_multiple();
        if h % m != 0 || w % m != 0 || h == 0 || w == 0 {
            return Err(Error::Shape(format!(
                "generator input {h}x{w} must be a positive multiple of {m}"
            )));
        }
        if let Some(rgb) = rgb {
            if rgb.shape() != ir.shape() {
                return Err(Error::Shape(format!(
                    "rgb condition {:?} does not match ir {:?}",
                    rgb.shape(),
                    ir.shape()
                )));
            }
        }
        let x = if self.config.fusion_enabled {
            let cond = match rgb {
                Some(v) => v.clone(),
                None => Var::constant(ArrayD::zeros(IxDyn(&[n, 3, h, w]))),
            };
            Var::concat(&[ir.clone(), cond], 1)
        } else {
            ir.clone()
        };

        let mut outs = Vec::with_capacity(self.tiers.len());
        let mut level = x;
        for (i, tier) in self.tiers.iter().enumerate() {
            if i > 0 {
                level = level.avg_pool2d(2);
            }
            outs.push(tier.forward(&level));
        }
        let feats = Var::concat(&outs, 1);
        let r = self.config.superres_factor;
        let fused = self.fuse.forward(&feats);
        let body = match self.config.direction {
            Direction::AB if self.config.use_superres_head => fused.pixel_shuffle(r).leaky_relu(SLOPE),
            Direction::AB if r > 1 => fused.leaky_relu(SLOPE).resize_to(h * r, w * r),
            Direction::AB => fused.leaky_relu(SLOPE),
            Direction::BA if r > 1 => fused.leaky_relu(SLOPE).avg_pool2d(r),
            Direction::BA => fused.leaky_relu(SLOPE),
        };
        Ok(self.head.forward(&body).sigmoid())
    }

    /// Single-image inference without gradient tracking.
    pub fn translate(&self, ir: &ImageTensor, rgb: Option<&ImageTensor>) -> Result<ImageTensor> {
        if let Some(rgb) = rgb {
            if rgb.dims() != ir.dims() {
                return Err(Error::Shape(format!(
                    "rgb condition {:?} does not match ir {:?}",
                    rgb.dims(),
                    ir.dims()
                )));
            }
        }
        let out = no_grad(|| {
            let x = Var::constant(ir.to_batch::<T>());
            let c = rgb.map(|r| Var::constant(r.to_batch::<T>()));
            self.forward(&x, c.as_ref())
        })?;
        ImageTensor::from_batch(out.value(), 0)
    }
}

impl<T: Float> Module<T> for Generator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.tiers.iter().flat_map(|t| t.params()).collect();
        v.extend(self.fuse.params());
        v.extend(self.head.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.tiers.iter_mut().flat_map(|t| t.params_mut()).collect();
        v.extend(self.fuse.params_mut());
        v.extend(self.head.params_mut());
        v
    }
}
