use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Module, Param, Var};
use crate::float::Float;

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Zero-mean Gaussian with the given standard deviation.
    Normal(f64),
    /// He initialisation scaled by fan-out (`sqrt(2 / (cout * k * k))`).
    KaimingFanOut,
    Zeros,
}

impl Init {
    pub fn sample<T: Float, R: Rng>(self, shape: &[usize], rng: &mut R) -> ArrayD<T> {
        let std = match self {
            Init::Zeros => return ArrayD::zeros(IxDyn(shape)),
            Init::Normal(s) => s,
            Init::KaimingFanOut => {
                let fan_out: usize = shape[0] * shape[2..].iter().product::<usize>();
                (2.0 / fan_out as f64).sqrt()
            }
        };
        let dist = Normal::new(0.0, std).expect("finite std");
        ArrayD::from_shape_fn(IxDyn(shape), |_| T::cast(dist.sample(rng)))
    }
}

/// Square-kernel 2-D convolution layer.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Float> {
    weight: Param<T>,
    bias: Option<Param<T>>,
    stride: usize,
    pad: usize,
}

impl<T: Float> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: Param::new(format!("{name}.weight"), init.sample(&[cout, cin, kernel, kernel], rng)),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])))),
            stride,
            pad,
        }
    }

    /// Non-trainable variant used by pretrained backbones.
    #[allow(clippy::too_many_arguments)]
    pub fn frozen<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        Conv2d {
            weight: Param::frozen(format!("{name}.weight"), init.sample(&[cout, cin, kernel, kernel], rng)),
            bias: bias.then(|| Param::frozen(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])))),
            stride,
            pad,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value().shape()[1]
    }

    pub fn forward(&self, x: &Var<T>) -> Var<T> {
        let bias = self.bias.as_ref().map(|b| b.var());
        x.conv2d(&self.weight.var(), bias.as_ref(), self.stride, self.pad)
    }
}

impl<T: Float> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.iter());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.iter_mut());
        v
    }
}

/// Batch norm in inference mode with frozen running statistics.
#[derive(Debug, Clone)]
pub struct FrozenBatchNorm<T: Float> {
    weight: Param<T>,
    bias: Param<T>,
    running_mean: Param<T>,
    running_var: Param<T>,
    eps: f64,
}

impl<T: Float> FrozenBatchNorm<T> {
    pub fn new(name: &str, channels: usize) -> Self {
        let c = IxDyn(&[channels]);
        FrozenBatchNorm {
            weight: Param::frozen(format!("{name}.weight"), ArrayD::ones(c.clone())),
            bias: Param::frozen(format!("{name}.bias"), ArrayD::zeros(c.clone())),
            running_mean: Param::frozen(format!("{name}.running_mean"), ArrayD::zeros(c.clone())),
            running_var: Param::frozen(format!("{name}.running_var"), ArrayD::ones(c)),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Var<T>) -> Var<T> {
        let c = self.weight.len();
        let eps = T::cast(self.eps);
        let scale: Vec<T> = self
            .weight
            .value()
            .iter()
            .zip(self.running_var.value().iter())
            .map(|(&g, &v)| g / (v + eps).sqrt())
            .collect();
        let shift: Vec<T> = self
            .bias
            .value()
            .iter()
            .zip(self.running_mean.value().iter())
            .zip(scale.iter())
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        let shape = IxDyn(&[1, c, 1, 1]);
        let scale = Var::constant(ArrayD::from_shape_vec(shape.clone(), scale).unwrap());
        let shift = Var::constant(ArrayD::from_shape_vec(shape, shift).unwrap());
        x.mul(&scale).add(&shift)
    }
}

impl<T: Float> Module<T> for FrozenBatchNorm<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![
            &mut self.weight,
            &mut self.bias,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }
}
