use rand::Rng;

use super::layers::{Conv2d, Init};
use crate::autograd::{no_grad, Module, Param, Var};
use crate::error::{Error, Result};
use crate::float::Float;
use crate::imaging::ImageTensor;

const SLOPE: f64 = 0.2;
const INIT: Init = Init::Normal(0.02);
/// Total stride of the downsampling stack.
pub const PATCH_STRIDE: usize = 16;

/// PatchGAN discriminator: four stride-2 4x4 convolutions followed by a 3x3
/// scoring conv. Each score sees roughly a 78x78 input patch.
#[derive(Debug, Clone)]
pub struct PatchDiscriminator<T: Float> {
    convs: Vec<Conv2d<T>>,
    score: Conv2d<T>,
}

impl<T: Float> PatchDiscriminator<T> {
    /// `width` is the channel count of the first stage; later stages double it.
    pub fn new<R: Rng>(width: usize, rng: &mut R) -> Self {
        let chans = [3, width, 2 * width, 4 * width, 8 * width];
        let convs = (0..4)
            .map(|i| {
                Conv2d::new(&format!("conv{i}"), chans[i], chans[i + 1], 4, 2, 1, i == 0, INIT, rng)
            })
            .collect();
        PatchDiscriminator {
            convs,
            score: Conv2d::new("score", 8 * width, 1, 3, 1, 1, true, INIT, rng),
        }
    }

    pub fn width(&self) -> usize {
        self.convs[0].out_channels()
    }

    /// Score map size for an `h x w` input.
    pub fn output_dims(h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(PATCH_STRIDE), w.div_ceil(PATCH_STRIDE))
    }

    /// `img`: (N, 3, H, W) -> (N, 1, ceil(H/16), ceil(W/16)) sigmoid scores.
    pub fn forward(&self, img: &Var<T>) -> Result<Var<T>> {
        if img.ndim() != 4 || img.shape()[1] != 3 {
            return Err(Error::Shape(format!(
                "discriminator expects (N, 3, H, W) input, got {:?}",
                img.shape()
            )));
        }
        let (_, _, h, w) = img.dims4();
        if h < PATCH_STRIDE || w < PATCH_STRIDE {
            return Err(Error::Shape(format!(
                "discriminator input {h}x{w} is below the {PATCH_STRIDE}x{PATCH_STRIDE} minimum"
            )));
        }
        let (ho, wo) = Self::output_dims(h, w);
        let mut x = img.pad2d(0, ho * PATCH_STRIDE - h, 0, wo * PATCH_STRIDE - w);
        for (i, conv) in self.convs.iter().enumerate() {
            x = conv.forward(&x);
            let (_, _, hh, ww) = x.dims4();
            if i > 0 && hh * ww > 1 {
                x = x.instance_norm(1e-5);
            }
            x = x.leaky_relu(SLOPE);
        }
        Ok(self.score.forward(&x).sigmoid())
    }

    /// Score map of a single image, without gradient tracking.
    pub fn score_map(&self, img: &ImageTensor) -> Result<ndarray::Array2<f64>> {
        let out = no_grad(|| self.forward(&Var::constant(img.to_batch::<T>())))?;
        let (_, _, ho, wo) = out.dims4();
        Ok(ndarray::Array2::from_shape_fn((ho, wo), |(i, j)| out.value()[[0, 0, i, j]].as_f64()))
    }
}

impl<T: Float> Module<T> for PatchDiscriminator<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v: Vec<&Param<T>> = self.convs.iter().flat_map(|c| c.params()).collect();
        v.extend(self.score.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v: Vec<&mut Param<T>> = self.convs.iter_mut().flat_map(|c| c.params_mut()).collect();
        v.extend(self.score.params_mut());
        v
    }
}
