//! Image container, resampling, pixel (un)shuffling and windowed SSIM.

use ndarray::{s, Array3, ArrayD, Axis, IxDyn};

use crate::autograd::{no_grad, resize_matrix, Var};
use crate::error::{Error, Result};
use crate::float::Float;

/// Channel-major (C, H, W) raster with a declared closed value range.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f64>,
    range: (f64, f64),
}

impl ImageTensor {
    /// Validates finiteness and the default `[0, 1]` range.
    pub fn new(data: Array3<f64>) -> Result<Self> {
        Self::with_range(data, 0.0, 1.0)
    }

    pub fn with_range(data: Array3<f64>, lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidValue(format!("bad range [{lo}, {hi}]")));
        }
        let (c, h, w) = data.dim();
        if c == 0 || h == 0 || w == 0 {
            return Err(Error::Dimension(format!("zero-area image ({c}, {h}, {w})")));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(format!("non-finite pixel {v}")));
        }
        if let Some(v) = data.iter().find(|&&v| v < lo || v > hi) {
            return Err(Error::InvalidValue(format!(
                "pixel {v} outside declared range [{lo}, {hi}]"
            )));
        }
        Ok(ImageTensor { data, range: (lo, hi) })
    }

    /// Clamps into `[0, 1]` before validating.
    pub fn from_clamped(mut data: Array3<f64>) -> Result<Self> {
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        ImageTensor {
            data: Array3::zeros((c, h, w)),
            range: (0.0, 1.0),
        }
    }

    pub fn data(&self) -> &Array3<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f64> {
        self.data
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn channels(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    /// (C, H, W)
    pub fn dims(&self) -> (usize, usize, usize) {
        self.data.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// (1, C, H, W) array in the requested precision.
    pub fn to_batch<T: Float>(&self) -> ArrayD<T> {
        self.data.mapv(T::cast).insert_axis(Axis(0)).into_dyn()
    }

    /// Stacks same-shape images into an (N, C, H, W) array.
    pub fn stack<T: Float>(images: &[&ImageTensor]) -> Result<ArrayD<T>> {
        let first = images
            .first()
            .ok_or_else(|| Error::Shape("cannot stack zero images".into()))?;
        let (c, h, w) = first.dims();
        let mut out = ArrayD::zeros(IxDyn(&[images.len(), c, h, w]));
        for (i, img) in images.iter().enumerate() {
            if img.dims() != (c, h, w) {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    img.dims(),
                    (c, h, w)
                )));
            }
            out.slice_mut(s![i, .., .., ..]).assign(&img.data.mapv(T::cast));
        }
        Ok(out)
    }

    /// Image `index` of an (N, C, H, W) array, clamped into `[0, 1]`.
    pub fn from_batch<T: Float>(batch: &ArrayD<T>, index: usize) -> Result<Self> {
        if batch.ndim() != 4 || index >= batch.shape()[0] {
            return Err(Error::Shape(format!(
                "no image {index} in batch of shape {:?}",
                batch.shape()
            )));
        }
        let plane = batch.index_axis(Axis(0), index).mapv(|v| v.as_f64());
        let data = plane.into_dimensionality().expect("4-D batch");
        Self::from_clamped(data)
    }

    /// Per-channel concatenation; both images must share H and W.
    pub fn concat_channels(&self, other: &ImageTensor) -> Result<Self> {
        if (self.height(), self.width()) != (other.height(), other.width()) {
            return Err(Error::Shape(format!(
                "cannot concatenate {:?} and {:?}",
                self.dims(),
                other.dims()
            )));
        }
        let data = ndarray::concatenate(Axis(0), &[self.data.view(), other.data.view()])
            .expect("matching spatial dims");
        Ok(ImageTensor { data, range: self.range })
    }
}

/// Constants of the windowed SSIM index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    pub window_size: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window_size: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn with_window(self, window_size: usize) -> Self {
        SsimParams { window_size, ..self }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    /// Normalized 1-D Gaussian; the 2-D window is its outer product.
    pub fn gaussian_window(&self) -> Vec<f64> {
        let half = (self.window_size / 2) as f64;
        let g: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let total: f64 = g.iter().sum();
        g.into_iter().map(|v| v / total).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return Err(Error::InvalidValue(format!(
                "SSIM window size must be odd and positive, got {}",
                self.window_size
            )));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.dynamic_range > 0.0 && self.sigma > 0.0) {
            return Err(Error::InvalidValue(
                "SSIM constants k1, k2, sigma and L must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Errors unless a window fits inside an `h`×`w` image.
    pub fn check_fits(&self, h: usize, w: usize) -> Result<()> {
        self.validate()?;
        if self.window_size > h || self.window_size > w {
            return Err(Error::Shape(format!(
                "SSIM window {} larger than image {h}x{w}",
                self.window_size
            )));
        }
        Ok(())
    }
}

/// Resizes by a uniform `scale`; `scale·H` and `scale·W` must be integers.
pub fn resize(img: &ImageTensor, scale: f64) -> Result<ImageTensor> {
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::Dimension(format!("scale must be positive, got {scale}")));
    }
    let target = |n: usize| -> Result<usize> {
        let t = n as f64 * scale;
        let r = t.round();
        if (t - r).abs() > 1e-9 || r < 1.0 {
            return Err(Error::Dimension(format!(
                "scale {scale} maps size {n} to non-integral {t}"
            )));
        }
        Ok(r as usize)
    };
    let (h, w) = (target(img.height())?, target(img.width())?);
    resize_to(img, h, w)
}

/// Resizes to exactly `h`×`w`: area averaging along shrinking axes, bilinear
/// interpolation along growing ones.
pub fn resize_to(img: &ImageTensor, h: usize, w: usize) -> Result<ImageTensor> {
    if h == 0 || w == 0 {
        return Err(Error::Dimension(format!("target size {h}x{w} has zero area")));
    }
    if (h, w) == (img.height(), img.width()) {
        return Ok(img.clone());
    }
    let rows = resize_matrix::<f64>(img.height(), h);
    let cols = resize_matrix::<f64>(img.width(), w);
    let (c, _, _) = img.dims();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        let plane = img.data.index_axis(Axis(0), ch);
        out.index_axis_mut(Axis(0), ch)
            .assign(&rows.dot(&plane).dot(&cols.t()));
    }
    let (lo, hi) = img.range;
    out.mapv_inplace(|v| v.clamp(lo, hi));
    ImageTensor::with_range(out, lo, hi)
}

/// Sub-pixel rearrangement `(C, H, W) → (C/r², rH, rW)` with
/// `out[c, r·h + i, r·w + j] = in[c·r² + i·r + j, h, w]`.
pub fn pixel_shuffle(img: &ImageTensor, r: usize) -> Result<ImageTensor> {
    if r == 0 || img.channels() % (r * r) != 0 {
        return Err(Error::Shape(format!(
            "{} channels not divisible by r²={}",
            img.channels(),
            r * r
        )));
    }
    let out = crate::autograd::pixel_shuffle(&img.to_batch::<f64>(), r);
    Ok(ImageTensor {
        data: out.index_axis_move(Axis(0), 0).into_dimensionality().unwrap(),
        range: img.range,
    })
}

/// Inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle(img: &ImageTensor, r: usize) -> Result<ImageTensor> {
    if r == 0 || img.height() % r != 0 || img.width() % r != 0 {
        return Err(Error::Shape(format!(
            "{}x{} not divisible by r={r}",
            img.height(),
            img.width()
        )));
    }
    let out = crate::autograd::pixel_unshuffle(&img.to_batch::<f64>(), r);
    Ok(ImageTensor {
        data: out.index_axis_move(Axis(0), 0).into_dimensionality().unwrap(),
        range: img.range,
    })
}

/// Differentiable mean SSIM over every sample, channel and valid window
/// position of two (N, C, H, W) tensors.
pub fn ssim_index<T: Float>(x: &Var<T>, y: &Var<T>, p: &SsimParams) -> Var<T> {
    assert_eq!(x.shape(), y.shape(), "SSIM inputs must share a shape");
    let kernel: Vec<T> = p.gaussian_window().into_iter().map(T::cast).collect();
    let blur = |v: &Var<T>| v.filter_separable_valid(&kernel);
    let (c1, c2) = (p.c1(), p.c2());

    let mu_x = blur(x);
    let mu_y = blur(y);
    let mu_xx = mu_x.mul(&mu_x);
    let mu_yy = mu_y.mul(&mu_y);
    let mu_xy = mu_x.mul(&mu_y);
    let var_x = blur(&x.mul(x)).sub(&mu_xx);
    let var_y = blur(&y.mul(y)).sub(&mu_yy);
    let cov = blur(&x.mul(y)).sub(&mu_xy);

    let num = mu_xy
        .mul_scalar(2.0)
        .add_scalar(c1)
        .mul(&cov.mul_scalar(2.0).add_scalar(c2));
    let den = mu_xx
        .add(&mu_yy)
        .add_scalar(c1)
        .mul(&var_x.add(&var_y).add_scalar(c2));
    num.div(&den).mean_all()
}

/// Mean SSIM index of two images.
pub fn ssim_map(x: &ImageTensor, y: &ImageTensor, p: &SsimParams) -> Result<f64> {
    if x.dims() != y.dims() {
        return Err(Error::Shape(format!(
            "SSIM shape mismatch {:?} vs {:?}",
            x.dims(),
            y.dims()
        )));
    }
    if x.range() != y.range() {
        return Err(Error::InvalidValue("SSIM inputs declare different ranges".into()));
    }
    let (lo, hi) = x.range();
    if ((hi - lo) - p.dynamic_range).abs() > 1e-12 {
        return Err(Error::InvalidValue(format!(
            "declared range width {} differs from SSIM dynamic range {}",
            hi - lo,
            p.dynamic_range
        )));
    }
    p.check_fits(x.height(), x.width())?;
    let v = no_grad(|| {
        ssim_index(
            &Var::constant(x.to_batch::<f64>()),
            &Var::constant(y.to_batch::<f64>()),
            p,
        )
        .item()
    });
    Ok(v)
}
