use ndarray::{concatenate, ArrayD, ArrayView4, Axis, IxDyn, Slice, Zip};

use super::Var;
use crate::float::Float;

/// Sums `g` over broadcast axes so that it takes `shape`.
pub fn sum_to_shape<T: Float>(g: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    if g.shape() == shape {
        return g.clone();
    }
    let mut out = g.to_owned();
    while out.ndim() > shape.len() {
        out = out.sum_axis(Axis(0));
    }
    for (i, &s) in shape.iter().enumerate() {
        if s == 1 && out.shape()[i] != 1 {
            out = out.sum_axis(Axis(i)).insert_axis(Axis(i));
        }
    }
    debug_assert_eq!(out.shape(), shape);
    out
}

pub(crate) fn reshape_array<T: Float>(a: &ArrayD<T>, shape: &[usize]) -> ArrayD<T> {
    let n: usize = shape.iter().product();
    assert_eq!(n, a.len(), "cannot reshape {:?} into {:?}", a.shape(), shape);
    match a.as_slice() {
        Some(s) => ArrayD::from_shape_vec(IxDyn(shape), s.to_vec()).unwrap(),
        None => ArrayD::from_shape_vec(IxDyn(shape), a.iter().copied().collect()).unwrap(),
    }
}

pub(crate) fn view4<T: Float>(a: &ArrayD<T>) -> ArrayView4<'_, T> {
    a.view()
        .into_dimensionality()
        .unwrap_or_else(|_| panic!("expected 4-D tensor, got {:?}", a.shape()))
}

/// `out[n, c, h*r + i, w*r + j] = x[n, c*r*r + i*r + j, h, w]`
pub fn pixel_shuffle_array<T: Float>(x: &ArrayD<T>, r: usize) -> ArrayD<T> {
    let v = view4(x);
    let (n, c, h, w) = v.dim();
    assert!(r > 0 && c % (r * r) == 0, "channels {c} not divisible by {r}^2");
    let co = c / (r * r);
    let mut out = ArrayD::zeros(IxDyn(&[n, co, h * r, w * r]));
    {
        let mut o = out.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
        for b in 0..n {
            for oc in 0..co {
                for i in 0..r {
                    for j in 0..r {
                        let ic = oc * r * r + i * r + j;
                        for y in 0..h {
                            for xx in 0..w {
                                o[[b, oc, y * r + i, xx * r + j]] = v[[b, ic, y, xx]];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Inverse of [`pixel_shuffle_array`].
pub fn pixel_unshuffle_array<T: Float>(x: &ArrayD<T>, r: usize) -> ArrayD<T> {
    let v = view4(x);
    let (n, c, h, w) = v.dim();
    assert!(r > 0 && h % r == 0 && w % r == 0, "({h}, {w}) not divisible by {r}");
    let (ho, wo) = (h / r, w / r);
    let mut out = ArrayD::zeros(IxDyn(&[n, c * r * r, ho, wo]));
    {
        let mut o = out.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
        for b in 0..n {
            for ic in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        let oc = ic * r * r + i * r + j;
                        for y in 0..ho {
                            for xx in 0..wo {
                                o[[b, oc, y, xx]] = v[[b, ic, y * r + i, xx * r + j]];
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

impl<T: Float> Var<T> {
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T) -> T + 'static) -> Var<T> {
        let value = self.value().mapv(f);
        let x = self.clone();
        Var::from_op(value, vec![self.clone()], move |g| {
            let mut gx = g.clone();
            Zip::from(&mut gx)
                .and(x.value())
                .for_each(|gi, &xi| *gi = *gi * df(xi));
            vec![Some(gx)]
        })
    }

    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let value = self.value() + other.value();
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| sum_to_shape(g, &sa)),
                rb.then(|| sum_to_shape(g, &sb)),
            ]
        })
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let value = self.value() - other.value();
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        let (ra, rb) = (self.requires_grad(), other.requires_grad());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![
                ra.then(|| sum_to_shape(g, &sa)),
                rb.then(|| sum_to_shape(&g.mapv(|v| -v), &sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let value = self.value() * other.value();
        let (a, b) = (self.clone(), other.clone());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            vec![
                a.requires_grad()
                    .then(|| sum_to_shape(&(g * b.value()), a.shape())),
                b.requires_grad()
                    .then(|| sum_to_shape(&(g * a.value()), b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let value = self.value() / other.value();
        let (a, b) = (self.clone(), other.clone());
        Var::from_op(value, vec![self.clone(), other.clone()], move |g| {
            let ga = a
                .requires_grad()
                .then(|| sum_to_shape(&(g / b.value()), a.shape()));
            let gb = b.requires_grad().then(|| {
                let mut t = g * a.value();
                Zip::from(&mut t)
                    .and_broadcast(b.value())
                    .for_each(|ti, &bi| *ti = -*ti / (bi * bi));
                sum_to_shape(&t, b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Var<T> {
        let s = T::cast(s);
        self.unary(move |x| x + s, |_| T::one())
    }

    pub fn mul_scalar(&self, s: f64) -> Var<T> {
        let s = T::cast(s);
        self.unary(move |x| x * s, move |_| s)
    }

    pub fn div_scalar(&self, s: f64) -> Var<T> {
        let s = T::cast(s);
        self.unary(move |x| x / s, move |_| T::one() / s)
    }

    pub fn neg(&self) -> Var<T> {
        self.mul_scalar(-1.0)
    }

    pub fn sqr(&self) -> Var<T> {
        self.unary(|x| x * x, |x| x + x)
    }

    pub fn sqrt(&self) -> Var<T> {
        self.unary(
            |x| x.sqrt(),
            |x| T::one() / (T::cast(2.0) * x.sqrt()),
        )
    }

    pub fn exp(&self) -> Var<T> {
        self.unary(|x| x.exp(), |x| x.exp())
    }

    pub fn log(&self) -> Var<T> {
        self.unary(|x| x.ln(), |x| T::one() / x)
    }

    pub fn abs(&self) -> Var<T> {
        self.unary(
            |x| x.abs(),
            |x| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn relu(&self) -> Var<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::cast(slope);
        self.unary(
            move |x| if x > T::zero() { x } else { x * s },
            move |x| if x > T::zero() { T::one() } else { s },
        )
    }

    pub fn sigmoid(&self) -> Var<T> {
        fn sig<T: Float>(x: T) -> T {
            T::one() / (T::one() + (-x).exp())
        }
        self.unary(sig, |x| {
            let s = sig(x);
            s * (T::one() - s)
        })
    }

    /// Clamps to `[lo, hi]`; the gradient passes only where the input is
    /// strictly inside the interval.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (lo, hi) = (T::cast(lo), T::cast(hi));
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x| {
                if x > lo && x < hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn powf(&self, p: f64) -> Var<T> {
        let pt = T::cast(p);
        self.unary(move |x| x.powf(pt), move |x| pt * x.powf(pt - T::one()))
    }

    pub fn sum_all(&self) -> Var<T> {
        let value = ArrayD::from_elem(IxDyn(&[]), self.value().sum());
        let shape = self.shape().to_vec();
        Var::from_op(value, vec![self.clone()], move |g| {
            let gv = *g.iter().next().unwrap();
            vec![Some(ArrayD::from_elem(IxDyn(&shape), gv))]
        })
    }

    pub fn mean_all(&self) -> Var<T> {
        let n = self.len().max(1) as f64;
        self.sum_all().div_scalar(n)
    }

    /// Sum over `axes`, keeping them as size-1 dims.
    pub fn sum_keep(&self, axes: &[usize]) -> Var<T> {
        let mut value = self.value().clone();
        for &ax in axes {
            value = value.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
        let shape = self.shape().to_vec();
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(g.broadcast(IxDyn(&shape)).unwrap().to_owned())]
        })
    }

    pub fn mean_keep(&self, axes: &[usize]) -> Var<T> {
        let n: usize = axes.iter().map(|&a| self.shape()[a]).product();
        self.sum_keep(axes).div_scalar(n.max(1) as f64)
    }

    pub fn reshape(&self, shape: &[usize]) -> Var<T> {
        let value = reshape_array(self.value(), shape);
        let orig = self.shape().to_vec();
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(reshape_array(g, &orig))]
        })
    }

    /// Concatenates along `axis`.
    pub fn concat(vars: &[Var<T>], axis: usize) -> Var<T> {
        assert!(!vars.is_empty(), "concat of nothing");
        let views: Vec<_> = vars.iter().map(|v| v.value().view()).collect();
        let value = concatenate(Axis(axis), &views).expect("concat shape mismatch");
        let sizes: Vec<usize> = vars.iter().map(|v| v.shape()[axis]).collect();
        let rgs: Vec<bool> = vars.iter().map(|v| v.requires_grad()).collect();
        Var::from_op(value, vars.to_vec(), move |g| {
            let mut start = 0;
            sizes
                .iter()
                .zip(&rgs)
                .map(|(&len, &rg)| {
                    let s = start;
                    start += len;
                    rg.then(|| {
                        g.slice_axis(Axis(axis), Slice::from(s..s + len))
                            .to_owned()
                    })
                })
                .collect()
        })
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Var<T> {
        let value = self
            .value()
            .slice_axis(Axis(axis), Slice::from(start..start + len))
            .to_owned();
        let shape = self.shape().to_vec();
        Var::from_op(value, vec![self.clone()], move |g| {
            let mut gx = ArrayD::zeros(IxDyn(&shape));
            gx.slice_axis_mut(Axis(axis), Slice::from(start..start + len))
                .assign(g);
            vec![Some(gx)]
        })
    }

    pub fn pixel_shuffle(&self, r: usize) -> Var<T> {
        if r == 1 {
            return self.clone();
        }
        let value = pixel_shuffle_array(self.value(), r);
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(pixel_unshuffle_array(g, r))]
        })
    }

    pub fn pixel_unshuffle(&self, r: usize) -> Var<T> {
        if r == 1 {
            return self.clone();
        }
        let value = pixel_unshuffle_array(self.value(), r);
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(pixel_shuffle_array(g, r))]
        })
    }

    /// Zero padding of the two spatial dims of an (N, C, H, W) tensor.
    pub fn pad2d(&self, top: usize, bottom: usize, left: usize, right: usize) -> Var<T> {
        if top + bottom + left + right == 0 {
            return self.clone();
        }
        let (n, c, h, w) = self.dims4();
        let mut value = ArrayD::zeros(IxDyn(&[n, c, h + top + bottom, w + left + right]));
        value
            .slice_axis_mut(Axis(2), Slice::from(top..top + h))
            .slice_axis_mut(Axis(3), Slice::from(left..left + w))
            .assign(self.value());
        Var::from_op(value, vec![self.clone()], move |g| {
            let gx = g
                .slice_axis(Axis(2), Slice::from(top..top + h))
                .slice_axis(Axis(3), Slice::from(left..left + w))
                .to_owned();
            vec![Some(gx)]
        })
    }

    /// Per-(sample, channel) normalization to zero mean and unit variance
    /// over the spatial dims. No affine part.
    pub fn instance_norm(&self, eps: f64) -> Var<T> {
        let (n, c, h, w) = self.dims4();
        let m = h * w;
        let eps = T::cast(eps);
        let x = self.value().as_standard_layout().into_owned();
        let xs = x.as_slice().unwrap();
        let mut out = vec![T::zero(); xs.len()];
        let mut inv = vec![T::zero(); n * c];
        let mt = T::cast(m as f64);
        for p in 0..n * c {
            let plane = &xs[p * m..(p + 1) * m];
            let mean = plane.iter().copied().sum::<T>() / mt;
            let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / mt;
            let iv = T::one() / (var + eps).sqrt();
            inv[p] = iv;
            for (o, &v) in out[p * m..(p + 1) * m].iter_mut().zip(plane) {
                *o = (v - mean) * iv;
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), out).unwrap();
        let xhat = value.clone();
        Var::from_op(value, vec![self.clone()], move |g| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let ys = xhat.as_slice().unwrap();
            let mut gx = vec![T::zero(); gs.len()];
            for p in 0..n * c {
                let r = p * m..(p + 1) * m;
                let (gp, yp) = (&gs[r.clone()], &ys[r.clone()]);
                let mg = gp.iter().copied().sum::<T>() / mt;
                let mgy = gp.iter().zip(yp).map(|(&a, &b)| a * b).sum::<T>() / mt;
                for ((o, &gi), &yi) in gx[r].iter_mut().zip(gp).zip(yp) {
                    *o = inv[p] * (gi - mg - yi * mgy);
                }
            }
            vec![Some(
                ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), gx).unwrap(),
            )]
        })
    }

    fn extremum_hw(&self, take_max: bool) -> Var<T> {
        let (n, c, h, w) = self.dims4();
        let m = h * w;
        let x = self.value().as_standard_layout().into_owned();
        let xs = x.as_slice().unwrap();
        let mut vals = Vec::with_capacity(n * c);
        let mut arg = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let plane = &xs[p * m..(p + 1) * m];
            let mut best = 0;
            for (i, &v) in plane.iter().enumerate() {
                let better = if take_max { v > plane[best] } else { v < plane[best] };
                if better {
                    best = i;
                }
            }
            vals.push(plane[best]);
            arg.push(best);
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, 1, 1]), vals).unwrap();
        Var::from_op(value, vec![self.clone()], move |g| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let mut gx = vec![T::zero(); n * c * m];
            for p in 0..n * c {
                gx[p * m + arg[p]] = gs[p];
            }
            vec![Some(
                ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), gx).unwrap(),
            )]
        })
    }

    /// Spatial maximum per (sample, channel), shape (N, C, 1, 1).
    pub fn max_hw(&self) -> Var<T> {
        self.extremum_hw(true)
    }

    /// Spatial minimum per (sample, channel), shape (N, C, 1, 1).
    pub fn min_hw(&self) -> Var<T> {
        self.extremum_hw(false)
    }
}
