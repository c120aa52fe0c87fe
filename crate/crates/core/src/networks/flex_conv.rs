//! Modulated deformable ("flexible") 3x3 convolution.
//!
//! Each kernel tap `t = ki * k + kj` samples the input at
//! `(y - pad + ki + dy, x - pad + kj + dx)` by bilinear interpolation (zero
//! outside the image) and scales the sample by a mask value in `[0, 1]`.
//! Offsets use the interleaved layout `(dy_t, dx_t)` at channels `2t, 2t + 1`.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use rand::Rng;

use super::layers::{Conv2d, Init};
use crate::autograd::{Module, Param, Var};
use crate::float::Float;

/// Bilinear corner data for one sampling location. Corners outside the
/// image point at index 0 with a zero validity factor.
#[derive(Clone, Copy)]
struct Tap<T> {
    idx: [u32; 4],
    /// Bilinear weight times corner validity.
    wt: [T; 4],
    ly: T,
    lx: T,
    valid: [T; 4],
}

impl<T: Float> Tap<T> {
    fn new(py: T, px: T, h: usize, w: usize) -> Self {
        let zero = Tap {
            idx: [0; 4],
            wt: [T::zero(); 4],
            ly: T::zero(),
            lx: T::zero(),
            valid: [T::zero(); 4],
        };
        let inside = py > -T::one() && px > -T::one() && py < T::cast(h as f64) && px < T::cast(w as f64);
        if !inside {
            return zero;
        }
        let (fy, fx) = (py.floor(), px.floor());
        let (y0, x0) = (fy.to_isize().unwrap_or(-2), fx.to_isize().unwrap_or(-2));
        let (ly, lx) = (py - fy, px - fx);
        let (hy, hx) = (T::one() - ly, T::one() - lx);
        let bil = [hy * hx, hy * lx, ly * hx, ly * lx];
        let pts = [(y0, x0), (y0, x0 + 1), (y0 + 1, x0), (y0 + 1, x0 + 1)];
        let mut tap = Tap { ly, lx, ..zero };
        for (k, &(y, x)) in pts.iter().enumerate() {
            if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                tap.idx[k] = (y as usize * w + x as usize) as u32;
                tap.valid[k] = T::one();
                tap.wt[k] = bil[k];
            }
        }
        tap
    }

    #[inline]
    fn corners(&self, plane: &[T]) -> [T; 4] {
        let v = |k: usize| self.valid[k] * plane[self.idx[k] as usize];
        [v(0), v(1), v(2), v(3)]
    }

    #[inline]
    fn sample(&self, plane: &[T]) -> T {
        let v = |k: usize| self.wt[k] * plane[self.idx[k] as usize];
        v(0) + v(1) + v(2) + v(3)
    }

    /// Scatters `g` into the plane with the bilinear weights.
    #[inline]
    fn scatter(&self, g: T, plane: &mut [T]) {
        for k in 0..4 {
            plane[self.idx[k] as usize] += g * self.wt[k];
        }
    }

    /// Sample value and its partial derivatives with respect to (py, px).
    #[inline]
    fn sample_and_grad(&self, plane: &[T]) -> (T, T, T) {
        let [v00, v01, v10, v11] = self.corners(plane);
        let (ly, lx) = (self.ly, self.lx);
        let (hy, hx) = (T::one() - ly, T::one() - lx);
        let s = hy * (hx * v00 + lx * v01) + ly * (hx * v10 + lx * v11);
        let dy = hx * (v10 - v00) + lx * (v11 - v01);
        let dx = hy * (v01 - v00) + ly * (v11 - v10);
        (s, dy, dx)
    }
}

/// Sampling taps for one sample: `taps[t * p + pos]`.
fn build_taps<T: Float>(off: &[T], k: usize, pad: usize, h: usize, w: usize) -> Vec<Tap<T>> {
    let p = h * w;
    let mut taps = Vec::with_capacity(k * k * p);
    for t in 0..k * k {
        let (ki, kj) = (t / k, t % k);
        let dys = &off[2 * t * p..(2 * t + 1) * p];
        let dxs = &off[(2 * t + 1) * p..(2 * t + 2) * p];
        for oy in 0..h {
            for ox in 0..w {
                let pos = oy * w + ox;
                let py = T::cast(oy as f64 + ki as f64 - pad as f64) + dys[pos];
                let px = T::cast(ox as f64 + kj as f64 - pad as f64) + dxs[pos];
                taps.push(Tap::new(py, px, h, w));
            }
        }
    }
    taps
}

/// Folds the modulation mask into the tap weights.
fn modulate<T: Float>(taps: &[Tap<T>], mask: &[T]) -> Vec<Tap<T>> {
    taps.iter()
        .zip(mask)
        .map(|(t, &m)| {
            let mut t = *t;
            t.wt.iter_mut().for_each(|w| *w = *w * m);
            t
        })
        .collect()
}

/// Deformable column matrix (Cin * k * k, H * W) with masked samples.
fn deform_cols<T: Float>(xb: &[T], mtaps: &[Tap<T>], (c, p): (usize, usize), kk: usize, cols: &mut [T]) {
    for ch in 0..c {
        let plane = &xb[ch * p..(ch + 1) * p];
        for t in 0..kk {
            let row = &mut cols[(ch * kk + t) * p..(ch * kk + t + 1) * p];
            let tt = &mtaps[t * p..(t + 1) * p];
            for (r, tap) in row.iter_mut().zip(tt) {
                *r = tap.sample(plane);
            }
        }
    }
}

impl<T: Float> Var<T> {
    /// Modulated deformable convolution with stride 1 and "same" padding.
    ///
    /// `self`: (N, Cin, H, W); `offsets`: (N, 2k², H, W); `mask`: (N, k², H, W);
    /// `weight`: (Cout, Cin, k, k); `bias`: (Cout).
    pub fn deform_conv2d(
        &self,
        offsets: &Var<T>,
        mask: &Var<T>,
        weight: &Var<T>,
        bias: Option<&Var<T>>,
    ) -> Var<T> {
        let (n, cin, h, w) = self.dims4();
        let ws = weight.shape().to_vec();
        assert_eq!(ws.len(), 4, "deform conv weight must be 4-D");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "deform conv input channels");
        assert_eq!(ws[3], k, "deform conv kernel must be square");
        assert!(k % 2 == 1, "deform conv kernel must be odd");
        let kk = k * k;
        assert_eq!(offsets.shape(), &[n, 2 * kk, h, w], "offset shape");
        assert_eq!(mask.shape(), &[n, kk, h, w], "mask shape");
        let pad = k / 2;
        let (p, kc) = (h * w, cin * kk);

        let x = self.value().as_standard_layout().into_owned();
        let off = offsets.value().as_standard_layout().into_owned();
        let msk = mask.value().as_standard_layout().into_owned();
        let wt = weight.value().as_standard_layout().into_owned();
        let (xs, offs, ms) = (x.as_slice().unwrap(), off.as_slice().unwrap(), msk.as_slice().unwrap());
        let w2 = ArrayView2::from_shape((cout, kc), wt.as_slice().unwrap()).unwrap();

        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = vec![T::zero(); kc * p];
        for b in 0..n {
            let taps = build_taps(&offs[b * 2 * kk * p..(b + 1) * 2 * kk * p], k, pad, h, w);
            let mtaps = modulate(&taps, &ms[b * kk * p..(b + 1) * kk * p]);
            let xb = &xs[b * cin * p..(b + 1) * cin * p];
            deform_cols(xb, &mtaps, (cin, p), kk, &mut cols);
            let cv = ArrayView2::from_shape((kc, p), &cols[..]).unwrap();
            let mut ob =
                ArrayViewMut2::from_shape((cout, p), &mut out[b * cout * p..(b + 1) * cout * p]).unwrap();
            general_mat_mul(T::one(), &w2, &cv, T::zero(), &mut ob);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            for (i, chunk) in out.chunks_mut(p).enumerate() {
                let bb = bv[[i % cout]];
                chunk.iter_mut().for_each(|v| *v += bb);
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, cout, h, w]), out).unwrap();

        let mut parents = vec![self.clone(), offsets.clone(), mask.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (xv, ov, mv, wv) = (self.clone(), offsets.clone(), mask.clone(), weight.clone());
        let has_bias = bias.is_some();
        Var::from_op(value, parents, move |g| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let x = xv.value().as_standard_layout();
            let off = ov.value().as_standard_layout();
            let msk = mv.value().as_standard_layout();
            let wt = wv.value().as_standard_layout();
            let (xs, offs, ms) = (x.as_slice().unwrap(), off.as_slice().unwrap(), msk.as_slice().unwrap());
            let w2 = ArrayView2::from_shape((cout, kc), wt.as_slice().unwrap()).unwrap();

            let need_w = wv.requires_grad();
            let need_in = xv.requires_grad() || ov.requires_grad() || mv.requires_grad();
            let mut gw = vec![T::zero(); if need_w { cout * kc } else { 0 }];
            let mut gx = vec![T::zero(); if need_in { n * cin * p } else { 0 }];
            let mut goff = vec![T::zero(); if need_in { n * 2 * kk * p } else { 0 }];
            let mut gm = vec![T::zero(); if need_in { n * kk * p } else { 0 }];
            let mut cols = vec![T::zero(); if need_w { kc * p } else { 0 }];
            let mut dcols = vec![T::zero(); if need_in { kc * p } else { 0 }];

            for b in 0..n {
                let gb = ArrayView2::from_shape((cout, p), &gs[b * cout * p..(b + 1) * cout * p]).unwrap();
                let taps = build_taps(&offs[b * 2 * kk * p..(b + 1) * 2 * kk * p], k, pad, h, w);
                let xb = &xs[b * cin * p..(b + 1) * cin * p];
                let mb = &ms[b * kk * p..(b + 1) * kk * p];
                let mtaps = modulate(&taps, mb);
                if need_w {
                    deform_cols(xb, &mtaps, (cin, p), kk, &mut cols);
                    let cv = ArrayView2::from_shape((kc, p), &cols[..]).unwrap();
                    let mut gwv = ArrayViewMut2::from_shape((cout, kc), &mut gw[..]).unwrap();
                    general_mat_mul(T::one(), &gb, &cv.t(), T::one(), &mut gwv);
                }
                if !need_in {
                    continue;
                }
                {
                    let mut d = ArrayViewMut2::from_shape((kc, p), &mut dcols[..]).unwrap();
                    general_mat_mul(T::one(), &w2.t(), &gb, T::zero(), &mut d);
                }
                let gxb = &mut gx[b * cin * p..(b + 1) * cin * p];
                let gob = &mut goff[b * 2 * kk * p..(b + 1) * 2 * kk * p];
                let gmb = &mut gm[b * kk * p..(b + 1) * kk * p];
                for ch in 0..cin {
                    let plane = &xb[ch * p..(ch + 1) * p];
                    let gplane = &mut gxb[ch * p..(ch + 1) * p];
                    for t in 0..kk {
                        let drow = &dcols[(ch * kk + t) * p..(ch * kk + t + 1) * p];
                        let gmt = &mut gmb[t * p..(t + 1) * p];
                        let (goy, gox) = gob[2 * t * p..(2 * t + 2) * p].split_at_mut(p);
                        for pos in 0..p {
                            let gc = drow[pos];
                            if gc == T::zero() {
                                continue;
                            }
                            let m = mb[t * p + pos];
                            let (s, dy, dx) = taps[t * p + pos].sample_and_grad(plane);
                            gmt[pos] += gc * s;
                            mtaps[t * p + pos].scatter(gc, gplane);
                            let gm = gc * m;
                            goy[pos] += gm * dy;
                            gox[pos] += gm * dx;
                        }
                    }
                }
            }
            let arr = |v: Vec<T>, s: &[usize]| ArrayD::from_shape_vec(IxDyn(s), v).unwrap();
            let mut res = if need_in {
                vec![
                    Some(arr(gx, &[n, cin, h, w])),
                    Some(arr(goff, &[n, 2 * kk, h, w])),
                    Some(arr(gm, &[n, kk, h, w])),
                ]
            } else {
                vec![None, None, None]
            };
            res.push(need_w.then(|| arr(gw, &[cout, cin, k, k])));
            if has_bias {
                let mut gbias = vec![T::zero(); cout];
                for (i, chunk) in gs.chunks(p).enumerate() {
                    gbias[i % cout] += chunk.iter().copied().sum::<T>();
                }
                res.push(Some(arr(gbias, &[cout])));
            }
            res
        })
    }
}

/// Flexible convolution layer: a regular kernel whose sampling grid is
/// displaced by learned per-pixel offsets and scaled by a learned mask.
///
/// Offset and mask predictors start at zero, so a fresh layer behaves like a
/// plain convolution with every tap weighted by one half.
#[derive(Debug, Clone)]
pub struct FlexConv<T: Float> {
    weight: Param<T>,
    bias: Option<Param<T>>,
    offset: Conv2d<T>,
    modulation: Conv2d<T>,
    kernel: usize,
}

impl<T: Float> FlexConv<T> {
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        bias: bool,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "flexible conv kernel must be odd");
        let kk = kernel * kernel;
        let pad = kernel / 2;
        FlexConv {
            weight: Param::new(
                format!("{name}.weight"),
                init.sample(&[cout, cin, kernel, kernel], rng),
            ),
            bias: bias.then(|| Param::new(format!("{name}.bias"), ArrayD::zeros(IxDyn(&[cout])))),
            offset: Conv2d::new(&format!("{name}.offset"), cin, 2 * kk, kernel, 1, pad, true, Init::Zeros, rng),
            modulation: Conv2d::new(&format!("{name}.mask"), cin, kk, kernel, 1, pad, true, Init::Zeros, rng),
            kernel,
        }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value().shape()[0]
    }

    pub fn forward(&self, x: &Var<T>) -> Var<T> {
        let offsets = self.offset.forward(x);
        let mask = self.modulation.forward(x).sigmoid();
        let bias = self.bias.as_ref().map(|b| b.var());
        x.deform_conv2d(&offsets, &mask, &self.weight.var(), bias.as_ref())
    }

    /// Offsets and mask predicted for `x`, mainly for inspection.
    pub fn sampling_field(&self, x: &Var<T>) -> (Var<T>, Var<T>) {
        (self.offset.forward(x), self.modulation.forward(x).sigmoid())
    }
}

impl<T: Float> Module<T> for FlexConv<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut v = vec![&self.weight];
        v.extend(self.bias.iter());
        v.extend(self.offset.params());
        v.extend(self.modulation.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut v = vec![&mut self.weight];
        v.extend(self.bias.iter_mut());
        v.extend(self.offset.params_mut());
        v.extend(self.modulation.params_mut());
        v
    }
}
