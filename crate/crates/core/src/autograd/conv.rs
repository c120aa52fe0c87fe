use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, Axis, IxDyn};

use super::ops::view4;
use super::Var;
use crate::float::Float;

pub fn conv_out_size(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    assert!(
        input + 2 * padding >= kernel,
        "kernel {kernel} larger than padded input {input}+2*{padding}"
    );
    (input + 2 * padding - kernel) / stride + 1
}

/// Unfolds one (C, H, W) plane stack into a (C*kh*kw, Ho*Wo) column matrix.
#[allow(clippy::too_many_arguments)]
pub fn im2col<T: Float>(
    x: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    cols: &mut [T],
) {
    let p = ho * wo;
    debug_assert_eq!(cols.len(), c * kh * kw * p);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if stride == 1 {
                        // valid ox satisfy 0 <= ox + kj - pad < w
                        let lo = pad.saturating_sub(kj).min(wo);
                        let hi = (w + pad).saturating_sub(kj).min(wo).max(lo);
                        line[..lo].fill(T::zero());
                        line[hi..].fill(T::zero());
                        if hi > lo {
                            let s0 = lo + kj - pad;
                            line[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                        }
                    } else {
                        for (ox, d) in line.iter_mut().enumerate() {
                            let ix = (ox * stride + kj) as isize - pad as isize;
                            *d = if ix < 0 || ix >= w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
#[allow(clippy::too_many_arguments)]
pub fn col2im_add<T: Float>(
    cols: &[T],
    (c, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    pad: usize,
    (ho, wo): (usize, usize),
    x: &mut [T],
) {
    let p = ho * wo;
    for ch in 0..c {
        let plane = &mut x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ch * kh + ki) * kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * stride + ki) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, &v) in line.iter().enumerate() {
                        let ix = (ox * stride + kj) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

fn gemm<T: Float>(a: &ArrayView2<T>, b: &ArrayView2<T>, beta: T, c: &mut ArrayViewMut2<T>) {
    general_mat_mul(T::one(), a, b, beta, c);
}

impl<T: Float> Var<T> {
    /// 2-D cross-correlation. `self`: (N, Cin, H, W); `weight`: (Cout, Cin, kh, kw);
    /// `bias`: (Cout).
    pub fn conv2d(&self, weight: &Var<T>, bias: Option<&Var<T>>, stride: usize, pad: usize) -> Var<T> {
        let (n, cin, h, w) = self.dims4();
        let ws = weight.shape().to_vec();
        assert_eq!(ws.len(), 4, "conv weight must be 4-D");
        let (cout, kh, kw) = (ws[0], ws[2], ws[3]);
        assert_eq!(ws[1], cin, "conv input channels {cin} != weight {:?}", ws);
        let ho = conv_out_size(h, kh, stride, pad);
        let wo = conv_out_size(w, kw, stride, pad);
        let (k, p) = (cin * kh * kw, ho * wo);
        let direct = kh == 1 && kw == 1 && stride == 1 && pad == 0;

        let x = self.value().as_standard_layout().into_owned();
        let xs = x.as_slice().unwrap();
        let wt = weight.value().as_standard_layout().into_owned();
        let w2 = ArrayView2::from_shape((cout, k), wt.as_slice().unwrap()).unwrap();

        let mut out = vec![T::zero(); n * cout * p];
        let mut cols = if direct { Vec::new() } else { vec![T::zero(); k * p] };
        for b in 0..n {
            let xb = &xs[b * cin * h * w..(b + 1) * cin * h * w];
            let colv = if direct {
                ArrayView2::from_shape((k, p), xb).unwrap()
            } else {
                im2col(xb, (cin, h, w), (kh, kw), stride, pad, (ho, wo), &mut cols);
                ArrayView2::from_shape((k, p), &cols[..]).unwrap()
            };
            let mut ob =
                ArrayViewMut2::from_shape((cout, p), &mut out[b * cout * p..(b + 1) * cout * p])
                    .unwrap();
            gemm(&w2, &colv, T::zero(), &mut ob);
        }
        if let Some(bias) = bias {
            let bv = bias.value();
            assert_eq!(bv.len(), cout, "bias length");
            for (i, chunk) in out.chunks_mut(p).enumerate() {
                let bb = bv[[i % cout]];
                chunk.iter_mut().for_each(|v| *v += bb);
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, cout, ho, wo]), out).unwrap();

        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let (xv, wv) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let brg = bias.map(|b| b.requires_grad()).unwrap_or(false);
        Var::from_op(value, parents, move |g| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let need_x = xv.requires_grad();
            let need_w = wv.requires_grad();
            let x = xv.value().as_standard_layout();
            let xs = x.as_slice().unwrap();
            let wt = wv.value().as_standard_layout();
            let w2 = ArrayView2::from_shape((cout, k), wt.as_slice().unwrap()).unwrap();

            let mut gw = need_w.then(|| vec![T::zero(); cout * k]);
            let mut gx = need_x.then(|| vec![T::zero(); n * cin * h * w]);
            let mut cols = vec![T::zero(); if direct { 0 } else { k * p }];
            let mut dcols = vec![T::zero(); if need_x && !direct { k * p } else { 0 }];
            for b in 0..n {
                let gb = ArrayView2::from_shape((cout, p), &gs[b * cout * p..(b + 1) * cout * p])
                    .unwrap();
                let xb = &xs[b * cin * h * w..(b + 1) * cin * h * w];
                if let Some(gw) = gw.as_mut() {
                    let colv = if direct {
                        ArrayView2::from_shape((k, p), xb).unwrap()
                    } else {
                        im2col(xb, (cin, h, w), (kh, kw), stride, pad, (ho, wo), &mut cols);
                        ArrayView2::from_shape((k, p), &cols[..]).unwrap()
                    };
                    let mut gwv = ArrayViewMut2::from_shape((cout, k), &mut gw[..]).unwrap();
                    gemm(&gb, &colv.t(), T::one(), &mut gwv);
                }
                if let Some(gx) = gx.as_mut() {
                    let gxb = &mut gx[b * cin * h * w..(b + 1) * cin * h * w];
                    if direct {
                        let mut d = ArrayViewMut2::from_shape((k, p), gxb).unwrap();
                        gemm(&w2.t(), &gb, T::zero(), &mut d);
                    } else {
                        let mut d = ArrayViewMut2::from_shape((k, p), &mut dcols[..]).unwrap();
                        gemm(&w2.t(), &gb, T::zero(), &mut d);
                        col2im_add(&dcols, (cin, h, w), (kh, kw), stride, pad, (ho, wo), gxb);
                    }
                }
            }
            let mut res = vec![
                gx.map(|v| ArrayD::from_shape_vec(IxDyn(&[n, cin, h, w]), v).unwrap()),
                gw.map(|v| ArrayD::from_shape_vec(IxDyn(&[cout, cin, kh, kw]), v).unwrap()),
            ];
            if has_bias {
                res.push(brg.then(|| {
                    let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                    g4.sum_axis(Axis(3))
                        .sum_axis(Axis(2))
                        .sum_axis(Axis(0))
                        .into_dyn()
                }));
            }
            res
        })
    }

    /// Depthwise separable filtering with a fixed 1-D kernel applied along
    /// both spatial axes, without padding ("valid" windows only).
    pub fn filter_separable_valid(&self, kernel: &[T]) -> Var<T> {
        let k = kernel.len();
        let (n, c, h, w) = self.dims4();
        assert!(k <= h && k <= w, "filter of size {k} larger than {h}x{w}");
        let (ho, wo) = (h - k + 1, w - k + 1);
        let x = view4(self.value());
        let mut out = ArrayD::zeros(IxDyn(&[n, c, ho, wo]));
        let mut tmp = vec![T::zero(); h * wo];
        {
            let mut o = out.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
            for b in 0..n {
                for ch in 0..c {
                    let plane = x.slice(ndarray::s![b, ch, .., ..]);
                    for y in 0..h {
                        for xx in 0..wo {
                            let mut s = T::zero();
                            for (t, &kv) in kernel.iter().enumerate() {
                                s += kv * plane[[y, xx + t]];
                            }
                            tmp[y * wo + xx] = s;
                        }
                    }
                    for y in 0..ho {
                        for xx in 0..wo {
                            let mut s = T::zero();
                            for (t, &kv) in kernel.iter().enumerate() {
                                s += kv * tmp[(y + t) * wo + xx];
                            }
                            o[[b, ch, y, xx]] = s;
                        }
                    }
                }
            }
        }
        let kernel = kernel.to_vec();
        Var::from_op(out, vec![self.clone()], move |g| {
            let g4 = view4(g);
            let mut gx = ArrayD::zeros(IxDyn(&[n, c, h, w]));
            let mut gt = vec![T::zero(); h * wo];
            {
                let mut gxv = gx.view_mut().into_dimensionality::<ndarray::Ix4>().unwrap();
                for b in 0..n {
                    for ch in 0..c {
                        gt.fill(T::zero());
                        for y in 0..ho {
                            for xx in 0..wo {
                                let gv = g4[[b, ch, y, xx]];
                                for (t, &kv) in kernel.iter().enumerate() {
                                    gt[(y + t) * wo + xx] += kv * gv;
                                }
                            }
                        }
                        for y in 0..h {
                            for xx in 0..wo {
                                let gv = gt[y * wo + xx];
                                for (t, &kv) in kernel.iter().enumerate() {
                                    gxv[[b, ch, y, xx + t]] += kv * gv;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(gx)]
        })
    }
}
