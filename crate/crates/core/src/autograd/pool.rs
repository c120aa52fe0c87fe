use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayD, ArrayView2, ArrayViewMut2, IxDyn};

use super::Var;
use crate::float::Float;

/// Box-filter weights mapping `input` samples onto `output < input` samples.
/// Row `i` averages the input interval `[i*s, (i+1)*s)` with `s = input/output`,
/// weighting partially covered samples by their overlap.
pub fn area_matrix<T: Float>(input: usize, output: usize) -> Array2<T> {
    let scale = input as f64 / output as f64;
    let mut m = Array2::zeros((output, input));
    for i in 0..output {
        let (lo, hi) = (i as f64 * scale, (i + 1) as f64 * scale);
        let mut j = lo.floor() as usize;
        while (j as f64) < hi && j < input {
            let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
            m[[i, j]] = T::cast(overlap / scale);
            j += 1;
        }
    }
    m
}

/// Bilinear interpolation weights with half-pixel centers, edge-clamped.
pub fn bilinear_matrix<T: Float>(input: usize, output: usize) -> Array2<T> {
    let scale = input as f64 / output as f64;
    let mut m = Array2::zeros((output, input));
    for i in 0..output {
        let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(input - 1);
        let f = src - i0 as f64;
        m[[i, i0]] += T::cast(1.0 - f);
        m[[i, i1]] += T::cast(f);
    }
    m
}

/// Area averaging when shrinking, bilinear when enlarging, identity otherwise.
pub fn resize_matrix<T: Float>(input: usize, output: usize) -> Array2<T> {
    match output.cmp(&input) {
        std::cmp::Ordering::Less => area_matrix(input, output),
        std::cmp::Ordering::Greater => bilinear_matrix(input, output),
        std::cmp::Ordering::Equal => Array2::eye(input),
    }
}

fn apply_planes<T: Float>(
    x: &ArrayD<T>,
    rows: &ArrayView2<T>,
    cols_t: &ArrayView2<T>,
) -> ArrayD<T> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (rows.nrows(), cols_t.ncols());
    let x = x.as_standard_layout();
    let xs = x.as_slice().unwrap();
    let mut out = vec![T::zero(); n * c * ho * wo];
    let mut tmp = Array2::<T>::zeros((h, wo));
    for (p, o) in out.chunks_mut(ho * wo).enumerate() {
        let plane = ArrayView2::from_shape((h, w), &xs[p * h * w..(p + 1) * h * w]).unwrap();
        general_mat_mul(T::one(), &plane, cols_t, T::zero(), &mut tmp);
        let mut ov = ArrayViewMut2::from_shape((ho, wo), o).unwrap();
        general_mat_mul(T::one(), rows, &tmp, T::zero(), &mut ov);
    }
    ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).unwrap()
}

impl<T: Float> Var<T> {
    /// Separable linear resampling of each (H, W) plane: `rows · X · colsᵀ`
    /// with `rows`: (Ho, H) and `cols`: (Wo, W).
    pub fn resample(&self, rows: &Array2<T>, cols: &Array2<T>) -> Var<T> {
        let (_, _, h, w) = self.dims4();
        assert_eq!(rows.ncols(), h, "row matrix does not match height");
        assert_eq!(cols.ncols(), w, "column matrix does not match width");
        let value = apply_planes(self.value(), &rows.view(), &cols.t());
        let (rows, cols) = (rows.clone(), cols.clone());
        Var::from_op(value, vec![self.clone()], move |g| {
            vec![Some(apply_planes(g, &rows.t(), &cols.view()))]
        })
    }

    /// Resizes the spatial dims to (h, w) with [`resize_matrix`] weights.
    pub fn resize_to(&self, h: usize, w: usize) -> Var<T> {
        let (_, _, hi, wi) = self.dims4();
        if (hi, wi) == (h, w) {
            return self.clone();
        }
        self.resample(&resize_matrix(hi, h), &resize_matrix(wi, w))
    }

    /// Non-overlapping `k`×`k` average pooling; dims must be divisible by `k`.
    pub fn avg_pool2d(&self, k: usize) -> Var<T> {
        if k == 1 {
            return self.clone();
        }
        let (_, _, h, w) = self.dims4();
        assert!(h % k == 0 && w % k == 0, "({h}, {w}) not divisible by {k}");
        self.resample(&area_matrix(h, h / k), &area_matrix(w, w / k))
    }

    /// Max pooling with implicit -inf padding.
    pub fn max_pool2d(&self, k: usize, stride: usize, pad: usize) -> Var<T> {
        let (n, c, h, w) = self.dims4();
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        let x = self.value().as_standard_layout().into_owned();
        let xs = x.as_slice().unwrap();
        let mut out = vec![T::zero(); n * c * ho * wo];
        let mut arg = vec![0usize; n * c * ho * wo];
        for p in 0..n * c {
            let plane = &xs[p * h * w..(p + 1) * h * w];
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = T::neg_infinity();
                    let mut bi = 0;
                    for i in 0..k {
                        let iy = (oy * stride + i) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for j in 0..k {
                            let ix = (ox * stride + j) as isize - pad as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = iy as usize * w + ix as usize;
                            if plane[idx] > best {
                                best = plane[idx];
                                bi = idx;
                            }
                        }
                    }
                    let o = p * ho * wo + oy * wo + ox;
                    out[o] = best;
                    arg[o] = bi;
                }
            }
        }
        let value = ArrayD::from_shape_vec(IxDyn(&[n, c, ho, wo]), out).unwrap();
        Var::from_op(value, vec![self.clone()], move |g| {
            let g = g.as_standard_layout();
            let gs = g.as_slice().unwrap();
            let mut gx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                for q in 0..ho * wo {
                    let o = p * ho * wo + q;
                    gx[p * h * w + arg[o]] += gs[o];
                }
            }
            vec![Some(ArrayD::from_shape_vec(IxDyn(&[n, c, h, w]), gx).unwrap())]
        })
    }
}
