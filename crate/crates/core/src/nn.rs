//! Minimal CPU tensor kernels with hand-written backward passes.
//!
//! Every activation is an `Array4` in `(batch, channel, height, width)`
//! standard layout. Convolutions lower to GEMM through `im2col`.

use std::fmt::Debug;

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array4, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut2, NdFloat};
use num_traits::FromPrimitive;

/// Floating-point element type of the network (`f32` for training, `f64`
/// for gradient checks).
pub trait Scalar: NdFloat + FromPrimitive + Default + Debug {
    fn from_f64c(v: f64) -> Self {
        Self::from_f64(v).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const BN_EPS: f64 = 1e-5;

fn mat<S>(data: &[S], rows: usize, cols: usize) -> ArrayView2<'_, S> {
    ArrayView2::from_shape((rows, cols), data).expect("matrix shape")
}

fn mat_mut<S>(data: &mut [S], rows: usize, cols: usize) -> ArrayViewMut2<'_, S> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("matrix shape")
}

/// Unfolds one `(c, h, w)` image into a `(c*k*k, h*w)` patch matrix with
/// zero "same" padding.
fn im2col<S: Scalar>(x: &[S], c: usize, h: usize, w: usize, k: usize, cols: &mut [S]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - p;
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    let drow = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        drow.fill(S::zero());
                        continue;
                    }
                    let srow = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let d = (dx.unsigned_abs()).min(w);
                    if dx >= 0 {
                        drow[..w - d].copy_from_slice(&srow[d..]);
                        drow[w - d..].fill(S::zero());
                    } else {
                        drow[..d].fill(S::zero());
                        drow[d..].copy_from_slice(&srow[..w - d]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates patch gradients back into an image.
fn col2im<S: Scalar>(cols: &[S], c: usize, h: usize, w: usize, k: usize, x: &mut [S]) {
    let p = (k / 2) as isize;
    let hw = h * w;
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ch * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let dx = kx as isize - p;
                for y in 0..h {
                    let sy = y as isize + ky as isize - p;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let srow = &src[y * w..(y + 1) * w];
                    let drow = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let d = (dx.unsigned_abs()).min(w);
                    if dx >= 0 {
                        for (o, i) in drow[d..].iter_mut().zip(&srow[..w - d]) {
                            *o += *i;
                        }
                    } else {
                        for (o, i) in drow[..w - d].iter_mut().zip(&srow[d..]) {
                            *o += *i;
                        }
                    }
                }
            }
        }
    }
}

/// Same-padded stride-1 convolution. `weight` is `(out, in, k, k)`.
pub fn conv2d<S: Scalar>(x: &Array4<S>, weight: ArrayView4<S>, bias: ArrayView1<S>) -> Array4<S> {
    let (n, ci, h, w) = x.dim();
    let (co, wci, k, _) = weight.dim();
    assert_eq!(ci, wci, "conv input channels");
    let hw = h * w;
    let kk = ci * k * k;
    let wmat = weight.to_shape((co, kk)).expect("weight layout");
    let xs = x.as_slice().expect("standard layout");
    let mut out = Array4::<S>::zeros((n, co, h, w));
    let os = out.as_slice_mut().unwrap();
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![S::zero(); kk * hw]
    };
    for b in 0..n {
        let img = &xs[b * ci * hw..(b + 1) * ci * hw];
        let patches = if k == 1 {
            mat(img, ci, hw)
        } else {
            im2col(img, ci, h, w, k, &mut cols);
            mat(&cols, kk, hw)
        };
        let dst = &mut os[b * co * hw..(b + 1) * co * hw];
        for (o, bv) in dst.chunks_exact_mut(hw).zip(bias.iter()) {
            o.fill(*bv);
        }
        general_mat_mul(
            S::one(),
            &wmat,
            &patches,
            S::one(),
            &mut mat_mut(dst, co, hw),
        );
    }
    out
}

pub struct ConvGrads<S> {
    pub dx: Option<Array4<S>>,
    pub dweight: Array4<S>,
    pub dbias: Array1<S>,
}

/// Gradients of [`conv2d`] given its input and the upstream gradient.
pub fn conv2d_backward<S: Scalar>(
    x: &Array4<S>,
    weight: ArrayView4<S>,
    dout: &Array4<S>,
    need_dx: bool,
) -> ConvGrads<S> {
    let (n, ci, h, w) = x.dim();
    let (co, _, k, _) = weight.dim();
    let hw = h * w;
    let kk = ci * k * k;
    let wmat = weight.to_shape((co, kk)).expect("weight layout");
    let xs = x.as_slice().expect("standard layout");
    let ds = dout.as_slice().expect("standard layout");
    let mut dw = vec![S::zero(); co * kk];
    let mut db = Array1::<S>::zeros(co);
    let mut dx = need_dx.then(|| Array4::<S>::zeros((n, ci, h, w)));
    let mut cols = if k == 1 {
        Vec::new()
    } else {
        vec![S::zero(); kk * hw]
    };
    let mut dcols = vec![S::zero(); if need_dx && k != 1 { kk * hw } else { 0 }];
    for b in 0..n {
        let img = &xs[b * ci * hw..(b + 1) * ci * hw];
        let g = &ds[b * co * hw..(b + 1) * co * hw];
        for (acc, row) in db.iter_mut().zip(g.chunks_exact(hw)) {
            *acc += row.iter().fold(S::zero(), |a, v| a + *v);
        }
        let gmat = mat(g, co, hw);
        let patches = if k == 1 {
            mat(img, ci, hw)
        } else {
            im2col(img, ci, h, w, k, &mut cols);
            mat(&cols, kk, hw)
        };
        general_mat_mul(
            S::one(),
            &gmat,
            &patches.t(),
            S::one(),
            &mut mat_mut(&mut dw, co, kk),
        );
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.as_slice_mut().unwrap()[b * ci * hw..(b + 1) * ci * hw];
            if k == 1 {
                general_mat_mul(
                    S::one(),
                    &wmat.t(),
                    &gmat,
                    S::zero(),
                    &mut mat_mut(dxs, ci, hw),
                );
            } else {
                general_mat_mul(
                    S::one(),
                    &wmat.t(),
                    &gmat,
                    S::zero(),
                    &mut mat_mut(&mut dcols, kk, hw),
                );
                col2im(&dcols, ci, h, w, k, dxs);
            }
        }
    }
    ConvGrads {
        dx,
        dweight: Array4::from_shape_vec((co, ci, k, k), dw).unwrap(),
        dbias: db,
    }
}

/// 2x2 stride-2 transposed convolution. `weight` is `(in, out, 2, 2)`.
pub fn conv_transpose2x2<S: Scalar>(
    x: &Array4<S>,
    weight: ArrayView4<S>,
    bias: ArrayView1<S>,
) -> Array4<S> {
    let (n, ci, h, w) = x.dim();
    let (wci, co, _, _) = weight.dim();
    assert_eq!(ci, wci, "transposed conv input channels");
    let hw = h * w;
    let wmat = weight.to_shape((ci, co * 4)).expect("weight layout");
    let xs = x.as_slice().unwrap();
    let mut y = vec![S::zero(); co * 4 * hw];
    let mut out = Array4::<S>::zeros((n, co, 2 * h, 2 * w));
    for b in 0..n {
        let xm = mat(&xs[b * ci * hw..(b + 1) * ci * hw], ci, hw);
        general_mat_mul(
            S::one(),
            &wmat.t(),
            &xm,
            S::zero(),
            &mut mat_mut(&mut y, co * 4, hw),
        );
        for c in 0..co {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &y[(c * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            out[[b, c, 2 * i + a, 2 * j + bb]] = row[i * w + j] + bias[c];
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn conv_transpose2x2_backward<S: Scalar>(
    x: &Array4<S>,
    weight: ArrayView4<S>,
    dout: &Array4<S>,
) -> ConvGrads<S> {
    let (n, ci, h, w) = x.dim();
    let (_, co, _, _) = weight.dim();
    let hw = h * w;
    let wmat = weight.to_shape((ci, co * 4)).expect("weight layout");
    let xs = x.as_slice().unwrap();
    let mut dy = vec![S::zero(); co * 4 * hw];
    let mut dw = vec![S::zero(); ci * co * 4];
    let mut db = Array1::<S>::zeros(co);
    let mut dx = Array4::<S>::zeros((n, ci, h, w));
    for b in 0..n {
        for c in 0..co {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut dy[(c * 4 + a * 2 + bb) * hw..][..hw];
                    for i in 0..h {
                        for j in 0..w {
                            let g = dout[[b, c, 2 * i + a, 2 * j + bb]];
                            row[i * w + j] = g;
                            db[c] += g;
                        }
                    }
                }
            }
        }
        let dym = mat(&dy, co * 4, hw);
        let xm = mat(&xs[b * ci * hw..(b + 1) * ci * hw], ci, hw);
        general_mat_mul(
            S::one(),
            &xm,
            &dym.t(),
            S::one(),
            &mut mat_mut(&mut dw, ci, co * 4),
        );
        let dxs = &mut dx.as_slice_mut().unwrap()[b * ci * hw..(b + 1) * ci * hw];
        general_mat_mul(S::one(), &wmat, &dym, S::zero(), &mut mat_mut(dxs, ci, hw));
    }
    ConvGrads {
        dx: Some(dx),
        dweight: Array4::from_shape_vec((ci, co, 2, 2), dw).unwrap(),
        dbias: db,
    }
}

/// Per-channel statistics saved by a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnCache<S> {
    pub xhat: Array4<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
    /// Unbiased batch variance, used for the running estimate.
    pub var_unbiased: Vec<S>,
}

/// Batch norm. With `running = Some((mean, var))` the given statistics are
/// used (eval mode); otherwise batch statistics are computed and cached.
pub fn batch_norm<S: Scalar>(
    x: &Array4<S>,
    gamma: ArrayView1<S>,
    beta: ArrayView1<S>,
    running: Option<(ArrayView1<S>, ArrayView1<S>)>,
) -> (Array4<S>, Option<BnCache<S>>) {
    let (n, c, h, w) = x.dim();
    let hw = h * w;
    let m = S::from_usize(n * hw).unwrap();
    let eps = S::from_f64c(BN_EPS);
    let xs = x.as_slice().unwrap();
    let mut out = Array4::<S>::zeros((n, c, h, w));
    let os = out.as_slice_mut().unwrap();
    let plane = |b: usize, ch: usize| (b * c + ch) * hw;

    let (mean, var): (Vec<S>, Vec<S>) = match running {
        Some((rm, rv)) => (rm.to_vec(), rv.to_vec()),
        None => (0..c)
            .map(|ch| {
                let mut sum = S::zero();
                for b in 0..n {
                    sum += xs[plane(b, ch)..plane(b, ch) + hw]
                        .iter()
                        .fold(S::zero(), |a, v| a + *v);
                }
                let mu = sum / m;
                let mut sq = S::zero();
                for b in 0..n {
                    sq += xs[plane(b, ch)..plane(b, ch) + hw]
                        .iter()
                        .fold(S::zero(), |a, v| a + (*v - mu) * (*v - mu));
                }
                (mu, sq / m)
            })
            .unzip(),
    };
    let inv_std: Vec<S> = var.iter().map(|v| S::one() / (*v + eps).sqrt()).collect();
    let mut xhat = running.is_none().then(|| Array4::<S>::zeros((n, c, h, w)));
    for b in 0..n {
        for ch in 0..c {
            let o = plane(b, ch);
            let (mu, is, g, bt) = (mean[ch], inv_std[ch], gamma[ch], beta[ch]);
            let src = &xs[o..o + hw];
            if let Some(xh) = xhat.as_mut() {
                let xh = &mut xh.as_slice_mut().unwrap()[o..o + hw];
                for ((d, hh), s) in os[o..o + hw].iter_mut().zip(xh.iter_mut()).zip(src) {
                    *hh = (*s - mu) * is;
                    *d = g * *hh + bt;
                }
            } else {
                for (d, s) in os[o..o + hw].iter_mut().zip(src) {
                    *d = g * (*s - mu) * is + bt;
                }
            }
        }
    }
    let cache = xhat.map(|xhat| {
        let corr = if n * hw > 1 {
            m / (m - S::one())
        } else {
            S::one()
        };
        BnCache {
            xhat,
            inv_std,
            var_unbiased: var.iter().map(|v| *v * corr).collect(),
            mean,
        }
    });
    (out, cache)
}

/// Returns `(dx, dgamma, dbeta)` for a training-mode batch norm.
pub fn batch_norm_backward<S: Scalar>(
    cache: &BnCache<S>,
    gamma: ArrayView1<S>,
    dout: &Array4<S>,
) -> (Array4<S>, Array1<S>, Array1<S>) {
    let (n, c, h, w) = dout.dim();
    let hw = h * w;
    let m = S::from_usize(n * hw).unwrap();
    let ds = dout.as_slice().unwrap();
    let xh = cache.xhat.as_slice().unwrap();
    let mut dgamma = Array1::<S>::zeros(c);
    let mut dbeta = Array1::<S>::zeros(c);
    let mut dx = Array4::<S>::zeros((n, c, h, w));
    let dxs = dx.as_slice_mut().unwrap();
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xh) = (S::zero(), S::zero());
        for b in 0..n {
            let o = (b * c + ch) * hw;
            for (d, x) in ds[o..o + hw].iter().zip(&xh[o..o + hw]) {
                sum_dy += *d;
                sum_dy_xh += *d * *x;
            }
        }
        dgamma[ch] = sum_dy_xh;
        dbeta[ch] = sum_dy;
        let k = gamma[ch] * cache.inv_std[ch] / m;
        for b in 0..n {
            let o = (b * c + ch) * hw;
            for ((g, d), x) in dxs[o..o + hw]
                .iter_mut()
                .zip(&ds[o..o + hw])
                .zip(&xh[o..o + hw])
            {
                *g = k * (m * *d - sum_dy - *x * sum_dy_xh);
            }
        }
    }
    (dx, dgamma, dbeta)
}

pub fn relu_inplace<S: Scalar>(x: &mut Array4<S>) {
    x.mapv_inplace(|v| if v > S::zero() { v } else { S::zero() });
}

/// Zeroes `grad` wherever the ReLU output was not positive.
pub fn relu_backward_inplace<S: Scalar>(out: &Array4<S>, grad: &mut Array4<S>) {
    ndarray::Zip::from(grad).and(out).for_each(|g, &o| {
        if o <= S::zero() {
            *g = S::zero();
        }
    });
}

/// 2x2 max pooling; returns the pooled tensor and the winning offset
/// (0..4, row-major inside the window) for each output element. Ties go to
/// the first maximum.
pub fn max_pool2<S: Scalar>(x: &Array4<S>) -> (Array4<S>, Vec<u8>) {
    let (n, c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<S>::zeros((n, c, oh, ow));
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for b in 0..n {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = x[[b, ch, 2 * i, 2 * j]];
                    let mut idx = 0u8;
                    for (k, (di, dj)) in [(0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                        let v = x[[b, ch, 2 * i + di, 2 * j + dj]];
                        if v > best {
                            best = v;
                            idx = k as u8 + 1;
                        }
                    }
                    out[[b, ch, i, j]] = best;
                    arg.push(idx);
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<S: Scalar>(
    arg: &[u8],
    dout: &Array4<S>,
    input_dim: (usize, usize, usize, usize),
) -> Array4<S> {
    let mut dx = Array4::<S>::zeros(input_dim);
    for (((b, ch, i, j), g), a) in dout.indexed_iter().zip(arg) {
        let (di, dj) = ((*a / 2) as usize, (*a % 2) as usize);
        dx[[b, ch, 2 * i + di, 2 * j + dj]] += *g;
    }
    dx
}

pub fn upsample_nearest2<S: Scalar>(x: &Array4<S>) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(b, ch, i, j)| {
        x[[b, ch, i / 2, j / 2]]
    })
}

pub fn upsample_nearest2_backward<S: Scalar>(dout: &Array4<S>) -> Array4<S> {
    let (n, c, h, w) = dout.dim();
    let mut dx = Array4::<S>::zeros((n, c, h / 2, w / 2));
    for ((b, ch, i, j), g) in dout.indexed_iter() {
        dx[[b, ch, i / 2, j / 2]] += *g;
    }
    dx
}

/// Reflect-pads the bottom and right edges.
pub fn reflect_pad<S: Scalar>(x: &Array4<S>, pad_h: usize, pad_w: usize) -> Array4<S> {
    let (n, c, h, w) = x.dim();
    let refl = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    Array4::from_shape_fn((n, c, h + pad_h, w + pad_w), |(b, ch, i, j)| {
        x[[b, ch, refl(i, h), refl(j, w)]]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn naive_conv(x: &Array4<f64>, w: &Array4<f64>, b: &Array1<f64>) -> Array4<f64> {
        let (n, ci, h, wd) = x.dim();
        let (co, _, k, _) = w.dim();
        let p = (k / 2) as isize;
        Array4::from_shape_fn((n, co, h, wd), |(bb, o, i, j)| {
            let mut s = b[o];
            for c in 0..ci {
                for ky in 0..k {
                    for kx in 0..k {
                        let (y, xx) = (i as isize + ky as isize - p, j as isize + kx as isize - p);
                        if y >= 0 && y < h as isize && xx >= 0 && xx < wd as isize {
                            s += w[[o, c, ky, kx]] * x[[bb, c, y as usize, xx as usize]];
                        }
                    }
                }
            }
            s
        })
    }

    fn ramp(shape: (usize, usize, usize, usize), seed: f64) -> Array4<f64> {
        Array::from_shape_fn(shape, |(a, b, c, d)| {
            ((a * 7 + b * 5 + c * 3 + d) as f64 * 0.37 + seed).sin()
        })
    }

    #[test]
    fn conv_matches_direct_sum() {
        let x = ramp((2, 3, 5, 4), 0.1);
        let w = ramp((4, 3, 3, 3), 0.7);
        let b = Array1::from(vec![0.1, -0.2, 0.3, 0.0]);
        let got = conv2d(&x, w.view(), b.view());
        let want = naive_conv(&x, &w, &b);
        assert!((&got - &want).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn conv_on_single_column() {
        let x = ramp((1, 2, 4, 1), 0.4);
        let w = ramp((3, 2, 3, 3), 0.2);
        let b = Array1::zeros(3);
        let got = conv2d(&x, w.view(), b.view());
        assert!((&got - &naive_conv(&x, &w, &b))
            .iter()
            .all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let x = ramp((2, 2, 4, 5), 0.3);
        let w = ramp((3, 2, 3, 3), 0.9);
        let b = Array1::from(vec![0.0, 0.5, -0.5]);
        let dout = ramp((2, 3, 4, 5), 1.3);
        let loss = |x: &Array4<f64>, w: &Array4<f64>| (conv2d(x, w.view(), b.view()) * &dout).sum();
        let g = conv2d_backward(&x, w.view(), &dout, true);
        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 3), (0, 1, 3, 4)] {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            assert!((fd - g.dx.as_ref().unwrap()[idx]).abs() < 1e-6);
        }
        for idx in [(0, 0, 0, 0), (2, 1, 1, 2), (1, 0, 2, 2)] {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp[idx] += h;
            wm[idx] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            assert!((fd - g.dweight[idx]).abs() < 1e-6);
        }
        let db: f64 = dout.index_axis(ndarray::Axis(1), 1).sum();
        assert!((g.dbias[1] - db).abs() < 1e-9);
    }

    #[test]
    fn transposed_conv_backward_matches_finite_differences() {
        let x = ramp((1, 2, 2, 3), 0.3);
        let w = ramp((2, 3, 2, 2), 0.8);
        let b = Array1::from(vec![0.1, 0.2, 0.3]);
        let dout = ramp((1, 3, 4, 6), 0.5);
        let loss = |x: &Array4<f64>, w: &Array4<f64>| {
            (conv_transpose2x2(x, w.view(), b.view()) * &dout).sum()
        };
        let g = conv_transpose2x2_backward(&x, w.view(), &dout);
        let h = 1e-6;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[[0, 1, 1, 2]] += h;
        xm[[0, 1, 1, 2]] -= h;
        let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
        assert!((fd - g.dx.as_ref().unwrap()[[0, 1, 1, 2]]).abs() < 1e-6);
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp[[1, 2, 1, 0]] += h;
        wm[[1, 2, 1, 0]] -= h;
        let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
        assert!((fd - g.dweight[[1, 2, 1, 0]]).abs() < 1e-6);
    }

    #[test]
    fn batch_norm_backward_matches_finite_differences() {
        let x = ramp((2, 2, 3, 3), 0.2);
        let gamma = Array1::from(vec![1.5, 0.7]);
        let beta = Array1::from(vec![0.1, -0.3]);
        let dout = ramp((2, 2, 3, 3), 2.1);
        let loss =
            |x: &Array4<f64>| (batch_norm(x, gamma.view(), beta.view(), None).0 * &dout).sum();
        let (_, cache) = batch_norm(&x, gamma.view(), beta.view(), None);
        let (dx, dg, _) = batch_norm_backward(cache.as_ref().unwrap(), gamma.view(), &dout);
        let h = 1e-6;
        for idx in [(0, 0, 0, 0), (1, 1, 2, 1)] {
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
        let xhat = &cache.unwrap().xhat;
        let want: f64 = (xhat * &dout).index_axis(ndarray::Axis(1), 0).sum();
        assert!((dg[0] - want).abs() < 1e-12);
    }

    #[test]
    fn pooling_and_upsampling_adjoints() {
        let x = ramp((1, 2, 4, 6), 0.0);
        let (p, arg) = max_pool2(&x);
        assert_eq!(p.dim(), (1, 2, 2, 3));
        let dout = ramp((1, 2, 2, 3), 0.9);
        let dx = max_pool2_backward(&arg, &dout, x.dim());
        assert!((dx.sum() - dout.sum()).abs() < 1e-12);
        let up = upsample_nearest2(&p);
        assert_eq!(up.dim(), (1, 2, 4, 6));
        // <up(p), y> == <p, up^T(y)>
        let y = ramp((1, 2, 4, 6), 0.5);
        let lhs = (&up * &y).sum();
        let rhs = (&p * &upsample_nearest2_backward(&y)).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn reflect_padding() {
        let x = Array4::from_shape_fn((1, 1, 3, 3), |(_, _, i, j)| (i * 3 + j) as f64);
        let p = reflect_pad(&x, 1, 2);
        assert_eq!(p.dim(), (1, 1, 4, 5));
        assert_eq!(p[[0, 0, 3, 0]], x[[0, 0, 1, 0]]);
        assert_eq!(p[[0, 0, 0, 4]], x[[0, 0, 0, 0]]);
    }
}
