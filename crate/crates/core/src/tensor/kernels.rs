//! Raw forward/backward loops over row-major slices.
//!
//! Every reduction runs in a fixed loop order so results are bit-reproducible.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Stride, dilation and zero padding of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvParams {
    pub stride: usize,
    pub dilation: usize,
    pub padding: usize,
}

impl ConvParams {
    pub const fn new(stride: usize, dilation: usize, padding: usize) -> Self {
        ConvParams { stride, dilation, padding }
    }

    /// Padding that keeps the spatial size for stride 1.
    pub const fn same(kernel: usize, dilation: usize) -> Self {
        ConvParams { stride: 1, dilation, padding: dilation * (kernel - 1) / 2 }
    }
}

/// Window, stride and padding of a max pool. With `ceil_mode` the last partial
/// window is kept as long as it starts inside the (left-padded) input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolParams {
    pub window: usize,
    pub stride: usize,
    pub padding: usize,
    pub ceil_mode: bool,
}

impl PoolParams {
    pub const fn new(window: usize, stride: usize) -> Self {
        PoolParams { window, stride, padding: 0, ceil_mode: false }
    }
}

pub(crate) fn conv_out_len(axis: &'static str, len: usize, k: usize, p: &ConvParams) -> Result<usize> {
    let span = p.dilation * (k - 1) + 1;
    let padded = len + 2 * p.padding;
    if padded < span {
        return Err(Error::shape(
            "conv2d",
            format!("input {axis} {len} (padded {padded}) is smaller than the dilated kernel {axis} {span}"),
        ));
    }
    Ok((padded - span) / p.stride + 1)
}

pub(crate) fn pool_out_len(axis: &'static str, len: usize, p: &PoolParams) -> Result<usize> {
    let padded = len + 2 * p.padding;
    if p.window > padded {
        return Err(Error::shape(
            "max_pool2d",
            format!("window {} is larger than the input {axis} {len} (padded {padded})", p.window),
        ));
    }
    let span = padded - p.window;
    let mut out = if p.ceil_mode { span.div_ceil(p.stride) + 1 } else { span / p.stride + 1 };
    if p.ceil_mode && (out - 1) * p.stride >= len + p.padding {
        out -= 1;
    }
    Ok(out)
}

/// Deterministic dot product with eight independent lanes.
#[inline]
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let mut lanes = [T::zero(); 8];
    let chunks = n / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        let b8 = &b[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] += a8[l] * b8[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail += a[i] * b[i];
    }
    let s01 = lanes[0] + lanes[1];
    let s23 = lanes[2] + lanes[3];
    let s45 = lanes[4] + lanes[5];
    let s67 = lanes[6] + lanes[7];
    (s01 + s23) + (s45 + s67) + tail
}

#[inline]
pub(crate) fn sum<T: Scalar>(a: &[T]) -> T {
    let mut lanes = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let a8 = &a[c * 8..c * 8 + 8];
        for l in 0..8 {
            lanes[l] += a8[l];
        }
    }
    let mut tail = T::zero();
    for v in &a[chunks * 8..] {
        tail += *v;
    }
    ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv += alpha * *xv;
    }
}

/// Geometry of one convolution call, resolved from tensor dims.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub p: ConvParams,
}

impl ConvGeom {
    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_pixels(&self) -> usize {
        self.ho * self.wo
    }
}

fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let pix = g.out_pixels();
    let (s, d, pad) = (g.p.stride, g.p.dilation, g.p.padding as isize);
    for ci in 0..g.cin {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky * d) as isize - pad;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, out) in line.iter_mut().enumerate() {
                        let ix = (ox * s + kx * d) as isize - pad;
                        *out = if ix < 0 || ix >= g.w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let pix = g.out_pixels();
    let (s, d, pad) = (g.p.stride, g.p.dilation, g.p.padding as isize);
    for ci in 0..g.cin {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * pix..(row + 1) * pix];
                for oy in 0..g.ho {
                    let iy = (oy * s + ky * d) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let line = &src[oy * g.wo..(oy + 1) * g.wo];
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, v) in line.iter().enumerate() {
                        let ix = (ox * s + kx * d) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += *v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], kernel: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let (rows, pix) = (g.col_rows(), g.out_pixels());
    let mut cols = vec![T::zero(); rows * pix];
    let mut out = vec![T::zero(); g.n * g.cout * pix];
    for n in 0..g.n {
        im2col(&x[n * g.cin * g.h * g.w..(n + 1) * g.cin * g.h * g.w], g, &mut cols);
        let out_n = &mut out[n * g.cout * pix..(n + 1) * g.cout * pix];
        for co in 0..g.cout {
            let orow = &mut out_n[co * pix..(co + 1) * pix];
            orow.fill(bias.map_or(T::zero(), |b| b[co]));
            let wrow = &kernel[co * rows..(co + 1) * rows];
            for (k, wv) in wrow.iter().enumerate() {
                axpy(*wv, &cols[k * pix..(k + 1) * pix], orow);
            }
        }
    }
    out
}

/// Gradients of a convolution. Each requested output is accumulated over the
/// batch in sample order.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &ConvGeom,
    want: [bool; 3],
) -> ConvGrads<T> {
    let (rows, pix) = (g.col_rows(), g.out_pixels());
    let in_len = g.cin * g.h * g.w;
    let mut dx = want[0].then(|| vec![T::zero(); g.n * in_len]);
    let mut dk = want[1].then(|| vec![T::zero(); g.cout * rows]);
    let mut db = want[2].then(|| vec![T::zero(); g.cout]);
    let mut cols = vec![T::zero(); rows * pix];
    let mut dcols = vec![T::zero(); if want[0] { rows * pix } else { 0 }];
    for n in 0..g.n {
        let dy_n = &dy[n * g.cout * pix..(n + 1) * g.cout * pix];
        if let Some(db) = db.as_mut() {
            for co in 0..g.cout {
                db[co] += sum(&dy_n[co * pix..(co + 1) * pix]);
            }
        }
        if let Some(dk) = dk.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
            for co in 0..g.cout {
                let drow = &dy_n[co * pix..(co + 1) * pix];
                let krow = &mut dk[co * rows..(co + 1) * rows];
                for (k, kv) in krow.iter_mut().enumerate() {
                    *kv += dot(drow, &cols[k * pix..(k + 1) * pix]);
                }
            }
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(T::zero());
            for co in 0..g.cout {
                let drow = &dy_n[co * pix..(co + 1) * pix];
                let wrow = &kernel[co * rows..(co + 1) * rows];
                for (k, wv) in wrow.iter().enumerate() {
                    axpy(*wv, drow, &mut dcols[k * pix..(k + 1) * pix]);
                }
            }
            col2im(&dcols, g, &mut dx[n * in_len..(n + 1) * in_len]);
        }
    }
    ConvGrads { input: dx, kernel: dk, bias: db }
}

/// Returns pooled values and, per output, the flat input index of the
/// window's first maximum in row-major order.
pub(crate) fn max_pool_forward<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    p: &PoolParams,
    ho: usize,
    wo: usize,
) -> (Vec<T>, Vec<usize>) {
    let [n, c, h, w] = dims;
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    let pad = p.padding as isize;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            let y0 = (oy * p.stride) as isize - pad;
            let ys = y0.max(0) as usize;
            let ye = ((y0 + p.window as isize).min(h as isize)) as usize;
            for ox in 0..wo {
                let x0 = (ox * p.stride) as isize - pad;
                let xs = x0.max(0) as usize;
                let xe = ((x0 + p.window as isize).min(w as isize)) as usize;
                let mut best = base + ys * w + xs;
                for yy in ys..ye {
                    for xx in xs..xe {
                        let idx = base + yy * w + xx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg)
}

/// Per-channel batch normalization over `N × H × W`.
pub(crate) struct BatchNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

pub(crate) fn batch_norm_train<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, BatchNormCache<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut s = T::zero();
        for b in 0..n {
            s += sum(&x[(b * c + ch) * hw..(b * c + ch + 1) * hw]);
        }
        let mu = s / m;
        let mut sq = T::zero();
        for b in 0..n {
            for v in &x[(b * c + ch) * hw..(b * c + ch + 1) * hw] {
                let d = *v - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    let inv_std: Vec<T> = var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            for i in r {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (y, BatchNormCache { xhat, inv_std, mean, var })
}

pub(crate) fn batch_norm_eval<T: Scalar>(
    x: &[T],
    dims: [usize; 4],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> (Vec<T>, BatchNormCache<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let inv_std: Vec<T> = running_var.iter().map(|v| T::one() / (*v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                let xh = (x[i] - running_mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                y[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    let mean = running_mean.to_vec();
    let var = running_var.to_vec();
    (y, BatchNormCache { xhat, inv_std, mean, var })
}

/// Input, gamma and beta gradients of batch norm. In train mode the input
/// gradient includes the paths through the batch mean and variance.
pub(crate) fn batch_norm_backward<T: Scalar>(
    dy: &[T],
    dims: [usize; 4],
    gamma: &[T],
    cache: &BatchNormCache<T>,
    train: bool,
    want_input: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = dims;
    let hw = h * w;
    let m = T::of((n * hw) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        for b in 0..n {
            let r = (b * c + ch) * hw..(b * c + ch + 1) * hw;
            dgamma[ch] += dot(&dy[r.clone()], &cache.xhat[r.clone()]);
            dbeta[ch] += sum(&dy[r]);
        }
    }
    let dx = want_input.then(|| {
        let mut dx = vec![T::zero(); dy.len()];
        for b in 0..n {
            for ch in 0..c {
                let g = gamma[ch] * cache.inv_std[ch];
                for i in (b * c + ch) * hw..(b * c + ch + 1) * hw {
                    dx[i] =
                        if train { g * (dy[i] - dbeta[ch] / m - cache.xhat[i] * dgamma[ch] / m) } else { g * dy[i] };
                }
            }
        }
        dx
    });
    (dx, dgamma, dbeta)
}

/// Channel-wise softmax of an `N × K × H × W` score map.
pub(crate) fn softmax_channels<T: Scalar>(x: &[T], dims: [usize; 4]) -> Vec<T> {
    let [n, k, h, w] = dims;
    let hw = h * w;
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        let base = b * k * hw;
        for p in 0..hw {
            let mut mx = T::neg_infinity();
            for c in 0..k {
                mx = mx.max(x[base + c * hw + p]);
            }
            let mut z = T::zero();
            for c in 0..k {
                let e = (x[base + c * hw + p] - mx).exp();
                y[base + c * hw + p] = e;
                z += e;
            }
            for c in 0..k {
                y[base + c * hw + p] /= z;
            }
        }
    }
    y
}
