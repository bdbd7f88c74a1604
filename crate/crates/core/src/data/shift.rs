use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the compound target-domain shift.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftParams {
    pub brightness_factor: f64,
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub downscale_factor: usize,
    pub motion_blur_len: usize,
}

impl ShiftParams {
    pub fn identity() -> Self {
        ShiftParams { brightness_factor: 1.0, blur_sigma: 0.0, noise_std: 0.0, downscale_factor: 1, motion_blur_len: 0 }
    }

    /// Darker, blurred, low-resolution, noisy target domain.
    pub fn default_target() -> Self {
        ShiftParams {
            brightness_factor: 0.5,
            blur_sigma: 1.0,
            noise_std: 0.05,
            downscale_factor: 2,
            motion_blur_len: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.brightness_factor > 0.0 && self.brightness_factor.is_finite()) {
            return Err(Error::InvalidConfig("brightness factor must be positive".into()));
        }
        if !(self.blur_sigma >= 0.0 && self.blur_sigma.is_finite()) {
            return Err(Error::InvalidConfig("blur sigma must be nonnegative".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidConfig("noise std must be nonnegative".into()));
        }
        if self.downscale_factor == 0 {
            return Err(Error::InvalidConfig("downscale factor must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for ShiftParams {
    fn default() -> Self {
        Self::identity()
    }
}

/// Brightness, Gaussian blur, horizontal motion blur, resolution loss,
/// additive noise, then clamping to `[0, 1]`, applied to a `C × H × W` image.
/// Stages at their identity setting are skipped, so the identity shift
/// returns the input unchanged.
pub fn apply_domain_shift(image: &Tensor<f32>, shift: &ShiftParams, seed: u64) -> Result<Tensor<f32>> {
    shift.validate()?;
    let (c, h, w) = match image.dims() {
        [c, h, w] => (*c, *h, *w),
        d => return Err(Error::shape("apply_domain_shift", format!("expected C×H×W, got {d:?}"))),
    };
    let mut data = image.data().to_vec();
    if shift.brightness_factor != 1.0 {
        let f = shift.brightness_factor as f32;
        data.iter_mut().for_each(|v| *v *= f);
    }
    if shift.blur_sigma > 0.0 {
        let kernel = gaussian_kernel(shift.blur_sigma);
        for plane in data.chunks_mut(h * w) {
            convolve_rows(plane, h, w, &kernel);
            convolve_cols(plane, h, w, &kernel);
        }
    }
    if shift.motion_blur_len > 1 {
        let len = shift.motion_blur_len;
        let kernel: Vec<(isize, f64)> =
            (0..len).map(|i| (i as isize - ((len - 1) / 2) as isize, 1.0 / len as f64)).collect();
        for plane in data.chunks_mut(h * w) {
            convolve_rows(plane, h, w, &kernel);
        }
    }
    if shift.downscale_factor > 1 {
        for plane in data.chunks_mut(h * w) {
            block_resample(plane, h, w, shift.downscale_factor);
        }
    }
    if shift.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, shift.noise_std).expect("validated std");
        data.iter_mut().for_each(|v| *v += normal.sample(&mut rng) as f32);
    }
    if *shift != ShiftParams::identity() {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
    Tensor::new(vec![c, h, w], data)
}

/// Normalized taps `(offset, weight)` truncated at radius `ceil(3σ)`.
fn gaussian_kernel(sigma: f64) -> Vec<(isize, f64)> {
    let r = (3.0 * sigma).ceil() as isize;
    let raw: Vec<(isize, f64)> = (-r..=r).map(|d| (d, (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())).collect();
    let total: f64 = raw.iter().map(|(_, v)| v).sum();
    raw.into_iter().map(|(d, v)| (d, v / total)).collect()
}

/// Edge-clamped horizontal convolution.
fn convolve_rows(plane: &mut [f32], h: usize, w: usize, kernel: &[(isize, f64)]) {
    let mut row = vec![0.0f64; w];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for (x, out) in row.iter_mut().enumerate() {
            *out =
                kernel.iter().map(|&(d, k)| k * src[(x as isize + d).clamp(0, w as isize - 1) as usize] as f64).sum();
        }
        for (dst, v) in plane[y * w..(y + 1) * w].iter_mut().zip(&row) {
            *dst = *v as f32;
        }
    }
}

/// Edge-clamped vertical convolution.
fn convolve_cols(plane: &mut [f32], h: usize, w: usize, kernel: &[(isize, f64)]) {
    let mut col = vec![0.0f64; h];
    for x in 0..w {
        for (y, out) in col.iter_mut().enumerate() {
            *out = kernel
                .iter()
                .map(|&(d, k)| k * plane[(y as isize + d).clamp(0, h as isize - 1) as usize * w + x] as f64)
                .sum();
        }
        for (y, v) in col.iter().enumerate() {
            plane[y * w + x] = *v as f32;
        }
    }
}

/// Average `f × f` blocks (partial blocks at the border average what they
/// cover), then write each block's mean back to all its pixels.
fn block_resample(plane: &mut [f32], h: usize, w: usize, f: usize) {
    for by in (0..h).step_by(f) {
        for bx in (0..w).step_by(f) {
            let (ye, xe) = ((by + f).min(h), (bx + f).min(w));
            let mut sum = 0.0f64;
            for y in by..ye {
                for x in bx..xe {
                    sum += plane[y * w + x] as f64;
                }
            }
            let mean = (sum / ((ye - by) * (xe - bx)) as f64) as f32;
            for y in by..ye {
                for x in bx..xe {
                    plane[y * w + x] = mean;
                }
            }
        }
    }
}
