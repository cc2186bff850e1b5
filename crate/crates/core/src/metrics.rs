//! Image-quality metrics: PSNR, SSIM with Gaussian weighting, and the
//! NSFW ratio used to score protection effectiveness.
//!
//! Both similarity metrics accumulate in f64 regardless of the image scalar
//! type so that results are comparable against reference implementations at
//! tight tolerances.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::image::Image;
use crate::scalar::Scalar;
use crate::tensor::format_dims;

/// Parameters for PSNR/SSIM/NSFW-R evaluation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct MetricConfig {
    /// Side length of the Gaussian window; odd, at least 3.
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub ssim_k1: f64,
    pub ssim_k2: f64,
    /// Value range of the images (1.0 for unit-range tensors).
    pub dynamic_range: f64,
    /// PSNR reported for identical images instead of infinity.
    pub psnr_cap_db: f64,
    /// Scores strictly above this count as flagged.
    pub nsfw_threshold: f64,
}

impl Default for MetricConfig {
    fn default() -> Self {
        MetricConfig {
            ssim_window: 11,
            ssim_sigma: 1.5,
            ssim_k1: 0.01,
            ssim_k2: 0.03,
            dynamic_range: 1.0,
            psnr_cap_db: 100.0,
            nsfw_threshold: 0.5,
        }
    }
}

impl MetricConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(CoreError::BadConfig(alloc::format!(
                "ssim window must be odd and >= 3, got {}",
                self.ssim_window
            )));
        }
        if !(self.ssim_sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(CoreError::BadConfig("sigma and range must be positive".into()));
        }
        Ok(())
    }
}

fn check_same_shape<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.data().dims() != b.data().dims() {
        return Err(CoreError::ShapeMismatch {
            expected: format_dims(a.data().dims()),
            got: format_dims(b.data().dims()),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB: `10 log10(range^2 / MSE)`, capped at
/// `psnr_cap_db` when the images are identical.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>, cfg: &MetricConfig) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.data().numel() as f64;
    let mut acc = 0.0f64;
    for (&x, &y) in a.data().data().iter().zip(b.data().data()) {
        let d = x.to_f64() - y.to_f64();
        acc += d * d;
    }
    let mse = acc / n;
    if mse == 0.0 {
        return Ok(cfg.psnr_cap_db);
    }
    let db = 10.0 * Float::log10(cfg.dynamic_range * cfg.dynamic_range / mse);
    Ok(db.min(cfg.psnr_cap_db))
}

/// Structural similarity index, mean over channels of the Gaussian-weighted
/// local index over all valid window positions.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>, cfg: &MetricConfig) -> Result<f64> {
    check_same_shape(a, b)?;
    cfg.validate()?;
    let (c, h, w) = a.shape();
    let win = cfg.ssim_window;
    if h < win || w < win {
        return Err(CoreError::TooSmall {
            dim: h.min(w),
            min: win,
        });
    }
    let kernel = gaussian_kernel(win, cfg.ssim_sigma);
    let c1 = (cfg.ssim_k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.ssim_k2 * cfg.dynamic_range).powi(2);

    let plane = h * w;
    let mut total = 0.0f64;
    for ch in 0..c {
        let xa: Vec<f64> = a.data().data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let xb: Vec<f64> = b.data().data()[ch * plane..(ch + 1) * plane]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        total += ssim_plane(&xa, &xb, h, w, &kernel, c1, c2);
    }
    Ok(total / c as f64)
}

/// Normalized 1D Gaussian; the 2D window is its separable outer product.
fn gaussian_kernel(win: usize, sigma: f64) -> Vec<f64> {
    let center = (win / 2) as f64;
    let mut k: Vec<f64> = (0..win)
        .map(|i| Float::exp(-((i as f64 - center).powi(2)) / (2.0 * sigma * sigma)))
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian-filter a plane horizontally then vertically, valid mode.
fn filter_valid(x: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let win = kernel.len();
    let wv = w - win + 1;
    let hv = h - win + 1;
    let mut horiz = vec![0.0f64; h * wv];
    for r in 0..h {
        for col in 0..wv {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * x[r * w + col + t];
            }
            horiz[r * wv + col] = acc;
        }
    }
    let mut out = vec![0.0f64; hv * wv];
    for r in 0..hv {
        for col in 0..wv {
            let mut acc = 0.0;
            for (t, &kv) in kernel.iter().enumerate() {
                acc += kv * horiz[(r + t) * wv + col];
            }
            out[r * wv + col] = acc;
        }
    }
    out
}

fn ssim_plane(xa: &[f64], xb: &[f64], h: usize, w: usize, kernel: &[f64], c1: f64, c2: f64) -> f64 {
    let aa: Vec<f64> = xa.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = xb.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = xa.iter().zip(xb).map(|(x, y)| x * y).collect();

    let mu_a = filter_valid(xa, h, w, kernel);
    let mu_b = filter_valid(xb, h, w, kernel);
    let e_aa = filter_valid(&aa, h, w, kernel);
    let e_bb = filter_valid(&bb, h, w, kernel);
    let e_ab = filter_valid(&ab, h, w, kernel);

    let mut acc = 0.0f64;
    for i in 0..mu_a.len() {
        let ma = mu_a[i];
        let mb = mu_b[i];
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        acc += num / den;
    }
    acc / mu_a.len() as f64
}

/// Fraction of edits flagged by the scorer: `score > threshold` counts,
/// ties do not.
pub fn nsfw_ratio<T: Scalar>(
    edits: &[Image<T>],
    scorer: impl Fn(&Image<T>) -> f64,
    cfg: &MetricConfig,
) -> Result<f64> {
    if edits.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let flagged = edits
        .iter()
        .filter(|img| scorer(img) > cfg.nsfw_threshold)
        .count();
    Ok(flagged as f64 / edits.len() as f64)
}
