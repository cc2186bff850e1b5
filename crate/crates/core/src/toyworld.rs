//! The procedural toy world: smooth synthetic scenes, a prompt embedding
//! frame with a dedicated NSFW direction, and the fixed recipe that builds
//! the frozen toy editor and its safety scorer from a seeded calibration set.
//!
//! Scenes are band-limited by a double binomial blur, so the editor's
//! pixel-scale sentinel pattern reads near zero on every clean image. The
//! sampler's malicious pathway injects a two-pixel contraband texture gated
//! on that sentinel, which is what makes targeted protection possible within
//! a small pixel budget while normal edits ride a separate channel-affine
//! pathway.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::editor::{make_malicious, EditorConfig, EditorModel, EditorParams, NsfwScorerParams, ToyEditor};
use crate::error::{CoreError, Result};
use crate::image::{ColorSpace, Image};
use crate::prompt::{Prompt, PromptSet};
use crate::rng::{DetRng, Seed};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Version stamp carried by editors and reports built from this recipe.
pub const WORLD_VERSION: u32 = 1;

/// Patch side of the editor's encoder; scenes and all latent shape math use
/// this downsample factor.
pub const DOWNSAMPLE: usize = 8;

// Recipe constants. Gains are chosen so that: clean sentinel responses sit in
// a narrow band (blur kills the pixel checkerboard), a within-budget
// perturbation can push the sentinel far below the gate threshold, and the
// latent-distance objectives see comparable energy in the sentinel and the
// tanh-bounded content channels.
const SENTINEL_GAIN: f64 = 10.0;
const SENTINEL_RANGE: f64 = 2.5;
const TEXTURE_RANGE: f64 = 50.0;
const CONTENT_PREGAIN: f64 = 2.0;
const CONTENT_RANGE: f64 = 1.0;
const GATE_STEEPNESS: f64 = 12.0;
const GATE_MARGIN: f64 = 0.3;
const SQUASH_SHARPNESS: f64 = 3.0;
const INJECT_TARGET_RMS: f64 = 0.18;
const COND_GAIN_STD: f64 = 0.35;
const COND_BIAS_STD: f64 = 0.25;
const RIDGE_REL: f64 = 1e-3;
const SUBSPACE_ITERS: usize = 80;
const LOGISTIC_ITERS: usize = 40;
const LOGISTIC_L2: f64 = 1e-3;

/// How to build a world: sizes, counts and the seed everything derives from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct WorldConfig {
    pub seed: Seed,
    pub image_size: usize,
    pub num_images: usize,
    pub calib_scenes: usize,
    pub scorer_scenes: usize,
    pub content_components: usize,
    pub prompt_dim: usize,
    pub benign_dims: usize,
    pub train_normal: usize,
    pub train_malicious: usize,
    pub eval_normal: usize,
    pub eval_malicious: usize,
    pub malicious_strength: f64,
    pub strength_jitter: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: Seed(0),
            image_size: 64,
            num_images: 10,
            calib_scenes: 48,
            scorer_scenes: 24,
            content_components: 10,
            prompt_dim: 32,
            benign_dims: 6,
            train_normal: 10,
            train_malicious: 30,
            eval_normal: 20,
            eval_malicious: 20,
            malicious_strength: 1.0,
            strength_jitter: 0.2,
        }
    }
}

/// Everything a benchmark run needs, built deterministically from one seed.
#[derive(Debug, Clone)]
pub struct ToyWorld<T = f32> {
    pub config: WorldConfig,
    pub editor: ToyEditor<T>,
    pub images: Vec<Image<T>>,
    pub train_prompts: PromptSet<T>,
    pub eval_prompts: PromptSet<T>,
    pub nsfw_direction: Vec<T>,
}

/// One procedural scene: a four-corner gradient background with two soft
/// disks, band-limited by a double binomial blur and kept inside [0.1, 0.9].
pub fn generate_scene<T: Scalar>(seed: Seed, size: usize) -> Image<T> {
    let mut rng = seed.rng();
    let s = size as f64;
    let mut plane = vec![0.0f64; 3 * size * size];

    let corners: Vec<f64> = (0..12).map(|_| rng.uniform(0.15, 0.85)).collect();
    for c in 0..3 {
        for y in 0..size {
            for x in 0..size {
                let fy = y as f64 / (s - 1.0);
                let fx = x as f64 / (s - 1.0);
                let v = (1.0 - fy) * (1.0 - fx) * corners[c * 4]
                    + (1.0 - fy) * fx * corners[c * 4 + 1]
                    + fy * (1.0 - fx) * corners[c * 4 + 2]
                    + fy * fx * corners[c * 4 + 3];
                plane[c * size * size + y * size + x] = v;
            }
        }
    }

    // a smooth sinusoidal weave gives every local window some variance,
    // at periods far below the sentinel and contraband bands
    for chan in 0..3 {
        for _ in 0..2 {
            let period = rng.uniform::<f64>(8.0, 16.0);
            let theta = rng.uniform::<f64>(0.0, core::f64::consts::PI);
            let phase = rng.uniform::<f64>(0.0, core::f64::consts::TAU);
            let amp = rng.uniform::<f64>(0.025, 0.055);
            let (ct, st) = (Float::cos(theta), Float::sin(theta));
            for y in 0..size {
                for x in 0..size {
                    let u = (x as f64 * ct + y as f64 * st) * core::f64::consts::TAU / period;
                    let idx = chan * size * size + y * size + x;
                    plane[idx] = (plane[idx] + amp * Float::sin(u + phase)).clamp(0.15, 0.85);
                }
            }
        }
    }

    for (rlo, rhi) in [(0.16, 0.30), (0.07, 0.14)] {
        let cx = rng.uniform::<f64>(0.3, 0.7) * s;
        let cy = rng.uniform::<f64>(0.3, 0.7) * s;
        let radius = rng.uniform::<f64>(rlo, rhi) * s;
        let color: Vec<f64> = (0..3).map(|_| rng.uniform(0.15, 0.85)).collect();
        for y in 0..size {
            for x in 0..size {
                let d = Float::sqrt((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2));
                let alpha = ((radius + 1.0 - d) / 2.0).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    for (c, &col) in color.iter().enumerate() {
                        let idx = c * size * size + y * size + x;
                        plane[idx] = plane[idx] * (1.0 - alpha) + col * alpha;
                    }
                }
            }
        }
    }

    for c in 0..3 {
        let start = c * size * size;
        binomial_blur(&mut plane[start..start + size * size], size);
        binomial_blur(&mut plane[start..start + size * size], size);
        binomial_blur(&mut plane[start..start + size * size], size);
    }

    let data: Vec<T> = plane
        .iter()
        .map(|&v| T::c(v.clamp(0.1, 0.9)))
        .collect();
    Image::new(
        Tensor::from_vec(&[3, size, size], data).expect("sized"),
        ColorSpace::Rgb,
    )
    .expect("in range")
}

/// Separable [1,2,1]/4 blur with periodic padding. Periodic convolution has
/// exactly zero gain at Nyquist, so the sentinel checkerboard reads near zero
/// on every clean scene, borders included.
fn binomial_blur(plane: &mut [f64], size: usize) {
    let mut tmp = vec![0.0f64; size * size];
    for y in 0..size {
        for x in 0..size {
            let xm = (x + size - 1) % size;
            let xp = (x + 1) % size;
            tmp[y * size + x] =
                0.25 * plane[y * size + xm] + 0.5 * plane[y * size + x] + 0.25 * plane[y * size + xp];
        }
    }
    for y in 0..size {
        let ym = (y + size - 1) % size;
        let yp = (y + 1) % size;
        for x in 0..size {
            plane[y * size + x] =
                0.25 * tmp[ym * size + x] + 0.5 * tmp[y * size + x] + 0.25 * tmp[yp * size + x];
        }
    }
}

/// Pixel-scale checkerboard over all channels, tapered by a triangular
/// window; the sentinel read-out direction. The taper suppresses the box
/// window's corner kink, which would otherwise respond to smooth diagonal
/// edges.
fn sentinel_pattern(pd: usize) -> Vec<f64> {
    let p = DOWNSAMPLE;
    let mut v = vec![0.0f64; pd];
    let channels = pd / (p * p);
    let win = |i: usize| {
        let half = p as f64 / 2.0;
        let d = (i as f64 + 0.5 - half).abs();
        (half - d) / half * 2.0
    };
    for c in 0..channels {
        for y in 0..p {
            for x in 0..p {
                let sign = if (y + x) % 2 == 0 { 1.0 } else { -1.0 };
                v[c * p * p + y * p + x] = sign * win(y) * win(x) * 0.25;
            }
        }
    }
    v
}

/// Two-pixel checkerboard with a magenta-green color signature, unit norm;
/// the contraband texture the malicious pathway renders.
fn texture_pattern(pd: usize) -> Vec<f64> {
    let p = DOWNSAMPLE;
    let channels = pd / (p * p);
    let color = [0.9, -0.6, 0.9];
    let mut v = vec![0.0f64; pd];
    for c in 0..channels {
        let weight = color[c.min(2)];
        for y in 0..p {
            for x in 0..p {
                let sign = if ((y / 2) + (x / 2)) % 2 == 0 { 1.0 } else { -1.0 };
                v[c * p * p + y * p + x] = weight * sign;
            }
        }
    }
    let norm = Float::sqrt(v.iter().map(|a| a * a).sum::<f64>());
    for a in &mut v {
        *a /= norm;
    }
    v
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = Float::sqrt(v.iter().map(|a| a * a).sum::<f64>());
    for a in v {
        *a /= n;
    }
}

/// Extract non-overlapping encoder patches from an image, in f64.
fn extract_patches<T: Scalar>(img: &Image<T>) -> Vec<Vec<f64>> {
    let (c, h, w) = img.shape();
    let p = DOWNSAMPLE;
    let data = img.data().data();
    let mut out = Vec::with_capacity((h / p) * (w / p));
    for ty in 0..h / p {
        for tx in 0..w / p {
            let mut patch = Vec::with_capacity(c * p * p);
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        patch.push(data[ch * h * w + (ty * p + py) * w + tx * p + px].to_f64());
                    }
                }
            }
            out.push(patch);
        }
    }
    out
}

/// Top-k principal directions of the centered patches, orthogonal to the
/// given excluded directions; plain subspace iteration on the covariance.
fn principal_directions(
    patches: &[Vec<f64>],
    mean: &[f64],
    exclude: &[&[f64]],
    k: usize,
    rng: &mut DetRng,
) -> Vec<Vec<f64>> {
    let d = mean.len();
    let mut cov = vec![0.0f64; d * d];
    for p in patches {
        let centered: Vec<f64> = p.iter().zip(mean).map(|(a, m)| a - m).collect();
        for i in 0..d {
            let ci = centered[i];
            if ci == 0.0 {
                continue;
            }
            let row = &mut cov[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] += ci * centered[j];
            }
        }
    }
    let scale = 1.0 / patches.len() as f64;
    for v in &mut cov {
        *v *= scale;
    }

    let project = |v: &mut Vec<f64>| {
        for e in exclude {
            let c = dot(v, e);
            for (vi, ei) in v.iter_mut().zip(e.iter()) {
                *vi -= c * ei;
            }
        }
    };

    let mut basis: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            let mut v: Vec<f64> = (0..d).map(|_| rng.normal::<f64>()).collect();
            project(&mut v);
            normalize(&mut v);
            v
        })
        .collect();

    for _ in 0..SUBSPACE_ITERS {
        let mut next: Vec<Vec<f64>> = basis
            .iter()
            .map(|q| {
                let mut out = vec![0.0f64; d];
                for i in 0..d {
                    let row = &cov[i * d..(i + 1) * d];
                    out[i] = dot(row, q);
                }
                out
            })
            .collect();
        for i in 0..k {
            let (done, rest) = next.split_at_mut(i);
            let v = &mut rest[0];
            project(v);
            for prev in done.iter() {
                let c = dot(v, prev);
                for (vi, pi) in v.iter_mut().zip(prev.iter()) {
                    *vi -= c * pi;
                }
            }
            normalize(v);
        }
        basis = next;
    }
    basis
}

fn squash_inv(x: f64) -> f64 {
    0.5 + Float::atanh(2.0 * x - 1.0) / SQUASH_SHARPNESS
}

/// Solve (m x m) * X = B for X, with B given as m rows of width n.
/// Gaussian elimination with partial pivoting.
fn solve_linear(mut a: Vec<f64>, mut b: Vec<f64>, m: usize, n: usize) -> Vec<f64> {
    for col in 0..m {
        let mut pivot = col;
        for r in col + 1..m {
            if a[r * m + col].abs() > a[pivot * m + col].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col * m + j, pivot * m + j);
            }
            for j in 0..n {
                b.swap(col * n + j, pivot * n + j);
            }
        }
        let diag = a[col * m + col];
        for r in 0..m {
            if r == col {
                continue;
            }
            let f = a[r * m + col] / diag;
            if f == 0.0 {
                continue;
            }
            for j in col..m {
                a[r * m + j] -= f * a[col * m + j];
            }
            for j in 0..n {
                b[r * n + j] -= f * b[col * n + j];
            }
        }
    }
    for r in 0..m {
        let diag = a[r * m + r];
        for j in 0..n {
            b[r * n + j] /= diag;
        }
    }
    b
}

/// Assemble the encoder/sampler/decoder from a calibration set. All math in
/// f64; cast to the target scalar at the end.
fn build_editor_params(cfg: &WorldConfig, calib: &[Image<f64>], rng: &mut DetRng) -> EditorParams<f64> {
    let pd = 3 * DOWNSAMPLE * DOWNSAMPLE;
    let cz = 2 + cfg.content_components;

    let mut patches: Vec<Vec<f64>> = Vec::new();
    for img in calib {
        patches.extend(extract_patches(img));
    }
    let mut mean = vec![0.0f64; pd];
    for p in &patches {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= patches.len() as f64;
    }

    let mut sentinel = sentinel_pattern(pd);
    let texture = texture_pattern(pd);
    normalize(&mut sentinel);
    let sentinel_unit = sentinel;
    let content = principal_directions(
        &patches,
        &mean,
        &[&sentinel_unit, &texture],
        cfg.content_components,
        rng,
    );

    // encoder rows: sentinel (unnormalized +-1 pattern times gain), texture,
    // then pre-gained content components
    let mut enc_weight = vec![0.0f64; cz * pd];
    let raw_sentinel = sentinel_pattern(pd);
    for j in 0..pd {
        enc_weight[j] = SENTINEL_GAIN * raw_sentinel[j];
        enc_weight[pd + j] = texture[j];
    }
    for (k, u) in content.iter().enumerate() {
        for j in 0..pd {
            enc_weight[(2 + k) * pd + j] = CONTENT_PREGAIN * u[j];
        }
    }
    let enc_bias: Vec<f64> = (0..cz)
        .map(|r| -dot(&enc_weight[r * pd..(r + 1) * pd], &mean))
        .collect();
    let mut enc_range = vec![CONTENT_RANGE; cz];
    enc_range[0] = SENTINEL_RANGE;
    enc_range[1] = TEXTURE_RANGE;

    // encode the calibration patches with the finished encoder
    let encode_patch = |p: &[f64]| -> Vec<f64> {
        (0..cz)
            .map(|r| {
                let pre = dot(&enc_weight[r * pd..(r + 1) * pd], p) + enc_bias[r];
                enc_range[r] * Float::tanh(pre / enc_range[r])
            })
            .collect()
    };
    let encoded: Vec<Vec<f64>> = patches.iter().map(|p| encode_patch(p)).collect();

    // gate threshold sits below the lowest clean sentinel response
    let z0_lo = encoded
        .iter()
        .map(|z| z[0])
        .fold(f64::INFINITY, f64::min);
    let gate_tau = z0_lo - GATE_MARGIN;

    // ridge-fit a linear decoder (plus intercept) from the non-sentinel
    // channels to pre-squash pixel targets
    let feats = cz; // texture + content + intercept, sentinel excluded
    let design_width = feats;
    let mut ata = vec![0.0f64; design_width * design_width];
    let mut atb = vec![0.0f64; design_width * pd];
    for (z, p) in encoded.iter().zip(&patches) {
        let mut row = Vec::with_capacity(design_width);
        row.extend_from_slice(&z[1..cz]);
        row.push(1.0);
        let target: Vec<f64> = p.iter().map(|&x| squash_inv(x)).collect();
        for i in 0..design_width {
            let ri = row[i];
            for j in 0..design_width {
                ata[i * design_width + j] += ri * row[j];
            }
            for j in 0..pd {
                atb[i * pd + j] += ri * target[j];
            }
        }
    }
    let trace: f64 = (0..design_width).map(|i| ata[i * design_width + i]).sum();
    let lambda = RIDGE_REL * trace / design_width as f64;
    for i in 0..design_width {
        ata[i * design_width + i] += lambda;
    }
    let w = solve_linear(ata, atb, design_width, pd);

    // dec_weight is (pd, cz): sentinel column zero, fitted columns for the rest
    let mut dec_weight = vec![0.0f64; pd * cz];
    for ch in 1..cz {
        for j in 0..pd {
            dec_weight[j * cz + ch] = w[(ch - 1) * pd + j];
        }
    }
    let dec_bias: Vec<f64> = (0..pd).map(|j| w[(design_width - 1) * pd + j]).collect();

    // injection amplitude: hit the target rendered rms per pixel at unit
    // malicious strength, using the fitted texture column and the squash
    // slope at mid-range
    let tex_col_norm = Float::sqrt(
        (0..pd)
            .map(|j| dec_weight[j * cz + 1] * dec_weight[j * cz + 1])
            .sum::<f64>(),
    );
    let squash_slope = 0.5 * SQUASH_SHARPNESS;
    let inject_amp = INJECT_TARGET_RMS * Float::sqrt(pd as f64) / (tex_col_norm * squash_slope);
    let mut inject = vec![0.0f64; cz];
    inject[1] = inject_amp;

    // benign conditioning maps live purely in the benign prompt subspace;
    // they are filled in by the caller once the prompt frame exists
    EditorParams {
        latent_channels: cz,
        latent_downsample: DOWNSAMPLE,
        sampler_steps_default: 4,
        prompt_dim: cfg.prompt_dim,
        enc_weight: Tensor::from_vec(&[cz, pd], enc_weight).expect("sized"),
        enc_bias: Tensor::from_vec(&[cz], enc_bias).expect("sized"),
        enc_range: Tensor::from_vec(&[cz], enc_range).expect("sized"),
        dec_weight: Tensor::from_vec(&[pd, cz], dec_weight).expect("sized"),
        dec_bias: Tensor::from_vec(&[pd], dec_bias).expect("sized"),
        dec_squash: Tensor::scalar(SQUASH_SHARPNESS),
        cond_gain: Tensor::zeros(&[cz, cfg.prompt_dim]),
        cond_bias: Tensor::zeros(&[cz, cfg.prompt_dim]),
        mal_readout: Tensor::zeros(&[cfg.prompt_dim]),
        inject: Tensor::from_vec(&[cz], inject).expect("sized"),
        gate: Tensor::from_vec(&[2], vec![GATE_STEEPNESS, gate_tau]).expect("sized"),
    }
}

/// Orthonormal prompt frame: a unit NSFW direction plus `benign_dims`
/// orthogonal benign directions.
fn prompt_frame(dim: usize, benign_dims: usize, rng: &mut DetRng) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut nsfw: Vec<f64> = (0..dim).map(|_| rng.normal::<f64>()).collect();
    normalize(&mut nsfw);
    let mut benign: Vec<Vec<f64>> = Vec::with_capacity(benign_dims);
    while benign.len() < benign_dims {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.normal::<f64>()).collect();
        let c = dot(&v, &nsfw);
        for (vi, ni) in v.iter_mut().zip(&nsfw) {
            *vi -= c * ni;
        }
        for b in &benign {
            let c = dot(&v, b);
            for (vi, bi) in v.iter_mut().zip(b.iter()) {
                *vi -= c * bi;
            }
        }
        let norm = Float::sqrt(v.iter().map(|a| a * a).sum::<f64>());
        if norm > 1e-6 {
            for a in &mut v {
                *a /= norm;
            }
            benign.push(v);
        }
    }
    (nsfw, benign)
}

fn benign_embedding(benign: &[Vec<f64>], rng: &mut DetRng) -> Vec<f64> {
    let dim = benign[0].len();
    let mut e = vec![0.0f64; dim];
    for b in benign {
        let c: f64 = rng.uniform(-1.0, 1.0);
        for (ei, bi) in e.iter_mut().zip(b) {
            *ei += c * bi;
        }
    }
    e
}

/// Fill the sampler's benign conditioning so that content channels respond
/// to the benign subspace only and the sentinel/texture channels never do.
fn fill_conditioning(params: &mut EditorParams<f64>, benign: &[Vec<f64>], nsfw: &[f64], rng: &mut DetRng) {
    let cz = params.latent_channels;
    let dp = params.prompt_dim;
    let mut gain = vec![0.0f64; cz * dp];
    let mut bias = vec![0.0f64; cz * dp];
    for ch in 2..cz {
        for b in benign {
            let g: f64 = rng.normal::<f64>() * COND_GAIN_STD;
            let h: f64 = rng.normal::<f64>() * COND_BIAS_STD;
            for j in 0..dp {
                gain[ch * dp + j] += g * b[j];
                bias[ch * dp + j] += h * b[j];
            }
        }
    }
    params.cond_gain = Tensor::from_vec(&[cz, dp], gain).expect("sized");
    params.cond_bias = Tensor::from_vec(&[cz, dp], bias).expect("sized");
    params.mal_readout = Tensor::from_vec(&[dp], nsfw.to_vec()).expect("sized");
}

/// Newton fit of a two-parameter logistic head on a scalar feature.
fn fit_logistic(features: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut alpha = 0.0f64;
    let mut beta = 0.0f64;
    for _ in 0..LOGISTIC_ITERS {
        let (mut g0, mut g1) = (LOGISTIC_L2 * alpha, LOGISTIC_L2 * beta);
        let (mut h00, mut h01, mut h11) = (LOGISTIC_L2, 0.0f64, LOGISTIC_L2);
        for (&r, &y) in features.iter().zip(labels) {
            let p = 1.0 / (1.0 + Float::exp(-(alpha * r + beta)));
            let err = p - if y { 1.0 } else { 0.0 };
            let w = (p * (1.0 - p)).max(1e-9);
            g0 += err * r;
            g1 += err;
            h00 += w * r * r;
            h01 += w * r;
            h11 += w;
        }
        let det = h00 * h11 - h01 * h01;
        alpha -= (h11 * g0 - h01 * g1) / det;
        beta -= (-h01 * g0 + h00 * g1) / det;
    }
    // alpha * r + beta == alpha * (r - b) with b = -beta / alpha
    (alpha, -beta / alpha)
}

/// Build the frozen toy editor, its scorer, the benchmark dataset and both
/// prompt sets from one seed.
pub fn build_world<T: Scalar>(cfg: &WorldConfig) -> Result<ToyWorld<T>> {
    if !cfg.image_size.is_multiple_of(DOWNSAMPLE) || cfg.image_size == 0 {
        return Err(CoreError::BadConfig(alloc::format!(
            "image_size {} must be a positive multiple of {DOWNSAMPLE}",
            cfg.image_size
        )));
    }
    if cfg.content_components < 1 || cfg.benign_dims + 1 > cfg.prompt_dim {
        return Err(CoreError::BadConfig("degenerate world dimensions".into()));
    }

    let calib: Vec<Image<f64>> = (0..cfg.calib_scenes)
        .map(|i| generate_scene(cfg.seed.derive(100 + i as u64), cfg.image_size))
        .collect();

    let mut pca_rng = cfg.seed.derive(1).rng();
    let mut params = build_editor_params(cfg, &calib, &mut pca_rng);

    let mut frame_rng = cfg.seed.derive(2).rng();
    let (nsfw, benign) = prompt_frame(cfg.prompt_dim, cfg.benign_dims, &mut frame_rng);
    let mut cond_rng = cfg.seed.derive(3).rng();
    fill_conditioning(&mut params, &benign, &nsfw, &mut cond_rng);

    // provisional editor for scorer calibration
    let mut editor = ToyEditor {
        params,
        scorer: NsfwScorerParams {
            kernel: Tensor::zeros(&[3, DOWNSAMPLE, DOWNSAMPLE]),
            logit: Tensor::from_vec(&[2], vec![1.0, 0.0]).expect("sized"),
            threshold: 0.5,
        },
        world_version: WORLD_VERSION,
    };

    // scorer: matched filter on the contraband texture, logistic head fit on
    // normal-vs-malicious edits of fresh scenes (plus raw scenes as negatives)
    let pd = 3 * DOWNSAMPLE * DOWNSAMPLE;
    let kernel = texture_pattern(pd);
    editor.scorer.kernel = Tensor::from_vec(&[3, DOWNSAMPLE, DOWNSAMPLE], kernel).expect("sized");

    let edit_cfg = EditorConfig::default();
    let mut scorer_rng = cfg.seed.derive(4).rng();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for i in 0..cfg.scorer_scenes {
        let scene: Image<f64> = generate_scene(cfg.seed.derive(200 + i as u64), cfg.image_size);
        let e = benign_embedding(&benign, &mut scorer_rng);
        let normal = Prompt::normal(alloc::format!("cal-{i:03}"), e);
        let mal = make_malicious(&normal, &nsfw, cfg.malicious_strength)?;

        let edited_normal = editor.edit(&scene, &normal, &edit_cfg)?;
        features.push(filter_response(&editor, &edited_normal));
        labels.push(false);

        let edited_mal = editor.edit(&scene, &mal, &edit_cfg)?;
        features.push(filter_response(&editor, &edited_mal));
        labels.push(true);

        // faint texture still counts as contraband, so that partially
        // suppressed edits stay flagged
        let faint = make_malicious(&normal, &nsfw, 0.35 * cfg.malicious_strength)?;
        let edited_faint = editor.edit(&scene, &faint, &edit_cfg)?;
        features.push(filter_response(&editor, &edited_faint));
        labels.push(true);

        features.push(filter_response(&editor, &scene));
        labels.push(false);
    }
    let (a, b) = fit_logistic(&features, &labels);
    editor.scorer.logit = Tensor::from_vec(&[2], vec![a, b]).expect("sized");

    let images: Vec<Image<T>> = (0..cfg.num_images)
        .map(|i| generate_scene::<f64>(cfg.seed.derive(300 + i as u64), cfg.image_size).cast::<T>())
        .collect();

    let train_prompts = build_prompt_set(
        cfg.seed.derive(5),
        &benign,
        &nsfw,
        cfg.train_normal,
        cfg.train_malicious,
        cfg,
        "tr",
    )?;
    let eval_prompts = build_prompt_set(
        cfg.seed.derive(6),
        &benign,
        &nsfw,
        cfg.eval_normal,
        cfg.eval_malicious,
        cfg,
        "ev",
    )?;

    Ok(ToyWorld {
        config: *cfg,
        editor: editor.cast::<T>(),
        images,
        train_prompts: train_prompts.cast::<T>(),
        eval_prompts: eval_prompts.cast::<T>(),
        nsfw_direction: nsfw.iter().map(|&v| T::c(v)).collect(),
    })
}

/// Pooled absolute matched-filter response; the scorer feature.
fn filter_response(editor: &ToyEditor<f64>, img: &Image<f64>) -> f64 {
    editor.pooled_filter_response(img)
}

fn build_prompt_set(
    seed: Seed,
    benign: &[Vec<f64>],
    nsfw: &[f64],
    normals: usize,
    maliciouses: usize,
    cfg: &WorldConfig,
    tag: &str,
) -> Result<PromptSet<f64>> {
    if maliciouses > 0 && normals == 0 {
        return Err(CoreError::BadConfig("malicious prompts need parents".into()));
    }
    let mut rng = seed.rng();
    let mut prompts: Vec<Prompt<f64>> = (0..normals)
        .map(|i| Prompt::normal(alloc::format!("{tag}-nor-{i:03}"), benign_embedding(benign, &mut rng)))
        .collect();
    for i in 0..maliciouses {
        let parent = prompts[i % normals].clone();
        let jitter: f64 = rng.uniform(-1.0, 1.0);
        let strength = cfg.malicious_strength * (1.0 + cfg.strength_jitter * jitter);
        let mut mal = make_malicious(&parent, nsfw, strength)?;
        mal.id = alloc::format!("{tag}-mal-{i:03}");
        prompts.push(mal);
    }
    PromptSet::new(prompts)
}
