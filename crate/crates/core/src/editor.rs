//! The toy editor: a deterministic, differentiable stand-in for a latent
//! diffusion editor, decomposed into an encoder, an iterative conditional
//! sampler and a decoder, plus the convolutional NSFW scorer that stands in
//! for a production safety checker.
//!
//! The editor is built once by the recipe in [`crate::toyworld`] and then
//! frozen; protection training differentiates through it but never updates
//! it.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::generator::patch_permutation;
use crate::image::{ColorSpace, Image};
use crate::prompt::{Prompt, PromptKind};
use crate::rng::Seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Editing-time knobs. The sampler is fully deterministic; the seed is
/// carried for interface uniformity with stochastic editors.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EditorConfig {
    pub sampler_steps: u32,
    pub seed: Seed,
}

impl Default for EditorConfig {
    fn default() -> Self {
        EditorConfig {
            sampler_steps: 4,
            seed: Seed(0),
        }
    }
}

impl EditorConfig {
    fn validate(&self) -> Result<()> {
        if self.sampler_steps == 0 {
            return Err(CoreError::BadConfig("sampler_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frozen editor weights.
///
/// Encoder: per-patch linear map into `latent_channels` features, each passed
/// through a scaled tanh with its own saturation range. Sampler: per step, a
/// prompt-conditioned channel-affine update plus a content-gated injection
/// read off the first latent channel. Decoder: linear map back to patch
/// pixels followed by a smooth squash into (0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct EditorParams<T = f32> {
    pub latent_channels: usize,
    pub latent_downsample: usize,
    pub sampler_steps_default: u32,
    pub prompt_dim: usize,
    /// (latent_channels, C*ds*ds)
    pub enc_weight: Tensor<T>,
    pub enc_bias: Tensor<T>,
    /// Per-channel scaled-tanh saturation ranges.
    pub enc_range: Tensor<T>,
    /// (C*ds*ds, latent_channels)
    pub dec_weight: Tensor<T>,
    pub dec_bias: Tensor<T>,
    /// Squash sharpness.
    pub dec_squash: Tensor<T>,
    /// (latent_channels, prompt_dim): per-channel multiplicative response.
    pub cond_gain: Tensor<T>,
    /// (latent_channels, prompt_dim): per-channel additive response.
    pub cond_bias: Tensor<T>,
    /// (prompt_dim): read-out of the malicious embedding component.
    pub mal_readout: Tensor<T>,
    /// (latent_channels): what the gated malicious pathway injects.
    pub inject: Tensor<T>,
    /// [gamma, tau]: steepness and threshold of the content gate.
    pub gate: Tensor<T>,
}

impl<T: Scalar> EditorParams<T> {
    pub fn image_channels(&self) -> usize {
        let pd = self.enc_weight.dims()[1];
        pd / (self.latent_downsample * self.latent_downsample)
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.named_tensors() {
            if !t.all_finite() {
                return Err(CoreError::NonFinite(name));
            }
        }
        Ok(())
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("enc.weight".into(), &self.enc_weight),
            ("enc.bias".into(), &self.enc_bias),
            ("enc.range".into(), &self.enc_range),
            ("dec.weight".into(), &self.dec_weight),
            ("dec.bias".into(), &self.dec_bias),
            ("dec.squash".into(), &self.dec_squash),
            ("smp.gain".into(), &self.cond_gain),
            ("smp.bias".into(), &self.cond_bias),
            ("smp.mal".into(), &self.mal_readout),
            ("smp.inject".into(), &self.inject),
            ("smp.gate".into(), &self.gate),
        ]
    }
}

/// Weights of the toy safety checker: a matched filter plus logistic head
/// over the pooled absolute response.
#[derive(Debug, Clone, PartialEq)]
pub struct NsfwScorerParams<T = f32> {
    /// (C, k, k) correlation kernel.
    pub kernel: Tensor<T>,
    /// [scale, bias] of the logistic head.
    pub logit: Tensor<T>,
    /// Scores strictly above this are "flagged".
    pub threshold: f64,
}

impl<T: Scalar> NsfwScorerParams<T> {
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        vec![
            ("scorer.kernel".into(), &self.kernel),
            ("scorer.logit".into(), &self.logit),
        ]
    }
}

/// The frozen editor plus its safety scorer and a toy-world version stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEditor<T = f32> {
    pub params: EditorParams<T>,
    pub scorer: NsfwScorerParams<T>,
    pub world_version: u32,
}

/// Differentiable editor interface; the slot other editor adapters would
/// implement. Only the toy editor ships.
pub trait EditorModel<T: Scalar> {
    fn prompt_dim(&self) -> usize;

    /// Append the full edit pipeline to a tape and return the edited image
    /// node (same shape as the input node).
    fn edit_t(&self, tape: &mut Tape<T>, img: Var, prompt: &Prompt<T>, cfg: &EditorConfig)
        -> Result<Var>;

    fn edit(&self, img: &Image<T>, prompt: &Prompt<T>, cfg: &EditorConfig) -> Result<Image<T>> {
        let mut tape = Tape::new();
        let x = tape.constant(img.data().clone());
        let out = self.edit_t(&mut tape, x, prompt, cfg)?;
        Image::new(tape.value(out).clone(), img.color_space())
    }
}

/// Editors exposing their latent space and training loss, as the untargeted
/// baselines require.
pub trait LatentEditorModel<T: Scalar>: EditorModel<T> {
    fn encode_t(&self, tape: &mut Tape<T>, img: Var) -> Result<Var>;
    /// The editor's reconstruction training loss at an image, as a scalar node.
    fn reconstruction_loss_t(&self, tape: &mut Tape<T>, img: Var) -> Result<Var>;
}

impl<T: Scalar> ToyEditor<T> {
    fn latent_grid(&self, img_dims: &[usize]) -> Result<(usize, usize, usize)> {
        let ds = self.params.latent_downsample;
        let (c, h, w) = match img_dims {
            [c, h, w] => (*c, *h, *w),
            other => {
                return Err(CoreError::BadShape(format!(
                    "expected rank-3 image, got rank {}",
                    other.len()
                )))
            }
        };
        if c != self.params.image_channels() {
            return Err(CoreError::BadShape(format!(
                "editor expects {} channels, got {c}",
                self.params.image_channels()
            )));
        }
        if h % ds != 0 || w % ds != 0 {
            return Err(CoreError::BadShape(format!(
                "{h}x{w} not divisible by downsample {ds}"
            )));
        }
        Ok((c, h / ds, w / ds))
    }

    fn check_prompt(&self, prompt: &Prompt<T>) -> Result<()> {
        if prompt.dim() != self.params.prompt_dim {
            return Err(CoreError::DimMismatch {
                expected: self.params.prompt_dim,
                got: prompt.dim(),
            });
        }
        Ok(())
    }

    /// Encoder on the tape; latent kept in internal (positions, channels)
    /// layout.
    fn encode_internal_t(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let dims = tape.value(img).dims().to_vec();
        let (c, gh, gw) = self.latent_grid(&dims)?;
        let ds = self.params.latent_downsample;
        let positions = gh * gw;
        let pd = c * ds * ds;
        let fwd = Rc::new(patch_permutation(c, gh * ds, gw * ds, ds));
        let patches = tape.permute(img, fwd, &[positions, pd]);
        let w = tape.constant(self.params.enc_weight.clone());
        let pre = tape.matmul_nt(patches, w);
        let b = tape.constant(self.params.enc_bias.clone());
        let pre = tape.add_row_bias(pre, b);
        let ranges = Rc::new(self.params.enc_range.data().to_vec());
        Ok(tape.scaled_tanh_cols(pre, ranges))
    }

    /// One conditional residual update; weight omega_t keeps the total
    /// conditioned displacement independent of the step count.
    fn sampler_step_t(
        &self,
        tape: &mut Tape<T>,
        z: Var,
        embedding: &[T],
        step: u32,
        steps: u32,
    ) -> Var {
        let cz = self.params.latent_channels;
        let omega = T::c(2.0 * (step as f64 + 1.0) / (steps as f64 * (steps as f64 + 1.0)));

        // prompt-conditioned coefficients (constants on the tape)
        let mat_vec = |m: &Tensor<T>| -> Vec<T> {
            let dp = self.params.prompt_dim;
            (0..cz)
                .map(|r| {
                    let row = &m.data()[r * dp..(r + 1) * dp];
                    row.iter()
                        .zip(embedding)
                        .fold(T::zero(), |acc, (&a, &e)| acc + a * e)
                })
                .collect()
        };
        let gain: Vec<T> = mat_vec(&self.params.cond_gain)
            .into_iter()
            .map(|v| v * omega)
            .collect();
        let bias: Vec<T> = mat_vec(&self.params.cond_bias)
            .into_iter()
            .map(|v| v * omega)
            .collect();
        let m = self
            .params
            .mal_readout
            .data()
            .iter()
            .zip(embedding)
            .fold(T::zero(), |acc, (&a, &e)| acc + a * e);
        let inject_row: Vec<T> = self
            .params
            .inject
            .data()
            .iter()
            .map(|&v| v * m * omega)
            .collect();

        let gamma = self.params.gate.data()[0];
        let tau = self.params.gate.data()[1];

        let gain_t = tape.constant(Tensor::from_vec(&[cz], gain).expect("len"));
        let scaled = tape.mul_row_bias(z, gain_t);
        let bias_t = tape.constant(Tensor::from_vec(&[cz], bias).expect("len"));
        let affine_part = tape.add_row_bias(scaled, bias_t);

        let sentinel = tape.slice_cols(z, 0, 1);
        let pre = tape.affine(sentinel, gamma, -gamma * tau);
        let gate = tape.sigmoid(pre);
        let inject_t = tape.constant(Tensor::from_vec(&[1, cz], inject_row).expect("len"));
        let injected = tape.matmul_nn(gate, inject_t);

        let delta = tape.add(affine_part, injected);
        tape.add(z, delta)
    }

    fn sample_internal_t(
        &self,
        tape: &mut Tape<T>,
        z: Var,
        embedding: &[T],
        steps: u32,
    ) -> Var {
        let mut cur = z;
        for t in 0..steps {
            cur = self.sampler_step_t(tape, cur, embedding, t, steps);
        }
        cur
    }

    fn decode_internal_t(&self, tape: &mut Tape<T>, z: Var, grid: (usize, usize, usize)) -> Var {
        let (c, gh, gw) = grid;
        let ds = self.params.latent_downsample;
        let w = tape.constant(self.params.dec_weight.clone());
        let y = tape.matmul_nt(z, w);
        let b = tape.constant(self.params.dec_bias.clone());
        let y = tape.add_row_bias(y, b);
        // squash(u) = 0.5 + 0.5 * tanh(s(u - 0.5)), range strictly (0,1)
        let s = self.params.dec_squash.data()[0];
        let pre = tape.affine(y, s, -s * T::c(0.5));
        let t = tape.tanh(pre);
        let y = tape.affine(t, T::c(0.5), T::c(0.5));
        let fwd = patch_permutation(c, gh * ds, gw * ds, ds);
        let mut inv = vec![0usize; fwd.len()];
        for (i, &src) in fwd.iter().enumerate() {
            inv[src] = i;
        }
        tape.permute(y, Rc::new(inv), &[c, gh * ds, gw * ds])
    }

    /// Latent layout conversion: internal (positions, channels) to the public
    /// (channels, grid_h, grid_w) tensor.
    fn internal_to_public(&self, z: &Tensor<T>, grid: (usize, usize, usize)) -> Tensor<T> {
        let (_, gh, gw) = grid;
        let cz = self.params.latent_channels;
        let positions = gh * gw;
        let mut out = Tensor::zeros(&[cz, gh, gw]);
        for p in 0..positions {
            for ch in 0..cz {
                out.data_mut()[ch * positions + p] = z.data()[p * cz + ch];
            }
        }
        out
    }

    fn public_to_internal(&self, z: &Tensor<T>) -> Result<(Tensor<T>, (usize, usize, usize))> {
        let (cz, gh, gw) = match z.dims() {
            [cz, gh, gw] => (*cz, *gh, *gw),
            other => {
                return Err(CoreError::BadShape(format!(
                    "expected rank-3 latent, got rank {}",
                    other.len()
                )))
            }
        };
        if cz != self.params.latent_channels {
            return Err(CoreError::BadShape(format!(
                "latent has {cz} channels, editor expects {}",
                self.params.latent_channels
            )));
        }
        let positions = gh * gw;
        let mut out = Tensor::zeros(&[positions, cz]);
        for p in 0..positions {
            for ch in 0..cz {
                out.data_mut()[p * cz + ch] = z.data()[ch * positions + p];
            }
        }
        Ok((out, (self.params.image_channels(), gh, gw)))
    }

    /// Compress an image into a latent of shape
    /// `(latent_channels, H/downsample, W/downsample)`.
    pub fn encode(&self, img: &Image<T>) -> Result<Tensor<T>> {
        let grid = self.latent_grid(img.data().dims())?;
        let mut tape = Tape::new();
        let x = tape.constant(img.data().clone());
        let z = self.encode_internal_t(&mut tape, x)?;
        Ok(self.internal_to_public(tape.value(z), grid))
    }

    /// Apply `cfg.sampler_steps` conditional residual updates to a latent.
    pub fn sample(&self, latent: &Tensor<T>, prompt: &Prompt<T>, cfg: &EditorConfig) -> Result<Tensor<T>> {
        cfg.validate()?;
        self.check_prompt(prompt)?;
        let (z, grid) = self.public_to_internal(latent)?;
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let out = self.sample_internal_t(&mut tape, zv, &prompt.embedding, cfg.sampler_steps);
        Ok(self.internal_to_public(tape.value(out), (grid.0, latent.dims()[1], latent.dims()[2])))
    }

    /// Like [`ToyEditor::sample`] but also returns the latent after every
    /// update; instrumentation for the step-count contract.
    pub fn sample_traced(
        &self,
        latent: &Tensor<T>,
        prompt: &Prompt<T>,
        cfg: &EditorConfig,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        cfg.validate()?;
        self.check_prompt(prompt)?;
        let (z, _) = self.public_to_internal(latent)?;
        let grid_dims = (latent.dims()[1], latent.dims()[2]);
        let mut tape = Tape::new();
        let mut cur = tape.constant(z);
        let mut trace = Vec::new();
        for t in 0..cfg.sampler_steps {
            cur = self.sampler_step_t(&mut tape, cur, &prompt.embedding, t, cfg.sampler_steps);
            trace.push(self.internal_to_public(
                tape.value(cur),
                (self.params.image_channels(), grid_dims.0, grid_dims.1),
            ));
        }
        let out = trace.last().expect("steps >= 1").clone();
        Ok((out, trace))
    }

    /// Decode a latent back to a valid image; a smooth squash keeps every
    /// output strictly inside (0, 1) for any finite latent.
    pub fn decode(&self, latent: &Tensor<T>) -> Result<Image<T>> {
        let (z, grid) = self.public_to_internal(latent)?;
        let grid = (grid.0, latent.dims()[1], latent.dims()[2]);
        let mut tape = Tape::new();
        let zv = tape.constant(z);
        let out = self.decode_internal_t(&mut tape, zv, grid);
        let cs = if grid.0 == 1 {
            ColorSpace::Grayscale
        } else {
            ColorSpace::Rgb
        };
        Image::new(tape.value(out).clone(), cs)
    }

    /// Mean absolute matched-filter response over all valid positions; the
    /// feature the logistic head is calibrated on.
    pub fn pooled_filter_response(&self, img: &Image<T>) -> f64 {
        let (c, h, w) = img.shape();
        let kdims = self.scorer.kernel.dims();
        let (kc, kh, kw) = (kdims[0], kdims[1], kdims[2]);
        debug_assert_eq!(kc, c, "scorer kernel channels");
        if h < kh || w < kw {
            return 0.0;
        }
        let data = img.data().data();
        let kern = self.scorer.kernel.data();
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for y in 0..=(h - kh) {
            for x in 0..=(w - kw) {
                let mut r = 0.0f64;
                for ch in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let iv = data[ch * h * w + (y + i) * w + x + j].to_f64();
                            let kv = kern[ch * kh * kw + i * kw + j].to_f64();
                            r += iv * kv;
                        }
                    }
                }
                acc += r.abs();
                count += 1;
            }
        }
        acc / count as f64
    }

    /// Deterministic NSFW score in [0, 1]: logistic head over the pooled
    /// matched-filter response.
    pub fn nsfw_score(&self, img: &Image<T>) -> f64 {
        let pooled = self.pooled_filter_response(img);
        let a = self.scorer.logit.data()[0].to_f64();
        let b = self.scorer.logit.data()[1].to_f64();
        logistic(a * (pooled - b))
    }

    /// Autoencoder reconstruction error, scalar.
    pub fn reconstruction_loss(&self, img: &Image<T>) -> Result<f64> {
        let mut tape = Tape::new();
        let x = tape.constant(img.data().clone());
        let loss = self.reconstruction_loss_t(&mut tape, x)?;
        Ok(tape.scalar_value(loss).to_f64())
    }

    /// Fingerprint over all editor and scorer tensors; the frozen-editor
    /// checks compare this before and after training.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (_, t) in self
            .params
            .named_tensors()
            .into_iter()
            .chain(self.scorer.named_tensors())
        {
            h ^= t.fingerprint();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Cast every tensor to a different scalar; gradcheck rigs use f64.
    pub fn cast<U: Scalar>(&self) -> ToyEditor<U> {
        let conv = |t: &Tensor<T>| {
            Tensor::from_vec(t.dims(), t.data().iter().map(|&v| U::c(v.to_f64())).collect())
                .expect("same dims")
        };
        ToyEditor {
            params: EditorParams {
                latent_channels: self.params.latent_channels,
                latent_downsample: self.params.latent_downsample,
                sampler_steps_default: self.params.sampler_steps_default,
                prompt_dim: self.params.prompt_dim,
                enc_weight: conv(&self.params.enc_weight),
                enc_bias: conv(&self.params.enc_bias),
                enc_range: conv(&self.params.enc_range),
                dec_weight: conv(&self.params.dec_weight),
                dec_bias: conv(&self.params.dec_bias),
                dec_squash: conv(&self.params.dec_squash),
                cond_gain: conv(&self.params.cond_gain),
                cond_bias: conv(&self.params.cond_bias),
                mal_readout: conv(&self.params.mal_readout),
                inject: conv(&self.params.inject),
                gate: conv(&self.params.gate),
            },
            scorer: NsfwScorerParams {
                kernel: conv(&self.scorer.kernel),
                logit: conv(&self.scorer.logit),
                threshold: self.scorer.threshold,
            },
            world_version: self.world_version,
        }
    }
}

impl<T: Scalar> EditorModel<T> for ToyEditor<T> {
    fn prompt_dim(&self) -> usize {
        self.params.prompt_dim
    }

    fn edit_t(
        &self,
        tape: &mut Tape<T>,
        img: Var,
        prompt: &Prompt<T>,
        cfg: &EditorConfig,
    ) -> Result<Var> {
        cfg.validate()?;
        self.check_prompt(prompt)?;
        let dims = tape.value(img).dims().to_vec();
        let grid = self.latent_grid(&dims)?;
        let z = self.encode_internal_t(tape, img)?;
        let z = self.sample_internal_t(tape, z, &prompt.embedding, cfg.sampler_steps);
        Ok(self.decode_internal_t(tape, z, grid))
    }
}

impl<T: Scalar> LatentEditorModel<T> for ToyEditor<T> {
    fn encode_t(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        self.encode_internal_t(tape, img)
    }

    fn reconstruction_loss_t(&self, tape: &mut Tape<T>, img: Var) -> Result<Var> {
        let dims = tape.value(img).dims().to_vec();
        let grid = self.latent_grid(&dims)?;
        let z = self.encode_internal_t(tape, img)?;
        let recon = self.decode_internal_t(tape, z, grid);
        Ok(tape.mse(recon, img))
    }
}

/// Full edit: decode(sample(encode(img))) with gradients flowing to the
/// input image.
pub fn edit<T: Scalar>(
    editor: &ToyEditor<T>,
    img: &Image<T>,
    prompt: &Prompt<T>,
    cfg: &EditorConfig,
) -> Result<Image<T>> {
    EditorModel::edit(editor, img, prompt, cfg)
}

/// Deterministic NSFW score in [0, 1]; above the scorer threshold means
/// "flagged" in ratio accounting.
pub fn toy_nsfw_score<T: Scalar>(editor: &ToyEditor<T>, img: &Image<T>) -> f64 {
    editor.nsfw_score(img)
}

/// Augment a normal prompt with NSFW content along a unit direction.
pub fn make_malicious<T: Scalar>(
    parent: &Prompt<T>,
    nsfw_direction: &[T],
    strength: f64,
) -> Result<Prompt<T>> {
    if parent.kind != PromptKind::Normal {
        return Err(CoreError::BadParent(parent.id.clone()));
    }
    if nsfw_direction.len() != parent.dim() {
        return Err(CoreError::BadDirection(format!(
            "direction dim {} vs prompt dim {}",
            nsfw_direction.len(),
            parent.dim()
        )));
    }
    let norm: f64 = Float::sqrt(
        nsfw_direction
            .iter()
            .map(|&v| v.to_f64() * v.to_f64())
            .sum::<f64>(),
    );
    if (norm - 1.0).abs() > 1e-4 {
        return Err(CoreError::BadDirection(format!("norm {norm} is not 1")));
    }
    if strength <= 0.0 {
        return Err(CoreError::BadConfig(
            "malicious strength must be positive".into(),
        ));
    }
    let s = T::c(strength);
    let embedding = parent
        .embedding
        .iter()
        .zip(nsfw_direction)
        .map(|(&e, &d)| e + s * d)
        .collect();
    Ok(Prompt {
        id: format!("{}-mal", parent.id),
        kind: PromptKind::Malicious,
        embedding,
        parent_id: Some(parent.id.clone()),
    })
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-x))
}

/// Test double: an editor that returns its input image untouched, used to
/// isolate loss semantics from editing behavior.
#[derive(Debug, Clone, Copy)]
pub struct IdentityEditor {
    pub prompt_dim: usize,
}

impl<T: Scalar> EditorModel<T> for IdentityEditor {
    fn prompt_dim(&self) -> usize {
        self.prompt_dim
    }

    fn edit_t(
        &self,
        _tape: &mut Tape<T>,
        img: Var,
        prompt: &Prompt<T>,
        _cfg: &EditorConfig,
    ) -> Result<Var> {
        if prompt.dim() != self.prompt_dim {
            return Err(CoreError::DimMismatch {
                expected: self.prompt_dim,
                got: prompt.dim(),
            });
        }
        Ok(img)
    }
}
