//! The perturbation generator: a single-block vision transformer that maps
//! an image to a raw same-shape perturbation, followed by a tanh projection
//! that makes the budget bound structural rather than an optimization
//! outcome.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::error::{CoreError, Result};
use crate::image::{Image, Perturbation, PerturbationBudget};
use crate::rng::Seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Architecture hyperparameters; the defaults are the shipped configuration
/// (patch 8, hidden 384, 8 heads, one block).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct GeneratorConfig {
    pub patch_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub mlp_ratio: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            patch_size: 8,
            hidden_dim: 384,
            num_heads: 8,
            num_blocks: 1,
            mlp_ratio: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gamma: Tensor<T>,
    pub ln1_beta: Tensor<T>,
    pub q_w: Tensor<T>,
    pub q_b: Tensor<T>,
    pub k_w: Tensor<T>,
    pub k_b: Tensor<T>,
    pub v_w: Tensor<T>,
    pub v_b: Tensor<T>,
    pub proj_w: Tensor<T>,
    pub proj_b: Tensor<T>,
    pub ln2_gamma: Tensor<T>,
    pub ln2_beta: Tensor<T>,
    pub fc1_w: Tensor<T>,
    pub fc1_b: Tensor<T>,
    pub fc2_w: Tensor<T>,
    pub fc2_b: Tensor<T>,
}

/// Generator weights, bound to one training resolution. Positional
/// embeddings are learned for that resolution; other shapes are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams<T = f32> {
    pub config: GeneratorConfig,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub patch_embed_w: Tensor<T>,
    pub patch_embed_b: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub unpatch_w: Tensor<T>,
    pub unpatch_b: Tensor<T>,
}

impl<T: Scalar> GeneratorParams<T> {
    /// Fresh parameters: truncated normal (std 0.02) projections, zero
    /// biases, unit layer norms. The small start keeps the initial raw
    /// perturbation well inside the tanh's linear region.
    pub fn init(
        config: GeneratorConfig,
        channels: usize,
        height: usize,
        width: usize,
        seed: Seed,
    ) -> Result<Self> {
        if config.hidden_dim == 0 || config.num_heads == 0 || !config.hidden_dim.is_multiple_of(config.num_heads) {
            return Err(CoreError::BadConfig(format!(
                "hidden_dim {} must be divisible by num_heads {}",
                config.hidden_dim, config.num_heads
            )));
        }
        if config.patch_size == 0 || !height.is_multiple_of(config.patch_size) || !width.is_multiple_of(config.patch_size) {
            return Err(CoreError::BadShape(format!(
                "{height}x{width} not divisible by patch size {}",
                config.patch_size
            )));
        }
        let d = config.hidden_dim;
        let pd = channels * config.patch_size * config.patch_size;
        let tokens = (height / config.patch_size) * (width / config.patch_size);
        let mut rng = seed.rng();
        let mut tn = |dims: &[usize]| {
            let mut t = Tensor::zeros(dims);
            rng.fill_trunc_normal(t.data_mut(), 0.02);
            t
        };
        let blocks = (0..config.num_blocks)
            .map(|_| BlockParams {
                ln1_gamma: Tensor::full(&[d], T::one()),
                ln1_beta: Tensor::zeros(&[d]),
                q_w: tn(&[d, d]),
                q_b: Tensor::zeros(&[d]),
                k_w: tn(&[d, d]),
                k_b: Tensor::zeros(&[d]),
                v_w: tn(&[d, d]),
                v_b: Tensor::zeros(&[d]),
                proj_w: tn(&[d, d]),
                proj_b: Tensor::zeros(&[d]),
                ln2_gamma: Tensor::full(&[d], T::one()),
                ln2_beta: Tensor::zeros(&[d]),
                fc1_w: tn(&[d, d * config.mlp_ratio]),
                fc1_b: Tensor::zeros(&[d * config.mlp_ratio]),
                fc2_w: tn(&[d * config.mlp_ratio, d]),
                fc2_b: Tensor::zeros(&[d]),
            })
            .collect();
        Ok(GeneratorParams {
            config,
            channels,
            height,
            width,
            patch_embed_w: tn(&[pd, d]),
            patch_embed_b: Tensor::zeros(&[d]),
            pos_embed: tn(&[tokens, d]),
            blocks,
            unpatch_w: tn(&[d, pd]),
            unpatch_b: Tensor::zeros(&[pd]),
        })
    }

    pub fn tokens(&self) -> usize {
        (self.height / self.config.patch_size) * (self.width / self.config.patch_size)
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.config.patch_size * self.config.patch_size
    }

    /// Canonical tensor order shared by checkpointing, the optimizer and the
    /// tape-variable bridge.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut names = vec![
            "patch_embed.weight".into(),
            "patch_embed.bias".into(),
            "pos_embed".into(),
        ];
        for i in 0..self.blocks.len() {
            for field in [
                "ln1.gamma", "ln1.beta", "attn.q.weight", "attn.q.bias", "attn.k.weight",
                "attn.k.bias", "attn.v.weight", "attn.v.bias", "attn.proj.weight",
                "attn.proj.bias", "ln2.gamma", "ln2.beta", "mlp.fc1.weight", "mlp.fc1.bias",
                "mlp.fc2.weight", "mlp.fc2.bias",
            ] {
                names.push(format!("blocks.{i}.{field}"));
            }
        }
        names.push("unpatch.weight".into());
        names.push("unpatch.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut v: Vec<&Tensor<T>> = vec![&self.patch_embed_w, &self.patch_embed_b, &self.pos_embed];
        for b in &self.blocks {
            v.extend([
                &b.ln1_gamma, &b.ln1_beta, &b.q_w, &b.q_b, &b.k_w, &b.k_b, &b.v_w, &b.v_b,
                &b.proj_w, &b.proj_b, &b.ln2_gamma, &b.ln2_beta, &b.fc1_w, &b.fc1_b, &b.fc2_w,
                &b.fc2_b,
            ]);
        }
        v.extend([&self.unpatch_w, &self.unpatch_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut v: Vec<&mut Tensor<T>> =
            vec![&mut self.patch_embed_w, &mut self.patch_embed_b, &mut self.pos_embed];
        for b in &mut self.blocks {
            v.extend([
                &mut b.ln1_gamma, &mut b.ln1_beta, &mut b.q_w, &mut b.q_b, &mut b.k_w,
                &mut b.k_b, &mut b.v_w, &mut b.v_b, &mut b.proj_w, &mut b.proj_b,
                &mut b.ln2_gamma, &mut b.ln2_beta, &mut b.fc1_w, &mut b.fc1_b, &mut b.fc2_w,
                &mut b.fc2_b,
            ]);
        }
        v.extend([&mut self.unpatch_w, &mut self.unpatch_b]);
        v
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for t in self.tensors() {
            h ^= t.fingerprint();
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Put every parameter on the tape, as variables when training or as
    /// constants during inference.
    pub fn stage(&self, tape: &mut Tape<T>, trainable: bool) -> Vec<Var> {
        self.tensors()
            .into_iter()
            .map(|t| {
                if trainable {
                    tape.var(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect()
    }

    fn check_image(&self, img: &Image<T>) -> Result<()> {
        let (c, h, w) = img.shape();
        let p = self.config.patch_size;
        if h % p != 0 || w % p != 0 {
            return Err(CoreError::BadShape(format!(
                "{h}x{w} not divisible by patch size {p}"
            )));
        }
        if (c, h, w) != (self.channels, self.height, self.width) {
            return Err(CoreError::IncompatibleShapes(format!(
                "generator trained for {}x{}x{}, got {c}x{h}x{w}",
                self.channels, self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Index permutation mapping a (C,H,W) image to (tokens, C*p*p) patch rows,
/// flattening each patch in (channel, y, x) order.
pub fn patch_permutation(c: usize, h: usize, w: usize, p: usize) -> Vec<usize> {
    let (th, tw) = (h / p, w / p);
    let mut fwd = Vec::with_capacity(c * h * w);
    for ty in 0..th {
        for tx in 0..tw {
            for ch in 0..c {
                for py in 0..p {
                    for px in 0..p {
                        fwd.push(ch * h * w + (ty * p + py) * w + tx * p + px);
                    }
                }
            }
        }
    }
    fwd
}

fn invert_permutation(fwd: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; fwd.len()];
    for (i, &src) in fwd.iter().enumerate() {
        inv[src] = i;
    }
    inv
}

/// Tape forward passes. `vars` must come from [`GeneratorParams::stage`].
pub mod forward {
    use super::*;

    pub(crate) struct VarView<'a> {
        v: &'a [Var],
    }

    impl<'a> VarView<'a> {
        fn block(&self, i: usize) -> &'a [Var] {
            &self.v[3 + i * 16..3 + (i + 1) * 16]
        }
    }

    /// Patch tokens: permute, flatten, linear embed, add positions.
    pub fn patchify_t<T: Scalar>(
        tape: &mut Tape<T>,
        params: &GeneratorParams<T>,
        vars: &[Var],
        img: Var,
    ) -> Var {
        let view = VarView { v: vars };
        let _ = &view;
        let (c, h, w, p) = (params.channels, params.height, params.width, params.config.patch_size);
        let fwd = Rc::new(patch_permutation(c, h, w, p));
        let tokens = params.tokens();
        let pd = params.patch_dim();
        let patches = tape.permute(img, fwd, &[tokens, pd]);
        let embedded = tape.matmul_nn(patches, vars[0]);
        let biased = tape.add_row_bias(embedded, vars[1]);
        tape.add(biased, vars[2])
    }

    /// Pre-norm multi-head self-attention plus MLP, both residual.
    pub fn block_t<T: Scalar>(
        tape: &mut Tape<T>,
        params: &GeneratorParams<T>,
        vars: &[Var],
        block_idx: usize,
        x: Var,
    ) -> Var {
        let view = VarView { v: vars };
        let b = view.block(block_idx);
        let (ln1_g, ln1_b) = (b[0], b[1]);
        let (q_w, q_b, k_w, k_b, v_w, v_b) = (b[2], b[3], b[4], b[5], b[6], b[7]);
        let (proj_w, proj_b) = (b[8], b[9]);
        let (ln2_g, ln2_b) = (b[10], b[11]);
        let (fc1_w, fc1_b, fc2_w, fc2_b) = (b[12], b[13], b[14], b[15]);

        let heads = params.config.num_heads;
        let dh = params.config.hidden_dim / heads;
        let eps = T::c(1e-6);

        let h1 = tape.layer_norm_rows(x, ln1_g, ln1_b, eps);
        let q = tape.matmul_nn(h1, q_w);
        let q = tape.add_row_bias(q, q_b);
        let k = tape.matmul_nn(h1, k_w);
        let k = tape.add_row_bias(k, k_b);
        let v = tape.matmul_nn(h1, v_w);
        let v = tape.add_row_bias(v, v_b);

        let scale = T::c(1.0 / num_traits::Float::sqrt(dh as f64));
        let mut head_outputs = Vec::with_capacity(heads);
        for i in 0..heads {
            let qh = tape.slice_cols(q, i * dh, dh);
            let kh = tape.slice_cols(k, i * dh, dh);
            let vh = tape.slice_cols(v, i * dh, dh);
            let scores = tape.matmul_nt(qh, kh);
            let scaled = tape.scale(scores, scale);
            let att = tape.softmax_rows(scaled);
            head_outputs.push(tape.matmul_nn(att, vh));
        }
        let merged = tape.concat_cols(&head_outputs);
        let projected = tape.matmul_nn(merged, proj_w);
        let projected = tape.add_row_bias(projected, proj_b);
        let x = tape.add(x, projected);

        let h2 = tape.layer_norm_rows(x, ln2_g, ln2_b, eps);
        let m = tape.matmul_nn(h2, fc1_w);
        let m = tape.add_row_bias(m, fc1_b);
        let m = tape.gelu(m);
        let m = tape.matmul_nn(m, fc2_w);
        let m = tape.add_row_bias(m, fc2_b);
        tape.add(x, m)
    }

    /// Full generator: tokens through every block, final norm, unpatchify.
    pub fn generate_raw_t<T: Scalar>(
        tape: &mut Tape<T>,
        params: &GeneratorParams<T>,
        vars: &[Var],
        img: Var,
    ) -> Var {
        let mut x = patchify_t(tape, params, vars, img);
        for i in 0..params.blocks.len() {
            x = block_t(tape, params, vars, i, x);
        }
        let n = vars.len();
        let (un_w, un_b) = (vars[n - 2], vars[n - 1]);
        let x = tape.matmul_nn(x, un_w);
        let x = tape.add_row_bias(x, un_b);
        let (c, h, w, p) = (params.channels, params.height, params.width, params.config.patch_size);
        let inv = Rc::new(invert_permutation(&patch_permutation(c, h, w, p)));
        tape.permute(x, inv, &[c, h, w])
    }

    /// Tanh projection into the budget ball.
    pub fn project_t<T: Scalar>(tape: &mut Tape<T>, raw: Var, eta: f64) -> Var {
        let t = tape.tanh(raw);
        tape.scale(t, T::c(eta))
    }
}

/// Patch tokens for an image: `(H/p)*(W/p)` rows of dimension `hidden_dim`.
pub fn patchify<T: Scalar>(img: &Image<T>, params: &GeneratorParams<T>) -> Result<Tensor<T>> {
    params.check_image(img)?;
    let mut tape = Tape::new();
    let vars = params.stage(&mut tape, false);
    let x = tape.constant(img.data().clone());
    let out = forward::patchify_t(&mut tape, params, &vars, x);
    Ok(tape.value(out).clone())
}

/// One transformer block applied to a token sequence.
pub fn transformer_block<T: Scalar>(
    tokens: &Tensor<T>,
    params: &GeneratorParams<T>,
    block_idx: usize,
) -> Result<Tensor<T>> {
    let d = params.config.hidden_dim;
    match tokens.dims() {
        [_, cols] if *cols == d => {}
        dims => {
            return Err(CoreError::DimMismatch {
                expected: d,
                got: dims.last().copied().unwrap_or(0),
            })
        }
    }
    if block_idx >= params.blocks.len() {
        return Err(CoreError::BadConfig(format!("no block {block_idx}")));
    }
    let mut tape = Tape::new();
    let vars = params.stage(&mut tape, false);
    let x = tape.constant(tokens.clone());
    let out = forward::block_t(&mut tape, params, &vars, block_idx, x);
    Ok(tape.value(out).clone())
}

/// Unconstrained raw perturbation with the same shape as the image.
pub fn generate_raw<T: Scalar>(img: &Image<T>, params: &GeneratorParams<T>) -> Result<Tensor<T>> {
    params.check_image(img)?;
    let mut tape = Tape::new();
    let vars = params.stage(&mut tape, false);
    let x = tape.constant(img.data().clone());
    let out = forward::generate_raw_t(&mut tape, params, &vars, x);
    Ok(tape.value(out).clone())
}

/// `tanh(raw) * eta` elementwise: strictly inside the budget for finite
/// inputs, rejecting non-finite raw values.
pub fn project<T: Scalar>(raw: &Tensor<T>, budget: PerturbationBudget) -> Result<Perturbation<T>> {
    if !raw.all_finite() {
        return Err(CoreError::NonFinite("raw perturbation".into()));
    }
    let eta = T::c(budget.eta);
    let data = raw.map(|v| v.tanh() * eta);
    Perturbation::new(data, budget)
}

/// Full generator: raw forward pass then budget projection.
pub fn generate<T: Scalar>(
    img: &Image<T>,
    params: &GeneratorParams<T>,
    budget: PerturbationBudget,
) -> Result<Perturbation<T>> {
    let raw = generate_raw(img, params)?;
    project(&raw, budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::ColorSpace;

    fn rand_img(seed: u64, c: usize, h: usize, w: usize) -> Image<f32> {
        let mut rng = Seed(seed).rng();
        let mut data = vec![0.0f32; c * h * w];
        rng.fill_uniform(&mut data, 0.0, 1.0);
        let cs = if c == 1 { ColorSpace::Grayscale } else { ColorSpace::Rgb };
        Image::new(Tensor::from_vec(&[c, h, w], data).unwrap(), cs).unwrap()
    }

    fn default_params(h: usize, w: usize, seed: u64) -> GeneratorParams<f32> {
        GeneratorParams::init(GeneratorConfig::default(), 3, h, w, Seed(seed)).unwrap()
    }

    #[test]
    fn patchify_token_count_and_dim() {
        let params = default_params(64, 64, 0);
        let tokens = patchify(&rand_img(1, 3, 64, 64), &params).unwrap();
        assert_eq!(tokens.dims(), &[64, 384]);
    }

    #[test]
    fn indivisible_resolution_is_rejected_at_init() {
        let err = GeneratorParams::<f32>::init(GeneratorConfig::default(), 3, 63, 64, Seed(0))
            .unwrap_err();
        assert!(matches!(err, CoreError::BadShape(_)));
    }

    #[test]
    fn other_resolutions_are_rejected_not_interpolated() {
        let params = default_params(64, 64, 0);
        let err = patchify(&rand_img(1, 3, 32, 32), &params).unwrap_err();
        assert!(matches!(err, CoreError::IncompatibleShapes(_)));
    }

    #[test]
    fn patch_permutation_round_trips_pixel_order() {
        // identity embedding rig: permutation followed by its inverse
        let (c, h, w, p) = (3, 16, 16, 8);
        let fwd = patch_permutation(c, h, w, p);
        let inv = invert_permutation(&fwd);
        let n = c * h * w;
        let data: Vec<f32> = (0..n).map(|i| i as f32).collect();
        let patched: Vec<f32> = fwd.iter().map(|&i| data[i]).collect();
        let back: Vec<f32> = inv.iter().map(|&i| patched[i]).collect();
        assert_eq!(back, data);
    }

    #[test]
    fn transformer_block_preserves_shape() {
        let params = default_params(64, 64, 2);
        let tokens = patchify(&rand_img(3, 3, 64, 64), &params).unwrap();
        let out = transformer_block(&tokens, &params, 0).unwrap();
        assert_eq!(out.dims(), tokens.dims());
    }

    #[test]
    fn zeroed_attention_and_mlp_make_block_identity() {
        let mut params = default_params(64, 64, 3);
        let b = &mut params.blocks[0];
        for t in [&mut b.proj_w, &mut b.proj_b, &mut b.fc2_w, &mut b.fc2_b] {
            for v in t.data_mut() {
                *v = 0.0;
            }
        }
        let tokens = patchify(&rand_img(4, 3, 64, 64), &params).unwrap();
        let out = transformer_block(&tokens, &params, 0).unwrap();
        assert_eq!(out.data(), tokens.data());
    }

    #[test]
    fn wrong_token_dim_is_dim_mismatch() {
        let params = default_params(64, 64, 4);
        let bad = Tensor::<f32>::zeros(&[64, 100]);
        assert!(matches!(
            transformer_block(&bad, &params, 0),
            Err(CoreError::DimMismatch { .. })
        ));
    }

    #[test]
    fn generate_raw_shape_and_determinism() {
        let params = default_params(64, 64, 5);
        let img = rand_img(6, 3, 64, 64);
        let a = generate_raw(&img, &params).unwrap();
        let b = generate_raw(&img, &params).unwrap();
        assert_eq!(a.dims(), &[3, 64, 64]);
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_params_give_small_raw_output() {
        // documents the small-start regime of the initialization
        for seed in 0..3 {
            let params = default_params(64, 64, 100 + seed);
            let img = rand_img(200 + seed, 3, 64, 64);
            let raw = generate_raw(&img, &params).unwrap();
            assert!(raw.inf_norm() < 1.0, "seed {seed}: {}", raw.inf_norm());
        }
    }

    #[test]
    fn project_fixed_values() {
        let budget = PerturbationBudget::default();
        let zero = Tensor::<f32>::zeros(&[1, 2, 2]);
        let p = project(&zero, budget).unwrap();
        assert!(p.data().data().iter().all(|&v| v == 0.0));

        let one = Tensor::full(&[1, 2, 2], 1.0f32);
        let p = project(&one, budget).unwrap();
        let expected = (1.0f64).tanh() * (8.0 / 255.0);
        for &v in p.data().data() {
            assert!((v as f64 - expected).abs() < 1e-7);
        }

        // asymptote: strictly below eta while tanh is still sub-unit in f32
        let big = Tensor::full(&[1, 2, 2], 8.0f32);
        let p = project(&big, budget).unwrap();
        for &v in p.data().data() {
            assert!((v as f64) < budget.eta);
            assert!((v as f64 - budget.eta).abs() < 1e-6);
        }
        // extreme inputs round onto the bound but never past the slack
        let huge = Tensor::full(&[1, 2, 2], 1e6f32);
        let p = project(&huge, budget).unwrap();
        for &v in p.data().data() {
            assert!((v as f64) <= budget.eta + crate::image::BUDGET_SLACK);
        }
    }

    #[test]
    fn project_rejects_non_finite() {
        let raw = Tensor::full(&[1, 2, 2], f32::NAN);
        assert!(matches!(
            project(&raw, PerturbationBudget::default()),
            Err(CoreError::NonFinite(_))
        ));
    }

    #[test]
    fn generate_is_deterministic_and_bounded() {
        let params = default_params(64, 64, 7);
        let img = rand_img(8, 3, 64, 64);
        let budget = PerturbationBudget::default();
        let a = generate(&img, &params, budget).unwrap();
        let b = generate(&img, &params, budget).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().inf_norm() as f64 <= budget.eta);
    }
}
