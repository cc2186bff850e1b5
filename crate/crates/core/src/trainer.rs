//! Training loop: optimize the perturbation generator against a frozen
//! editor under the combined blocking/preservation loss.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::autodiff::Tape;
use crate::editor::{EditorConfig, EditorModel};
use crate::error::{CoreError, Result};
use crate::generator::{forward, generate, GeneratorConfig, GeneratorParams};
use crate::image::{apply_perturbation, Image, PerturbationBudget};
use crate::objective::{
    adv_loss_t, build_target_cache, perturbed_image_t, reg_loss_t, LossWeights, MseMetric,
    TargetCache,
};
use crate::prompt::PromptSet;
use crate::rng::Seed;
use crate::scalar::Scalar;

/// Optimizer choice; Adam with the standard moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Optimizer {
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Full training configuration; defaults are the shipped regimen
/// (150 steps, learning rate 1e-4, 4 sampler steps, budget 8/255,
/// loss weights (1.0, 0.1), Adam).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct TrainConfig {
    pub steps: u32,
    pub learning_rate: f64,
    pub sampler_steps: u32,
    pub budget: PerturbationBudget,
    pub weights: LossWeights,
    pub seed: Seed,
    pub optimizer: Optimizer,
    pub generator: GeneratorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 150,
            learning_rate: 1e-4,
            sampler_steps: 4,
            budget: PerturbationBudget::default(),
            weights: LossWeights::default(),
            seed: Seed(0),
            optimizer: Optimizer::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

/// Per-step loss and gradient-norm record.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub step: u32,
    pub adv: f64,
    pub reg: f64,
    pub total: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<StepRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Train a generator for a set of images (usually one) against a frozen
/// editor. Runs exactly `cfg.steps` full-batch updates over all prompts and
/// records every step; the loss is averaged over images and summed over
/// prompts.
pub fn train<T: Scalar, E: EditorModel<T>>(
    images: &[Image<T>],
    prompts: &PromptSet<T>,
    editor: &E,
    cfg: &TrainConfig,
) -> Result<(GeneratorParams<T>, TrainHistory)> {
    if images.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let (c, h, w) = images[0].shape();
    for img in images {
        if img.shape() != (c, h, w) {
            return Err(CoreError::IncompatibleShapes(
                "training images must share one shape".into(),
            ));
        }
    }

    let mut params =
        GeneratorParams::<T>::init(cfg.generator, c, h, w, cfg.seed.derive(0x67656e))?;
    let mut history = TrainHistory::default();
    if cfg.steps == 0 {
        return Ok((params, history));
    }

    let edit_cfg = EditorConfig {
        sampler_steps: cfg.sampler_steps,
        seed: cfg.seed,
    };
    let caches: Vec<TargetCache<T>> = images
        .iter()
        .map(|img| build_target_cache(img, prompts, editor, &edit_cfg))
        .collect::<Result<_>>()?;

    let Optimizer::Adam {
        beta1,
        beta2,
        epsilon,
    } = cfg.optimizer;
    let mut moment1: Vec<Vec<T>> = params
        .tensors()
        .iter()
        .map(|t| vec![T::zero(); t.numel()])
        .collect();
    let mut moment2 = moment1.clone();

    let image_scale = T::c(1.0 / images.len() as f64);
    for step in 0..cfg.steps {
        let mut tape = Tape::new();
        let vars = params.stage(&mut tape, true);

        let mut adv_total = None;
        let mut reg_total = None;
        for (img, cache) in images.iter().zip(&caches) {
            let x = tape.constant(img.data().clone());
            let raw = forward::generate_raw_t(&mut tape, &params, &vars, x);
            let delta = forward::project_t(&mut tape, raw, cfg.budget.eta);
            let perturbed = perturbed_image_t(&mut tape, img, delta);
            let adv = adv_loss_t(&mut tape, perturbed, prompts, cache, editor, &edit_cfg, &MseMetric)?;
            let reg = reg_loss_t(&mut tape, perturbed, prompts, cache, editor, &edit_cfg, &MseMetric)?;
            adv_total = Some(match adv_total {
                Some(acc) => tape.add(acc, adv),
                None => adv,
            });
            reg_total = Some(match reg_total {
                Some(acc) => tape.add(acc, reg),
                None => reg,
            });
        }
        let adv_node = adv_total.expect("at least one image");
        let reg_node = reg_total.expect("at least one image");
        let adv_mean = tape.scale(adv_node, image_scale);
        let reg_mean = tape.scale(reg_node, image_scale);
        let weighted_adv = tape.scale(adv_mean, T::c(cfg.weights.lambda1));
        let weighted_reg = tape.scale(reg_mean, T::c(cfg.weights.lambda2));
        let total_node = tape.add(weighted_adv, weighted_reg);

        let adv_value = tape.scalar_value(adv_mean).to_f64();
        let reg_value = tape.scalar_value(reg_mean).to_f64();
        let total_value = tape.scalar_value(total_node).to_f64();
        if !total_value.is_finite() {
            return Err(CoreError::NonFiniteLoss { step });
        }

        let grads = tape.backward(total_node);
        let mut grad_sq = 0.0f64;
        let t_step = (step + 1) as f64;
        let bc1 = T::c(1.0 / (1.0 - Float::powi(beta1, step as i32 + 1)));
        let bc2 = T::c(1.0 / (1.0 - Float::powi(beta2, step as i32 + 1)));
        let (b1, b2) = (T::c(beta1), T::c(beta2));
        let lr = T::c(cfg.learning_rate);
        let eps = T::c(epsilon);
        let _ = t_step;

        for ((var, tensor), (m1, m2)) in vars
            .iter()
            .zip(params.tensors_mut())
            .zip(moment1.iter_mut().zip(moment2.iter_mut()))
        {
            let grad = grads
                .get(*var)
                .ok_or(CoreError::NonFiniteLoss { step })?;
            if !grad.all_finite() {
                return Err(CoreError::NonFiniteLoss { step });
            }
            grad_sq += grad.l2_norm().powi(2);
            for ((p, &g), (m, v)) in tensor
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(m1.iter_mut().zip(m2.iter_mut()))
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let mhat = *m * bc1;
                let vhat = *v * bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }

        history.records.push(StepRecord {
            step,
            adv: adv_value,
            reg: reg_value,
            total: total_value,
            grad_norm: Float::sqrt(grad_sq),
        });
    }

    Ok((params, history))
}

/// Protect an image with a trained generator: generate, project, add, clamp.
pub fn protect<T: Scalar>(
    img: &Image<T>,
    params: &GeneratorParams<T>,
    budget: PerturbationBudget,
) -> Result<Image<T>> {
    let delta = generate(img, params, budget)?;
    apply_perturbation(img, &delta)
}
