//! The semantic-aware training objective: a malicious-blocking term pulls
//! edits of the perturbed image under malicious prompts toward the cached
//! normal-edit targets, and a preservation term pins normal-prompt edits to
//! those same targets.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Tape, Var};
use crate::editor::{EditorConfig, EditorModel};
use crate::error::{CoreError, Result};
use crate::image::{Image, Perturbation};
use crate::prompt::PromptSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scale factors of the combined loss; defaults are (1.0, 0.1).
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 1.0,
            lambda2: 0.1,
        }
    }
}

/// Frozen normal-edit targets of one original image, keyed by normal prompt
/// id. Entries are plain tensors, so no gradient can ever flow into them;
/// the cache also remembers which image it was built for.
#[derive(Debug, Clone)]
pub struct TargetCache<T = f32> {
    image_fingerprint: u64,
    entries: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> TargetCache<T> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, normal_id: &str) -> Option<&Tensor<T>> {
        self.entries.get(normal_id)
    }

    fn check_image(&self, img: &Image<T>) -> Result<()> {
        if img.fingerprint() != self.image_fingerprint {
            return Err(CoreError::CacheMismatch);
        }
        Ok(())
    }
}

/// Pluggable difference metric between an edited image node and a frozen
/// target. Only mean squared error ships.
pub trait DiffMetric<T: Scalar> {
    fn eval_t(&self, tape: &mut Tape<T>, edited: Var, target: &Tensor<T>) -> Var;
}

/// Mean squared pixel difference.
#[derive(Debug, Clone, Copy, Default)]
pub struct MseMetric;

impl<T: Scalar> DiffMetric<T> for MseMetric {
    fn eval_t(&self, tape: &mut Tape<T>, edited: Var, target: &Tensor<T>) -> Var {
        let t = tape.constant(target.clone());
        tape.mse(edited, t)
    }
}

/// Edit the original image once per referenced normal prompt and freeze the
/// results. Targets are computed on the unperturbed image and never
/// recomputed during a training run.
pub fn build_target_cache<T: Scalar, E: EditorModel<T>>(
    img: &Image<T>,
    prompts: &PromptSet<T>,
    editor: &E,
    cfg: &EditorConfig,
) -> Result<TargetCache<T>> {
    let mut referenced: Vec<&str> = prompts.normals().iter().map(|p| p.id.as_str()).collect();
    for m in prompts.maliciouses() {
        let parent = prompts.parent_of(m)?;
        if !referenced.contains(&parent.id.as_str()) {
            referenced.push(&parent.id);
        }
    }
    let mut entries = BTreeMap::new();
    for p in prompts.normals() {
        if referenced.contains(&p.id.as_str()) {
            let edited = editor.edit(img, p, cfg)?;
            entries.insert(p.id.clone(), edited.data().clone());
        }
    }
    Ok(TargetCache {
        image_fingerprint: img.fingerprint(),
        entries,
    })
}

/// Tape node for `clamp(x + delta, 0, 1)`, the image downstream editing sees.
pub fn perturbed_image_t<T: Scalar>(tape: &mut Tape<T>, img: &Image<T>, delta: Var) -> Var {
    let x = tape.constant(img.data().clone());
    let sum = tape.add(x, delta);
    tape.clamp01(sum)
}

/// Sum over malicious prompts of the metric between the perturbed-image edit
/// and the cached target of the prompt's parent, on the tape.
pub fn adv_loss_t<T: Scalar, E: EditorModel<T>, M: DiffMetric<T>>(
    tape: &mut Tape<T>,
    perturbed: Var,
    prompts: &PromptSet<T>,
    cache: &TargetCache<T>,
    editor: &E,
    cfg: &EditorConfig,
    metric: &M,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    // fixed reduction order: prompts sorted by id
    let mut sorted: Vec<_> = prompts.maliciouses().iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for m in sorted {
        let parent = prompts.parent_of(m)?;
        let target = cache
            .get(&parent.id)
            .ok_or_else(|| CoreError::MissingParent(parent.id.clone()))?;
        let edited = editor.edit_t(tape, perturbed, m, cfg)?;
        let term = metric.eval_t(tape, edited, target);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero()))))
}

/// Sum over normal prompts of the metric between the perturbed-image edit
/// and the cached original-image edit, on the tape.
pub fn reg_loss_t<T: Scalar, E: EditorModel<T>, M: DiffMetric<T>>(
    tape: &mut Tape<T>,
    perturbed: Var,
    prompts: &PromptSet<T>,
    cache: &TargetCache<T>,
    editor: &E,
    cfg: &EditorConfig,
    metric: &M,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    let mut sorted: Vec<_> = prompts.normals().iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    for p in sorted {
        let target = cache
            .get(&p.id)
            .ok_or_else(|| CoreError::MissingParent(p.id.clone()))?;
        let edited = editor.edit_t(tape, perturbed, p, cfg)?;
        let term = metric.eval_t(tape, edited, target);
        total = Some(match total {
            Some(acc) => tape.add(acc, term),
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant(Tensor::scalar(T::zero()))))
}

/// Malicious-blocking loss of a fixed perturbation, as a scalar.
pub fn adv_loss<T: Scalar, E: EditorModel<T>>(
    img: &Image<T>,
    delta: &Perturbation<T>,
    prompts: &PromptSet<T>,
    cache: &TargetCache<T>,
    editor: &E,
    cfg: &EditorConfig,
) -> Result<f64> {
    cache.check_image(img)?;
    let mut tape = Tape::new();
    let d = tape.constant(delta.data().clone());
    let perturbed = perturbed_image_t(&mut tape, img, d);
    let loss = adv_loss_t(&mut tape, perturbed, prompts, cache, editor, cfg, &MseMetric)?;
    Ok(tape.scalar_value(loss).to_f64())
}

/// Normal-preservation loss of a fixed perturbation, as a scalar.
pub fn reg_loss<T: Scalar, E: EditorModel<T>>(
    img: &Image<T>,
    delta: &Perturbation<T>,
    prompts: &PromptSet<T>,
    cache: &TargetCache<T>,
    editor: &E,
    cfg: &EditorConfig,
) -> Result<f64> {
    cache.check_image(img)?;
    let mut tape = Tape::new();
    let d = tape.constant(delta.data().clone());
    let perturbed = perturbed_image_t(&mut tape, img, d);
    let loss = reg_loss_t(&mut tape, perturbed, prompts, cache, editor, cfg, &MseMetric)?;
    Ok(tape.scalar_value(loss).to_f64())
}

/// Weighted combination of the two loss terms.
pub fn total_loss(adv: f64, reg: f64, w: &LossWeights) -> f64 {
    w.lambda1 * adv + w.lambda2 * reg
}
