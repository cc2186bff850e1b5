//! Untargeted-protection baselines, re-implemented against the toy editor
//! for ordering comparisons: PGD ascent on the editor's reconstruction loss,
//! and latent-distance transformation in both repel and attract modes.

use crate::autodiff::Tape;
use crate::editor::LatentEditorModel;
use crate::error::{CoreError, Result};
use crate::image::{Image, PerturbationBudget};
use crate::rng::Seed;
use crate::scalar::Scalar;
use crate::tensor::{format_dims, Tensor};

/// Projected-gradient-descent settings. The step is applied `steps` times
/// with projection into the budget ball after every update; optimization
/// starts from a uniformly random point inside the ball.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PgdConfig {
    pub steps: u32,
    pub step_size: f64,
    pub budget: PerturbationBudget,
    pub seed: Seed,
    /// Momentum decay for the MI flavor; 0 disables momentum.
    pub momentum: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        PgdConfig {
            steps: 100,
            step_size: 2.0 / 255.0,
            budget: PerturbationBudget::default(),
            seed: Seed(0),
            momentum: 0.0,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 2.0 * self.budget.eta) {
            return Err(CoreError::BadConfig(alloc::format!(
                "step size {} outside (0, 2*eta]",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Whether a PGD run climbs or descends its objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgdDirection {
    Ascend,
    Descend,
}

/// Latent-distance protection flavor: push the latent away from the clean
/// one, or pull it toward a target image's latent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LatentMode {
    Repel,
    Attract,
}

/// One signed-gradient step followed by projection into the budget ball
/// around the original image and a clamp into [0, 1]. `sign(0) = 0`, so a
/// zero gradient leaves the iterate unchanged.
pub fn pgd_step<T: Scalar>(
    x_adv: &Image<T>,
    grad: &Tensor<T>,
    x_orig: &Image<T>,
    cfg: &PgdConfig,
    direction: PgdDirection,
) -> Result<Image<T>> {
    if x_adv.data().dims() != grad.dims() || x_adv.data().dims() != x_orig.data().dims() {
        return Err(CoreError::ShapeMismatch {
            expected: format_dims(x_orig.data().dims()),
            got: format_dims(grad.dims()),
        });
    }
    cfg.validate()?;
    let step = T::c(match direction {
        PgdDirection::Ascend => cfg.step_size,
        PgdDirection::Descend => -cfg.step_size,
    });
    let eta = T::c(cfg.budget.eta);
    let n = x_adv.data().numel();
    let mut out = x_adv.data().clone();
    for i in 0..n {
        let g = grad.data()[i];
        let sgn = if g > T::zero() {
            T::one()
        } else if g < T::zero() {
            -T::one()
        } else {
            T::zero()
        };
        let orig = x_orig.data().data()[i];
        let moved = out.data()[i] + step * sgn;
        let projected = moved.max(orig - eta).min(orig + eta);
        out.data_mut()[i] = projected.max(T::zero()).min(T::one());
    }
    Image::new(out, x_orig.color_space())
}

/// Uniform random start inside the budget ball, clamped to valid range.
fn random_start<T: Scalar>(x: &Image<T>, cfg: &PgdConfig) -> Image<T> {
    let mut rng = cfg.seed.derive(0x70676430).rng();
    let mut data = x.data().clone();
    for v in data.data_mut() {
        let jitter: T = rng.uniform(-cfg.budget.eta, cfg.budget.eta);
        *v = (*v + jitter).max(T::zero()).min(T::one());
    }
    Image::new(data, x.color_space()).expect("clamped within range")
}

fn run_pgd<T: Scalar, F>(
    x: &Image<T>,
    cfg: &PgdConfig,
    direction: PgdDirection,
    mut objective_grad: F,
) -> Result<Image<T>>
where
    F: FnMut(&Image<T>) -> Result<Tensor<T>>,
{
    cfg.validate()?;
    if cfg.steps == 0 {
        return Ok(x.clone());
    }
    let mut x_adv = random_start(x, cfg);
    let mut velocity: Option<Tensor<T>> = None;
    let mu = T::c(cfg.momentum);
    for _ in 0..cfg.steps {
        let grad = objective_grad(&x_adv)?;
        let grad = if cfg.momentum > 0.0 {
            // MI flavor: L1-normalized gradient accumulated with decay
            let l1 = grad
                .data()
                .iter()
                .fold(T::zero(), |acc, &g| acc + g.abs())
                .max(T::c(1e-12));
            let update = grad.map(|g| g / l1);
            let v = match velocity.take() {
                Some(prev) => prev
                    .zip_map(&update, |p, u| mu * p + u)
                    .expect("same dims"),
                None => update,
            };
            velocity = Some(v.clone());
            v
        } else {
            grad
        };
        x_adv = pgd_step(&x_adv, &grad, x, cfg, direction)?;
    }
    Ok(x_adv)
}

/// Untargeted protection by maximizing the editor's reconstruction training
/// loss at the perturbed image.
pub fn advdm_protect<T: Scalar, E: LatentEditorModel<T>>(
    x: &Image<T>,
    editor: &E,
    cfg: &PgdConfig,
) -> Result<Image<T>> {
    run_pgd(x, cfg, PgdDirection::Ascend, |x_adv| {
        let mut tape = Tape::new();
        let v = tape.var(x_adv.data().clone());
        let loss = editor.reconstruction_loss_t(&mut tape, v)?;
        let grads = tape.backward(loss);
        Ok(grads.get(v).expect("input is differentiable").clone())
    })
}

/// Untargeted protection in latent space: repel from the clean latent, or
/// attract toward a target image's latent (which must be supplied).
pub fn latent_distance_protect<T: Scalar, E: LatentEditorModel<T>>(
    x: &Image<T>,
    editor: &E,
    cfg: &PgdConfig,
    mode: LatentMode,
    target: Option<&Image<T>>,
) -> Result<Image<T>> {
    let reference = match mode {
        LatentMode::Repel => {
            let mut tape = Tape::new();
            let v = tape.constant(x.data().clone());
            let z = editor.encode_t(&mut tape, v)?;
            tape.value(z).clone()
        }
        LatentMode::Attract => {
            let t = target.ok_or(CoreError::MissingTarget)?;
            let mut tape = Tape::new();
            let v = tape.constant(t.data().clone());
            let z = editor.encode_t(&mut tape, v)?;
            tape.value(z).clone()
        }
    };
    let direction = match mode {
        LatentMode::Repel => PgdDirection::Ascend,
        LatentMode::Attract => PgdDirection::Descend,
    };
    run_pgd(x, cfg, direction, |x_adv| {
        let mut tape = Tape::new();
        let v = tape.var(x_adv.data().clone());
        let z = editor.encode_t(&mut tape, v)?;
        let r = tape.constant(reference.clone());
        let dist = tape.mse(z, r);
        let grads = tape.backward(dist);
        Ok(grads.get(v).expect("input is differentiable").clone())
    })
}

/// Squared latent distance between two images, a diagnostic used by tests
/// and the ascent/descent assertions.
pub fn latent_distance<T: Scalar, E: LatentEditorModel<T>>(
    editor: &E,
    a: &Image<T>,
    b: &Image<T>,
) -> Result<f64> {
    let mut tape = Tape::new();
    let va = tape.constant(a.data().clone());
    let vb = tape.constant(b.data().clone());
    let za = editor.encode_t(&mut tape, va)?;
    let zb = editor.encode_t(&mut tape, vb)?;
    let d = tape.mse(za, zb);
    Ok(tape.scalar_value(d).to_f64())
}
