//! Images, perturbations and the budget they must respect.

use alloc::format;

use crate::error::{CoreError, Result};
use crate::scalar::Scalar;
use crate::tensor::{format_dims, Tensor};

/// Slack allowed when checking the budget invariant, absorbing rounding in
/// downstream arithmetic.
pub const BUDGET_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColorSpace {
    Grayscale,
    Rgb,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Grayscale => 1,
            ColorSpace::Rgb => 3,
        }
    }
}

/// A C x H x W intensity tensor with every element in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f32> {
    data: Tensor<T>,
    color_space: ColorSpace,
}

impl<T: Scalar> Image<T> {
    /// Validating constructor; see [`validate_image`] for the rules.
    pub fn new(data: Tensor<T>, color_space: ColorSpace) -> Result<Self> {
        let img = Image { data, color_space };
        validate_image(img)
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color_space
    }

    /// (channels, height, width)
    pub fn shape(&self) -> (usize, usize, usize) {
        match self.data.dims() {
            [c, h, w] => (*c, *h, *w),
            _ => unreachable!("validated at construction"),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        self.data.fingerprint()
    }

    /// Widen or narrow the scalar type; used by f64 gradient-check rigs.
    pub fn cast<U: Scalar>(&self) -> Image<U> {
        let data = Tensor::from_vec(
            self.data.dims(),
            self.data.data().iter().map(|&x| U::c(x.to_f64())).collect(),
        )
        .expect("same dims");
        Image {
            data,
            color_space: self.color_space,
        }
    }
}

/// Checks the image invariants and hands the image back unchanged.
///
/// Errors with `BadShape` for a non rank-3 tensor, a degenerate dimension or
/// a channel count that contradicts the color space, and `OutOfRange` for any
/// element outside [0, 1] (NaN included).
pub fn validate_image<T: Scalar>(img: Image<T>) -> Result<Image<T>> {
    let dims = img.data.dims();
    let (c, h, w) = match dims {
        [c, h, w] => (*c, *h, *w),
        _ => {
            return Err(CoreError::BadShape(format!(
                "image must be rank 3, got {}",
                format_dims(dims)
            )))
        }
    };
    if c == 0 || h == 0 || w == 0 {
        return Err(CoreError::BadShape(format!(
            "degenerate image dimensions {}",
            format_dims(dims)
        )));
    }
    if c != img.color_space.channels() {
        return Err(CoreError::BadShape(format!(
            "{c} channels do not match color space"
        )));
    }
    for (i, &v) in img.data.data().iter().enumerate() {
        if !(v >= T::zero() && v <= T::one()) {
            return Err(CoreError::OutOfRange {
                value: v.to_f64(),
                index: i,
            });
        }
    }
    Ok(img)
}

/// Maximum allowed infinity norm of a perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationBudget {
    pub eta: f64,
}

impl Default for PerturbationBudget {
    fn default() -> Self {
        PerturbationBudget { eta: 8.0 / 255.0 }
    }
}

impl PerturbationBudget {
    pub fn new(eta: f64) -> Result<Self> {
        if !(eta > 0.0 && eta < 1.0) {
            return Err(CoreError::BadConfig(format!(
                "budget eta must be in (0,1), got {eta}"
            )));
        }
        Ok(PerturbationBudget { eta })
    }
}

/// A same-shape additive perturbation bounded by its budget.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation<T = f32> {
    data: Tensor<T>,
    budget: PerturbationBudget,
}

impl<T: Scalar> Perturbation<T> {
    /// Budget-checked constructor: rejects rank != 3 tensors and any element
    /// beyond `eta` plus the fixed slack.
    pub fn new(data: Tensor<T>, budget: PerturbationBudget) -> Result<Self> {
        if data.dims().len() != 3 {
            return Err(CoreError::BadShape(format!(
                "perturbation must be rank 3, got {}",
                format_dims(data.dims())
            )));
        }
        if !data.all_finite() {
            return Err(CoreError::NonFinite("perturbation".into()));
        }
        let max = data.inf_norm().to_f64();
        if max > budget.eta + BUDGET_SLACK {
            return Err(CoreError::BadConfig(format!(
                "perturbation norm {max} exceeds budget {}",
                budget.eta
            )));
        }
        Ok(Perturbation { data, budget })
    }

    pub fn zeros_like(img: &Image<T>, budget: PerturbationBudget) -> Self {
        Perturbation {
            data: Tensor::zeros(img.data().dims()),
            budget,
        }
    }

    pub fn data(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn budget(&self) -> PerturbationBudget {
        self.budget
    }
}

/// Adds the perturbation and clamps back into [0, 1], producing the image
/// that all downstream editing consumes.
pub fn apply_perturbation<T: Scalar>(img: &Image<T>, pert: &Perturbation<T>) -> Result<Image<T>> {
    if img.data().dims() != pert.data().dims() {
        return Err(CoreError::ShapeMismatch {
            expected: format_dims(img.data().dims()),
            got: format_dims(pert.data().dims()),
        });
    }
    let data = img
        .data()
        .zip_map(pert.data(), |x, d| (x + d).max(T::zero()).min(T::one()))
        .expect("checked dims");
    Ok(Image {
        data,
        color_space: img.color_space(),
    })
}
