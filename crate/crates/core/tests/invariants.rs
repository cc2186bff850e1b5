//! Property tests for the core invariants: perturbation application bounds
//! and the structural budget guarantee of the generator projection.

use proptest::prelude::*;
use tarpro_core::generator::project;
use tarpro_core::image::{
    apply_perturbation, ColorSpace, Image, Perturbation, PerturbationBudget,
};
use tarpro_core::tensor::Tensor;
use tarpro_core::Seed;

fn image_and_delta(seed: u64, eta: f64) -> (Image<f32>, Perturbation<f32>) {
    let mut rng = Seed(seed).rng();
    let mut img = vec![0.0f32; 3 * 8 * 8];
    rng.fill_uniform(&mut img, 0.0, 1.0);
    let mut d = vec![0.0f32; 3 * 8 * 8];
    rng.fill_uniform(&mut d, -eta, eta);
    let budget = PerturbationBudget::new(eta).unwrap();
    (
        Image::new(Tensor::from_vec(&[3, 8, 8], img).unwrap(), ColorSpace::Rgb).unwrap(),
        Perturbation::new(Tensor::from_vec(&[3, 8, 8], d).unwrap(), budget).unwrap(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn applying_zero_perturbation_is_identity(seed in 0u64..10_000) {
        let (img, _) = image_and_delta(seed, 8.0 / 255.0);
        let zero = Perturbation::zeros_like(&img, PerturbationBudget::default());
        let out = apply_perturbation(&img, &zero).unwrap();
        prop_assert_eq!(out.data(), img.data());
    }

    #[test]
    fn perturbed_image_never_strays_beyond_the_budget(
        seed in 0u64..10_000,
        eta_mil in 1u32..200,
    ) {
        let eta = eta_mil as f64 / 1000.0;
        let (img, delta) = image_and_delta(seed, eta);
        let out = apply_perturbation(&img, &delta).unwrap();
        for (&a, &b) in out.data().data().iter().zip(img.data().data()) {
            prop_assert!((a as f64 - b as f64).abs() <= eta + 1e-6);
            prop_assert!((0.0..=1.0).contains(&(a as f64)));
        }
    }

    #[test]
    fn projection_respects_any_budget_for_any_raw_values(
        seed in 0u64..10_000,
        eta_mil in 1u32..500,
        amplitude in 0.0f32..1000.0,
    ) {
        let eta = eta_mil as f64 / 1000.0;
        let mut rng = Seed(seed).rng();
        let mut raw = vec![0.0f32; 48];
        rng.fill_uniform(&mut raw, -amplitude as f64 - 1e-3, amplitude as f64 + 1e-3);
        let raw = Tensor::from_vec(&[3, 4, 4], raw).unwrap();
        let budget = PerturbationBudget::new(eta).unwrap();
        let delta = project(&raw, budget).unwrap();
        prop_assert!((delta.data().inf_norm() as f64) <= eta + 1e-6);
    }
}
