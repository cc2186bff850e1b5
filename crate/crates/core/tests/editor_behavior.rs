//! Behavior of the frozen toy editor: shape contracts, determinism, the
//! null-prompt identity, autoencoder quality, scorer calibration, and the
//! malicious-prompt flagging rates the toy world is calibrated to provide.

use tarpro_core::editor::{make_malicious, EditorConfig, EditorModel, ToyEditor};
use tarpro_core::error::CoreError;
use tarpro_core::image::{ColorSpace, Image};
use tarpro_core::prompt::{Prompt, PromptKind};
use tarpro_core::tensor::Tensor;
use tarpro_core::toyworld::{build_world, generate_scene, ToyWorld, WorldConfig};
use tarpro_core::Seed;

/// Reconstruction-error bound the editor recipe is calibrated to satisfy.
const RECON_MSE_THRESHOLD: f64 = 0.015;

fn world() -> ToyWorld<f32> {
    build_world(&WorldConfig::default()).unwrap()
}

fn small_world() -> ToyWorld<f32> {
    // latent channels = content components + sentinel + texture = 4
    build_world(&WorldConfig {
        content_components: 2,
        calib_scenes: 24,
        scorer_scenes: 8,
        num_images: 2,
        ..WorldConfig::default()
    })
    .unwrap()
}

#[test]
fn encode_shape_follows_downsample_and_channels() {
    let w = world();
    let img = &w.images[0];
    let z = w.editor.encode(img).unwrap();
    assert_eq!(z.dims(), &[12, 8, 8]);

    let w4 = small_world();
    let z4 = w4.editor.encode(&w4.images[0]).unwrap();
    assert_eq!(z4.dims(), &[4, 8, 8]);
}

#[test]
fn encode_of_all_zeros_image_is_finite() {
    let w = world();
    let img = Image::new(Tensor::<f32>::zeros(&[3, 64, 64]), ColorSpace::Rgb).unwrap();
    let z = w.editor.encode(&img).unwrap();
    assert!(z.all_finite());
}

#[test]
fn encode_rejects_indivisible_resolution() {
    let w = world();
    let img = Image::new(Tensor::<f32>::zeros(&[3, 60, 64]), ColorSpace::Rgb).unwrap();
    assert!(matches!(
        w.editor.encode(&img),
        Err(CoreError::BadShape(_))
    ));
}

#[test]
fn sample_applies_exactly_the_configured_number_of_updates() {
    let w = world();
    let z = w.editor.encode(&w.images[0]).unwrap();
    let prompt = &w.eval_prompts.normals()[0];
    for steps in [1u32, 2, 4, 7] {
        let cfg = EditorConfig {
            sampler_steps: steps,
            seed: Seed(0),
        };
        let (out, trace) = w.editor.sample_traced(&z, prompt, &cfg).unwrap();
        assert_eq!(trace.len(), steps as usize);
        let direct = w.editor.sample(&z, prompt, &cfg).unwrap();
        assert_eq!(out, direct);
    }
    let zero = EditorConfig {
        sampler_steps: 0,
        seed: Seed(0),
    };
    assert!(w.editor.sample(&z, prompt, &zero).is_err());
}

#[test]
fn sample_is_bit_deterministic() {
    let w = world();
    let z = w.editor.encode(&w.images[1]).unwrap();
    let prompt = &w.eval_prompts.maliciouses()[0];
    let cfg = EditorConfig::default();
    let a = w.editor.sample(&z, prompt, &cfg).unwrap();
    let b = w.editor.sample(&z, prompt, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn null_prompt_makes_the_sampler_an_exact_identity() {
    let w = world();
    let z = w.editor.encode(&w.images[0]).unwrap();
    let null = Prompt::normal("null", vec![0.0f32; 32]);
    let out = w.editor.sample(&z, &null, &EditorConfig::default()).unwrap();
    assert_eq!(out, z);

    // and therefore editing under the null prompt is the autoencoder round trip
    let edited = w.editor.edit(&w.images[0], &null, &EditorConfig::default()).unwrap();
    let z2 = w.editor.encode(&w.images[0]).unwrap();
    let recon = w.editor.decode(&z2).unwrap();
    let mut mse = 0.0f64;
    for (&a, &b) in edited.data().data().iter().zip(recon.data().data()) {
        mse += (a as f64 - b as f64).powi(2);
    }
    mse /= edited.data().numel() as f64;
    assert!(mse < 1e-4, "null edit vs reconstruction mse {mse}");
}

#[test]
fn sample_rejects_wrong_prompt_dimension() {
    let w = world();
    let z = w.editor.encode(&w.images[0]).unwrap();
    let bad = Prompt::normal("bad", vec![0.0f32; 7]);
    assert!(matches!(
        w.editor.sample(&z, &bad, &EditorConfig::default()),
        Err(CoreError::DimMismatch { .. })
    ));
}

#[test]
fn decode_shape_and_range() {
    let w = small_world();
    let z = Tensor::<f32>::zeros(&[4, 8, 8]);
    let img = w.editor.decode(&z).unwrap();
    assert_eq!(img.data().dims(), &[3, 64, 64]);

    // wildly out-of-distribution latents still decode into [0, 1]
    let mut rng = Seed(99).rng();
    for _ in 0..5 {
        let mut data = vec![0.0f32; 4 * 8 * 8];
        for v in &mut data {
            *v = rng.normal::<f32>() * 10.0;
        }
        let z = Tensor::from_vec(&[4, 8, 8], data).unwrap();
        let img = w.editor.decode(&z).unwrap();
        for &v in img.data().data() {
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn decode_rejects_wrong_channel_count() {
    let w = world();
    let z = Tensor::<f32>::zeros(&[5, 8, 8]);
    assert!(matches!(w.editor.decode(&z), Err(CoreError::BadShape(_))));
}

#[test]
fn reconstruction_error_is_below_the_calibration_threshold_on_held_out_scenes() {
    let w = world();
    for i in 0..12u64 {
        let img: Image<f32> = generate_scene(Seed(4242).derive(i), 64);
        let mse = w.editor.reconstruction_loss(&img).unwrap();
        assert!(
            mse < RECON_MSE_THRESHOLD,
            "scene {i}: reconstruction mse {mse}"
        );
    }
}

#[test]
fn editor_weights_are_finite() {
    let w = world();
    w.editor.params.check_finite().unwrap();
}

#[test]
fn edit_equals_the_composition_of_its_stages() {
    let w = world();
    let img = &w.images[2];
    let cfg = EditorConfig::default();
    for prompt in [
        &w.eval_prompts.normals()[3],
        &w.eval_prompts.maliciouses()[5],
    ] {
        let fused = w.editor.edit(img, prompt, &cfg).unwrap();
        let z = w.editor.encode(img).unwrap();
        let zs = w.editor.sample(&z, prompt, &cfg).unwrap();
        let staged = w.editor.decode(&zs).unwrap();
        assert_eq!(fused.data(), staged.data());
    }
}

#[test]
fn edit_preserves_image_shape_and_is_deterministic() {
    let w = world();
    let img = &w.images[0];
    let prompt = &w.eval_prompts.normals()[1];
    let cfg = EditorConfig::default();
    let a = w.editor.edit(img, prompt, &cfg).unwrap();
    let b = w.editor.edit(img, prompt, &cfg).unwrap();
    assert_eq!(a.shape(), img.shape());
    assert_eq!(a.data(), b.data());
}

#[test]
fn make_malicious_embedding_algebra_is_exact() {
    let w = world();
    let parent = w.eval_prompts.normals()[0].clone();
    let mal = make_malicious(&parent, &w.nsfw_direction, 1.25).unwrap();
    assert_eq!(mal.kind, PromptKind::Malicious);
    assert_eq!(mal.parent_id.as_deref(), Some(parent.id.as_str()));
    for ((m, p), d) in mal
        .embedding
        .iter()
        .zip(&parent.embedding)
        .zip(&w.nsfw_direction)
    {
        assert_eq!(*m, p + 1.25 * d);
    }
}

#[test]
fn make_malicious_rejects_bad_inputs() {
    let w = world();
    let parent = w.eval_prompts.normals()[0].clone();
    // zero strength
    assert!(make_malicious(&parent, &w.nsfw_direction, 0.0).is_err());
    // malicious parent
    let mal = make_malicious(&parent, &w.nsfw_direction, 1.0).unwrap();
    assert!(matches!(
        make_malicious(&mal, &w.nsfw_direction, 1.0),
        Err(CoreError::BadParent(_))
    ));
    // non-unit direction
    let doubled: Vec<f32> = w.nsfw_direction.iter().map(|v| v * 2.0).collect();
    assert!(matches!(
        make_malicious(&parent, &doubled, 1.0),
        Err(CoreError::BadDirection(_))
    ));
    // wrong dimension
    assert!(matches!(
        make_malicious(&parent, &w.nsfw_direction[..16], 1.0),
        Err(CoreError::BadDirection(_))
    ));
}

#[test]
fn nsfw_score_is_always_in_unit_interval() {
    let w = world();
    for i in 0..8u64 {
        let img: Image<f32> = generate_scene(Seed(31).derive(i), 64);
        let s = w.editor.nsfw_score(&img);
        assert!((0.0..=1.0).contains(&s));
    }
}

#[test]
fn calibrated_malicious_edits_are_flagged_on_at_least_90_percent_of_images() {
    let w = world();
    let cfg = EditorConfig::default();
    let mut flagged = 0usize;
    let mut clean_flagged = 0usize;
    let mut total = 0usize;
    for img in &w.images {
        for m in w.eval_prompts.maliciouses().iter().take(4) {
            let edited = w.editor.edit(img, m, &cfg).unwrap();
            if w.editor.nsfw_score(&edited) > w.editor.scorer.threshold {
                flagged += 1;
            }
            total += 1;
        }
        for p in w.eval_prompts.normals().iter().take(4) {
            let edited = w.editor.edit(img, p, &cfg).unwrap();
            if w.editor.nsfw_score(&edited) > w.editor.scorer.threshold {
                clean_flagged += 1;
            }
        }
    }
    assert!(
        flagged as f64 >= 0.9 * total as f64,
        "flagged {flagged}/{total}"
    );
    assert_eq!(clean_flagged, 0, "normal edits must not be flagged");
}

#[test]
fn scorer_accuracy_on_a_frozen_labeled_set_is_at_least_95_percent() {
    let w = world();
    let cfg = EditorConfig::default();
    let mut correct = 0usize;
    let mut total = 0usize;
    // labeled set: clean scenes and normal edits (no concept), malicious
    // edits at calibration and faint strengths (concept present)
    for i in 0..16u64 {
        let scene: Image<f32> = generate_scene(Seed(777000).derive(i), 64);
        let parent = w.eval_prompts.normals()[(i as usize) % w.eval_prompts.normals().len()].clone();
        let cases: Vec<(Image<f32>, bool)> = vec![
            (scene.clone(), false),
            (w.editor.edit(&scene, &parent, &cfg).unwrap(), false),
            (
                w.editor
                    .edit(&scene, &make_malicious(&parent, &w.nsfw_direction, 1.0).unwrap(), &cfg)
                    .unwrap(),
                true,
            ),
            (
                w.editor
                    .edit(&scene, &make_malicious(&parent, &w.nsfw_direction, 0.5).unwrap(), &cfg)
                    .unwrap(),
                true,
            ),
        ];
        for (img, label) in cases {
            let flagged = w.editor.nsfw_score(&img) > w.editor.scorer.threshold;
            if flagged == label {
                correct += 1;
            }
            total += 1;
        }
    }
    assert!(
        correct as f64 >= 0.95 * total as f64,
        "accuracy {correct}/{total}"
    );
}

#[test]
fn editor_checksum_is_stable_and_sensitive() {
    let w = world();
    let c1 = w.editor.checksum();
    let c2 = w.editor.checksum();
    assert_eq!(c1, c2);
    let mut tampered: ToyEditor<f32> = w.editor.clone();
    tampered.params.enc_bias.data_mut()[0] += 1.0;
    assert_ne!(c1, tampered.checksum());
}

#[test]
fn world_build_is_deterministic() {
    let a = world();
    let b = world();
    assert_eq!(a.editor.checksum(), b.editor.checksum());
    assert_eq!(a.images[0].data(), b.images[0].data());
    assert_eq!(a.train_prompts, b.train_prompts);
}
