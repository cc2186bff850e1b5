//! Checkpoint container: byte-level golden layout, round trips for editor
//! and generator weights, and rejection of malformed files.

mod common;

use tarpro_cli::checkpoint::{
    load_editor, load_generator, read_container, save_editor, save_generator, write_container,
    CheckpointError, EDITOR_MAGIC, GENERATOR_MAGIC,
};
use tarpro_core::generator::{GeneratorConfig, GeneratorParams};
use tarpro_core::tensor::Tensor;
use tarpro_core::toyworld::{build_world, WorldConfig};
use tarpro_core::Seed;

#[test]
fn container_bytes_match_the_documented_layout() {
    let t = Tensor::from_vec(&[2, 2], vec![1.0f32, -2.0, 0.5, 3.25]).unwrap();
    let mut buf = Vec::new();
    write_container(&mut buf, *b"TPED", &[("ab".to_string(), &t)]).unwrap();

    let mut expected = Vec::new();
    expected.extend_from_slice(b"TPED"); // magic
    expected.extend_from_slice(&1u16.to_le_bytes()); // version
    expected.extend_from_slice(&2u16.to_le_bytes()); // name length
    expected.extend_from_slice(b"ab"); // name
    expected.push(2u8); // rank
    expected.extend_from_slice(&2u32.to_le_bytes()); // dims
    expected.extend_from_slice(&2u32.to_le_bytes());
    for v in [1.0f32, -2.0, 0.5, 3.25] {
        expected.extend_from_slice(&v.to_le_bytes());
    }
    assert_eq!(buf, expected);

    let parsed = read_container(&buf[..], *b"TPED").unwrap();
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed[0].0, "ab");
    assert_eq!(parsed[0].1, t);
}

#[test]
fn wrong_magic_and_version_are_rejected() {
    let t = Tensor::from_vec(&[1], vec![0.0f32]).unwrap();
    let mut buf = Vec::new();
    write_container(&mut buf, GENERATOR_MAGIC, &[("x".to_string(), &t)]).unwrap();
    assert!(matches!(
        read_container(&buf[..], EDITOR_MAGIC),
        Err(CheckpointError::BadMagic { .. })
    ));

    let mut tampered = buf.clone();
    tampered[4] = 99;
    assert!(matches!(
        read_container(&tampered[..], GENERATOR_MAGIC),
        Err(CheckpointError::BadVersion(99))
    ));
}

#[test]
fn editor_checkpoint_round_trip_preserves_behavior() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("editor.tped");
    let world = build_world::<f32>(&common::mini_world_config()).unwrap();
    save_editor(&path, &world.editor).unwrap();
    let loaded = load_editor(&path).unwrap();
    assert_eq!(loaded.checksum(), world.editor.checksum());
    assert_eq!(loaded.world_version, world.editor.world_version);
    assert_eq!(loaded.scorer.threshold, world.editor.scorer.threshold);

    use tarpro_core::editor::{EditorConfig, EditorModel};
    let img = &world.images[0];
    let p = &world.eval_prompts.maliciouses()[0];
    let a = world.editor.edit(img, p, &EditorConfig::default()).unwrap();
    let b = loaded.edit(img, p, &EditorConfig::default()).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn generator_checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.tpgn");
    let config = GeneratorConfig {
        hidden_dim: 32,
        num_heads: 4,
        mlp_ratio: 2,
        ..GeneratorConfig::default()
    };
    let params = GeneratorParams::<f32>::init(config, 3, 16, 16, Seed(5)).unwrap();
    save_generator(&path, &params).unwrap();
    let loaded = load_generator(&path).unwrap();
    assert_eq!(loaded.fingerprint(), params.fingerprint());
    assert_eq!(loaded.config, params.config);
    assert_eq!(
        (loaded.channels, loaded.height, loaded.width),
        (params.channels, params.height, params.width)
    );
}

#[test]
fn world_config_build_is_deterministic_across_processes_via_checkpoint() {
    // same config, two builds, identical checkpoint bytes
    let cfg = WorldConfig {
        num_images: 1,
        ..common::mini_world_config()
    };
    let dir = tempfile::tempdir().unwrap();
    let p1 = dir.path().join("a.tped");
    let p2 = dir.path().join("b.tped");
    save_editor(&p1, &build_world::<f32>(&cfg).unwrap().editor).unwrap();
    save_editor(&p2, &build_world::<f32>(&cfg).unwrap().editor).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}
