//! Shared helpers: materialize a toy world into a directory the way the
//! `pretrain-editor` verb does, and build experiment specs over it.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tarpro_cli::configs::{ExperimentSpec, Method};
use tarpro_cli::{checkpoint, pngio, promptio};
use tarpro_core::toyworld::{build_world, ToyWorld, WorldConfig};
use tarpro_core::Seed;

pub struct WorldOnDisk {
    pub world: ToyWorld<f32>,
    pub dir: PathBuf,
    pub editor: PathBuf,
    pub dataset: PathBuf,
    pub train_prompts: PathBuf,
    pub eval_prompts: PathBuf,
}

pub fn mini_world_config() -> WorldConfig {
    WorldConfig {
        image_size: 16,
        num_images: 2,
        calib_scenes: 24,
        scorer_scenes: 6,
        content_components: 4,
        train_normal: 2,
        train_malicious: 4,
        eval_normal: 3,
        eval_malicious: 3,
        ..WorldConfig::default()
    }
}

pub fn materialize_world(dir: &Path, cfg: &WorldConfig) -> WorldOnDisk {
    let world = build_world::<f32>(cfg).unwrap();
    let dataset = dir.join("dataset");
    std::fs::create_dir_all(&dataset).unwrap();
    let editor = dir.join("editor.tped");
    checkpoint::save_editor(&editor, &world.editor).unwrap();
    for (i, img) in world.images.iter().enumerate() {
        pngio::save_png(&dataset.join(format!("img_{i:03}.png")), img).unwrap();
    }
    let train_prompts = dir.join("prompts_train.json");
    let eval_prompts = dir.join("prompts_eval.json");
    promptio::save_prompt_set(&train_prompts, &world.train_prompts).unwrap();
    promptio::save_prompt_set(&eval_prompts, &world.eval_prompts).unwrap();
    WorldOnDisk {
        world,
        dir: dir.to_path_buf(),
        editor,
        dataset,
        train_prompts,
        eval_prompts,
    }
}

pub fn spec_for(world: &WorldOnDisk, method: Method, output: &Path) -> ExperimentSpec {
    ExperimentSpec {
        dataset_dir: world.dataset.clone(),
        editor_checkpoint: world.editor.clone(),
        train_promptset_path: world.train_prompts.clone(),
        promptset_path: world.eval_prompts.clone(),
        method,
        train_cfg: Default::default(),
        pgd_cfg: Default::default(),
        metric_cfg: Default::default(),
        output_dir: output.to_path_buf(),
        seed: Seed(0),
    }
}
