//! Prompt sets as JSON: a top-level array of objects with fields
//! {id, kind, embedding, parent_id}.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use tarpro_core::prompt::{Prompt, PromptSet};

pub fn save_prompt_set(path: &Path, prompts: &PromptSet<f32>) -> Result<()> {
    let list: Vec<Prompt<f32>> = prompts.clone().into_prompts();
    let json = serde_json::to_string_pretty(&list)?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

pub fn load_prompt_set(path: &Path) -> Result<PromptSet<f32>> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let list: Vec<Prompt<f32>> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    PromptSet::new(list).with_context(|| format!("validating {}", path.display()))
}
