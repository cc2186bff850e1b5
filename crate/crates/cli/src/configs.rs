//! JSON job configurations consumed by the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use tarpro_core::baselines::PgdConfig;
use tarpro_core::metrics::MetricConfig;
use tarpro_core::toyworld::WorldConfig;
use tarpro_core::trainer::TrainConfig;
use tarpro_core::Seed;

/// Protection method selector shared by evaluate configs and reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Tarpro,
    Advdm,
    LatentRepel,
    LatentAttract,
    None,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tarpro => "tarpro",
            Method::Advdm => "advdm",
            Method::LatentRepel => "latent_repel",
            Method::LatentAttract => "latent_attract",
            Method::None => "none",
        }
    }
}

/// `pretrain-editor`: build the toy world and write its artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainJob {
    pub world: WorldConfig,
    pub out_dir: PathBuf,
}

impl Default for PretrainJob {
    fn default() -> Self {
        PretrainJob {
            world: WorldConfig::default(),
            out_dir: PathBuf::from("out/world"),
        }
    }
}

/// `train`: fit one generator for a set of images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainJob {
    pub editor_checkpoint: PathBuf,
    pub images: Vec<PathBuf>,
    pub promptset_path: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
    pub out_generator: PathBuf,
    pub out_history: PathBuf,
}

/// `protect`: apply a trained generator to images.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProtectJob {
    pub generator_checkpoint: PathBuf,
    pub images: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

/// `edit`: run the editor once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EditJob {
    pub editor_checkpoint: PathBuf,
    pub image: PathBuf,
    pub promptset_path: PathBuf,
    pub prompt_id: String,
    #[serde(default = "default_sampler_steps")]
    pub sampler_steps: u32,
    pub out: PathBuf,
}

fn default_sampler_steps() -> u32 {
    4
}

/// `evaluate`: one full protect-edit-score experiment for one method.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub dataset_dir: PathBuf,
    pub editor_checkpoint: PathBuf,
    /// Prompts used to train the tarpro generator.
    pub train_promptset_path: PathBuf,
    /// Prompts used for evaluation scoring.
    pub promptset_path: PathBuf,
    pub method: Method,
    #[serde(default)]
    pub train_cfg: TrainConfig,
    #[serde(default)]
    pub pgd_cfg: PgdConfig,
    #[serde(default)]
    pub metric_cfg: MetricConfig,
    pub output_dir: PathBuf,
    #[serde(default = "default_seed")]
    pub seed: Seed,
}

fn default_seed() -> Seed {
    Seed(0)
}

impl ExperimentSpec {
    /// Method-config pairing sanity: the knobs for the chosen method must be
    /// usable.
    pub fn validate(&self) -> Result<()> {
        self.metric_cfg.validate()?;
        match self.method {
            Method::Tarpro => {
                if self.train_cfg.steps == 0 {
                    bail!("tarpro evaluation needs a non-zero training schedule");
                }
            }
            Method::Advdm | Method::LatentRepel | Method::LatentAttract => {
                self.pgd_cfg.validate()?;
            }
            Method::None => {}
        }
        Ok(())
    }
}

/// `compare`: merge reports into one table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareJob {
    pub reports: Vec<PathBuf>,
    pub out_json: PathBuf,
    pub out_csv: PathBuf,
}

/// `plot`: bar charts from reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotJob {
    pub reports: Vec<PathBuf>,
    pub out_dir: PathBuf,
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}
