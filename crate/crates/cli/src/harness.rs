//! Experiment orchestration: protect every dataset image with the chosen
//! method, edit under every evaluation prompt, apply the metric pairings,
//! and aggregate one report row. Reports carry full config provenance and a
//! toy-world version so comparisons can refuse mismatched worlds.
//!
//! Metric pairings: normal-prompt rows compare the protected-image edit to
//! the original-image edit under the same prompt; malicious-prompt rows
//! compare the protected-image edit to the original-image edit under the
//! prompt's normal parent; perturbation rows compare the protected image to
//! the original.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tarpro_core::baselines::{advdm_protect, latent_distance_protect, LatentMode, PgdConfig};
use tarpro_core::editor::{EditorConfig, EditorModel, ToyEditor};
use tarpro_core::image::{ColorSpace, Image};
use tarpro_core::metrics::{psnr, ssim, MetricConfig};
use tarpro_core::prompt::PromptSet;
use tarpro_core::tensor::Tensor;
use tarpro_core::trainer::{protect, train, TrainConfig};
use tarpro_core::Seed;

use crate::checkpoint;
use crate::configs::{ExperimentSpec, Method};
use crate::pngio;

/// Report schema; one row per evaluated method.
pub const CSV_HEADER: &str =
    "method,normal_ssim,normal_psnr_db,nsfw_ratio,malicious_ssim,malicious_psnr_db,perturb_ssim,perturb_psnr_db";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("reports come from different toy-world versions: {0} vs {1}")]
    VersionMismatch(u32, u32),
    #[error("no reports to compare")]
    NoReports,
    #[error("dataset directory {0} contains no png images")]
    EmptyDataset(PathBuf),
}

/// The Table-style metric row for one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub normal_ssim: f64,
    pub normal_psnr_db: f64,
    pub nsfw_ratio: f64,
    pub malicious_ssim: f64,
    pub malicious_psnr_db: f64,
    pub perturb_ssim: f64,
    pub perturb_psnr_db: f64,
}

impl EvalRow {
    pub fn values(&self) -> [f64; 7] {
        [
            self.normal_ssim,
            self.normal_psnr_db,
            self.nsfw_ratio,
            self.malicious_ssim,
            self.malicious_psnr_db,
            self.perturb_ssim,
            self.perturb_psnr_db,
        ]
    }

    pub fn column_names() -> [&'static str; 7] {
        [
            "normal_ssim",
            "normal_psnr_db",
            "nsfw_ratio",
            "malicious_ssim",
            "malicious_psnr_db",
            "perturb_ssim",
            "perturb_psnr_db",
        ]
    }

    /// Whether a larger value is better, per column.
    pub fn higher_is_better() -> [bool; 7] {
        [true, true, false, true, true, true, true]
    }

    /// Every value finite and inside its metric's range.
    pub fn check_bounds(&self) -> Result<()> {
        for (name, v) in Self::column_names().iter().zip(self.values()) {
            anyhow::ensure!(v.is_finite(), "report column {name} is not finite");
        }
        for (name, v) in ["normal_ssim", "malicious_ssim", "perturb_ssim"]
            .iter()
            .zip([self.normal_ssim, self.malicious_ssim, self.perturb_ssim])
        {
            anyhow::ensure!((-1.0..=1.0).contains(&v), "{name} = {v} out of range");
        }
        anyhow::ensure!((0.0..=1.0).contains(&self.nsfw_ratio), "nsfw ratio out of range");
        anyhow::ensure!(self.normal_psnr_db >= 0.0 && self.malicious_psnr_db >= 0.0);
        Ok(())
    }
}

/// Everything needed to reproduce the numbers in the row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seed: Seed,
    pub world_version: u32,
    pub dataset: Vec<String>,
    pub eval_normal_prompts: usize,
    pub eval_malicious_prompts: usize,
    pub train_cfg: TrainConfig,
    pub pgd_cfg: PgdConfig,
    pub metric_cfg: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub row: EvalRow,
    pub metadata: ReportMetadata,
}

impl EvalReport {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        out.push_str(&row_to_csv(&self.row));
        out.push('\n');
        out
    }
}

fn row_to_csv(row: &EvalRow) -> String {
    let v = row.values();
    format!(
        "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        row.method, v[0], v[1], v[2], v[3], v[4], v[5], v[6]
    )
}

/// Sorted png files of a dataset directory.
pub fn dataset_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(HarnessError::EmptyDataset(dir.to_path_buf()).into());
    }
    Ok(paths)
}

/// A uniform mid-gray image, the attract-mode target.
pub fn gray_target(like: &Image<f32>) -> Image<f32> {
    Image::new(Tensor::full(like.data().dims(), 0.5f32), ColorSpace::Rgb)
        .expect("constant image is valid")
}

/// Protect one image with the chosen method; per-image seeds derive from the
/// experiment seed and the image index so the dataset order is the only
/// ordering that matters.
#[allow(clippy::too_many_arguments)]
pub fn protect_image(
    method: Method,
    img: &Image<f32>,
    editor: &ToyEditor<f32>,
    train_prompts: &PromptSet<f32>,
    spec_train: &TrainConfig,
    spec_pgd: &PgdConfig,
    seed: Seed,
    index: usize,
) -> Result<Image<f32>> {
    let per_image = seed.derive(0x696d67).derive(index as u64);
    Ok(match method {
        Method::None => img.clone(),
        Method::Tarpro => {
            let cfg = TrainConfig {
                seed: per_image,
                ..*spec_train
            };
            let (params, _) = train(std::slice::from_ref(img), train_prompts, editor, &cfg)?;
            protect(img, &params, cfg.budget)?
        }
        Method::Advdm => {
            let cfg = PgdConfig {
                seed: per_image,
                ..*spec_pgd
            };
            advdm_protect(img, editor, &cfg)?
        }
        Method::LatentRepel => {
            let cfg = PgdConfig {
                seed: per_image,
                ..*spec_pgd
            };
            latent_distance_protect(img, editor, &cfg, LatentMode::Repel, None)?
        }
        Method::LatentAttract => {
            let cfg = PgdConfig {
                seed: per_image,
                ..*spec_pgd
            };
            latent_distance_protect(img, editor, &cfg, LatentMode::Attract, Some(&gray_target(img)))?
        }
    })
}

struct ImageStats {
    normal_ssim: f64,
    normal_psnr: f64,
    normal_count: usize,
    mal_ssim: f64,
    mal_psnr: f64,
    mal_count: usize,
    flagged: usize,
    perturb_ssim: f64,
    perturb_psnr: f64,
}

fn evaluate_image(
    img: &Image<f32>,
    protected: &Image<f32>,
    editor: &ToyEditor<f32>,
    eval_prompts: &PromptSet<f32>,
    ecfg: &EditorConfig,
    mcfg: &MetricConfig,
) -> Result<ImageStats> {
    let mut stats = ImageStats {
        normal_ssim: 0.0,
        normal_psnr: 0.0,
        normal_count: 0,
        mal_ssim: 0.0,
        mal_psnr: 0.0,
        mal_count: 0,
        flagged: 0,
        perturb_ssim: ssim(protected, img, mcfg)?,
        perturb_psnr: psnr(protected, img, mcfg)?,
    };
    for p in eval_prompts.normals() {
        let edited_protected = editor.edit(protected, p, ecfg)?;
        let edited_original = editor.edit(img, p, ecfg)?;
        stats.normal_ssim += ssim(&edited_protected, &edited_original, mcfg)?;
        stats.normal_psnr += psnr(&edited_protected, &edited_original, mcfg)?;
        stats.normal_count += 1;
    }
    for m in eval_prompts.maliciouses() {
        let edited_protected = editor.edit(protected, m, ecfg)?;
        if editor.nsfw_score(&edited_protected) > mcfg.nsfw_threshold {
            stats.flagged += 1;
        }
        let parent = eval_prompts.parent_of(m)?;
        let target = editor.edit(img, parent, ecfg)?;
        stats.mal_ssim += ssim(&edited_protected, &target, mcfg)?;
        stats.mal_psnr += psnr(&edited_protected, &target, mcfg)?;
        stats.mal_count += 1;
    }
    Ok(stats)
}

/// Run the full experiment described by the spec and persist `report.json`
/// and `report.csv` into the output directory.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<EvalReport> {
    spec.validate()?;
    let editor = checkpoint::load_editor(&spec.editor_checkpoint)
        .with_context(|| format!("loading {}", spec.editor_checkpoint.display()))?;
    let paths = dataset_paths(&spec.dataset_dir)?;
    let images: Vec<Image<f32>> = paths
        .iter()
        .map(|p| pngio::load_png(p))
        .collect::<Result<_>>()?;
    let train_prompts = crate::promptio::load_prompt_set(&spec.train_promptset_path)?;
    let eval_prompts = crate::promptio::load_prompt_set(&spec.promptset_path)?;

    let ecfg = EditorConfig {
        sampler_steps: spec.train_cfg.sampler_steps,
        seed: spec.seed,
    };

    // per-image work runs in parallel; aggregation below is index-ordered
    let stats: Vec<ImageStats> = images
        .par_iter()
        .enumerate()
        .map(|(idx, img)| {
            let protected = protect_image(
                spec.method,
                img,
                &editor,
                &train_prompts,
                &spec.train_cfg,
                &spec.pgd_cfg,
                spec.seed,
                idx,
            )?;
            evaluate_image(img, &protected, &editor, &eval_prompts, &ecfg, &spec.metric_cfg)
        })
        .collect::<Result<_>>()?;

    let mut normal_ssim = 0.0;
    let mut normal_psnr = 0.0;
    let mut normal_count = 0usize;
    let mut mal_ssim = 0.0;
    let mut mal_psnr = 0.0;
    let mut mal_count = 0usize;
    let mut flagged = 0usize;
    let mut perturb_ssim = 0.0;
    let mut perturb_psnr = 0.0;
    for s in &stats {
        normal_ssim += s.normal_ssim;
        normal_psnr += s.normal_psnr;
        normal_count += s.normal_count;
        mal_ssim += s.mal_ssim;
        mal_psnr += s.mal_psnr;
        mal_count += s.mal_count;
        flagged += s.flagged;
        perturb_ssim += s.perturb_ssim;
        perturb_psnr += s.perturb_psnr;
    }

    let row = EvalRow {
        method: spec.method.name().to_string(),
        normal_ssim: normal_ssim / normal_count.max(1) as f64,
        normal_psnr_db: normal_psnr / normal_count.max(1) as f64,
        nsfw_ratio: flagged as f64 / mal_count.max(1) as f64,
        malicious_ssim: mal_ssim / mal_count.max(1) as f64,
        malicious_psnr_db: mal_psnr / mal_count.max(1) as f64,
        perturb_ssim: perturb_ssim / images.len() as f64,
        perturb_psnr_db: perturb_psnr / images.len() as f64,
    };
    row.check_bounds()?;
    let report = EvalReport {
        row,
        metadata: ReportMetadata {
            seed: spec.seed,
            world_version: editor.world_version,
            dataset: paths
                .iter()
                .map(|p| {
                    p.file_name()
                        .map(|n| n.to_string_lossy().into_owned())
                        .unwrap_or_default()
                })
                .collect(),
            eval_normal_prompts: eval_prompts.count_normal(),
            eval_malicious_prompts: eval_prompts.count_malicious(),
            train_cfg: spec.train_cfg,
            pgd_cfg: spec.pgd_cfg,
            metric_cfg: spec.metric_cfg.clone(),
        },
    };

    fs::create_dir_all(&spec.output_dir)
        .with_context(|| format!("creating {}", spec.output_dir.display()))?;
    crate::configs::save_json(&spec.output_dir.join("report.json"), &report)?;
    fs::write(spec.output_dir.join("report.csv"), report.to_csv_string())
        .context("writing report.csv")?;
    Ok(report)
}

/// One comparison cell: the value, whether it is the best in its column, and
/// the difference against the unprotected row when one is present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub value: f64,
    pub best: bool,
    pub delta_vs_none: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub cells: Vec<ComparisonCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub world_version: u32,
    pub columns: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

/// Merge reports into one table with per-column best marks and deltas
/// against the `none` row. All reports must come from the same toy world.
pub fn compare_reports(reports: &[EvalReport]) -> Result<ComparisonTable> {
    let first = reports.first().ok_or(HarnessError::NoReports)?;
    for r in reports {
        if r.metadata.world_version != first.metadata.world_version {
            return Err(HarnessError::VersionMismatch(
                first.metadata.world_version,
                r.metadata.world_version,
            )
            .into());
        }
    }
    let higher = EvalRow::higher_is_better();
    let none_values = reports
        .iter()
        .find(|r| r.row.method == "none")
        .map(|r| r.row.values());

    let mut best = [f64::NEG_INFINITY; 7];
    for r in reports {
        for (i, v) in r.row.values().into_iter().enumerate() {
            let score = if higher[i] { v } else { -v };
            best[i] = best[i].max(score);
        }
    }

    let rows = reports
        .iter()
        .map(|r| ComparisonRow {
            method: r.row.method.clone(),
            cells: r
                .row
                .values()
                .into_iter()
                .enumerate()
                .map(|(i, v)| {
                    let score = if higher[i] { v } else { -v };
                    ComparisonCell {
                        value: v,
                        best: score == best[i],
                        delta_vs_none: none_values.map(|nv| v - nv[i]),
                    }
                })
                .collect(),
        })
        .collect();

    Ok(ComparisonTable {
        world_version: first.metadata.world_version,
        columns: EvalRow::column_names().iter().map(|s| s.to_string()).collect(),
        rows,
    })
}

impl ComparisonTable {
    pub fn to_csv_string(&self) -> String {
        let mut header = String::from("method");
        for c in &self.columns {
            header.push_str(&format!(",{c},{c}_delta,{c}_best"));
        }
        let mut out = header;
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.method);
            for cell in &row.cells {
                out.push_str(&format!(
                    ",{:.6},{},{}",
                    cell.value,
                    cell.delta_vs_none
                        .map(|d| format!("{d:.6}"))
                        .unwrap_or_default(),
                    if cell.best { "1" } else { "0" }
                ));
            }
            out.push('\n');
        }
        out
    }
}

pub fn load_report(path: &Path) -> Result<EvalReport> {
    crate::configs::load_json(path)
}
