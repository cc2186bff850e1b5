//! Command line for the targeted-protection toolkit. Every verb reads a JSON
//! config; `--seed` overrides the config's seed for quick sweeps.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use tarpro_core::editor::EditorConfig;
use tarpro_core::toyworld;
use tarpro_core::trainer;
use tarpro_core::Seed;

use tarpro_cli::configs::{
    load_json, save_json, CompareJob, EditJob, ExperimentSpec, Method, PlotJob, PretrainJob,
    ProtectJob, TrainJob,
};
use tarpro_cli::{checkpoint, harness, plots, pngio, promptio};

#[derive(Parser)]
#[command(
    name = "tarpro",
    about = "Targeted protection against malicious image editing"
)]
struct Cli {
    /// Override the seed found in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the toy world: editor+scorer checkpoint, dataset and prompt sets.
    PretrainEditor {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a perturbation generator for one or more images.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Apply a trained generator to images.
    Protect {
        #[arg(long)]
        config: PathBuf,
    },
    /// Edit one image with one prompt from a prompt set.
    Edit {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a full protect-edit-score experiment for one method.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        /// Override the method named in the config.
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Merge evaluation reports into one comparison table.
    Compare {
        #[arg(long)]
        config: PathBuf,
    },
    /// Emit bar-chart PNGs from evaluation reports.
    Plot {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::PretrainEditor { config } => {
            let mut job: PretrainJob = load_json(&config)?;
            if let Some(s) = cli.seed {
                job.world.seed = Seed(s);
            }
            pretrain(&job)
        }
        Command::Train { config } => {
            let mut job: TrainJob = load_json(&config)?;
            if let Some(s) = cli.seed {
                job.train.seed = Seed(s);
            }
            run_train(&job)
        }
        Command::Protect { config } => {
            let job: ProtectJob = load_json(&config)?;
            run_protect(&job)
        }
        Command::Edit { config } => {
            let job: EditJob = load_json(&config)?;
            run_edit(&job)
        }
        Command::Evaluate { config, method } => {
            let mut spec: ExperimentSpec = load_json(&config)?;
            if let Some(s) = cli.seed {
                spec.seed = Seed(s);
            }
            if let Some(m) = method {
                spec.method = m;
            }
            let report = harness::run_experiment(&spec)?;
            println!(
                "{} nsfw_ratio {:.4} normal_ssim {:.4} perturb_ssim {:.4}",
                report.row.method, report.row.nsfw_ratio, report.row.normal_ssim,
                report.row.perturb_ssim
            );
            Ok(())
        }
        Command::Compare { config } => {
            let job: CompareJob = load_json(&config)?;
            let reports = job
                .reports
                .iter()
                .map(|p| harness::load_report(p))
                .collect::<Result<Vec<_>>>()?;
            let table = harness::compare_reports(&reports)?;
            save_json(&job.out_json, &table)?;
            std::fs::write(&job.out_csv, table.to_csv_string())
                .with_context(|| format!("writing {}", job.out_csv.display()))?;
            println!("compared {} reports", reports.len());
            Ok(())
        }
        Command::Plot { config } => {
            let job: PlotJob = load_json(&config)?;
            let reports = job
                .reports
                .iter()
                .map(|p| harness::load_report(p))
                .collect::<Result<Vec<_>>>()?;
            let files = plots::emit_plots(&reports, &job.out_dir)?;
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
    }
}

fn pretrain(job: &PretrainJob) -> Result<()> {
    let world = toyworld::build_world::<f32>(&job.world)?;
    std::fs::create_dir_all(job.out_dir.join("dataset"))?;
    checkpoint::save_editor(&job.out_dir.join("editor.tped"), &world.editor)?;
    for (i, img) in world.images.iter().enumerate() {
        pngio::save_png(&job.out_dir.join(format!("dataset/img_{i:03}.png")), img)?;
    }
    promptio::save_prompt_set(&job.out_dir.join("prompts_train.json"), &world.train_prompts)?;
    promptio::save_prompt_set(&job.out_dir.join("prompts_eval.json"), &world.eval_prompts)?;
    save_json(&job.out_dir.join("world.json"), &job.world)?;
    println!(
        "world ready: {} images, editor checksum {:016x}",
        world.images.len(),
        world.editor.checksum()
    );
    Ok(())
}

fn run_train(job: &TrainJob) -> Result<()> {
    let editor = checkpoint::load_editor(&job.editor_checkpoint)?;
    if job.images.is_empty() {
        bail!("train job lists no images");
    }
    let images = job
        .images
        .iter()
        .map(|p| pngio::load_png(p))
        .collect::<Result<Vec<_>>>()?;
    let prompts = promptio::load_prompt_set(&job.promptset_path)?;
    let (params, history) = trainer::train(&images, &prompts, &editor, &job.train)?;
    checkpoint::save_generator(&job.out_generator, &params)?;

    let mut csv = String::from("step,adv,reg,total,grad_norm\n");
    for r in &history.records {
        csv.push_str(&format!(
            "{},{:.9},{:.9},{:.9},{:.9}\n",
            r.step, r.adv, r.reg, r.total, r.grad_norm
        ));
    }
    std::fs::write(&job.out_history, csv)
        .with_context(|| format!("writing {}", job.out_history.display()))?;
    let last = history.records.last();
    println!(
        "trained {} steps, final total loss {:.6}",
        history.len(),
        last.map(|r| r.total).unwrap_or(0.0)
    );
    Ok(())
}

fn run_protect(job: &ProtectJob) -> Result<()> {
    let params = checkpoint::load_generator(&job.generator_checkpoint)?;
    std::fs::create_dir_all(&job.out_dir)?;
    for path in &job.images {
        let img = pngio::load_png(path)?;
        let protected = trainer::protect(&img, &params, tarpro_core::PerturbationBudget::default())?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image.png".into());
        pngio::save_png(&job.out_dir.join(name), &protected)?;
    }
    println!("protected {} images", job.images.len());
    Ok(())
}

fn run_edit(job: &EditJob) -> Result<()> {
    use tarpro_core::editor::EditorModel;
    let editor = checkpoint::load_editor(&job.editor_checkpoint)?;
    let img = pngio::load_png(&job.image)?;
    let prompts = promptio::load_prompt_set(&job.promptset_path)?;
    let prompt = prompts
        .iter_all()
        .find(|p| p.id == job.prompt_id)
        .with_context(|| format!("prompt {} not in set", job.prompt_id))?;
    let cfg = EditorConfig {
        sampler_steps: job.sampler_steps,
        seed: Seed(0),
    };
    let edited = editor.edit(&img, prompt, &cfg)?;
    pngio::save_png(&job.out, &edited)?;
    println!(
        "edited with {} (nsfw score {:.4})",
        prompt.id,
        editor.nsfw_score(&edited)
    );
    Ok(())
}
