use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use adaradar::ablate::{default_matrix, run_ablation, write_results};
use adaradar::checkpoint::{load_checkpoint, save_checkpoint};
use adaradar::config::{load_json, AblateConfig, GenerateConfig, TrainConfig};
use adaradar::gradcheck_cmd::{gradcheck_command, micro_config};
use adaradar::infer::infer_sample;
use adaradar::reports::{write_log_csv, write_metrics};
use adaradar::trainer::{evaluate, train};
use adaradar_core::model::ModelConfig;
use adaradar_core::synth::dataset::{generate_dataset, read_dataset, write_dataset, Split};
use adaradar_core::synth::SceneGenConfig;

#[derive(Parser)]
#[command(
    name = "adaradar",
    about = "Multi-view radar semantic segmentation on synthetic Range-Angle-Doppler data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model; writes log.csv, metrics.json/csv and checkpoint.adck.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Verify analytic gradients against finite differences on a micro model.
    Gradcheck {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every flag combination of the ablation matrix.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Predict masks for one sample and write tensor + PGM previews.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    Ok(match s {
        "train" => Split::Train,
        "val" => Split::Val,
        "test" => Split::Test,
        other => bail!("unknown split {other:?} (expected train|val|test)"),
    })
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Command::Generate { config, out, seed } => {
            let mut cfg: GenerateConfig = match config {
                Some(path) => load_json(&path)?,
                None => GenerateConfig::default(),
            };
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let mut gen = SceneGenConfig::new(cfg.dims, cfg.frames);
            gen.classes = cfg.classes;
            gen.max_objects = cfg.max_objects;
            gen.noise = cfg.noise;
            gen.fg_cap = cfg.fg_cap;
            let dataset = generate_dataset(&gen, cfg.n_samples, cfg.seed)?;
            write_dataset(&out, &dataset)?;
            println!(
                "wrote {} samples ({} train / {} val / {} test) to {}",
                dataset.samples.len(),
                dataset.split(Split::Train).len(),
                dataset.split(Split::Val).len(),
                dataset.split(Split::Test).len(),
                out.display()
            );
        }
        Command::Train { config, out, seed } => {
            let mut cfg: TrainConfig = load_json(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            let dataset = read_dataset(&PathBuf::from(&cfg.dataset_dir))
                .with_context(|| format!("loading dataset {}", cfg.dataset_dir))?;
            fs::create_dir_all(&out)?;
            let outcome = train(&cfg, &dataset)?;
            write_log_csv(&out.join("log.csv"), &outcome.logs)?;
            save_checkpoint(&out.join("checkpoint.adck"), &outcome.model)?;
            let val = {
                let v = dataset.split(Split::Val);
                if v.is_empty() {
                    dataset.split(Split::Train)
                } else {
                    v
                }
            };
            let (rd, ra) = evaluate(&outcome.model, &val)?;
            write_metrics(&out, &rd, &ra, cfg.model.k)?;
            println!(
                "trained {} epochs; val mIoU rd {:.4} ra {:.4}; artifacts in {}",
                cfg.epochs,
                rd.miou,
                ra.miou,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = read_dataset(&dataset)?;
            let samples = ds.split(parse_split(&split)?);
            fs::create_dir_all(&out)?;
            let (rd, ra) = evaluate(&model, &samples)?;
            write_metrics(&out, &rd, &ra, model.config.k)?;
            println!(
                "split {split}: mIoU rd {:.4} ra {:.4}; mDice rd {:.4} ra {:.4}",
                rd.miou, ra.miou, rd.mdice, ra.mdice
            );
        }
        Command::Gradcheck { config, seed } => {
            let cfg: Option<ModelConfig> = match config {
                Some(path) => Some(load_json(&path)?),
                None => Some(micro_config()),
            };
            gradcheck_command(cfg, seed)?;
        }
        Command::Ablate { config, out, seed } => {
            let mut cfg: AblateConfig = load_json(&config)?;
            if let Some(seed) = seed {
                cfg.train.seed = seed;
            }
            let dataset = read_dataset(&PathBuf::from(&cfg.train.dataset_dir))
                .with_context(|| format!("loading dataset {}", cfg.train.dataset_dir))?;
            let rows = if cfg.rows.is_empty() {
                default_matrix()
            } else {
                cfg.rows.clone()
            };
            fs::create_dir_all(&out)?;
            let results = run_ablation(&cfg.train, &dataset, &rows);
            write_results(&out.join("ablation.csv"), &results)?;
            for r in &results {
                println!(
                    "{:<16} rd {:.4} ra {:.4} [{}]",
                    r.name,
                    r.val_miou_rd,
                    r.val_miou_ra,
                    r.error.as_deref().unwrap_or("ok")
                );
            }
        }
        Command::Infer {
            checkpoint,
            dataset,
            id,
            out,
        } => {
            let model = load_checkpoint(&checkpoint)?;
            let ds = read_dataset(&dataset)?;
            infer_sample(&model, &ds, &id, &out)?;
            println!("wrote predictions for {id} to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
