//! `inkmotion`: command-line driver for the handwriting pipeline.
//!
//! Every subcommand prints exactly one JSON summary line on stdout.
//! Diagnostics and logs go to stderr.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use inkmotion::augment::augment_dataset;
use inkmotion::autoencoder::ChannelAutoencoders;
use inkmotion::classifiers::ModelKind;
use inkmotion::experiments::{
    emit_report, emit_table, run_ablation, run_experiment, ExperimentConfig, ExperimentReport, SplitKind,
};
use inkmotion::preprocess::{preprocess_dataset, read_resampled, write_resampled};
use inkmotion::sensor_data::{load_dataset, write_dataset};
use inkmotion::{seed, synth};

#[derive(Parser)]
#[command(name = "inkmotion", version, about = "Motion-based handwriting recognition pipeline")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

/// Flags shared by commands that read an experiment config. Flags override
/// the file.
#[derive(Args)]
struct Common {
    /// JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, env = "INKMOTION_SEED")]
    seed: Option<u64>,
    /// Resampled length N.
    #[arg(long)]
    features: Option<usize>,
}

#[derive(Args)]
struct Pipeline {
    #[command(flatten)]
    common: Common,
    /// Dataset root in the standard layout.
    #[arg(long)]
    dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// knn, svm, cnn or rnn.
    #[arg(long, value_parser = parse_model)]
    model: Option<ModelKind>,
    /// random or subject.
    #[arg(long, value_parser = parse_split)]
    split: Option<SplitKind>,
    /// Augment the training partition.
    #[arg(long, value_enum)]
    aug: Option<Switch>,
    /// Denoise with per-channel autoencoders.
    #[arg(long, value_enum)]
    ae: Option<Switch>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, env = "INKMOTION_SEED", default_value_t = 0)]
        seed: u64,
        /// Scales sensor noise and repetition variation.
        #[arg(long, default_value_t = 1.0)]
        noise_scale: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate, zero-origin and resample a dataset into one CSV.
    Preprocess {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Append augmented copies to a resampled CSV.
    Augment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the yaw, pitch and roll autoencoders on a resampled CSV.
    TrainAe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment and write its report and model.
    Run(Pipeline),
    /// Run the model × augmentation × autoencoder × split grid.
    Ablate(Pipeline),
    /// Re-emit report files from a report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_model(s: &str) -> Result<ModelKind, String> {
    s.parse()
}

fn parse_split(s: &str) -> Result<SplitKind, String> {
    s.parse()
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize(de).map_err(|e| {
                anyhow::anyhow!("config {}: at `{}`: {}", path.display(), e.path(), e.inner())
            })?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(n) = common.features {
        cfg.n_features = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn pipeline_config(p: &Pipeline) -> Result<ExperimentConfig> {
    let mut cfg = load_config(&p.common)?;
    if let Some(m) = p.model {
        cfg.model = m;
    }
    if let Some(s) = p.split {
        cfg.split.kind = s;
    }
    match p.aug {
        Some(Switch::On) => cfg.augment = Some(cfg.augment.take().unwrap_or_default()),
        Some(Switch::Off) => cfg.augment = None,
        None => {}
    }
    match p.ae {
        Some(Switch::On) => cfg.autoencoder = Some(cfg.autoencoder.take().unwrap_or_default()),
        Some(Switch::Off) => cfg.autoencoder = None,
        None => {}
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load(dir: &Path) -> Result<inkmotion::Dataset> {
    load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    match cli.command {
        Command::Synth {
            subjects,
            reps,
            seed,
            noise_scale,
            out,
        } => {
            if subjects == 0 || reps == 0 {
                bail!("--subjects and --reps must be at least 1");
            }
            let d = synth::gen_dataset_with(&synth::SynthConfig {
                n_subjects: subjects,
                reps,
                seed,
                noise_scale,
            });
            write_dataset(&d, &out).with_context(|| format!("writing {}", out.display()))?;
            Ok(json!({"command": "synth", "sequences": d.sequences.len(), "subjects": subjects, "out": out}))
        }
        Command::Preprocess { common, dataset, out } => {
            let cfg = load_config(&common)?;
            let rows = preprocess_dataset(&load(&dataset)?, cfg.n_features, cfg.preprocess)?;
            write_resampled(&rows, &out)?;
            Ok(json!({"command": "preprocess", "rows": rows.len(), "n_features": cfg.n_features, "out": out}))
        }
        Command::Augment { common, input, out } => {
            let cfg = load_config(&common)?;
            let rows = read_resampled(&input)?;
            let mut a = cfg.augment.clone().unwrap_or_default();
            a.seed = seed::derive_indexed(cfg.seed, "augment", a.seed);
            let all = augment_dataset(&rows, &a)?;
            write_resampled(&all, &out)?;
            Ok(json!({"command": "augment", "rows_in": rows.len(), "rows_out": all.len(), "out": out}))
        }
        Command::TrainAe { common, input, out } => {
            let cfg = load_config(&common)?;
            let rows = read_resampled(&input)?;
            let ae_cfg = cfg.autoencoder.clone().unwrap_or_default();
            let aes = ChannelAutoencoders::fit(&rows, &ae_cfg, seed::derive(cfg.seed, "autoencoder"))?;
            create_dir(&out)?;
            aes.save(&out)?;
            let loss: Vec<f64> = aes.curves.iter().map(|c| c.last().copied().unwrap_or(f64::NAN)).collect();
            Ok(json!({"command": "train-ae", "rows": rows.len(), "final_loss": loss, "out": out}))
        }
        Command::Run(p) => {
            let cfg = pipeline_config(&p)?;
            let data = load(&p.dataset)?;
            let outcome = run_experiment(&cfg, &data)?;
            emit_report(&outcome.report, &p.out)?;
            let model_dir = p.out.join("model");
            create_dir(&model_dir)?;
            outcome.model.save(&model_dir, &cfg.models)?;
            if let Some(aes) = &outcome.autoencoders {
                let ae_dir = p.out.join("autoencoders");
                create_dir(&ae_dir)?;
                aes.save(&ae_dir)?;
            }
            let a = outcome.report.accuracies;
            Ok(json!({
                "command": "run",
                "model": cfg.model,
                "split": cfg.split.kind,
                "train_acc": a.train,
                "dev_acc": a.dev,
                "test_acc": a.test,
                "runtime_s": outcome.report.runtime_s,
                "out": p.out,
            }))
        }
        Command::Ablate(p) => {
            let cfg = pipeline_config(&p)?;
            let data = load(&p.dataset)?;
            let started = Instant::now();
            let table = run_ablation(&cfg, &data)?;
            emit_table(&table, &p.out)?;
            let failed: Vec<String> = table
                .cells
                .iter()
                .filter_map(|c| c.outcome.as_ref().err().map(|e| format!("{}: {e}", c.slug())))
                .collect();
            for f in &failed {
                eprintln!("cell failed: {f}");
            }
            if !table.any_succeeded() {
                bail!("every ablation cell failed");
            }
            Ok(json!({
                "command": "ablate",
                "cells": table.cells.len(),
                "failed": failed.len(),
                "runtime_s": started.elapsed().as_secs_f64(),
                "out": p.out,
            }))
        }
        Command::Report { input, out } => {
            let text = fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let report: ExperimentReport = serde_path_to_error::deserialize(de)
                .map_err(|e| anyhow::anyhow!("{}: at `{}`: {}", input.display(), e.path(), e.inner()))?;
            emit_report(&report, &out)?;
            Ok(json!({"command": "report", "test_acc": report.accuracies.test, "out": out}))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: --jobs: {e}");
            return ExitCode::FAILURE;
        }
    }
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
