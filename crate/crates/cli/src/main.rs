//! `milab`: command-line runner for the synthetic multi-instance experiments.
//!
//! Exit status: 0 on success, 2 for invalid input or configuration, 3 when
//! training fails, 1 for I/O and other errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use milab_core::experiment::{read_json, write_json, Manifest, RegionStats};
use milab_core::train::par_forward;
use milab_core::{
    average_precision, generate, render_heatmap, run_table1, run_theory_report, run_toy_multilabel, train, ArchKind, Checkpoint,
    ExperimentConfig, HeatmapSpec, LossKind, MilError, Precision, Scalar, ToyConfig,
};
use serde_json::json;

#[derive(Parser)]
#[command(name = "milab", version, about = "Single-instance multi-instance learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (CSV) and the materialized spec.
    Generate(Common),
    /// Train one (loss, architecture) model and evaluate it.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "si")]
        loss: LossArg,
        #[arg(long, value_enum, default_value = "two-layer")]
        arch: ArchArg,
    },
    /// Train the full loss x architecture x seed grid and tabulate AP.
    Table1(Common),
    /// Render a score heatmap from a checkpoint.
    Heatmap {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        nx: usize,
        #[arg(long, default_value_t = 200)]
        ny: usize,
    },
    /// Compare SI and soft-NOR bag objectives on a toy multi-label problem.
    ToyMultilabel {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        labels: Option<usize>,
        /// Hidden width of the shared trunk.
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Closed-form quantities.
    Theory {
        #[command(subcommand)]
        what: TheoryCommand,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Optimal scores and tolerance verdicts for a spec, as JSON.
    Report(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Multiplies the number of positive bags.
    #[arg(long)]
    scale: Option<f64>,
    #[arg(long)]
    skew: Option<f64>,
    /// Comma-separated learning rates.
    #[arg(long, value_delimiter = ',')]
    lr: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    precision: Option<PrecisionArg>,
    /// Use the long 100 000-epoch training budget.
    #[arg(long)]
    full_budget: bool,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Si,
    Uc,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Linear,
    TwoLayer,
}

#[derive(Clone, Copy, ValueEnum)]
enum PrecisionArg {
    F32,
    F64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &MilError) -> u8 {
    if e.is_validation() || matches!(e, MilError::Config(_) | MilError::Json(_)) {
        2
    } else if matches!(e, MilError::Training(_)) {
        3
    } else {
        1
    }
}

type Result<T> = milab_core::Result<T>;

/// Prints a line to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(c) => cmd_generate(&c),
        Command::Train { common, loss, arch } => {
            let loss = match loss {
                LossArg::Si => LossKind::Si,
                LossArg::Uc => LossKind::Uc,
            };
            let arch = match arch {
                ArchArg::Linear => ArchKind::Linear,
                ArchArg::TwoLayer => ArchKind::TwoLayer,
            };
            let cfg = experiment_config(&common)?;
            match cfg.precision {
                Precision::F32 => cmd_train::<f32>(&cfg, loss, arch),
                Precision::F64 => cmd_train::<f64>(&cfg, loss, arch),
            }
        }
        Command::Table1(c) => {
            let cfg = experiment_config(&c)?;
            let table = run_table1(&cfg)?;
            emit(table.render().trim_end());
            Ok(())
        }
        Command::Heatmap { checkpoint, out, nx, ny } => {
            let ck: Checkpoint = read_json(&checkpoint)?;
            let spec = HeatmapSpec { resolution: (nx, ny), ..HeatmapSpec::default() };
            let grid = render_heatmap(&ck.to_model::<f64>()?, &spec)?;
            fs::create_dir_all(&out)?;
            grid.write(&out, "heatmap")?;
            let mut manifest = Manifest::new("heatmap", &spec, ck.config_digest.clone(), vec![ck.seed], Precision::F64);
            manifest.files = vec!["heatmap.csv".into(), "heatmap.pgm".into()];
            manifest.write(&out)
        }
        Command::ToyMultilabel { config, seed, epochs, labels, hidden, out } => {
            let mut cfg: ToyConfig = match &config {
                Some(p) => read_json(p)?,
                None => ToyConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.epochs = e;
            }
            if let Some(k) = labels {
                cfg.n_labels = k;
            }
            if let Some(h) = hidden {
                cfg.hidden = h;
            }
            if out.is_some() {
                cfg.output_dir = out;
            }
            let report = run_toy_multilabel(&cfg)?;
            emit(&serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Theory { what: TheoryCommand::Report(c) } => {
            let cfg = experiment_config(&c)?;
            let report = run_theory_report(&cfg.spec)?;
            match &c.out {
                Some(path) => write_json(path, &report),
                None => {
                    emit(&serde_json::to_string_pretty(&report)?);
                    Ok(())
                }
            }
        }
    }
}

/// Loads `--config` (or defaults) and applies flag overrides.
fn experiment_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg: ExperimentConfig = match &c.config {
        Some(p) => read_json(p)?,
        None => ExperimentConfig::default(),
    };
    if c.full_budget {
        cfg.train.epochs = 100_000;
    }
    if let Some(e) = c.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = c.seed {
        cfg.seeds = vec![s];
        cfg.spec.seed = s;
    }
    if let Some(f) = c.scale {
        cfg.spec = cfg.spec.scaled(f)?;
    }
    if let Some(k) = c.skew {
        cfg.spec.skew = k;
    }
    if let Some(lr) = &c.lr {
        cfg.train.learning_rates = lr.clone();
    }
    if let Some(p) = c.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if c.out.is_some() {
        cfg.output_dir = c.out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn output_dir(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.output_dir.as_deref().ok_or_else(|| MilError::Config("an output directory (--out) is required".into()))
}

fn cmd_generate(c: &Common) -> Result<()> {
    let cfg = experiment_config(c)?;
    let dir = output_dir(&cfg)?;
    let ds = generate::<f64>(&cfg.spec)?;
    fs::create_dir_all(dir)?;
    ds.write_csv(fs::File::create(dir.join("dataset.csv"))?)?;
    write_json(&dir.join("spec.json"), &cfg.spec)?;
    let digest = cfg.digest();
    let mut manifest = Manifest::new("generate", &cfg.spec, digest, vec![cfg.spec.seed], Precision::F64);
    manifest.files = vec!["dataset.csv".into(), "spec.json".into()];
    manifest.write(dir)?;
    emit(&format!("wrote {} instances to {}", ds.len(), dir.display()));
    Ok(())
}

fn cmd_train<T: Scalar>(cfg: &ExperimentConfig, loss: LossKind, arch: ArchKind) -> Result<()> {
    let dir = output_dir(cfg)?;
    let seed = cfg.seeds[0];
    let spec = cfg.spec_for(seed);
    let ds = generate::<T>(&spec)?;
    let train_cfg = cfg.train_for(seed);
    let trained = train(&ds.training_view(), cfg.instance_loss(loss), arch.build(ds.dim()), &train_cfg)?;
    let scores = par_forward(&trained.model, ds.features())?;
    let curve = average_precision(&scores, ds.truth_labels())?;
    let region = RegionStats::compute(&spec, &ds, &scores)?;

    fs::create_dir_all(dir)?;
    let checkpoint = trained.checkpoint(loss.as_str(), &train_cfg);
    write_json(&dir.join("checkpoint.json"), &checkpoint)?;
    curve.write_csv(dir.join("pr.csv"))?;
    render_heatmap(&trained.model, &HeatmapSpec::default())?.write(dir, "heatmap")?;
    let summary = json!({
        "loss": loss.as_str(),
        "arch": arch.as_str(),
        "seed": seed,
        "ap": curve.ap,
        "chosen_lr": trained.chosen_lr,
        "final_train_loss": trained.final_train_loss.as_f64(),
        "runs": trained.runs,
        "region": region,
        "loss_trace": trained.loss_trace.iter().map(|(e, v)| (*e, v.as_f64())).collect::<Vec<_>>(),
    });
    write_json(&dir.join("result.json"), &summary)?;
    let mut manifest = Manifest::new("train", cfg, cfg.digest(), vec![seed], cfg.precision);
    manifest.files = ["checkpoint.json", "pr.csv", "heatmap.csv", "heatmap.pgm", "result.json"].map(String::from).to_vec();
    manifest.write(dir)?;
    emit(&format!(
        "{} {} seed {seed}: AP {:.4}, lr {}, final loss {:.6}",
        loss.as_str(),
        arch.as_str(),
        curve.ap,
        trained.chosen_lr,
        trained.final_train_loss.as_f64()
    ));
    Ok(())
}
