//! `pandr` — drive the offline-training / online-adaptation pipeline from
//! the command line.
//!
//! Every subcommand is resumable: finished stages are found by content hash
//! under `--out-dir` and reused, so `adapt` after `collect` retrains
//! nothing, and rerunning any command with an unchanged config is a no-op
//! that reproduces identical artifacts.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use pandr_core::harness::{
    ablate_mi, run_pipeline, stage_collect, stage_encoders, stage_pdvf, summarize_report,
    sweep_ga, ExperimentConfig,
};

fn config_help() -> String {
    format!(
        "Configuration keys (TOML), shown with their defaults; any subset may \
         be given and the rest fall back to these values:\n\n{}",
        ExperimentConfig::default_toml()
    )
}

#[derive(Parser)]
#[command(
    name = "pandr",
    version,
    about = "Offline policy/environment representation learning, value-function \
             regression and online policy adaptation on point-mass families",
    after_long_help = config_help()
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration file (TOML); omit to run the defaults.
    /// `--help` lists every key.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Replace the config's seed list; repeat for several seeds.
    #[arg(long)]
    seed: Vec<u64>,

    /// Replace the config's variant: PDVF, PDVF_CER, PDVF_NAGA, PAnDR_noMI,
    /// PAnDR_QA or PAnDR.
    #[arg(long)]
    variant: Option<String>,

    /// Directory for stage caches and reports.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if !self.seed.is_empty() {
            cfg.experiment.seeds = self.seed.clone();
        }
        if let Some(v) = &self.variant {
            cfg.experiment.variant = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one collector per training environment and fill the experience
    /// store (every policy rolled out on every environment), per seed.
    Collect(RunArgs),
    /// Collect (from cache if present), then train the variant's
    /// environment/policy encoders.
    TrainEncoders(RunArgs),
    /// Collect and encode (from cache if present), then fit the variant's
    /// value function over (state, env embedding, policy embedding).
    TrainPdvf(RunArgs),
    /// Run the whole pipeline and adapt in every test environment: probe,
    /// infer embeddings, ascend (or jump, for quadratic variants), and
    /// report best returns against the zero-shot baselines.
    Adapt(RunArgs),
    /// Run the four mutual-information ablation settings {(α,β), (0,β),
    /// (α,0), (0,0)} with everything else fixed and tabulate the results.
    Ablate(RunArgs),
    /// Derive return-vs-ascent-budget and return-vs-evaluation-cadence
    /// tables from dense master adaptation runs (gradient-ascent variants
    /// only).
    SweepGa(RunArgs),
    /// Summarize a previously written run report CSV.
    Report {
        /// Path to a `report-<variant>-<hash>.csv` produced by `adapt`.
        path: PathBuf,
    },
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

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Collect(args) => {
            let cfg = args.load()?;
            for &seed in &cfg.experiment.seeds {
                let art = stage_collect(&cfg, seed, &args.out_dir)?;
                println!(
                    "seed {seed}: store {} ({} transitions, manifest {})",
                    art.dir.display(),
                    art.store.n_transitions(),
                    art.store_hash
                );
            }
        }
        Cmd::TrainEncoders(args) => {
            let cfg = args.load()?;
            let variant = cfg.variant()?;
            for &seed in &cfg.experiment.seeds {
                let collect = stage_collect(&cfg, seed, &args.out_dir)?;
                let enc = stage_encoders(&cfg, variant, seed, &collect, &args.out_dir)?;
                println!("seed {seed}: encoders {}", enc.dir.display());
            }
        }
        Cmd::TrainPdvf(args) => {
            let cfg = args.load()?;
            let variant = cfg.variant()?;
            for &seed in &cfg.experiment.seeds {
                let collect = stage_collect(&cfg, seed, &args.out_dir)?;
                let enc = stage_encoders(&cfg, variant, seed, &collect, &args.out_dir)?;
                let value = stage_pdvf(&cfg, variant, seed, &collect, &enc, &args.out_dir)?;
                println!("seed {seed}: value function {}", value.dir.display());
            }
        }
        Cmd::Adapt(args) => {
            let cfg = args.load()?;
            let report = run_pipeline(&cfg, &args.out_dir)?;
            println!(
                "{} — best adapted return per test environment ({} seeds):",
                report.variant.name(),
                cfg.experiment.seeds.len()
            );
            for e in &report.per_env {
                println!(
                    "  test {} (variation {:.4}): {:.3} ± {:.3}",
                    e.test_index, e.variation, e.mean, e.std
                );
            }
            println!("  overall: {:.3} ± {:.3}", report.overall_mean, report.overall_std);
            println!(
                "  best single training policy zero-shot: {:.3}",
                report.best_training_policy_zero_shot
            );
            println!("report: {} (sha256 {})", report.report_path.display(), report.report_hash);
        }
        Cmd::Ablate(args) => {
            let cfg = args.load()?;
            let (rows, path) = ablate_mi(&cfg, &args.out_dir)?;
            let mut current = "";
            for r in &rows {
                if r.setting != current {
                    println!("{}:", r.setting);
                    current = &r.setting;
                }
                println!(
                    "  test {} (variation {:.4}): {:.3} ± {:.3}",
                    r.test_index, r.variation, r.mean, r.std
                );
            }
            println!("table: {}", path.display());
        }
        Cmd::SweepGa(args) => {
            let cfg = args.load()?;
            let tables = sweep_ga(&cfg, &args.out_dir)?;
            println!("ascent-budget table: {}", tables.steps_path.display());
            println!("evaluation-cadence table: {}", tables.frequency_path.display());
        }
        Cmd::Report { path } => {
            print!("{}", summarize_report(&path)?);
        }
    }
    Ok(())
}
