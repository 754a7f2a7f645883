//! `recovera` — batch pipeline from mobility-derived event tables to
//! recovery-milestone reports.
//!
//! Exit codes: 0 success, 1 data/validation error, 2 usage error.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use recovera_core::ingest::{parse_dataset, Dataset};
use recovera_core::milestones::compute_milestones;
use recovera_core::model::StudyConfig;
use recovera_core::report::{
    run_pipeline, write_disparity_json, write_distribution_csv, write_json_report,
    write_milestones_csv, write_report, write_sequences_csv, write_vulnerability_csv,
    PipelineOptions,
};
use recovera_core::synth::{generate_scenario, GroundTruth, ScenarioSpec};
use recovera_core::trajectory::{
    assign_sequences, regression_table, sequence_distribution, LagMode,
};
use recovera_core::vulnerability::{build_profiles, lag_percent_change, pde_scores};

mod log;
use log::Logger;

#[derive(Parser)]
#[command(
    name = "recovera",
    version,
    about = "Post-disaster population-activity recovery analytics",
    propagate_version = true
)]
struct Cli {
    /// Worker threads for per-unit computation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic scenario with planted ground truth.
    Gen {
        /// Scenario spec (scenario.json).
        #[arg(long)]
        spec: PathBuf,
        /// Output directory for the five CSVs plus ground_truth.json.
        #[arg(long)]
        out: PathBuf,
        /// Override the spec's rng_seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Detect per-unit recovery milestones; writes milestones.csv.
    Milestones(PipelineArgs),
    /// Classify milestone orderings; writes sequences.csv and distribution.csv.
    Sequences(PipelineArgs),
    /// Milestone lags for fully recovered units; writes lags.csv.
    Lags(PipelineArgs),
    /// Per-sequence robust lag regressions; writes regression.json.
    Regress(PipelineArgs),
    /// Damage and income profiles with quantiles; writes vulnerability.csv.
    Vuln(PipelineArgs),
    /// Income-quantile lag disparity table; writes disparity.json.
    Disparity(PipelineArgs),
    /// Full pipeline: all reports plus SVG charts.
    Report(PipelineArgs),
}

#[derive(Args)]
struct PipelineArgs {
    /// Study config JSON; defaults to `<data>/config.json` when present.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding visits/evac/hometags/claims/income CSVs.
    #[arg(long)]
    data: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Min-max normalize lags within each sequence before regression.
    #[arg(long)]
    normalize_lags: bool,
    /// Report consecutive milestone gaps instead of cumulative lags.
    #[arg(long)]
    consecutive_lags: bool,
}

impl PipelineArgs {
    fn load(&self, log: &Logger) -> Result<(StudyConfig, Dataset)> {
        let config_path = match &self.config {
            Some(p) => p.clone(),
            None => {
                let fallback = self.data.join("config.json");
                if !fallback.is_file() {
                    bail!(
                        "no --config given and {} does not exist",
                        fallback.display()
                    );
                }
                fallback
            }
        };
        let cfg = StudyConfig::load_json(&config_path)?;
        let start = Instant::now();
        let ds = parse_dataset(&self.data, &cfg)?;
        log.info(format_args!(
            "parsed {} units from {} in {:.2?}",
            ds.roster.len(),
            self.data.display(),
            start.elapsed()
        ));
        Ok((cfg, ds))
    }

    fn options(&self) -> PipelineOptions {
        PipelineOptions {
            lag_mode: if self.consecutive_lags {
                LagMode::Consecutive
            } else {
                LagMode::Cumulative
            },
            normalize_lags: self.normalize_lags,
            ..PipelineOptions::default()
        }
    }

    fn ensure_out(&self) -> Result<()> {
        std::fs::create_dir_all(&self.out)
            .with_context(|| format!("cannot create {}", self.out.display()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger::from_env();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log.warn(format_args!("cannot size thread pool: {e}"));
        }
    }
    match run(cli.command, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, log: &Logger) -> Result<()> {
    match command {
        Command::Gen { spec, out, seed } => {
            let mut spec = ScenarioSpec::load_json(&spec)
                .with_context(|| format!("cannot load scenario spec {}", spec.display()))?;
            if let Some(seed) = seed {
                spec.rng_seed = seed;
            }
            let start = Instant::now();
            let truth = generate_scenario(&spec, &out)?;
            log.info(format_args!(
                "generated {} units over {} weeks (seed {}) into {} in {:.2?}",
                truth.unit_count,
                truth.horizon_weeks,
                truth.rng_seed,
                out.display(),
                start.elapsed()
            ));
        }
        Command::Milestones(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let (sets, outcomes) = compute_milestones(&ds, &cfg);
            write_milestones_csv(&args.out.join("milestones.csv"), &sets, &outcomes)?;
            log.info(format_args!("wrote milestones for {} units", sets.len()));
        }
        Command::Sequences(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let (sets, _) = compute_milestones(&ds, &cfg);
            let assignments = assign_sequences(&sets, args.options().lag_mode);
            write_sequences_csv(&args.out.join("sequences.csv"), &assignments, false)?;
            let dist = sequence_distribution(&assignments)?;
            write_distribution_csv(&args.out.join("distribution.csv"), &dist)?;
            log.info(format_args!(
                "classified {} units ({} with complete milestones)",
                assignments.len(),
                assignments.iter().filter(|a| a.lags.is_some()).count()
            ));
        }
        Command::Lags(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let (sets, _) = compute_milestones(&ds, &cfg);
            let assignments = assign_sequences(&sets, args.options().lag_mode);
            write_sequences_csv(&args.out.join("lags.csv"), &assignments, true)?;
        }
        Command::Regress(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let opts = args.options();
            let (sets, _) = compute_milestones(&ds, &cfg);
            let assignments = assign_sequences(&sets, opts.lag_mode);
            let table = regression_table(&assignments, opts.huber, opts.normalize_lags);
            write_json_report(&args.out.join("regression.json"), &table)?;
        }
        Command::Vuln(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let (scores, warnings) = pde_scores(&ds.claims, &cfg)?;
            for w in &warnings {
                log.warn(format_args!("{w:?}"));
            }
            let profiles = build_profiles(&ds.roster, &scores, &ds.income, &cfg)?;
            write_vulnerability_csv(&args.out.join("vulnerability.csv"), &profiles)?;
        }
        Command::Disparity(args) => {
            let (cfg, ds) = args.load(log)?;
            args.ensure_out()?;
            let opts = args.options();
            let (sets, _) = compute_milestones(&ds, &cfg);
            let assignments = assign_sequences(&sets, opts.lag_mode);
            let (scores, _) = pde_scores(&ds.claims, &cfg)?;
            let profiles = build_profiles(&ds.roster, &scores, &ds.income, &cfg)?;
            let table = lag_percent_change(&assignments, &profiles, &cfg);
            write_disparity_json(&args.out.join("disparity.json"), &table)?;
        }
        Command::Report(args) => {
            let (cfg, ds) = args.load(log)?;
            let seed = GroundTruth::load_json(&args.data.join("ground_truth.json"))
                .ok()
                .map(|t| t.rng_seed);
            let start = Instant::now();
            let bundle = run_pipeline(&ds, &cfg, args.options(), seed)?;
            for w in &bundle.merge_warnings {
                log.warn(format_args!("{w:?}"));
            }
            let files = write_report(&bundle, &args.out)?;
            log.info(format_args!(
                "report: {} files into {} in {:.2?}",
                files.len(),
                args.out.display(),
                start.elapsed()
            ));
        }
    }
    Ok(())
}
