use std::collections::BTreeSet;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::Rng;

use smoothmix::io::{ingest_csv, ConfigEcho, ErrorReport, OutputBundle};
use smoothmix::simulation::{run_replications, Estimator, StudyDesign, StudyId, DEFAULT_STUDY_SIZE};
use smoothmix::{fit_adaptive, fit_fixed_bandwidth, Error, FitConfig, Result};

#[derive(Parser)]
#[command(name = "smoothmix", version, about = "Component densities of mixtures with known proportions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit component densities to a CSV of `x,alpha_1,...,alpha_M`.
    Fit(FitArgs),
    /// Run a simulation study and write the replication report.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct EngineArgs {
    /// Likelihood-change tolerance.
    #[arg(long = "tol", default_value_t = 1e-5)]
    tol: f64,
    #[arg(long = "max-iter", default_value_t = 500)]
    max_iter: usize,
    #[arg(long = "grid-size", default_value_t = smoothmix::grid::DEFAULT_GRID_SIZE)]
    grid_size: usize,
    /// Fixed grid range `lo,hi`.
    #[arg(long = "grid-range", value_parser = parse_range, allow_hyphen_values = true)]
    grid_range: Option<(f64, f64)>,
    /// Master seed; drawn from system entropy (and recorded) when absent.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    /// Fixed bandwidths `h1,h2,...`; selects the fixed-bandwidth fit.
    #[arg(long, value_delimiter = ',')]
    bandwidth: Option<Vec<f64>>,
    /// Expected number of components (checked against the header).
    #[arg(long)]
    components: Option<usize>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct SimulateArgs {
    /// Study 1, 2 or 3.
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Comma-separated subset of `proposed,simple`.
    #[arg(long, default_value = "proposed", value_delimiter = ',')]
    estimators: Vec<String>,
    /// Sample size for Studies 1 and 2.
    #[arg(long, default_value_t = DEFAULT_STUDY_SIZE)]
    n: usize,
    #[arg(long, default_value = "out")]
    output: PathBuf,
    #[command(flatten)]
    engine: EngineArgs,
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (lo, hi) = s
        .split_once(',')
        .ok_or_else(|| format!("expected 'lo,hi', got '{s}'"))?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((lo, hi))
}

impl EngineArgs {
    /// Config plus whether the seed came from system entropy.
    fn config(&self) -> (FitConfig, bool) {
        let (seed, from_entropy) = match self.seed {
            Some(s) => (s, false),
            None => (rand::rng().random(), true),
        };
        let config = FitConfig {
            tolerance: self.tol,
            max_iterations: self.max_iter,
            grid_size: self.grid_size,
            grid_range: self.grid_range,
            seed,
            ..FitConfig::default()
        };
        (config, from_entropy)
    }
}

fn run_fit(args: &FitArgs) -> Result<()> {
    let sample = ingest_csv(&args.input, args.components)?;
    let (config, from_entropy) = args.engine.config();
    let (fit, mode) = match &args.bandwidth {
        Some(h) => (fit_fixed_bandwidth(&sample, h, &config)?, "fixed"),
        None => (fit_adaptive(&sample, &config)?, "adaptive"),
    };
    let echo = ConfigEcho {
        input: Some(args.input.display().to_string()),
        mode: mode.into(),
        tolerance: config.tolerance,
        max_iterations: config.max_iterations,
        grid_size: fit.grid.len(),
        grid_range: (fit.grid.x0(), fit.grid.end()),
        seed: config.seed,
        seed_from_entropy: from_entropy,
        kernel: config.kernel.name().into(),
    };
    let bundle = OutputBundle::from_fit(&sample, &fit, echo)?;
    bundle.write_to(&args.output)?;
    eprintln!(
        "fit ({mode}): n = {}, bandwidths = {:?}, iterations = {}, converged = {}, loglik = {:.6}",
        sample.len(),
        fit.bandwidths,
        fit.iterations,
        fit.converged,
        fit.final_loglik()
    );
    Ok(())
}

fn run_simulate(args: &SimulateArgs) -> Result<()> {
    let study: StudyId = args.study.parse()?;
    let estimators = args
        .estimators
        .iter()
        .map(|e| e.parse())
        .collect::<Result<BTreeSet<Estimator>>>()?;
    let (config, _) = args.engine.config();
    let design = StudyDesign::for_study(study, args.n);
    let report = run_replications(&design, args.reps, &config, &estimators, config.seed)?;
    fs::create_dir_all(&args.output)?;
    fs::write(args.output.join("report.csv"), report.to_csv()?)?;
    fs::write(args.output.join("report.json"), report.to_json()?)?;
    for s in &report.summaries {
        let ise: Vec<String> = s
            .components
            .iter()
            .map(|c| format!("{:.4} (se {:.4})", 100.0 * c.mean_ise, 100.0 * c.se_ise))
            .collect();
        eprintln!("study {study} {}: 100 x mean ISE = {}", s.estimator, ise.join(", "));
    }
    if report.failed > 0 {
        eprintln!("{} of {} replicates failed and were excluded", report.failed, report.replications);
    }
    Ok(())
}

fn report_error(e: &Error, output: &std::path::Path) {
    let doc = ErrorReport::from(e);
    let json = serde_json::to_string_pretty(&doc).unwrap_or_else(|_| format!("{{\"error\":{:?}}}", e.to_string()));
    if fs::create_dir_all(output).is_ok() {
        let _ = fs::write(output.join("error.json"), &json);
    }
    eprintln!("{json}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (result, output) = match &cli.command {
        Command::Fit(args) => (run_fit(args), &args.output),
        Command::Simulate(args) => (run_simulate(args), &args.output),
    };
    match result {
        Ok(()) => {
            let _ = fs::remove_file(output.join("error.json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            report_error(&e, output);
            ExitCode::FAILURE
        }
    }
}
