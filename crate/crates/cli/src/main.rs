//! `faircil`: run fair class-incremental experiments from a TOML config.
//!
//! Settings resolve as built-in defaults, then the `--config` file, then flags.
//! Exit codes: 0 success, 1 a verification check failed, 2 bad command line,
//! 3 invalid config, 4 unparsable input, 5 solver failure, 6 I/O failure,
//! 7 violated data contract (dimension, empty or non-finite input).

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use faircil_core::harness::{self, checks, ExperimentConfig, Overrides};
use faircil_core::{ErrorCategory, FairnessMeasure, Method};

#[derive(Parser)]
#[command(
    name = "faircil",
    version,
    about = "Fairness-aware sample weighting for class-incremental learning"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the selected methods on every seed and write metric tables.
    Run(Common),
    /// Grid search over alpha, lambda, tau and eta; writes sweep.csv with Pareto flags.
    Sweep(Common),
    /// Write the configured dataset's train/test splits as CSV.
    GenData(Common),
    /// Run the oracle suite.
    Verify {
        #[arg(long, default_value_t = 2024)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds to run, comma separated or repeated.
    #[arg(long = "seed", value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Methods to run: fsw, uniform_replay, finetune, joint.
    #[arg(long = "method", value_delimiter = ',', value_parser = parse_method)]
    methods: Vec<Method>,
    /// Fairness measure for the weighting objective and the sweep's disparity column.
    #[arg(long, value_parser = parse_measure)]
    measure: Option<FairnessMeasure>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: faircil_core::Error| e.to_string())
}

fn parse_measure(s: &str) -> Result<FairnessMeasure, String> {
    s.parse().map_err(|e: faircil_core::Error| e.to_string())
}

impl Common {
    fn resolve(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            seeds: (!self.seeds.is_empty()).then(|| self.seeds.clone()),
            methods: (!self.methods.is_empty()).then(|| self.methods.clone()),
            measure: self.measure,
            output_dir: self.out.clone(),
        });
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err
        .downcast_ref::<faircil_core::Error>()
        .map(|e| e.category())
    {
        Some(ErrorCategory::Config) => 3,
        Some(ErrorCategory::Parse) => 4,
        Some(ErrorCategory::Solver) => 5,
        Some(ErrorCategory::Io) => 6,
        Some(ErrorCategory::Contract) => 7,
        None => 1,
    }
}

fn run(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let report = harness::run_experiment(cfg)?;
    println!(
        "{:<16} {:>5} {:<16} {:>10} {:>10}",
        "method", "task", "metric", "mean", "std"
    );
    for row in report.aggregate.iter().filter(|r| r.task == 0) {
        println!(
            "{:<16} {:>5} {:<16} {:>10.4} {:>10.4}",
            row.method, row.task, row.metric, row.mean, row.std
        );
    }
    println!(
        "{} runs in {:.1?}; results in {}",
        report.runs.len(),
        report.wall_clock,
        cfg.output_dir.display()
    );
    Ok(())
}

fn sweep(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    let rows = harness::grid_sweep(cfg)?;
    let measure = cfg.train.fsw.measure;
    println!("{} grid points; Pareto-optimal:", rows.len());
    for r in rows.iter().filter(|r| r.pareto) {
        println!(
            "  {} alpha={} lambda={} tau={} eta={}: accuracy {:.4}, {measure} disparity {:.4}",
            r.method, r.alpha, r.lambda, r.tau, r.eta, r.accuracy, r.disparity
        );
    }
    println!("table in {}", cfg.output_dir.join("sweep.csv").display());
    Ok(())
}

fn gen_data(cfg: &ExperimentConfig) -> anyhow::Result<()> {
    for &seed in &cfg.seeds {
        let stream = harness::load_stream(&cfg.dataset, seed)?;
        let dir = if cfg.seeds.len() == 1 {
            cfg.output_dir.clone()
        } else {
            cfg.output_dir.join(format!("seed_{seed}"))
        };
        let paths = harness::write_stream_csv(&stream, &dir)?;
        println!(
            "seed {seed}: {} tasks, {} classes, sensitive attribute {} -> {}",
            stream.num_tasks(),
            stream.all_classes.len(),
            if stream.has_sensitive() { "yes" } else { "no" },
            show(&paths)
        );
    }
    Ok(())
}

fn show(paths: &[PathBuf]) -> String {
    paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn verify(seed: u64) -> anyhow::Result<bool> {
    let outcomes = checks::oracle_suite(seed).context("oracle suite")?;
    for o in &outcomes {
        println!("{o}");
    }
    Ok(outcomes.iter().all(|o| o.passed))
}

fn dispatch(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run(c) => run(&c.resolve()?).map(|_| true),
        Command::Sweep(c) => sweep(&c.resolve()?).map(|_| true),
        Command::GenData(c) => gen_data(&c.resolve()?).map(|_| true),
        Command::Verify { seed } => verify(seed),
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_target(false)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            log::error!("verification failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn categories_map_to_distinct_codes() {
        let errs = [
            faircil_core::Error::Config("x".into()),
            faircil_core::Error::Missing("x".into()),
            faircil_core::Error::Solver("x".into()),
        ];
        let codes: Vec<u8> = errs.into_iter().map(|e| exit_code(&e.into())).collect();
        assert_eq!(codes, vec![3, 7, 5]);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }

    #[test]
    fn flags_override_config() {
        let cli = Cli::parse_from([
            "faircil",
            "run",
            "--seed",
            "4,5",
            "--method",
            "finetune",
            "--measure",
            "eo",
            "--out",
            "o",
        ]);
        let Command::Run(c) = cli.command else {
            panic!()
        };
        let cfg = c.resolve().unwrap();
        assert_eq!(cfg.seeds, vec![4, 5]);
        assert_eq!(cfg.methods(), vec![Method::Finetune]);
        assert_eq!(cfg.train.fsw.measure, FairnessMeasure::Eo);
        assert_eq!(cfg.output_dir, std::path::Path::new("o"));
    }
}
