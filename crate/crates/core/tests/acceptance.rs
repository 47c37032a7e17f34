//! Acceptance criteria at their stated tolerances and time limits.
//!
//! Runs as a plain binary so every verdict line reaches the terminal:
//! `cargo test -p faircil-core --test acceptance`.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use faircil_core::datasets::ToyConfig;
use faircil_core::harness::checks::{self, CheckOutcome};
use faircil_core::harness::{run_experiment, DatasetSpec, ExperimentConfig, ExperimentReport};
use faircil_core::trainer::{LrSchedule, Method};
use faircil_core::FairnessMeasure;

struct Verdict {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    elapsed: Duration,
    limit: Option<Duration>,
}

impl Verdict {
    fn from_check(id: usize, c: CheckOutcome, limit: Duration) -> Self {
        Verdict {
            id,
            name: c.name,
            passed: c.passed,
            detail: c.detail,
            elapsed: c.elapsed,
            limit: Some(limit),
        }
    }

    fn ok(&self) -> bool {
        self.passed && self.limit.is_none_or(|l| self.elapsed < l)
    }

    fn print(&self) {
        let tag = if self.ok() { "PASS" } else { "FAIL" };
        let limit = self
            .limit
            .map_or(String::new(), |l| format!(" / limit {l:?}"));
        println!(
            "{tag} criterion {} {}: {} [{:.2?}{limit}]",
            self.id, self.name, self.detail, self.elapsed
        );
    }
}

/// The desk-scale toy setting: 500 samples per class, two tasks, 32 buffer slots per group.
fn toy_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSpec::Toy(ToyConfig::new(500)),
        seeds: (0..5).collect(),
        methods: Vec::new(),
        output_dir: out.to_path_buf(),
        ..Default::default()
    };
    let t = &mut cfg.train;
    t.eta = 0.01;
    t.tau = 1.0;
    t.epochs = 10;
    t.batch_size = 64;
    t.momentum = 0.9;
    t.hidden_dim = 32;
    t.buffer_per_group = 32;
    t.schedule = LrSchedule::Cosine;
    t.fsw.alpha = 0.001;
    t.fsw.lambda = 0.5;
    t.fsw.measure = FairnessMeasure::Eer;
    t.fsw.weight_first_task = false;
    cfg
}

fn toy_direction(report: &ExperimentReport, elapsed: Duration) -> Verdict {
    let seeds: Vec<u64> = report
        .runs
        .iter()
        .filter(|r| r.method == Method::Fsw)
        .map(|r| r.seed)
        .collect();
    let get = |m, s| report.run(m, s).expect("every method ran on every seed");
    let final_eer = |m, s| get(m, s).history.disparity.last().expect("snapshots").eer;
    let wins = seeds
        .iter()
        .filter(|&&s| final_eer(Method::Fsw, s) < final_eer(Method::UniformReplay, s))
        .count();
    let mean_final = |m| {
        seeds
            .iter()
            .map(|&s| get(m, s).report.final_accuracy)
            .sum::<f64>()
            / seeds.len() as f64
    };
    let acc_gap = (mean_final(Method::Fsw) - mean_final(Method::UniformReplay)).abs();
    // accuracy on the first task after the second
    let first_task_after = |m, s| get(m, s).history.accuracy[1][0];
    let forgetting: Vec<f64> = seeds
        .iter()
        .map(|&s| first_task_after(Method::Joint, s) - first_task_after(Method::Finetune, s))
        .collect();
    let passed = wins >= 4 && acc_gap <= 0.03 && forgetting.iter().all(|&g| g >= 0.20);
    Verdict {
        id: 5,
        name: "toy_direction",
        passed,
        detail: format!(
            "fsw lower EER in {wins}/{} seeds; |mean final acc diff| {:.4}; joint - finetune on task 1 {:.3?}",
            seeds.len(),
            acc_gap,
            forgetting
        ),
        elapsed,
        limit: Some(Duration::from_secs(120)),
    }
}

fn near_binary(report: &ExperimentReport) -> Verdict {
    let (near, total) = report
        .runs
        .iter()
        .flat_map(|r| &r.history.diagnostics)
        .fold((0, 0), |(a, b), d| (a + d.near_binary, b + d.num_weights));
    let frac = near as f64 / total.max(1) as f64;
    Verdict {
        id: 6,
        name: "near_binary_weights",
        passed: total > 0 && frac >= 0.90,
        detail: format!("{near}/{total} weights within 1e-6 of 0 or 1 ({:.4})", frac),
        elapsed: Duration::ZERO,
        limit: None,
    }
}

fn non_inferiority(report: &ExperimentReport) -> Verdict {
    let diags: Vec<_> = report
        .runs
        .iter()
        .flat_map(|r| &r.history.diagnostics)
        .collect();
    let worst = diags
        .iter()
        .map(|d| d.objective_at_optimum - d.objective_at_ones)
        .fold(f64::NEG_INFINITY, f64::max);
    let bad = diags
        .iter()
        .filter(|d| d.objective_at_optimum > d.objective_at_ones + 1e-9)
        .count();
    Verdict {
        id: 7,
        name: "objective_non_inferiority",
        passed: !diags.is_empty() && bad == 0,
        detail: format!(
            "{} epochs checked, {bad} violations, max(opt - ones) {worst:.3e}",
            diags.len()
        ),
        elapsed: Duration::ZERO,
        limit: None,
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable output dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|e| e == "csv") {
                let rel = p
                    .strip_prefix(dir)
                    .expect("inside dir")
                    .display()
                    .to_string();
                out.push((rel, fs::read(&p).expect("readable csv")));
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path, elapsed: Duration) -> Verdict {
    let (a, b) = (csv_files(first), csv_files(second));
    let differing: Vec<&str> = a
        .iter()
        .zip(&b)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    let same_set = a.iter().map(|x| &x.0).eq(b.iter().map(|x| &x.0));
    Verdict {
        id: 9,
        name: "determinism",
        passed: same_set && !a.is_empty() && differing.is_empty(),
        detail: format!("{} csv files compared, differing {:?}", a.len(), differing),
        elapsed,
        limit: None,
    }
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let seed = 2024;
    let limits = [10, 5, 5, 5];
    let oracle = [
        checks::lp_soundness(100, seed),
        checks::taylor_fidelity(20, seed + 1),
        checks::unfair_forgetting(50, seed + 2),
        checks::gradient_check(50, seed + 3),
    ];
    for (i, (c, limit)) in oracle.into_iter().zip(limits).enumerate() {
        let c = c.expect("oracle check runs");
        verdicts.push(Verdict::from_check(i + 1, c, Duration::from_secs(limit)));
    }

    let first = tempfile::tempdir().expect("temp dir");
    let second = tempfile::tempdir().expect("temp dir");
    let start = Instant::now();
    let report = run_experiment(&toy_config(first.path())).expect("toy experiment runs");
    let toy_time = start.elapsed();
    verdicts.push(toy_direction(&report, toy_time));
    verdicts.push(near_binary(&report));
    verdicts.push(non_inferiority(&report));

    let metrics = checks::metric_examples().expect("metric examples run");
    verdicts.push(Verdict {
        limit: None,
        ..Verdict::from_check(8, metrics, Duration::ZERO)
    });

    let start = Instant::now();
    run_experiment(&toy_config(second.path())).expect("second toy run");
    verdicts.push(determinism(first.path(), second.path(), start.elapsed()));

    println!();
    for v in &verdicts {
        v.print();
    }
    let failed = verdicts.iter().filter(|v| !v.ok()).count();
    println!(
        "\nacceptance: {}/{} criteria passed",
        verdicts.len() - failed,
        verdicts.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
