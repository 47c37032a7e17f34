//! Experiment plumbing: TOML configs, multi-seed runs, hyperparameter sweeps and CSV output.
//!
//! Precedence for every setting is built-in default < config file < command-line override.
//! Everything written under the output directory except `manifest.json` is a pure function
//! of the config, so two runs of the same config produce byte-identical CSVs.

pub mod checks;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::{
    build_stream, gen_color_biased, gen_toy, ingest, ColorBiasConfig, DataFormat, TaskStream,
    ToyConfig,
};
use crate::error::{Error, Result};
use crate::fsw::{weight_histogram, FairnessMeasure, ALPHA_GRID, LAMBDA_GRID};
use crate::metrics::MetricsReport;
use crate::tensor::Sample;
use crate::trainer::{run_method, Method, RunHistory, TrainConfig, ETA_GRID, TAU_GRID};

/// Where the task stream comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    /// Three 2-D Gaussians split into two tasks.
    Toy(ToyConfig),
    ColorBiased(ColorBiasConfig),
    Ingest(IngestSpec),
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Toy(ToyConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestSpec {
    pub train: DataSource,
    pub test: DataSource,
    pub num_tasks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSource {
    pub path: PathBuf,
    #[serde(flatten)]
    pub format: DataFormat,
}

impl DataSource {
    fn resolve(&mut self, base: &Path) {
        self.path = base.join(&self.path);
        if let DataFormat::Idx { labels } = &mut self.format {
            *labels = base.join(&*labels);
        }
    }
}

/// Hyperparameter grids for [`grid_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub tau: Vec<f64>,
    pub eta: Vec<f64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            alpha: ALPHA_GRID.to_vec(),
            lambda: LAMBDA_GRID.to_vec(),
            tau: TAU_GRID.to_vec(),
            eta: ETA_GRID.to_vec(),
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [
            ("alpha", &self.alpha),
            ("lambda", &self.lambda),
            ("tau", &self.tau),
            ("eta", &self.eta),
        ] {
            if grid.is_empty() {
                return Err(Error::Config(format!("sweep grid {name} is empty")));
            }
        }
        Ok(())
    }

    /// Cartesian product in (alpha, lambda, tau, eta) order, eta fastest.
    pub fn points(&self) -> Vec<[f64; 4]> {
        let mut out = Vec::new();
        for &a in &self.alpha {
            for &l in &self.lambda {
                for &t in &self.tau {
                    for &e in &self.eta {
                        out.push([a, l, t, e]);
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub seeds: Vec<u64>,
    /// Empty means every method.
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub histogram_bins: usize,
    pub train: TrainConfig,
    pub sweep: SweepGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSpec::default(),
            seeds: (0..5).collect(),
            methods: Vec::new(),
            output_dir: PathBuf::from("results"),
            histogram_bins: 20,
            train: TrainConfig::default(),
            sweep: SweepGrid::default(),
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub methods: Option<Vec<Method>>,
    pub measure: Option<FairnessMeasure>,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config", e.to_string()))
    }

    /// Reads a config file; relative ingest paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = toml::from_str::<Self>(&text)
            .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
        if let DatasetSpec::Ingest(spec) = &mut cfg.dataset {
            let base = path.parent().unwrap_or(Path::new("."));
            spec.train.resolve(base);
            spec.test.resolve(base);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(m) = &o.methods {
            self.methods = m.clone();
        }
        if let Some(m) = o.measure {
            self.train.fsw.measure = m;
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("duplicate seeds".into()));
        }
        if self.histogram_bins == 0 {
            return Err(Error::Config("histogram_bins must be positive".into()));
        }
        match &self.dataset {
            DatasetSpec::Toy(t) if t.n_per_class == 0 || t.n_test_per_class == 0 => {
                return Err(Error::Config("toy dataset needs samples per class".into()))
            }
            DatasetSpec::Ingest(s) if s.num_tasks == 0 => {
                return Err(Error::Config("num_tasks must be positive".into()))
            }
            _ => {}
        }
        self.train.validate()
    }

    /// Selected methods in canonical order.
    pub fn methods(&self) -> Vec<Method> {
        Method::ALL
            .into_iter()
            .filter(|m| self.methods.is_empty() || self.methods.contains(m))
            .collect()
    }
}

/// Produces the stream for a seed. Ingested data is read once and shared.
enum StreamSource {
    Generated(DatasetSpec),
    Loaded(Arc<TaskStream>),
}

impl StreamSource {
    fn new(spec: &DatasetSpec) -> Result<Self> {
        match spec {
            DatasetSpec::Ingest(s) => {
                let train = ingest(&s.train.path, &s.train.format)?;
                let test = ingest(&s.test.path, &s.test.format)?;
                Ok(StreamSource::Loaded(Arc::new(build_stream(
                    train,
                    test,
                    s.num_tasks,
                )?)))
            }
            other => Ok(StreamSource::Generated(other.clone())),
        }
    }

    fn stream(&self, seed: u64) -> Result<Arc<TaskStream>> {
        match self {
            StreamSource::Loaded(s) => Ok(Arc::clone(s)),
            StreamSource::Generated(DatasetSpec::Toy(c)) => Ok(Arc::new(gen_toy(c, seed)?)),
            StreamSource::Generated(DatasetSpec::ColorBiased(c)) => {
                Ok(Arc::new(gen_color_biased(c, seed)?))
            }
            StreamSource::Generated(DatasetSpec::Ingest(_)) => {
                unreachable!("ingest specs are loaded eagerly")
            }
        }
    }
}

/// Builds the stream a config would train on for `seed`.
pub fn load_stream(spec: &DatasetSpec, seed: u64) -> Result<TaskStream> {
    let s = StreamSource::new(spec)?.stream(seed)?;
    Ok(Arc::unwrap_or_clone(s))
}

fn check_measure(stream: &TaskStream, measure: FairnessMeasure) -> Result<()> {
    if measure.needs_sensitive() && !stream.has_sensitive() {
        return Err(Error::Config(format!(
            "measure {measure} needs a sensitive attribute but the dataset has none"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub report: MetricsReport,
    pub history: RunHistory,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub metric: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub task: usize,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation across seeds; 0 for a single seed.
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Serialize)]
struct HistogramCsvRow<'a> {
    seed: u64,
    task: usize,
    epoch: usize,
    group: &'a str,
    bin_lo: f64,
    bin_hi: f64,
    count: usize,
}

#[derive(Debug, Clone, Serialize)]
struct DiagnosticsCsvRow {
    seed: u64,
    task: usize,
    epoch: usize,
    objective_at_optimum: f64,
    objective_at_ones: f64,
    near_binary: usize,
    num_weights: usize,
    lp_iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub runs: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
    pub files: Vec<PathBuf>,
    pub wall_clock: Duration,
}

impl ExperimentReport {
    pub fn run(&self, method: Method, seed: u64) -> Option<&RunRecord> {
        self.runs
            .iter()
            .find(|r| r.method == method && r.seed == seed)
    }

    pub fn seed_rows(&self) -> Vec<SeedRow> {
        seed_rows(&self.runs)
    }
}

fn seed_rows(runs: &[RunRecord]) -> Vec<SeedRow> {
    runs.iter()
        .flat_map(|r| {
            r.report.rows().into_iter().map(move |row| SeedRow {
                method: r.method.to_string(),
                seed: r.seed,
                task: row.task,
                metric: row.metric,
                value: row.value,
            })
        })
        .collect()
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Mean and std of each (method, task, metric) across seeds, in first-appearance order.
pub fn aggregate(rows: &[SeedRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(String, usize, String)> = Vec::new();
    let mut values: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (r.method.clone(), r.task, r.metric.clone());
        let slot = values.entry(key.clone()).or_default();
        if slot.is_empty() {
            order.push(key);
        }
        slot.push(r.value);
    }
    order
        .into_iter()
        .map(|key| {
            let v = &values[&key];
            let (mean, std) = mean_std(v);
            AggregateRow {
                method: key.0,
                task: key.1,
                metric: key.2,
                mean,
                std,
                n: v.len(),
            }
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Serialize)]
struct Manifest<'a> {
    package: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a ExperimentConfig,
    wall_clock_secs: f64,
    runs: Vec<ManifestRun>,
    files: Vec<String>,
}

#[derive(Serialize)]
struct ManifestRun {
    method: String,
    seed: u64,
    secs: f64,
}

fn write_manifest(
    cfg: &ExperimentConfig,
    command: &str,
    wall: Duration,
    runs: Vec<ManifestRun>,
    files: &[PathBuf],
) -> Result<PathBuf> {
    let manifest = Manifest {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        config: cfg,
        wall_clock_secs: wall.as_secs_f64(),
        runs,
        files: files
            .iter()
            .filter_map(|p| p.strip_prefix(&cfg.output_dir).ok())
            .map(|p| p.display().to_string())
            .collect(),
    };
    let path = cfg.output_dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_config_echo(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let path = cfg.output_dir.join("config.toml");
    fs::write(&path, cfg.to_toml()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Trains every selected method on every seed and writes the result tables.
///
/// Files under `output_dir`:
/// `config.toml`, `seeds/seed_<s>.csv` (flushed as each seed finishes), `per_seed.csv`,
/// `aggregate.csv`, and, when FSW runs, `fsw_weight_histogram.csv` and `fsw_diagnostics.csv`.
/// `manifest.json` carries timings and is the only file that differs between identical runs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let methods = cfg.methods();
    let out = &cfg.output_dir;
    let seed_dir = out.join("seeds");
    create_dir(&seed_dir)?;
    let mut files = vec![write_config_echo(cfg)?];

    let source = StreamSource::new(&cfg.dataset)?;
    let per_seed: Vec<(Vec<RunRecord>, Arc<TaskStream>, PathBuf)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let stream = source.stream(seed)?;
            if methods.contains(&Method::Fsw) {
                check_measure(&stream, cfg.train.fsw.measure)?;
            }
            let runs = methods
                .par_iter()
                .map(|&method| {
                    let t = Instant::now();
                    let history = run_method(method, &stream, &cfg.train, seed)?;
                    let report = history.report()?;
                    log::info!(
                        "{method} seed {seed}: avg accuracy {:.4}, final {:.4}",
                        report.avg_accuracy,
                        report.final_accuracy
                    );
                    Ok(RunRecord {
                        method,
                        seed,
                        report,
                        history,
                        elapsed: t.elapsed(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let path = seed_dir.join(format!("seed_{seed}.csv"));
            write_csv(&path, &seed_rows(&runs))?;
            Ok((runs, stream, path))
        })
        .collect::<Result<_>>()?;

    let mut runs = Vec::new();
    let mut streams = BTreeMap::new();
    for (r, stream, path) in per_seed {
        if let Some(first) = r.first() {
            streams.insert(first.seed, stream);
        }
        runs.extend(r);
        files.push(path);
    }
    // method-major, seeds in config order
    runs.sort_by_key(|r| Method::ALL.iter().position(|m| *m == r.method));

    let rows = seed_rows(&runs);
    let agg = aggregate(&rows);
    let path = out.join("per_seed.csv");
    write_csv(&path, &rows)?;
    files.push(path);
    let path = out.join("aggregate.csv");
    write_csv(&path, &agg)?;
    files.push(path);

    if methods.contains(&Method::Fsw) {
        files.extend(write_fsw_tables(cfg, &runs, &streams)?);
    }

    let wall = start.elapsed();
    let manifest_runs = runs
        .iter()
        .map(|r| ManifestRun {
            method: r.method.to_string(),
            seed: r.seed,
            secs: r.elapsed.as_secs_f64(),
        })
        .collect();
    files.push(write_manifest(cfg, "run", wall, manifest_runs, &files)?);
    Ok(ExperimentReport {
        runs,
        aggregate: agg,
        files,
        wall_clock: wall,
    })
}

fn write_fsw_tables(
    cfg: &ExperimentConfig,
    runs: &[RunRecord],
    streams: &BTreeMap<u64, Arc<TaskStream>>,
) -> Result<Vec<PathBuf>> {
    let mut hist_rows = Vec::new();
    let mut diag_rows = Vec::new();
    for run in runs.iter().filter(|r| r.method == Method::Fsw) {
        let stream = &streams[&run.seed];
        for dump in &run.history.weight_dumps {
            let task = stream
                .tasks
                .iter()
                .find(|t| t.task_id == dump.task)
                .ok_or_else(|| Error::Missing(format!("task {} in stream", dump.task)))?;
            for h in weight_histogram(&task.samples, &dump.weights, cfg.histogram_bins)? {
                hist_rows.push((run.seed, dump.task, dump.epoch, h));
            }
        }
        diag_rows.extend(run.history.diagnostics.iter().map(|d| DiagnosticsCsvRow {
            seed: run.seed,
            task: d.task,
            epoch: d.epoch,
            objective_at_optimum: d.objective_at_optimum,
            objective_at_ones: d.objective_at_ones,
            near_binary: d.near_binary,
            num_weights: d.num_weights,
            lp_iterations: d.lp_iterations,
        }));
    }
    let hist: Vec<HistogramCsvRow> = hist_rows
        .iter()
        .map(|(seed, task, epoch, h)| HistogramCsvRow {
            seed: *seed,
            task: *task,
            epoch: *epoch,
            group: &h.group,
            bin_lo: h.bin_lo,
            bin_hi: h.bin_hi,
            count: h.count,
        })
        .collect();
    let hist_path = cfg.output_dir.join("fsw_weight_histogram.csv");
    write_csv(&hist_path, &hist)?;
    let diag_path = cfg.output_dir.join("fsw_diagnostics.csv");
    write_csv(&diag_path, &diag_rows)?;
    Ok(vec![hist_path, diag_path])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub eta: f64,
    pub accuracy: f64,
    pub accuracy_std: f64,
    pub disparity: f64,
    pub disparity_std: f64,
    pub pareto: bool,
}

/// `flags[i]` is true when no other point has strictly higher accuracy and strictly lower disparity.
pub fn pareto_flags(points: &[(f64, f64)]) -> Vec<bool> {
    points
        .iter()
        .map(|&(acc, disp)| !points.iter().any(|&(a, d)| a > acc && d < disp))
        .collect()
}

/// Runs every grid point over every seed and writes `sweep.csv`.
///
/// Sweeps FSW unless the config names methods explicitly. Accuracy is the average
/// accuracy over tasks and disparity is the configured measure, both averaged over seeds.
pub fn grid_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    cfg.sweep.validate()?;
    let start = Instant::now();
    let methods = if cfg.methods.is_empty() {
        vec![Method::Fsw]
    } else {
        cfg.methods()
    };
    let measure = cfg.train.fsw.measure;
    create_dir(&cfg.output_dir)?;
    let mut files = vec![write_config_echo(cfg)?];

    let source = StreamSource::new(&cfg.dataset)?;
    let streams: Vec<Arc<TaskStream>> = cfg
        .seeds
        .par_iter()
        .map(|&s| source.stream(s))
        .collect::<Result<_>>()?;
    if let Some(s) = streams.first() {
        check_measure(s, measure)?;
    }
    let points = cfg.sweep.points();
    let combos: Vec<(Method, [f64; 4])> = methods
        .iter()
        .flat_map(|&m| points.iter().map(move |&p| (m, p)))
        .collect();

    let results: Vec<(Vec<f64>, Vec<f64>)> = combos
        .par_iter()
        .map(|&(method, [alpha, lambda, tau, eta])| {
            let mut train = cfg.train.clone();
            train.fsw.alpha = alpha;
            train.fsw.lambda = lambda;
            train.tau = tau;
            train.eta = eta;
            let per_seed = cfg
                .seeds
                .par_iter()
                .zip(&streams)
                .map(|(&seed, stream)| {
                    let report = run_method(method, stream, &train, seed)?.report()?;
                    let d = report
                        .disparity(measure)
                        .ok_or_else(|| Error::Missing(format!("{measure} disparity")))?;
                    Ok((report.avg_accuracy, d))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(per_seed.into_iter().unzip())
        })
        .collect::<Result<_>>()?;

    let mut rows: Vec<SweepRow> = combos
        .iter()
        .zip(&results)
        .map(|(&(method, [alpha, lambda, tau, eta]), (acc, disp))| {
            let (accuracy, accuracy_std) = mean_std(acc);
            let (disparity, disparity_std) = mean_std(disp);
            SweepRow {
                method: method.to_string(),
                alpha,
                lambda,
                tau,
                eta,
                accuracy,
                accuracy_std,
                disparity,
                disparity_std,
                pareto: false,
            }
        })
        .collect();
    let flags = pareto_flags(
        &rows
            .iter()
            .map(|r| (r.accuracy, r.disparity))
            .collect::<Vec<_>>(),
    );
    for (r, f) in rows.iter_mut().zip(flags) {
        r.pareto = f;
    }
    let path = cfg.output_dir.join("sweep.csv");
    write_csv(&path, &rows)?;
    files.push(path);
    write_manifest(cfg, "sweep", start.elapsed(), Vec::new(), &files)?;
    Ok(rows)
}

/// Writes `train.csv` and `test.csv` (features, then `label`, then `sensitive` when present).
///
/// The files ingest back with `has_sensitive` set to whether the stream has a sensitive attribute.
pub fn write_stream_csv(stream: &TaskStream, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut header: Vec<String> = (0..stream.input_dim).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    if stream.has_sensitive() {
        header.push("sensitive".into());
    }
    let mut paths = Vec::new();
    for (name, split) in [("train.csv", &stream.tasks), ("test.csv", &stream.test)] {
        let path = dir.join(name);
        let file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        let io = |e: csv::Error| Error::io(&path, std::io::Error::other(e));
        w.write_record(&header).map_err(io)?;
        for s in split.iter().flat_map(|t| &t.samples) {
            w.write_record(sample_record(s, stream.has_sensitive()))
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

fn sample_record(s: &Sample, with_sensitive: bool) -> Vec<String> {
    let mut rec: Vec<String> = s.features.iter().map(|v| v.to_string()).collect();
    rec.push(s.label.to_string());
    if with_sensitive {
        rec.push(s.sensitive.map_or(String::new(), |z| z.to_string()));
    }
    rec
}
