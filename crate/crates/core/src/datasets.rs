//! Synthetic generators, file ingestion and class-disjoint task splitting.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Sample;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDataset {
    pub task_id: usize,
    /// Sorted class ids owned by this task.
    pub classes: Vec<usize>,
    pub samples: Vec<Sample>,
}

impl TaskDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// A sequence of class-disjoint tasks with matching held-out splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStream {
    pub tasks: Vec<TaskDataset>,
    pub test: Vec<TaskDataset>,
    pub all_classes: Vec<usize>,
    /// Empty when the class itself is the sensitive attribute.
    pub sensitive_values: Vec<usize>,
    pub input_dim: usize,
}

impl TaskStream {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Size of the shared classifier head.
    pub fn num_classes(&self) -> usize {
        self.all_classes.iter().max().map_or(0, |m| m + 1)
    }

    pub fn has_sensitive(&self) -> bool {
        !self.sensitive_values.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.len() != self.test.len() {
            return Err(Error::Config(format!(
                "{} training tasks but {} test splits",
                self.tasks.len(),
                self.test.len()
            )));
        }
        let mut seen = BTreeSet::new();
        let mut total = 0;
        for (task, test) in self.tasks.iter().zip(&self.test) {
            if task.classes != test.classes {
                return Err(Error::Config(format!(
                    "task {} train/test class sets differ",
                    task.task_id
                )));
            }
            for &c in &task.classes {
                if !seen.insert(c) {
                    return Err(Error::Config(format!("class {c} appears in two tasks")));
                }
            }
            total += task.classes.len();
            for s in task.samples.iter().chain(&test.samples) {
                if task.classes.binary_search(&s.label).is_err() {
                    return Err(Error::Config(format!(
                        "task {} holds label {} outside its classes",
                        task.task_id, s.label
                    )));
                }
                if s.features.len() != self.input_dim {
                    return Err(Error::Dimension(format!(
                        "sample with {} features in a {}-dimensional stream",
                        s.features.len(),
                        self.input_dim
                    )));
                }
                match (s.sensitive, self.has_sensitive()) {
                    (Some(z), true) if self.sensitive_values.contains(&z) => {}
                    (None, false) => {}
                    _ => {
                        return Err(Error::Config(format!(
                            "sensitive attribute {:?} inconsistent with stream values {:?}",
                            s.sensitive, self.sensitive_values
                        )))
                    }
                }
            }
        }
        if total != self.all_classes.len() {
            return Err(Error::Config("class count mismatch across tasks".into()));
        }
        Ok(())
    }
}

/// How the three toy Gaussians map to labels and sensitive attributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToyVariant {
    /// Three classes; the class is the sensitive attribute.
    ClassGroups,
    /// Clusters 0/1/2 become (y,z) = (0,0), (0,1), (1,1).
    LabelAndSensitive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub variant: ToyVariant,
}

impl ToyConfig {
    pub fn new(n_per_class: usize) -> Self {
        Self {
            n_per_class,
            n_test_per_class: n_per_class,
            variant: ToyVariant::ClassGroups,
        }
    }
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self::new(500)
    }
}

pub const TOY_MEANS: [[f64; 2]; 3] = [[-2.0, -2.0], [2.0, 4.0], [4.0, 2.0]];

/// Three unit-covariance Gaussians; task 1 holds clusters {0,1}, task 2 holds cluster 2.
pub fn gen_toy_gaussians(n_per_class: usize, seed: u64) -> Result<TaskStream> {
    gen_toy(&ToyConfig::new(n_per_class), seed)
}

pub fn gen_toy(cfg: &ToyConfig, seed: u64) -> Result<TaskStream> {
    if cfg.n_per_class == 0 || cfg.n_test_per_class == 0 {
        return Err(Error::Config(
            "toy stream needs at least one sample per class".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |cluster: usize, n: usize, rng: &mut ChaCha8Rng| -> Vec<Sample> {
        let (label, sensitive) = match cfg.variant {
            ToyVariant::ClassGroups => (cluster, None),
            ToyVariant::LabelAndSensitive => match cluster {
                0 => (0, Some(0)),
                1 => (0, Some(1)),
                _ => (1, Some(1)),
            },
        };
        (0..n)
            .map(|_| {
                let f = TOY_MEANS[cluster]
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + e
                    })
                    .collect::<Vec<f64>>();
                Sample::new(f, label, sensitive)
            })
            .collect()
    };
    let mut train: Vec<Vec<Sample>> = (0..3).map(|c| draw(c, cfg.n_per_class, &mut rng)).collect();
    let mut test: Vec<Vec<Sample>> = (0..3)
        .map(|c| draw(c, cfg.n_test_per_class, &mut rng))
        .collect();

    let (classes, sensitive_values, task_clusters): (Vec<Vec<usize>>, Vec<usize>, [&[usize]; 2]) =
        match cfg.variant {
            ToyVariant::ClassGroups => (vec![vec![0, 1], vec![2]], vec![], [&[0, 1], &[2]]),
            ToyVariant::LabelAndSensitive => (vec![vec![0], vec![1]], vec![0, 1], [&[0, 1], &[2]]),
        };
    let mut tasks = Vec::new();
    let mut tests = Vec::new();
    for (t, clusters) in task_clusters.iter().enumerate() {
        let mut tr = Vec::new();
        let mut te = Vec::new();
        for &c in clusters.iter() {
            tr.append(&mut train[c]);
            te.append(&mut test[c]);
        }
        tr.shuffle(&mut rng);
        tasks.push(TaskDataset {
            task_id: t,
            classes: classes[t].clone(),
            samples: tr,
        });
        tests.push(TaskDataset {
            task_id: t,
            classes: classes[t].clone(),
            samples: te,
        });
    }
    let stream = TaskStream {
        all_classes: classes.concat(),
        tasks,
        test: tests,
        sensitive_values,
        input_dim: 2,
    };
    stream.validate()?;
    Ok(stream)
}

/// Class-prototype features with an appended one-hot "color" channel.
///
/// A sample gets its class's canonical color (z = 1) with probability `bias_train`
/// (or `bias_test` on the held-out split), otherwise a uniformly chosen other color (z = 0).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ColorBiasConfig {
    pub n_per_class: usize,
    pub n_test_per_class: usize,
    pub bias_train: f64,
    pub bias_test: f64,
    pub n_classes: usize,
    pub num_tasks: usize,
    pub base_dim: usize,
}

impl Default for ColorBiasConfig {
    fn default() -> Self {
        Self {
            n_per_class: 500,
            n_test_per_class: 200,
            bias_train: 0.95,
            bias_test: 0.5,
            n_classes: 10,
            num_tasks: 5,
            base_dim: 8,
        }
    }
}

pub fn gen_color_biased(cfg: &ColorBiasConfig, seed: u64) -> Result<TaskStream> {
    for (name, p) in [("bias_train", cfg.bias_train), ("bias_test", cfg.bias_test)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Config(format!("{name} must lie in [0,1], got {p}")));
        }
    }
    if cfg.n_classes < 2 {
        return Err(Error::Config(
            "color-biased data needs at least two classes".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let proto = Normal::new(0.0, 1.5).unwrap();
    let prototypes: Vec<Vec<f64>> = (0..cfg.n_classes)
        .map(|_| (0..cfg.base_dim).map(|_| proto.sample(&mut rng)).collect())
        .collect();

    let draw = |n: usize, bias: f64, rng: &mut ChaCha8Rng| -> Vec<Sample> {
        let mut out = Vec::with_capacity(n * cfg.n_classes);
        for (y, mean) in prototypes.iter().enumerate() {
            for _ in 0..n {
                let canonical = rng.random_bool(bias);
                let color = if canonical {
                    y
                } else {
                    let other = rng.random_range(0..cfg.n_classes - 1);
                    if other >= y {
                        other + 1
                    } else {
                        other
                    }
                };
                let mut f: Vec<f64> = mean
                    .iter()
                    .map(|m| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + e
                    })
                    .collect();
                f.extend((0..cfg.n_classes).map(|c| if c == color { 1.0 } else { 0.0 }));
                out.push(Sample::new(f, y, Some(usize::from(canonical))));
            }
        }
        out
    };
    let train = draw(cfg.n_per_class, cfg.bias_train, &mut rng);
    let test = draw(cfg.n_test_per_class, cfg.bias_test, &mut rng);
    let mut stream = build_stream(train, test, cfg.num_tasks)?;
    stream.sensitive_values = vec![0, 1];
    stream.validate()?;
    Ok(stream)
}

/// Assigns sorted classes to `num_tasks` contiguous blocks. Extra classes join the last task.
pub fn class_partition(classes: &[usize], num_tasks: usize) -> Result<Vec<Vec<usize>>> {
    if num_tasks == 0 {
        return Err(Error::Config("number of tasks must be positive".into()));
    }
    let classes: Vec<usize> = classes
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if num_tasks > classes.len() {
        return Err(Error::Config(format!(
            "{num_tasks} tasks requested but only {} classes",
            classes.len()
        )));
    }
    let per = classes.len() / num_tasks;
    let rem = classes.len() % num_tasks;
    if rem != 0 {
        log::warn!(
            "{} classes do not split evenly into {num_tasks} tasks; last task gets {} extra",
            classes.len(),
            rem
        );
    }
    Ok((0..num_tasks)
        .map(|t| {
            let end = if t + 1 == num_tasks {
                classes.len()
            } else {
                (t + 1) * per
            };
            classes[t * per..end].to_vec()
        })
        .collect())
}

/// Splits labeled data into class-disjoint tasks, keeping input order within each task.
pub fn split_tasks(data: &[Sample], num_tasks: usize) -> Result<Vec<TaskDataset>> {
    let classes: Vec<usize> = data.iter().map(|s| s.label).collect();
    let blocks = class_partition(&classes, num_tasks)?;
    Ok(assign(data, &blocks))
}

fn assign(data: &[Sample], blocks: &[Vec<usize>]) -> Vec<TaskDataset> {
    let mut tasks: Vec<TaskDataset> = blocks
        .iter()
        .enumerate()
        .map(|(t, classes)| TaskDataset {
            task_id: t,
            classes: classes.clone(),
            samples: Vec::new(),
        })
        .collect();
    for s in data {
        if let Some(task) = tasks
            .iter_mut()
            .find(|t| t.classes.binary_search(&s.label).is_ok())
        {
            task.samples.push(s.clone());
        }
    }
    tasks
}

/// Builds a stream from train/test pools, partitioning classes by the training labels.
pub fn build_stream(train: Vec<Sample>, test: Vec<Sample>, num_tasks: usize) -> Result<TaskStream> {
    let input_dim = train
        .first()
        .ok_or_else(|| Error::Empty("no training samples".into()))?
        .features
        .len();
    let labels: Vec<usize> = train.iter().map(|s| s.label).collect();
    let blocks = class_partition(&labels, num_tasks)?;
    let known: BTreeSet<usize> = blocks.iter().flatten().copied().collect();
    if let Some(s) = test.iter().find(|s| !known.contains(&s.label)) {
        return Err(Error::Config(format!(
            "test label {} never occurs in training data",
            s.label
        )));
    }
    let sensitive: BTreeSet<usize> = train
        .iter()
        .chain(&test)
        .filter_map(|s| s.sensitive)
        .collect();
    let stream = TaskStream {
        tasks: assign(&train, &blocks),
        test: assign(&test, &blocks),
        all_classes: known.into_iter().collect(),
        sensitive_values: sensitive.into_iter().collect(),
        input_dim,
    };
    stream.validate()?;
    Ok(stream)
}

/// Which CSV column holds a field: by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Column {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvOptions {
    /// `None` detects a header by whether the first row parses as numbers.
    pub has_header: Option<bool>,
    /// Defaults to the last column (or second to last with a sensitive column).
    pub label_column: Option<Column>,
    pub has_sensitive: bool,
    /// Defaults to the last column.
    pub sensitive_column: Option<Column>,
    /// Labels must lie below this when set.
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum DataFormat {
    Csv(CsvOptions),
    /// Image file at the ingest path, labels in the paired file.
    Idx {
        labels: PathBuf,
    },
}

pub fn ingest(path: &Path, format: &DataFormat) -> Result<Vec<Sample>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Csv(opts) => {
            let text = String::from_utf8(bytes)
                .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
            parse_csv(&text, opts)
        }
        DataFormat::Idx { labels } => {
            let label_bytes = fs::read(labels).map_err(|e| Error::io(labels, e))?;
            parse_idx_pair(&bytes, &label_bytes)
        }
    }
}

pub fn parse_csv(text: &str, opts: &CsvOptions) -> Result<Vec<Sample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(format!("line {line}"), e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((
            line,
            record.iter().map(str::to_owned).collect::<Vec<String>>(),
        ));
    }
    if rows.is_empty() {
        return Err(Error::parse("line 1", "empty CSV input"));
    }
    let header_present = opts
        .has_header
        .unwrap_or_else(|| rows[0].1.iter().any(|f| f.parse::<f64>().is_err()));
    let header = if header_present {
        Some(rows.remove(0).1)
    } else {
        None
    };
    let width = match (&header, rows.first()) {
        (Some(h), _) => h.len(),
        (None, Some((_, r))) => r.len(),
        (None, None) => unreachable!(),
    };
    if rows.is_empty() {
        return Err(Error::parse("line 2", "CSV has a header but no data rows"));
    }
    let resolve = |col: &Column| -> Result<usize> {
        match col {
            Column::Index(i) if *i < width => Ok(*i),
            Column::Index(i) => Err(Error::parse("header", format!("column {i} out of range"))),
            Column::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|c| c == name))
                .ok_or_else(|| Error::parse("header", format!("no column named {name:?}"))),
        }
    };
    let sensitive_col = if opts.has_sensitive {
        Some(match &opts.sensitive_column {
            Some(c) => resolve(c)?,
            None => width - 1,
        })
    } else {
        None
    };
    let label_col = match &opts.label_column {
        Some(c) => resolve(c)?,
        None => width - 1 - usize::from(opts.has_sensitive),
    };
    if width < 2 + usize::from(opts.has_sensitive) || Some(label_col) == sensitive_col {
        return Err(Error::parse(
            "header",
            "need at least one feature column and a label",
        ));
    }

    let parse_id = |field: &str, line: u64, what: &str| -> Result<usize> {
        let v: f64 = field.parse().map_err(|_| {
            Error::parse(
                format!("line {line}"),
                format!("{what} {field:?} is not a number"),
            )
        })?;
        if v < 0.0 || v.fract() != 0.0 || !v.is_finite() {
            return Err(Error::parse(
                format!("line {line}"),
                format!("{what} {field:?} is not a nonnegative integer"),
            ));
        }
        Ok(v as usize)
    };
    let mut samples = Vec::with_capacity(rows.len());
    for (line, row) in rows {
        if row.len() != width {
            return Err(Error::parse(
                format!("line {line}"),
                format!("expected {width} fields, found {}", row.len()),
            ));
        }
        let mut features = Vec::with_capacity(width - 1);
        for (i, field) in row.iter().enumerate() {
            if i == label_col || Some(i) == sensitive_col {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| {
                Error::parse(
                    format!("line {line}"),
                    format!("feature {field:?} is not a number"),
                )
            })?;
            features.push(v);
        }
        let label = parse_id(&row[label_col], line, "label")?;
        if let Some(c) = opts.num_classes {
            if label >= c {
                return Err(Error::parse(
                    format!("line {line}"),
                    format!("label {label} out of range for {c} classes"),
                ));
            }
        }
        let sensitive = sensitive_col
            .map(|c| parse_id(&row[c], line, "sensitive attribute"))
            .transpose()?;
        samples.push(Sample::new(features, label, sensitive));
    }
    Ok(samples)
}

/// A parsed IDX array of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::parse(
            "offset 0",
            "IDX file shorter than its magic number",
        ));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::parse(
            "offset 0",
            format!("bad IDX magic {:02x?}", &bytes[..4]),
        ));
    }
    if bytes[2] != 0x08 {
        return Err(Error::parse(
            "offset 2",
            format!(
                "unsupported IDX element type 0x{:02x} (expected unsigned byte)",
                bytes[2]
            ),
        ));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::parse(
            "offset 3",
            "IDX file declares zero dimensions",
        ));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            "truncated IDX dimension table",
        ));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| {
            let o = 4 + 4 * d;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let payload = bytes.len() - header;
    if expected != Some(payload) {
        return Err(Error::parse(
            format!("offset {header}"),
            format!("IDX dims {dims:?} need {expected:?} payload bytes, found {payload}"),
        ));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

/// Flattens the leading dimension into samples with pixels scaled to `[0, 1]`.
pub fn idx_images(bytes: &[u8]) -> Result<Vec<Vec<f64>>> {
    let arr = parse_idx(bytes)?;
    let n = arr.dims[0];
    let per: usize = arr.dims[1..].iter().product();
    if n == 0 || per == 0 {
        return Err(Error::parse("offset 4", "IDX image file holds no pixels"));
    }
    Ok(arr
        .data
        .chunks(per)
        .map(|c| c.iter().map(|&b| f64::from(b) / 255.0).collect())
        .collect())
}

pub fn parse_idx_pair(images: &[u8], labels: &[u8]) -> Result<Vec<Sample>> {
    let features = idx_images(images)?;
    let labels = parse_idx(labels)?;
    if labels.dims.len() != 1 || labels.dims[0] != features.len() {
        return Err(Error::parse(
            "offset 4",
            format!(
                "label dims {:?} do not match {} images",
                labels.dims,
                features.len()
            ),
        ));
    }
    Ok(features
        .into_iter()
        .zip(labels.data)
        .map(|(f, y)| Sample::new(f, y as usize, None))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_stats(samples: &[Sample], class: usize) -> ([f64; 2], [[f64; 2]; 2]) {
        let xs: Vec<&Sample> = samples.iter().filter(|s| s.label == class).collect();
        let n = xs.len() as f64;
        let mut mean = [0.0; 2];
        for s in &xs {
            mean[0] += s.features[0] / n;
            mean[1] += s.features[1] / n;
        }
        let mut cov = [[0.0; 2]; 2];
        for s in &xs {
            for i in 0..2 {
                for j in 0..2 {
                    cov[i][j] += (s.features[i] - mean[i]) * (s.features[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        (mean, cov)
    }

    #[test]
    fn toy_class_means_match_generating_distribution() {
        let n = 500;
        let stream = gen_toy_gaussians(n, 1).unwrap();
        let (mean, _) = class_stats(&stream.tasks[0].samples, 0);
        let tol = 3.0 / (n as f64).sqrt();
        assert!(
            (mean[0] + 2.0).abs() < tol && (mean[1] + 2.0).abs() < tol,
            "{mean:?}"
        );
        assert_eq!(stream.tasks[0].classes, vec![0, 1]);
        assert_eq!(stream.tasks[1].classes, vec![2]);
        assert_eq!(stream.tasks[0].len(), 2 * n);
    }

    #[test]
    fn toy_covariance_is_identity() {
        let stream = gen_toy_gaussians(10_000, 2).unwrap();
        for (task, class) in [(0, 0), (0, 1), (1, 2)] {
            let (mean, cov) = class_stats(&stream.tasks[task].samples, class);
            // 5σ bounds: var of sample variance ≈ 2/n, of covariance ≈ 1/n
            assert!((cov[0][0] - 1.0).abs() < 0.071, "{cov:?}");
            assert!((cov[1][1] - 1.0).abs() < 0.071, "{cov:?}");
            assert!(cov[0][1].abs() < 0.05, "{cov:?}");
            assert!((mean[0] - TOY_MEANS[class][0]).abs() < 0.05);
        }
    }

    #[test]
    fn toy_generation_is_deterministic() {
        let a = gen_toy_gaussians(50, 9).unwrap();
        let b = gen_toy_gaussians(50, 9).unwrap();
        assert_eq!(
            serde_json::to_vec(&a).unwrap(),
            serde_json::to_vec(&b).unwrap()
        );
        assert_ne!(a, gen_toy_gaussians(50, 10).unwrap());
    }

    #[test]
    fn toy_sensitive_variant_maps_clusters() {
        let cfg = ToyConfig {
            variant: ToyVariant::LabelAndSensitive,
            ..ToyConfig::new(20)
        };
        let stream = gen_toy(&cfg, 3).unwrap();
        assert_eq!(stream.all_classes, vec![0, 1]);
        assert_eq!(stream.sensitive_values, vec![0, 1]);
        let t1 = &stream.tasks[0].samples;
        assert_eq!(t1.iter().filter(|s| s.sensitive == Some(0)).count(), 20);
        assert!(stream.tasks[1]
            .samples
            .iter()
            .all(|s| s.label == 1 && s.sensitive == Some(1)));
    }

    #[test]
    fn color_bias_fraction_per_class() {
        let cfg = ColorBiasConfig {
            n_per_class: 10_000,
            n_test_per_class: 10_000,
            n_classes: 4,
            num_tasks: 2,
            ..ColorBiasConfig::default()
        };
        let stream = gen_color_biased(&cfg, 4).unwrap();
        for task in &stream.tasks {
            for &c in &task.classes {
                let xs: Vec<_> = task.samples.iter().filter(|s| s.label == c).collect();
                let frac =
                    xs.iter().filter(|s| s.sensitive == Some(1)).count() as f64 / xs.len() as f64;
                assert!((0.94..=0.96).contains(&frac), "class {c}: {frac}");
            }
        }
        for test in &stream.test {
            for &c in &test.classes {
                let xs: Vec<_> = test.samples.iter().filter(|s| s.label == c).collect();
                let frac =
                    xs.iter().filter(|s| s.sensitive == Some(1)).count() as f64 / xs.len() as f64;
                assert!((frac - 0.5).abs() < 0.025, "class {c}: {frac}");
            }
        }
    }

    #[test]
    fn full_bias_marks_every_training_sample() {
        let cfg = ColorBiasConfig {
            n_per_class: 50,
            bias_train: 1.0,
            n_classes: 4,
            num_tasks: 2,
            ..ColorBiasConfig::default()
        };
        let stream = gen_color_biased(&cfg, 5).unwrap();
        assert!(stream
            .tasks
            .iter()
            .flat_map(|t| &t.samples)
            .all(|s| s.sensitive == Some(1)));
        // the color channel matches the class when z = 1
        let s = &stream.tasks[0].samples[0];
        assert_eq!(s.features[cfg.base_dim + s.label], 1.0);
    }

    #[test]
    fn color_bias_rejects_bad_probability() {
        let cfg = ColorBiasConfig {
            bias_train: 1.5,
            ..ColorBiasConfig::default()
        };
        assert!(matches!(gen_color_biased(&cfg, 0), Err(Error::Config(_))));
    }

    fn labeled(classes: usize, per: usize) -> Vec<Sample> {
        (0..classes * per)
            .map(|i| Sample::new(vec![i as f64], i % classes, None))
            .collect()
    }

    #[test]
    fn split_examples() {
        let tasks = split_tasks(&labeled(10, 3), 5).unwrap();
        let classes: Vec<Vec<usize>> = tasks.iter().map(|t| t.classes.clone()).collect();
        assert_eq!(
            classes,
            vec![vec![0, 1], vec![2, 3], vec![4, 5], vec![6, 7], vec![8, 9]]
        );

        let tasks = split_tasks(&labeled(6, 2), 3).unwrap();
        let classes: Vec<Vec<usize>> = tasks.iter().map(|t| t.classes.clone()).collect();
        assert_eq!(classes, vec![vec![0, 1], vec![2, 3], vec![4, 5]]);

        let data = labeled(4, 2);
        let tasks = split_tasks(&data, 1).unwrap();
        assert_eq!(tasks[0].samples, data);
    }

    #[test]
    fn split_preserves_order_and_handles_remainder() {
        let data = labeled(7, 2);
        let tasks = split_tasks(&data, 3).unwrap();
        assert_eq!(tasks[2].classes, vec![4, 5, 6]);
        let firsts: Vec<f64> = tasks[0].samples.iter().map(|s| s.features[0]).collect();
        assert_eq!(firsts, vec![0.0, 1.0, 7.0, 8.0]);
    }

    #[test]
    fn split_rejects_too_many_tasks() {
        assert!(matches!(
            split_tasks(&labeled(3, 1), 4),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn csv_direct_mapping() {
        let opts = CsvOptions {
            has_sensitive: true,
            ..CsvOptions::default()
        };
        let samples = parse_csv("1.0,2.0,0,1\n", &opts).unwrap();
        assert_eq!(samples, vec![Sample::new(vec![1.0, 2.0], 0, Some(1))]);
    }

    #[test]
    fn csv_header_and_named_columns() {
        let opts = CsvOptions {
            label_column: Some(Column::Name("y".into())),
            ..CsvOptions::default()
        };
        let samples = parse_csv("y,a,b\n2,0.5,1.5\n1,3,4\n", &opts).unwrap();
        assert_eq!(samples[0], Sample::new(vec![0.5, 1.5], 2, None));
        assert_eq!(samples.len(), 2);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        let opts = CsvOptions::default();
        let err = parse_csv("1,2,0\n1,2\n", &opts).unwrap_err();
        assert!(
            matches!(&err, Error::Parse { location, .. } if location == "line 2"),
            "{err}"
        );

        let opts = CsvOptions {
            num_classes: Some(2),
            ..CsvOptions::default()
        };
        let err = parse_csv("1,2,0\n1,2,5\n", &opts).unwrap_err();
        assert!(err.to_string().contains("out of range"));

        assert!(matches!(
            parse_csv("", &CsvOptions::default()),
            Err(Error::Parse { .. })
        ));
        assert!(parse_csv("1,2,0.5\n", &CsvOptions::default()).is_err());
    }

    #[test]
    fn idx_hand_crafted_fixture() {
        let mut bytes = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        bytes.extend([0, 51, 102, 255, 255, 0, 0, 0]);
        assert_eq!(bytes.len(), 24);
        let images = idx_images(&bytes).unwrap();
        assert_eq!(images.len(), 2);
        assert_eq!(images[0], vec![0.0, 0.2, 0.4, 1.0]);
        assert_eq!(images[1], vec![1.0, 0.0, 0.0, 0.0]);

        let labels = [0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3];
        let samples = parse_idx_pair(&bytes, &labels).unwrap();
        assert_eq!(samples[1].label, 3);
    }

    #[test]
    fn idx_errors() {
        assert!(parse_idx(&[]).is_err());
        assert!(parse_idx(&[0x01, 0x00, 0x08, 0x01, 0, 0, 0, 0]).is_err());
        let err = parse_idx(&[0x00, 0x00, 0x08, 0x01, 0, 0, 0, 3, 1, 2]).unwrap_err();
        assert!(matches!(&err, Error::Parse { location, .. } if location == "offset 8"));
    }

    #[test]
    fn ingest_reads_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        std::fs::write(&path, "f1,f2,label\n0.1,0.2,1\n").unwrap();
        let samples = ingest(&path, &DataFormat::Csv(CsvOptions::default())).unwrap();
        assert_eq!(samples, vec![Sample::new(vec![0.1, 0.2], 1, None)]);
        let missing = ingest(
            &dir.path().join("nope.csv"),
            &DataFormat::Csv(CsvOptions::default()),
        );
        assert!(matches!(missing, Err(Error::Io { .. })));
    }
}
