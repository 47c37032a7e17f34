//! Average accuracy and empirical disparity measures.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsw::FairnessMeasure;

/// `A_l = (1/l) Σ_{t≤l} a_{l,t}` for every `l`, and their mean.
///
/// Row `l` (zero-based) of `acc` holds the accuracies on tasks `0..=l` after training task `l`.
pub fn average_accuracy(acc: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if acc.is_empty() {
        return Err(Error::Empty("no accuracy rows".into()));
    }
    let mut per_task = Vec::with_capacity(acc.len());
    for (l, row) in acc.iter().enumerate() {
        if row.len() < l + 1 {
            return Err(Error::Missing(format!(
                "accuracy after task {} has {} of {} entries",
                l + 1,
                row.len(),
                l + 1
            )));
        }
        per_task.push(row[..=l].iter().sum::<f64>() / (l + 1) as f64);
    }
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Ok((per_task, mean))
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    check_lengths(predictions, labels, None)?;
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_lengths(
    predictions: &[usize],
    labels: &[usize],
    sensitive: Option<&[usize]>,
) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if predictions.len() != labels.len() || sensitive.is_some_and(|s| s.len() != labels.len()) {
        return Err(Error::Dimension(format!(
            "{} predictions, {} labels, {:?} sensitive ids",
            predictions.len(),
            labels.len(),
            sensitive.map(<[usize]>::len)
        )));
    }
    Ok(())
}

fn rate(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

fn mean_or_zero(terms: &[f64]) -> f64 {
    if terms.is_empty() {
        0.0
    } else {
        terms.iter().sum::<f64>() / terms.len() as f64
    }
}

/// Empirical disparity over `classes`.
///
/// Cells with no samples are skipped with a warning; the mean runs over included terms.
pub fn disparity(
    measure: FairnessMeasure,
    predictions: &[usize],
    labels: &[usize],
    sensitive: Option<&[usize]>,
    classes: &[usize],
) -> Result<f64> {
    check_lengths(predictions, labels, sensitive)?;
    let n = labels.len();
    let mut terms = Vec::new();
    match measure {
        FairnessMeasure::Eer => {
            let overall = rate(
                predictions
                    .iter()
                    .zip(labels)
                    .filter(|(p, y)| p != y)
                    .count(),
                n,
            );
            for &c in classes {
                let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                if idx.is_empty() {
                    log::warn!("class {c} has no test samples; skipped");
                    continue;
                }
                let err = rate(
                    idx.iter().filter(|&&i| predictions[i] != c).count(),
                    idx.len(),
                );
                terms.push((err - overall).abs());
            }
        }
        FairnessMeasure::Eo | FairnessMeasure::Dp => {
            let z =
                sensitive.ok_or_else(|| Error::Config(format!("{measure} needs sensitive ids")))?;
            let zs: BTreeSet<usize> = z.iter().copied().collect();
            for &c in classes {
                if measure == FairnessMeasure::Eo {
                    let idx: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                    if idx.is_empty() {
                        log::warn!("class {c} has no test samples; skipped");
                        continue;
                    }
                    let base = rate(
                        idx.iter().filter(|&&i| predictions[i] == c).count(),
                        idx.len(),
                    );
                    for &v in &zs {
                        let cell: Vec<usize> = idx.iter().copied().filter(|&i| z[i] == v).collect();
                        if cell.is_empty() {
                            log::warn!("cell y{c}_z{v} has no test samples; skipped");
                            continue;
                        }
                        let r = rate(
                            cell.iter().filter(|&&i| predictions[i] == c).count(),
                            cell.len(),
                        );
                        terms.push((r - base).abs());
                    }
                } else {
                    let base = rate(predictions.iter().filter(|&&p| p == c).count(), n);
                    for &v in &zs {
                        let cell: Vec<usize> = (0..n).filter(|&i| z[i] == v).collect();
                        let r = rate(
                            cell.iter().filter(|&&i| predictions[i] == c).count(),
                            cell.len(),
                        );
                        terms.push((r - base).abs());
                    }
                }
            }
        }
    }
    Ok(mean_or_zero(&terms))
}

/// Disparities measured on the test union of tasks seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DisparitySnapshot {
    pub eer: f64,
    pub eo: Option<f64>,
    pub dp: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub avg_accuracy: f64,
    pub per_task_accuracy: Vec<f64>,
    /// Accuracy over all tasks after the last one.
    pub final_accuracy: f64,
    pub eer_disp: f64,
    pub eo_disp: Option<f64>,
    pub dp_disp: Option<f64>,
}

impl MetricsReport {
    pub fn from_history(acc: &[Vec<f64>], snapshots: &[DisparitySnapshot]) -> Result<Self> {
        let (per_task, avg) = average_accuracy(acc)?;
        if snapshots.len() != acc.len() {
            return Err(Error::Missing(format!(
                "{} disparity snapshots for {} tasks",
                snapshots.len(),
                acc.len()
            )));
        }
        let avg_of = |f: &dyn Fn(&DisparitySnapshot) -> Option<f64>| -> Option<f64> {
            let v: Option<Vec<f64>> = snapshots.iter().map(f).collect();
            v.map(|v| mean_or_zero(&v))
        };
        Ok(Self {
            avg_accuracy: avg,
            final_accuracy: *per_task.last().expect("nonempty"),
            per_task_accuracy: per_task,
            eer_disp: avg_of(&|s| Some(s.eer)).unwrap_or(0.0),
            eo_disp: avg_of(&|s| s.eo),
            dp_disp: avg_of(&|s| s.dp),
        })
    }

    pub fn disparity(&self, measure: FairnessMeasure) -> Option<f64> {
        match measure {
            FairnessMeasure::Eer => Some(self.eer_disp),
            FairnessMeasure::Eo => self.eo_disp,
            FairnessMeasure::Dp => self.dp_disp,
        }
    }

    /// Long-format rows `(task, metric, value)`; task 0 marks run-level aggregates.
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .per_task_accuracy
            .iter()
            .enumerate()
            .map(|(l, &v)| MetricRow::new(l + 1, "accuracy", v))
            .collect();
        rows.push(MetricRow::new(0, "avg_accuracy", self.avg_accuracy));
        rows.push(MetricRow::new(0, "final_accuracy", self.final_accuracy));
        rows.push(MetricRow::new(0, "eer_disp", self.eer_disp));
        if let Some(v) = self.eo_disp {
            rows.push(MetricRow::new(0, "eo_disp", v));
        }
        if let Some(v) = self.dp_disp {
            rows.push(MetricRow::new(0, "dp_disp", v));
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: usize,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(task: usize, metric: &str, value: f64) -> Self {
        Self {
            task,
            metric: metric.to_owned(),
            value,
        }
    }
}

pub fn write_rows_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io("<metrics>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<metrics>", e))
}

/// Per-class accuracy, handy for forgetting checks.
pub fn class_accuracy(predictions: &[usize], labels: &[usize]) -> Result<BTreeMap<usize, f64>> {
    check_lengths(predictions, labels, None)?;
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (p, y) in predictions.iter().zip(labels) {
        let e = tally.entry(*y).or_default();
        e.1 += 1;
        if p == y {
            e.0 += 1;
        }
    }
    Ok(tally
        .into_iter()
        .map(|(c, (h, t))| (c, rate(h, t)))
        .collect())
}
