//! Fairness-aware sample weighting: build the fairness objective over the
//! approximated group losses, solve it as an LP and return per-sample weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{
    compute_group_stats, dp_scale, group_index, linear_forms, sample_gradients, GroupCounts,
    GroupKey, GroupingMode, LinearLossForm,
};
use crate::lp::{build_abs_lp, solve_lp, AbsObjective, AbsTerm, LinTerm, LpStatus};
use crate::tensor::{MlpModel, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FairnessMeasure {
    /// Equal error rate across classes.
    #[default]
    Eer,
    /// Equalized odds.
    Eo,
    /// Demographic parity.
    Dp,
}

impl FairnessMeasure {
    pub fn needs_sensitive(self) -> bool {
        !matches!(self, FairnessMeasure::Eer)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FairnessMeasure::Eer => "eer",
            FairnessMeasure::Eo => "eo",
            FairnessMeasure::Dp => "dp",
        }
    }
}

impl fmt::Display for FairnessMeasure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FairnessMeasure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "eer" => Ok(FairnessMeasure::Eer),
            "eo" => Ok(FairnessMeasure::Eo),
            "dp" => Ok(FairnessMeasure::Dp),
            other => Err(Error::Config(format!("unknown fairness measure {other:?}"))),
        }
    }
}

pub const ALPHA_GRID: [f64; 4] = [0.0005, 0.001, 0.002, 0.01];
pub const LAMBDA_GRID: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FswConfig {
    /// Step scale in the approximated loss update.
    pub alpha: f64,
    /// Weight of the current-task accuracy term.
    pub lambda: f64,
    pub measure: FairnessMeasure,
    /// Unit-normalize group mean gradients.
    pub normalize_group_grads: bool,
    /// Unit-normalize per-sample gradients.
    pub normalize_sample_grads: bool,
    /// Solve for weights on the first task too (no previous groups exist there).
    pub weight_first_task: bool,
}

impl Default for FswConfig {
    fn default() -> Self {
        Self {
            alpha: 0.001,
            lambda: 0.5,
            measure: FairnessMeasure::Eer,
            normalize_group_grads: true,
            normalize_sample_grads: true,
            weight_first_task: true,
        }
    }
}

impl FswConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Per-sample training weights, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Config(format!("weight {v} outside [0,1]")));
        }
        Ok(Self(values))
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![1.0; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Fraction of entries within `tol` of 0 or 1.
    pub fn near_binary_fraction(&self, tol: f64) -> f64 {
        if self.0.is_empty() {
            return 1.0;
        }
        let k = self
            .0
            .iter()
            .filter(|&&w| w <= tol || w >= 1.0 - tol)
            .count();
        k as f64 / self.0.len() as f64
    }
}

/// Approximated group-loss forms feeding [`build_objective`].
#[derive(Debug, Clone, Default)]
pub struct ObjectiveInputs {
    pub num_samples: usize,
    /// `G_y` forms.
    pub class_forms: BTreeMap<usize, LinearLossForm>,
    /// `G_{y,z}` forms.
    pub pair_forms: BTreeMap<(usize, usize), LinearLossForm>,
    /// Classes of the current task.
    pub current_classes: Vec<usize>,
    pub sensitive_values: Vec<usize>,
    pub counts: Option<GroupCounts>,
}

fn abs_between(a: &LinearLossForm, b: &LinearLossForm, weight: f64) -> Result<AbsTerm> {
    let d = a.difference(b)?;
    Ok(AbsTerm::new(d.constant, d.coeffs, weight))
}

fn lin(form: &LinearLossForm, weight: f64) -> LinTerm {
    LinTerm::new(form.constant, form.coeffs.clone(), weight)
}

pub fn build_objective(
    measure: FairnessMeasure,
    inputs: &ObjectiveInputs,
    lambda: f64,
) -> Result<AbsObjective> {
    let n = inputs.num_samples;
    let mut obj = AbsObjective::new(n);
    match measure {
        FairnessMeasure::Eer => {
            let classes: Vec<&LinearLossForm> = inputs.class_forms.values().collect();
            if classes.is_empty() {
                return Err(Error::Empty(
                    "no class groups for the error-rate objective".into(),
                ));
            }
            let inv = 1.0 / classes.len() as f64;
            let overall = LinearLossForm::combine(n, classes.iter().map(|f| (inv, *f)))?;
            for f in &classes {
                obj.abs_terms.push(abs_between(f, &overall, inv)?);
            }
            let current: Vec<&LinearLossForm> = inputs
                .current_classes
                .iter()
                .filter_map(|y| inputs.class_forms.get(y))
                .collect();
            for f in &current {
                obj.lin_terms.push(lin(f, lambda / current.len() as f64));
            }
        }
        FairnessMeasure::Eo | FairnessMeasure::Dp => {
            if inputs.sensitive_values.is_empty() {
                return Err(Error::Config(format!(
                    "{measure} needs sensitive attributes"
                )));
            }
            let nz = inputs.sensitive_values.len() as f64;
            let classes: BTreeSet<usize> = inputs.pair_forms.keys().map(|k| k.0).collect();
            if classes.is_empty() {
                return Err(Error::Empty(format!(
                    "no (class, sensitive) groups for {measure}"
                )));
            }
            let ny = classes.len() as f64;
            let (pairs, refs) = if measure == FairnessMeasure::Dp {
                let counts = inputs.counts.as_ref().ok_or_else(|| {
                    Error::Missing("demographic parity needs group counts".into())
                })?;
                let keyed = inputs
                    .pair_forms
                    .iter()
                    .map(|(&(y, z), f)| (GroupKey::pair(y, z), f.clone()))
                    .collect();
                let dp = dp_scale(&keyed, counts, &inputs.sensitive_values)?;
                let pairs = dp
                    .groups
                    .into_iter()
                    .map(|(k, f)| ((k.class, k.sensitive.unwrap_or(0)), f))
                    .collect();
                (pairs, dp.classes)
            } else {
                (inputs.pair_forms.clone(), inputs.class_forms.clone())
            };
            for &y in &classes {
                let reference = refs
                    .get(&y)
                    .ok_or_else(|| Error::Missing(format!("no class-level form for class {y}")))?;
                for &z in &inputs.sensitive_values {
                    match pairs.get(&(y, z)) {
                        Some(f) => obj
                            .abs_terms
                            .push(abs_between(f, reference, 1.0 / (ny * nz))?),
                        None => log::warn!(
                            "group y{y}_z{z} is empty; dropped from the {measure} objective"
                        ),
                    }
                }
            }
            let current: Vec<usize> = inputs
                .current_classes
                .iter()
                .copied()
                .filter(|y| classes.contains(y))
                .collect();
            for &y in &current {
                for &z in &inputs.sensitive_values {
                    if let Some(f) = inputs.pair_forms.get(&(y, z)) {
                        obj.lin_terms
                            .push(lin(f, lambda / (current.len() as f64 * nz)));
                    }
                }
            }
        }
    }
    obj.validate()?;
    Ok(obj)
}

/// Weights plus the objective values needed to audit them.
#[derive(Debug, Clone, PartialEq)]
pub struct FswOutcome {
    pub weights: WeightVector,
    pub objective: AbsObjective,
    pub objective_at_optimum: f64,
    pub objective_at_ones: f64,
    pub lp_iterations: usize,
}

fn sorted_unique(it: impl Iterator<Item = usize>) -> Vec<usize> {
    it.collect::<BTreeSet<_>>().into_iter().collect()
}

/// Gathers group forms for `task` (current) and `buffer` (previous tasks) against `model`.
pub fn objective_inputs(
    task: &[Sample],
    buffer: &[Sample],
    model: &MlpModel,
    cfg: &FswConfig,
) -> Result<ObjectiveInputs> {
    if task.is_empty() {
        return Err(Error::Empty("current task has no samples".into()));
    }
    let grads = sample_gradients(model, task, cfg.normalize_sample_grads)?;
    let class_stats = compute_group_stats(
        model,
        task,
        buffer,
        GroupingMode::Class,
        cfg.normalize_group_grads,
    )?;
    let class_forms = linear_forms(&class_stats, &grads, cfg.alpha)?
        .into_iter()
        .map(|(k, f)| (k.class, f))
        .collect();
    let mut inputs = ObjectiveInputs {
        num_samples: task.len(),
        class_forms,
        current_classes: sorted_unique(task.iter().map(|s| s.label)),
        ..ObjectiveInputs::default()
    };
    if cfg.measure.needs_sensitive() {
        if task.iter().chain(buffer).any(|s| s.sensitive.is_none()) {
            return Err(Error::Config(format!(
                "{} needs a sensitive attribute on every sample",
                cfg.measure
            )));
        }
        let pair_stats = compute_group_stats(
            model,
            task,
            buffer,
            GroupingMode::ClassSensitive,
            cfg.normalize_group_grads,
        )?;
        inputs.pair_forms = linear_forms(&pair_stats, &grads, cfg.alpha)?
            .into_iter()
            .map(|(k, f)| ((k.class, k.sensitive.unwrap_or(0)), f))
            .collect();
        inputs.sensitive_values =
            sorted_unique(task.iter().chain(buffer).filter_map(|s| s.sensitive));
        if cfg.measure == FairnessMeasure::Dp {
            inputs.counts = Some(GroupCounts::from_samples(task.iter().chain(buffer))?);
        }
    }
    Ok(inputs)
}

/// Solves for the weights of every current-task sample against a model snapshot.
pub fn fsw_weights(
    task: &[Sample],
    buffer: &[Sample],
    model: &MlpModel,
    cfg: &FswConfig,
) -> Result<FswOutcome> {
    cfg.validate()?;
    let inputs = objective_inputs(task, buffer, model, cfg)?;
    let objective = build_objective(cfg.measure, &inputs, cfg.lambda)?;
    solve_objective(objective)
}

pub fn solve_objective(objective: AbsObjective) -> Result<FswOutcome> {
    let lp = build_abs_lp(&objective)?;
    let sol = solve_lp(&lp)?;
    if sol.status != LpStatus::Optimal {
        return Err(Error::Solver(format!(
            "weighting LP reported {:?} after {} iterations ({} variables, {} constraints)",
            sol.status,
            sol.iterations,
            lp.num_vars(),
            lp.num_constraints()
        )));
    }
    let values = sol.decision().iter().map(|w| w.clamp(0.0, 1.0)).collect();
    let weights = WeightVector::new(values)?;
    let objective_at_optimum = objective.value(weights.values());
    let objective_at_ones = objective.value(&vec![1.0; objective.num_vars]);
    Ok(FswOutcome {
        weights,
        objective,
        objective_at_optimum,
        objective_at_ones,
        lp_iterations: sol.iterations,
    })
}

/// Weight counts per current-task group over equal-width bins of `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub group: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
}

pub fn weight_histogram(
    task: &[Sample],
    weights: &WeightVector,
    bins: usize,
) -> Result<Vec<HistogramRow>> {
    if task.len() != weights.len() {
        return Err(Error::Dimension(format!(
            "{} samples but {} weights",
            task.len(),
            weights.len()
        )));
    }
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let mode = if task.iter().all(|s| s.sensitive.is_some()) {
        GroupingMode::ClassSensitive
    } else {
        GroupingMode::Class
    };
    let mut rows = Vec::new();
    for (key, members) in group_index(task, mode)? {
        let mut counts = vec![0usize; bins];
        for &i in &members {
            let b = ((weights.values()[i] * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, count) in counts.into_iter().enumerate() {
            rows.push(HistogramRow {
                group: key.to_string(),
                bin_lo: b as f64 / bins as f64,
                bin_hi: (b + 1) as f64 / bins as f64,
                count,
            });
        }
    }
    Ok(rows)
}

pub fn write_histogram_csv<W: Write>(rows: &[HistogramRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::io("<histogram>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<histogram>", e))?;
    Ok(())
}
