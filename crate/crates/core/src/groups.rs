//! Sensitive-group indexing, per-group loss/gradient statistics and the affine
//! post-update loss forms shared by every fairness objective.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{cross_entropy, dot, last_layer_grad, GradientVector, MlpModel, Sample};

/// `G_y` when `sensitive` is `None`, otherwise `G_{y,z}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub class: usize,
    pub sensitive: Option<usize>,
}

impl GroupKey {
    pub fn class(class: usize) -> Self {
        Self {
            class,
            sensitive: None,
        }
    }

    pub fn pair(class: usize, sensitive: usize) -> Self {
        Self {
            class,
            sensitive: Some(sensitive),
        }
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sensitive {
            Some(z) => write!(f, "y{}_z{}", self.class, z),
            None => write!(f, "y{}", self.class),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupingMode {
    Class,
    ClassSensitive,
}

/// Sample positions per group, positions ascending.
pub type GroupIndex = BTreeMap<GroupKey, Vec<usize>>;

pub fn group_index(samples: &[Sample], mode: GroupingMode) -> Result<GroupIndex> {
    let mut index = GroupIndex::new();
    for (i, s) in samples.iter().enumerate() {
        let key = match mode {
            GroupingMode::Class => GroupKey::class(s.label),
            GroupingMode::ClassSensitive => match s.sensitive {
                Some(z) => GroupKey::pair(s.label, z),
                None => {
                    return Err(Error::Missing(format!(
                        "sample {i} has no sensitive attribute but grouping needs one"
                    )))
                }
            },
        };
        index.entry(key).or_default().push(i);
    }
    Ok(index)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub key: GroupKey,
    pub count: usize,
    /// Mean cross-entropy in nats.
    pub loss: f64,
    /// Mean last-layer gradient, unit-normalized when requested.
    #[serde(skip)]
    pub avg_grad: Option<GradientVector>,
}

impl GroupStats {
    pub fn gradient(&self) -> &GradientVector {
        self.avg_grad
            .as_ref()
            .expect("gradient present on computed stats")
    }
}

fn stats_for(
    model: &MlpModel,
    key: GroupKey,
    members: Vec<Sample>,
    normalize: bool,
) -> Result<GroupStats> {
    let feats: Vec<&[f64]> = members.iter().map(|s| s.features.as_slice()).collect();
    let probs = model.forward(&feats)?;
    let labels: Vec<usize> = members.iter().map(|s| s.label).collect();
    let loss = cross_entropy(&probs, &labels)?.loss;
    let grad = last_layer_grad(model, &members)?;
    let grad = if normalize { grad.to_unit() } else { grad };
    if grad.degenerate {
        log::warn!("group {key} has a zero mean gradient");
    }
    Ok(GroupStats {
        key,
        count: members.len(),
        loss,
        avg_grad: Some(grad),
    })
}

/// Current-task groups are measured on `current`, previous-task groups on `buffer`.
pub fn compute_group_stats(
    model: &MlpModel,
    current: &[Sample],
    buffer: &[Sample],
    mode: GroupingMode,
    normalize: bool,
) -> Result<BTreeMap<GroupKey, GroupStats>> {
    let mut jobs: Vec<(GroupKey, Vec<Sample>)> = Vec::new();
    let cur = group_index(current, mode)?;
    let prev = group_index(buffer, mode)?;
    for (key, members) in &prev {
        if cur.contains_key(key) {
            return Err(Error::Config(format!(
                "group {key} occurs in both the current task and the buffer"
            )));
        }
        jobs.push((*key, members.iter().map(|&i| buffer[i].clone()).collect()));
    }
    for (key, members) in &cur {
        jobs.push((*key, members.iter().map(|&i| current[i].clone()).collect()));
    }
    jobs.into_par_iter()
        .map(|(key, members)| stats_for(model, key, members, normalize).map(|s| (key, s)))
        .collect()
}

/// Last-layer gradient of every sample, in input order.
pub fn sample_gradients(
    model: &MlpModel,
    samples: &[Sample],
    normalize: bool,
) -> Result<Vec<GradientVector>> {
    samples
        .par_iter()
        .map(|s| {
            let g = model.sample_last_layer_grad(s)?;
            Ok(if normalize { g.to_unit() } else { g })
        })
        .collect()
}

/// Approximate post-update loss `constant − coeffs·w`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLossForm {
    pub constant: f64,
    pub coeffs: Vec<f64>,
}

impl LinearLossForm {
    pub fn new(constant: f64, coeffs: Vec<f64>) -> Self {
        Self { constant, coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            constant: factor * self.constant,
            coeffs: self.coeffs.iter().map(|b| factor * b).collect(),
        }
    }

    /// `Σ factor·form`; all forms must share a length.
    pub fn combine<'a>(
        n: usize,
        parts: impl IntoIterator<Item = (f64, &'a LinearLossForm)>,
    ) -> Result<Self> {
        let mut out = Self::new(0.0, vec![0.0; n]);
        for (factor, form) in parts {
            if form.len() != n {
                return Err(Error::Dimension(format!(
                    "form of length {} in a sum of length {n}",
                    form.len()
                )));
            }
            out.constant += factor * form.constant;
            for (o, b) in out.coeffs.iter_mut().zip(&form.coeffs) {
                *o += factor * b;
            }
        }
        Ok(out)
    }

    pub fn difference(&self, other: &Self) -> Result<Self> {
        Self::combine(self.len(), [(1.0, self), (-1.0, other)])
    }
}

pub fn approx_group_loss(form: &LinearLossForm, w: &[f64]) -> Result<f64> {
    if w.len() != form.coeffs.len() {
        return Err(Error::Dimension(format!(
            "{} weights for a form over {} samples",
            w.len(),
            form.coeffs.len()
        )));
    }
    Ok(form.constant - dot(&form.coeffs, w))
}

/// `b_G[i] = (alpha/|T|)·⟨grad(G), grad(d_i)⟩` and `a_G = loss(G)`.
pub fn linear_forms(
    stats: &BTreeMap<GroupKey, GroupStats>,
    sample_grads: &[GradientVector],
    alpha: f64,
) -> Result<BTreeMap<GroupKey, LinearLossForm>> {
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!(
            "step scale must be finite and nonnegative, got {alpha}"
        )));
    }
    if sample_grads.is_empty() {
        return Err(Error::Empty("no current-task gradients".into()));
    }
    let scale = alpha / sample_grads.len() as f64;
    stats
        .iter()
        .map(|(key, st)| {
            let g = st.gradient();
            if let Some(bad) = sample_grads.iter().find(|s| s.len() != g.len()) {
                return Err(Error::Dimension(format!(
                    "sample gradient of length {} vs group gradient of length {}",
                    bad.len(),
                    g.len()
                )));
            }
            let coeffs = sample_grads.iter().map(|s| scale * g.dot(s)).collect();
            Ok((*key, LinearLossForm::new(st.loss, coeffs)))
        })
        .collect()
}

/// Sample counts per (class, sensitive) cell and per sensitive value.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GroupCounts {
    pub m_yz: BTreeMap<(usize, usize), usize>,
    pub m_star_z: BTreeMap<usize, usize>,
}

impl GroupCounts {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>) -> Result<Self> {
        let mut out = Self::default();
        for s in samples {
            let z = s
                .sensitive
                .ok_or_else(|| Error::Missing("group counts need sensitive attributes".into()))?;
            *out.m_yz.entry((s.label, z)).or_default() += 1;
            *out.m_star_z.entry(z).or_default() += 1;
        }
        Ok(out)
    }

    pub fn factor(&self, class: usize, sensitive: usize) -> Result<f64> {
        let total = self.m_star_z.get(&sensitive).copied().unwrap_or(0);
        if total == 0 {
            return Err(Error::Empty(format!(
                "no samples with sensitive value {sensitive}"
            )));
        }
        let cell = self.m_yz.get(&(class, sensitive)).copied().unwrap_or(0);
        Ok(cell as f64 / total as f64)
    }
}

/// Count-scaled forms for demographic parity.
#[derive(Debug, Clone, PartialEq)]
pub struct DpForms {
    /// `ℓ′(G_{y,z}) = (m_yz/m_*z)·ℓ̃(G_{y,z})`.
    pub groups: BTreeMap<GroupKey, LinearLossForm>,
    /// `ℓ′(G_y) = (1/|Z|) Σ_z ℓ′(G_{y,z})`; absent cells contribute zero.
    pub classes: BTreeMap<usize, LinearLossForm>,
}

pub fn dp_scale(
    forms: &BTreeMap<GroupKey, LinearLossForm>,
    counts: &GroupCounts,
    sensitive_values: &[usize],
) -> Result<DpForms> {
    if sensitive_values.is_empty() {
        return Err(Error::Config(
            "demographic parity needs sensitive values".into(),
        ));
    }
    let mut groups = BTreeMap::new();
    for (key, form) in forms {
        let z = key
            .sensitive
            .ok_or_else(|| Error::Config(format!("group {key} has no sensitive attribute")))?;
        if !counts.m_yz.contains_key(&(key.class, z)) {
            return Err(Error::Missing(format!("no count for group {key}")));
        }
        groups.insert(*key, form.scaled(counts.factor(key.class, z)?));
    }
    let n = forms.values().next().map_or(0, LinearLossForm::len);
    let mut classes = BTreeMap::new();
    let inv = 1.0 / sensitive_values.len() as f64;
    for key in groups.keys() {
        if classes.contains_key(&key.class) {
            continue;
        }
        let parts = sensitive_values
            .iter()
            .filter_map(|&z| groups.get(&GroupKey::pair(key.class, z)).map(|f| (inv, f)));
        classes.insert(key.class, LinearLossForm::combine(n, parts)?);
    }
    Ok(DpForms { groups, classes })
}
