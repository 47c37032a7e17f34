//! Fixed-budget replay memory with random per-group selection.

use std::collections::BTreeMap;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::TaskDataset;
use crate::error::Result;
use crate::groups::{group_index, GroupingMode};
use crate::tensor::Sample;

/// Granularity at which the per-group budget applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMode {
    /// Per (class, sensitive) group when sensitive ids exist, else per class.
    #[default]
    PerSensitiveGroup,
    /// Per class regardless of sensitive ids.
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    per_task: BTreeMap<usize, Vec<Sample>>,
    pub budget_per_group: usize,
    pub mode: BudgetMode,
}

impl ReplayBuffer {
    pub fn new(budget_per_group: usize, mode: BudgetMode) -> Self {
        Self {
            per_task: BTreeMap::new(),
            budget_per_group,
            mode,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.per_task.values().all(Vec::is_empty)
    }

    pub fn len(&self) -> usize {
        self.per_task.values().map(Vec::len).sum()
    }

    pub fn task(&self, task_id: usize) -> Option<&[Sample]> {
        self.per_task.get(&task_id).map(Vec::as_slice)
    }

    pub fn task_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_task.keys().copied()
    }

    /// Selects and stores samples for a finished task, replacing any earlier entry for it.
    pub fn store<R: Rng + ?Sized>(&mut self, task: &TaskDataset, rng: &mut R) -> Result<usize> {
        let picked = select_buffer_samples(task, self.budget_per_group, self.mode, rng)?;
        let n = picked.len();
        self.per_task.insert(task.task_id, picked);
        Ok(n)
    }

    /// All stored samples, in task order.
    pub fn merged(&self) -> Vec<Sample> {
        self.per_task.values().flatten().cloned().collect()
    }
}

/// Uniform sampling without replacement inside each group. Undersized groups are kept whole.
///
/// Output is ordered by group key, then by original position within the task.
pub fn select_buffer_samples<R: Rng + ?Sized>(
    task: &TaskDataset,
    budget_per_group: usize,
    mode: BudgetMode,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if budget_per_group == 0 || task.samples.is_empty() {
        return Ok(Vec::new());
    }
    let has_z = task.samples.iter().all(|s| s.sensitive.is_some());
    let grouping = match mode {
        BudgetMode::PerSensitiveGroup if has_z => GroupingMode::ClassSensitive,
        _ => GroupingMode::Class,
    };
    let index = group_index(&task.samples, grouping)?;
    let mut out = Vec::new();
    for members in index.values() {
        if members.len() <= budget_per_group {
            out.extend(members.iter().map(|&i| task.samples[i].clone()));
        } else {
            let mut chosen = sample_indices(rng, members.len(), budget_per_group).into_vec();
            chosen.sort_unstable();
            out.extend(chosen.into_iter().map(|k| task.samples[members[k]].clone()));
        }
    }
    Ok(out)
}
