use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Ordered partition of dataset labels into incremental batches.
///
/// Heads index classes in schedule order: the `j`-th label of
/// [`class_order`](Self::class_order) owns head column `j`, so the classes of
/// batch `k` occupy columns `old_count(k)..old_count(k) + step_size(k)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSchedule {
    batches: Vec<Vec<usize>>,
}

impl TaskSchedule {
    pub fn new(batches: Vec<Vec<usize>>) -> Result<Self> {
        if batches.is_empty() {
            return Err(Error::invalid("schedule needs at least one batch"));
        }
        let mut seen = BTreeSet::new();
        for (k, batch) in batches.iter().enumerate() {
            if batch.is_empty() {
                return Err(Error::invalid(format!("batch {} is empty", k + 1)));
            }
            for &label in batch {
                if !seen.insert(label) {
                    return Err(Error::invalid(format!("label {label} appears in more than one batch")));
                }
            }
        }
        Ok(Self { batches })
    }

    /// Splits `order` into consecutive batches of the given sizes.
    pub fn from_order(order: &[usize], step_sizes: &[usize]) -> Result<Self> {
        let total: usize = step_sizes.iter().sum();
        if total != order.len() {
            return Err(Error::invalid(format!(
                "step sizes sum to {total} but the class order has {} labels",
                order.len()
            )));
        }
        let mut batches = Vec::with_capacity(step_sizes.len());
        let mut at = 0;
        for &n in step_sizes {
            batches.push(order[at..at + n].to_vec());
            at += n;
        }
        Self::new(batches)
    }

    /// The single-batch schedule used for joint (upper-bound) training.
    pub fn joint(&self) -> Self {
        Self {
            batches: vec![self.class_order()],
        }
    }

    pub fn total_steps(&self) -> usize {
        self.batches.len()
    }

    pub fn batch(&self, index: usize) -> &[usize] {
        &self.batches[index]
    }

    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }

    pub fn step_sizes(&self) -> Vec<usize> {
        self.batches.iter().map(Vec::len).collect()
    }

    pub fn step_size(&self, index: usize) -> usize {
        self.batches[index].len()
    }

    /// Classes learned before batch `index`.
    pub fn old_count(&self, index: usize) -> usize {
        self.batches[..index].iter().map(Vec::len).sum()
    }

    pub fn seen_count(&self, index: usize) -> usize {
        self.old_count(index) + self.step_size(index)
    }

    pub fn num_classes(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }

    pub fn class_order(&self) -> Vec<usize> {
        self.batches.concat()
    }

    /// Dataset label to head column.
    pub fn column_of(&self) -> HashMap<usize, usize> {
        self.class_order()
            .into_iter()
            .enumerate()
            .map(|(j, label)| (label, j))
            .collect()
    }

    /// True when the batches partition exactly `0..num_labels`.
    pub fn covers(&self, num_labels: usize) -> bool {
        let labels: BTreeSet<usize> = self.batches.iter().flatten().copied().collect();
        labels.len() == num_labels && labels.iter().copied().eq(0..num_labels)
    }
}
