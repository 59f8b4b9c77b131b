//! Fixed-budget exemplar memory.
//!
//! Each class keeps an ordered list of training-sample identifiers. Herding
//! lists are built greedily, so any prefix is itself the herding selection of
//! that size; shrinking a class's quota is plain truncation.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    Herding,
    Random,
}

/// Greedy herding: each pick is the unchosen sample that brings the mean of
/// the selected features closest (2-norm) to the class mean. Ties go to the
/// lowest index. Returns indices in selection order.
pub fn herding_select(features: &[Vec<f64>], m: usize) -> Result<Vec<usize>> {
    let n = features.len();
    if n == 0 {
        return Err(Error::invalid("herding on an empty class"));
    }
    if m > n {
        return Err(Error::invalid(format!("cannot select {m} of {n} samples")));
    }
    let d = features[0].len();
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::invalid("feature vectors differ in length"));
    }
    let mut mu = vec![0.0; d];
    for f in features {
        for (a, b) in mu.iter_mut().zip(f) {
            *a += b;
        }
    }
    mu.iter_mut().for_each(|v| *v /= n as f64);

    let mut chosen = vec![false; n];
    let mut running = vec![0.0; d];
    let mut order = Vec::with_capacity(m);
    for k in 1..=m {
        let mut best: Option<(usize, f64)> = None;
        for (i, f) in features.iter().enumerate() {
            if chosen[i] {
                continue;
            }
            let dist: f64 = running
                .iter()
                .zip(f)
                .zip(&mu)
                .map(|((s, x), u)| {
                    let gap = u - (s + x) / k as f64;
                    gap * gap
                })
                .sum();
            if best.is_none_or(|(_, b)| dist < b) {
                best = Some((i, dist));
            }
        }
        let (i, _) = best.expect("m <= n leaves a candidate");
        chosen[i] = true;
        for (s, x) in running.iter_mut().zip(&features[i]) {
            *s += x;
        }
        order.push(i);
    }
    Ok(order)
}

/// Uniform sample of `m` of `0..n` without replacement, in draw order.
pub fn random_select(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::invalid(format!("cannot select {m} of {n} samples")));
    }
    let mut rng = seed::rng(seed, "random-select", &[]);
    Ok(rand::seq::index::sample(&mut rng, n, m).into_vec())
}

/// Per-class quotas: `floor(budget / classes)` each, with the remainder
/// handed one apiece to the lowest labels.
pub fn quotas(labels: &BTreeSet<usize>, budget: usize) -> Result<BTreeMap<usize, usize>> {
    let n = labels.len();
    if n == 0 {
        return Ok(BTreeMap::new());
    }
    let base = budget / n;
    let extra = budget % n;
    if base == 0 {
        return Err(Error::Config(format!(
            "memory budget {budget} is too small for {n} classes (quota 0)"
        )));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(rank, &l)| (l, base + usize::from(rank < extra)))
        .collect())
}

/// Samples of one newly learned class offered to [`ExemplarMemory::rebalance`].
#[derive(Clone, Debug)]
pub struct ClassCandidates {
    pub label: usize,
    /// Identifiers (training-set indices) of the class's samples.
    pub sample_ids: Vec<usize>,
    /// Extractor features aligned with `sample_ids`; only herding reads them.
    pub features: Vec<Vec<f64>>,
}

/// Rehearsal store keyed by class label. Serialized as the memory manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExemplarMemory {
    pub budget: usize,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    pub per_class: BTreeMap<usize, Vec<usize>>,
}

impl ExemplarMemory {
    pub fn new(budget: usize, strategy: SelectionStrategy, seed: u64) -> Self {
        Self {
            budget,
            strategy,
            seed,
            per_class: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.per_class.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> BTreeSet<usize> {
        self.per_class.keys().copied().collect()
    }

    /// Shrinks existing classes to the new quota and selects exemplars for
    /// the newly learned classes.
    pub fn rebalance(&mut self, new_classes: &[ClassCandidates]) -> Result<()> {
        let mut labels = self.classes();
        for c in new_classes {
            if !labels.insert(c.label) {
                return Err(Error::invalid(format!("class {} is already in memory", c.label)));
            }
            if self.strategy == SelectionStrategy::Herding && c.features.len() != c.sample_ids.len() {
                return Err(Error::invalid(format!(
                    "class {} has {} samples but {} feature vectors",
                    c.label,
                    c.sample_ids.len(),
                    c.features.len()
                )));
            }
        }
        let quota = quotas(&labels, self.budget)?;
        for (label, list) in self.per_class.iter_mut() {
            list.truncate(quota[label]);
        }
        for c in new_classes {
            let m = quota[&c.label].min(c.sample_ids.len());
            let picks = if c.sample_ids.is_empty() {
                Vec::new()
            } else {
                match self.strategy {
                    SelectionStrategy::Herding => herding_select(&c.features, m)?,
                    SelectionStrategy::Random => random_select(
                        c.sample_ids.len(),
                        m,
                        seed::derive(self.seed, "memory", &[c.label as u64]),
                    )?,
                }
            };
            self.per_class
                .insert(c.label, picks.into_iter().map(|i| c.sample_ids[i]).collect());
        }
        Ok(())
    }

    /// Stored exemplars in label order.
    pub fn sample_ids(&self) -> Vec<usize> {
        self.per_class.values().flatten().copied().collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Stored exemplars followed by the new step's samples.
pub fn training_pool(memory: &ExemplarMemory, new_data: &[usize]) -> Vec<usize> {
    let mut pool = memory.sample_ids();
    pool.extend_from_slice(new_data);
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_features(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seed::rng(seed, "feat", &[]);
        (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn herding_first_pick_is_closest_to_mean() {
        let f = random_features(9, 3, 1);
        let mu: Vec<f64> = (0..3).map(|j| f.iter().map(|v| v[j]).sum::<f64>() / 9.0).collect();
        let closest = (0..9)
            .min_by(|&a, &b| {
                let da: f64 = f[a].iter().zip(&mu).map(|(x, u)| (x - u).powi(2)).sum();
                let db: f64 = f[b].iter().zip(&mu).map(|(x, u)| (x - u).powi(2)).sum();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        assert_eq!(herding_select(&f, 1).unwrap(), vec![closest]);
    }

    #[test]
    fn herding_identical_features_ties_to_lowest() {
        let f = vec![vec![0.5, 2.0]; 6];
        assert_eq!(herding_select(&f, 4).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn herding_errors() {
        assert!(herding_select(&[], 0).is_err());
        assert!(herding_select(&random_features(2, 2, 0), 3).is_err());
    }

    #[test]
    fn random_select_full_is_permutation() {
        let mut p = random_select(7, 7, 3).unwrap();
        p.sort_unstable();
        assert_eq!(p, (0..7).collect::<Vec<_>>());
        assert_eq!(random_select(20, 5, 11).unwrap(), random_select(20, 5, 11).unwrap());
        assert!(random_select(2, 3, 0).is_err());
    }

    #[test]
    fn quota_examples() {
        let q = quotas(&(0..20).collect(), 2000).unwrap();
        assert!(q.values().all(|&v| v == 100));
        let q = quotas(&(0..100).collect(), 2000).unwrap();
        assert!(q.values().all(|&v| v == 20));
        let q = quotas(&[3, 1, 2].into_iter().collect(), 10).unwrap();
        assert_eq!(q.into_iter().collect::<Vec<_>>(), vec![(1, 4), (2, 3), (3, 3)]);
        assert!(matches!(quotas(&(0..11).collect(), 10), Err(Error::Config(_))));
    }

    fn candidates(label: usize, n: usize, first_id: usize) -> ClassCandidates {
        ClassCandidates {
            label,
            sample_ids: (first_id..first_id + n).collect(),
            features: random_features(n, 3, label as u64),
        }
    }

    #[test]
    fn rebalance_shrinks_by_truncation() {
        let mut m = ExemplarMemory::new(12, SelectionStrategy::Herding, 0);
        m.rebalance(&[candidates(0, 10, 0), candidates(1, 10, 10)]).unwrap();
        assert_eq!(m.per_class[&0].len(), 6);
        let before = m.per_class[&0].clone();
        m.rebalance(&[candidates(2, 10, 20), candidates(3, 10, 30)]).unwrap();
        assert_eq!(m.per_class[&0], before[..3]);
        assert_eq!(m.len(), 12);
    }

    #[test]
    fn rebalance_rejects_duplicate_class() {
        let mut m = ExemplarMemory::new(12, SelectionStrategy::Random, 0);
        m.rebalance(&[candidates(0, 4, 0)]).unwrap();
        assert!(m.rebalance(&[candidates(0, 4, 0)]).is_err());
    }

    #[test]
    fn training_pool_cardinality() {
        let empty = ExemplarMemory::new(40, SelectionStrategy::Herding, 0);
        let new: Vec<usize> = (100..300).collect();
        assert_eq!(training_pool(&empty, &new), new);
        let mut m = ExemplarMemory::new(40, SelectionStrategy::Herding, 0);
        m.rebalance(&[candidates(0, 30, 0), candidates(1, 30, 30)]).unwrap();
        assert_eq!(training_pool(&m, &new).len(), 240);
    }

    #[test]
    fn manifest_round_trip_reproduces_pool() {
        let mut m = ExemplarMemory::new(9, SelectionStrategy::Random, 5);
        m.rebalance(&[candidates(4, 7, 0), candidates(2, 7, 7)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("memory.json");
        m.save(&p).unwrap();
        let back = ExemplarMemory::load(&p).unwrap();
        assert_eq!(back, m);
        assert_eq!(training_pool(&back, &[1, 2]), training_pool(&m, &[1, 2]));
    }

    proptest! {
        #[test]
        fn herding_prefix_and_determinism(n in 1usize..12, seed in any::<u64>()) {
            let f = random_features(n, 4, seed);
            let full = herding_select(&f, n).unwrap();
            prop_assert_eq!(&full, &herding_select(&f, n).unwrap());
            for m in 0..=n {
                prop_assert_eq!(&herding_select(&f, m).unwrap()[..], &full[..m]);
            }
        }

        #[test]
        fn budget_and_balance_hold(
            budget in 10usize..80,
            steps in prop::collection::vec(1usize..4, 1..6),
            herding in any::<bool>(),
        ) {
            let strategy = if herding { SelectionStrategy::Herding } else { SelectionStrategy::Random };
            let mut m = ExemplarMemory::new(budget, strategy, 1);
            let mut label = 0;
            for k in steps {
                let batch: Vec<_> = (0..k).map(|i| candidates(label + i, 30, (label + i) * 30)).collect();
                label += k;
                if m.rebalance(&batch).is_err() {
                    prop_assert!(label > budget);
                    break;
                }
                prop_assert!(m.len() <= budget);
                let counts: Vec<usize> = m.per_class.values().map(Vec::len).collect();
                let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
                prop_assert!(hi - lo <= 1);
            }
        }
    }
}
