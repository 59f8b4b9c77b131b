use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::{seed, Error, Result};

/// Gaussian clusters around the vertices of a seeded random regular simplex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticDatasetSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    /// Distance between any two class means.
    pub separation: f64,
    /// Per-coordinate standard deviation around the class mean.
    pub noise: f64,
    pub seed: u64,
}

impl SyntheticDatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.input_dim == 0 || self.train_per_class == 0 {
            return Err(Error::Config(
                "dataset.synthetic: num_classes, input_dim and train_per_class must be positive".into(),
            ));
        }
        if !(self.separation.is_finite() && self.separation >= 0.0 && self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(
                "dataset.synthetic: separation and noise must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Class means. With `input_dim >= num_classes` they form a regular
    /// simplex with edge length `separation`; otherwise they are random
    /// directions of the same radius.
    pub fn class_means(&self) -> Vec<Vec<f64>> {
        let (k, d) = (self.num_classes, self.input_dim);
        let mut rng = seed::rng(self.seed, "synthetic-means", &[]);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
        while basis.len() < k {
            let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            if k <= d {
                for b in &basis {
                    let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        let centroid: Vec<f64> = (0..d).map(|j| basis.iter().map(|b| b[j]).sum::<f64>() / k as f64).collect();
        let scale = self.separation / std::f64::consts::SQRT_2;
        basis
            .into_iter()
            .map(|b| {
                b.iter()
                    .zip(&centroid)
                    .map(|(x, c)| if k <= d { (x - c) * scale } else { x * scale })
                    .collect()
            })
            .collect()
    }
}

fn sample_split(spec: &SyntheticDatasetSpec, means: &[Vec<f64>], per_class: usize, tag: &str) -> Dataset {
    let d = spec.input_dim;
    let mut inputs = Vec::with_capacity(spec.num_classes * per_class * d);
    let mut labels = Vec::with_capacity(spec.num_classes * per_class);
    for (k, mean) in means.iter().enumerate() {
        let mut rng = seed::rng(spec.seed, tag, &[k as u64]);
        for _ in 0..per_class {
            for &m in mean {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(m + spec.noise * z);
            }
            labels.push(k);
        }
    }
    Dataset::new(d, inputs, labels, spec.num_classes)
}

/// `(train, test)` datasets, deterministic under `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticDatasetSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let means = spec.class_means();
    Ok((
        sample_split(spec, &means, spec.train_per_class, "synthetic-train"),
        sample_split(spec, &means, spec.test_per_class, "synthetic-test"),
    ))
}
