use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Linear classifier `o = W^T phi + b`. Column `c` of `weights` (shape
/// `d x C_total`) is the weight vector of class `c`. The first `old_count`
/// columns belong to classes learned in earlier steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    weights: Array2<f64>,
    bias: Option<Array1<f64>>,
    old_count: usize,
}

/// How newly added columns are initialized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Zeros,
    /// Zero-mean uniform in `[-h, h]`; `h` defaults to `1/sqrt(d)`.
    Uniform { half_width: Option<f64>, seed: u64 },
}

impl ClassifierHead {
    pub fn new(weights: Array2<f64>, bias: Option<Array1<f64>>, old_count: usize) -> Result<Self> {
        let total = weights.ncols();
        if weights.nrows() == 0 {
            return Err(Error::invalid("head feature dimension must be positive"));
        }
        if old_count >= total {
            return Err(Error::invalid(format!(
                "old_count {old_count} leaves no new classes in a {total}-column head"
            )));
        }
        if let Some(b) = &bias {
            if b.len() != total {
                return Err(Error::invalid(format!(
                    "bias length {} does not match {total} columns",
                    b.len()
                )));
            }
        }
        Ok(Self {
            weights,
            bias,
            old_count,
        })
    }

    /// A fresh first-step head with `classes` columns and no old classes.
    pub fn initial(feature_dim: usize, classes: usize, bias: bool, init: InitSpec) -> Result<Self> {
        if classes == 0 {
            return Err(Error::invalid("a head needs at least one class"));
        }
        let weights = init_columns(feature_dim, classes, init)?;
        let bias = bias.then(|| Array1::zeros(classes));
        Self::new(weights, bias, 0)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weights
    }

    pub fn bias(&self) -> Option<&Array1<f64>> {
        self.bias.as_ref()
    }

    pub(crate) fn bias_mut(&mut self) -> Option<&mut Array1<f64>> {
        self.bias.as_mut()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn num_classes(&self) -> usize {
        self.weights.ncols()
    }

    pub fn old_count(&self) -> usize {
        self.old_count
    }

    pub fn new_count(&self) -> usize {
        self.weights.ncols() - self.old_count
    }

    pub fn column(&self, c: usize) -> ArrayView1<'_, f64> {
        self.weights.column(c)
    }

    pub fn logits(&self, features: &[f64]) -> Result<Array1<f64>> {
        if features.len() != self.feature_dim() {
            return Err(Error::invalid(format!(
                "feature length {} does not match head dimension {}",
                features.len(),
                self.feature_dim()
            )));
        }
        Ok(Array1::from(project(&self.weights, self.bias.as_ref(), features)))
    }

    /// Appends `added` columns initialized per `init`. Existing columns are
    /// copied unchanged and all of them become old classes.
    pub fn expand(&self, added: usize, init: InitSpec) -> Result<Self> {
        if added == 0 {
            return Err(Error::invalid("expand_head needs at least one added class"));
        }
        let fresh = init_columns(self.feature_dim(), added, init)?;
        let weights = concatenate(Axis(1), &[self.weights.view(), fresh.view()])
            .expect("row counts agree");
        let bias = self.bias.as_ref().map(|b| {
            let mut nb = Array1::zeros(b.len() + added);
            nb.slice_mut(s![..b.len()]).assign(b);
            nb
        });
        Ok(Self {
            weights,
            bias,
            old_count: self.num_classes(),
        })
    }

    /// `(W_old, W_new)`; `W_old` has zero columns at the first step.
    pub fn split_weights(&self) -> (Array2<f64>, Array2<f64>) {
        let old = self.weights.slice(s![.., ..self.old_count]).to_owned();
        let new = self.weights.slice(s![.., self.old_count..]).to_owned();
        (old, new)
    }

    pub(crate) fn with_parts(&self, weights: Array2<f64>, bias: Option<Array1<f64>>) -> Self {
        debug_assert_eq!(weights.dim(), self.weights.dim());
        Self {
            weights,
            bias,
            old_count: self.old_count,
        }
    }
}

/// `o_c = w_c . features (+ b_c)` for every column of `weights`.
pub(crate) fn project(weights: &Array2<f64>, bias: Option<&Array1<f64>>, features: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = weights
        .columns()
        .into_iter()
        .map(|w| w.iter().zip(features).map(|(a, b)| a * b).sum())
        .collect();
    if let Some(b) = bias {
        for (o, bc) in out.iter_mut().zip(b) {
            *o += bc;
        }
    }
    out
}

fn init_columns(d: usize, count: usize, init: InitSpec) -> Result<Array2<f64>> {
    match init {
        InitSpec::Zeros => Ok(Array2::zeros((d, count))),
        InitSpec::Uniform { half_width, seed } => {
            let h = half_width.unwrap_or(1.0 / (d as f64).sqrt());
            if !(h.is_finite() && h > 0.0) {
                return Err(Error::invalid(format!("init half-width must be positive, got {h}")));
            }
            let mut rng = seed::rng(seed, "head-init", &[]);
            // column-major fill so a column's values do not depend on d of later columns
            let mut w = Array2::zeros((d, count));
            for mut col in w.columns_mut() {
                for v in col.iter_mut() {
                    *v = rng.random_range(-h..h);
                }
            }
            Ok(w)
        }
    }
}
