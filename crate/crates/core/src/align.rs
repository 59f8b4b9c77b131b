//! Weight aligning and the related head corrections.
//!
//! After a step is trained, the new-class columns of the head are multiplied
//! by `gamma = Mean(Norm_old) / Mean(Norm_new)`. A single positive scale per
//! group keeps the relative norms (and logit rankings) within each group
//! while equalizing the mean norm across groups. Scaling weights is the same
//! as scaling the new-class logits, see [`corrected_logits`].

use ndarray::{s, Array2, ArrayView1, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::model::ClassifierHead;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    OneNorm,
    #[default]
    TwoNorm,
}

impl NormKind {
    pub fn of(self, v: ArrayView1<'_, f64>) -> f64 {
        match self {
            NormKind::OneNorm => v.iter().map(|x| x.abs()).sum(),
            NormKind::TwoNorm => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }
}

/// Per-class weight norms split into old and new groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub old_norms: Vec<f64>,
    pub new_norms: Vec<f64>,
    /// Absent at the first step, where there are no old classes.
    pub mean_old: Option<f64>,
    pub mean_new: f64,
    /// `mean_old / mean_new`; absent when there are no old classes.
    pub gamma: Option<f64>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn weight_norms(head: &ClassifierHead, kind: NormKind) -> Result<NormReport> {
    let norms: Vec<f64> = head.weights().columns().into_iter().map(|c| kind.of(c)).collect();
    let (old, new) = norms.split_at(head.old_count());
    let mean_new = mean(new).ok_or_else(|| Error::invalid("head has no new classes"))?;
    if mean_new.is_nan() || mean_new <= 0.0 {
        return Err(Error::DegenerateWeights(
            "mean norm of new-class weights is zero".into(),
        ));
    }
    let mean_old = mean(old);
    Ok(NormReport {
        kind,
        old_norms: old.to_vec(),
        new_norms: new.to_vec(),
        mean_old,
        mean_new,
        gamma: mean_old.map(|m| m / mean_new),
    })
}

/// Multiplies the new-class columns (and new-class bias entries, if any) by
/// `gamma`. Returns the corrected head and the `gamma` used.
pub fn align_weights_with_gamma(head: &ClassifierHead, kind: NormKind) -> Result<(ClassifierHead, f64)> {
    if head.old_count() == 0 {
        return Err(Error::NoOldClasses);
    }
    let gamma = weight_norms(head, kind)?.gamma.expect("old classes present");
    let split = head.old_count();
    let mut weights = head.weights().clone();
    weights.slice_mut(s![.., split..]).mapv_inplace(|w| w * gamma);
    let bias = head.bias().map(|b| {
        let mut b = b.clone();
        b.slice_mut(s![split..]).mapv_inplace(|v| v * gamma);
        b
    });
    Ok((head.with_parts(weights, bias), gamma))
}

pub fn align_weights(head: &ClassifierHead, kind: NormKind) -> Result<ClassifierHead> {
    align_weights_with_gamma(head, kind).map(|(h, _)| h)
}

/// `(o_old, gamma * o_new)`.
pub fn corrected_logits(old: &[f64], new: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    Ok(old.iter().copied().chain(new.iter().map(|v| gamma * v)).collect())
}

/// Projects every weight onto `[0, inf)`. The bias is left alone.
pub fn clip_weights_nonnegative(head: &ClassifierHead) -> ClassifierHead {
    let mut h = head.clone();
    clip_in_place(&mut h);
    h
}

pub(crate) fn clip_in_place(head: &mut ClassifierHead) {
    head.weights_mut().mapv_inplace(|w| w.max(0.0));
}

fn normalize_columns(weights: &Array2<f64>, kind: NormKind) -> Result<Array2<f64>> {
    let mut out = weights.clone();
    for (c, mut col) in out.axis_iter_mut(Axis(1)).enumerate() {
        let n = kind.of(col.view());
        if n.is_nan() || n <= 0.0 {
            return Err(Error::DegenerateWeights(format!("column {c} has zero norm")));
        }
        col.mapv_inplace(|w| w / n);
    }
    Ok(out)
}

/// Rescales every column to unit norm after training.
pub fn unit_norm_postprocess(head: &ClassifierHead, kind: NormKind) -> Result<ClassifierHead> {
    let weights = normalize_columns(head.weights(), kind)?;
    Ok(head.with_parts(weights, head.bias().cloned()))
}

/// Effective weights of the weight-normalization layer: each column divided
/// by its 2-norm. The raw weights stay the trainable parameters.
pub fn weight_normalization_hook(head: &ClassifierHead) -> Result<Array2<f64>> {
    normalize_columns(head.weights(), NormKind::TwoNorm)
}

/// Chain rule through [`weight_normalization_hook`]: for raw column `w` with
/// `u = w / |w|`, `dL/dw = (g - (g . u) u) / |w|` where `g = dL/du`.
pub fn weight_normalization_backward(raw: &Array2<f64>, grad_effective: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = Array2::zeros(raw.dim());
    for (c, ((w, g), mut o)) in raw
        .axis_iter(Axis(1))
        .zip(grad_effective.axis_iter(Axis(1)))
        .zip(out.axis_iter_mut(Axis(1)))
        .enumerate()
    {
        let n = NormKind::TwoNorm.of(w);
        if n.is_nan() || n <= 0.0 {
            return Err(Error::DegenerateWeights(format!("column {c} has zero norm")));
        }
        let proj: f64 = w.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() / n;
        Zip::from(&mut o).and(&w).and(&g).for_each(|o, &wi, &gi| {
            *o = (gi - proj * wi / n) / n;
        });
    }
    Ok(out)
}
