//! Cross-entropy, temperature distillation over old-class logits, and their
//! class-count-balanced combination. All functions act on a single sample;
//! minibatch losses are averaged by the trainer.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    /// Fixed balance weight; when absent it follows `C_old / (C_old + C_new)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_override: Option<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: 2.0,
            lambda_override: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if let Some(l) = self.lambda_override {
            if !(0.0..=1.0).contains(&l) {
                return Err(Error::invalid(format!("lambda_override must lie in [0, 1], got {l}")));
            }
        }
        Ok(())
    }

    pub fn lambda(&self, c_old: usize, c_new: usize) -> f64 {
        self.lambda_override.unwrap_or_else(|| lambda_balance(c_old, c_new))
    }
}

fn check_finite(logits: &[f64]) -> Result<()> {
    if logits.is_empty() {
        return Err(Error::invalid("empty logit vector"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite logit"));
    }
    Ok(())
}

fn check_temperature(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("temperature must be positive, got {t}")))
    }
}

/// `log sum exp(x / t)`, max-shifted.
fn log_sum_exp(logits: &[f64], t: f64) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let sum: f64 = logits.iter().map(|&v| (v / t - max).exp()).sum();
    max + sum.ln()
}

pub fn softmax_with_temperature(logits: &[f64], t: f64) -> Result<Vec<f64>> {
    check_finite(logits)?;
    check_temperature(t)?;
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max) / t;
    let exps: Vec<f64> = logits.iter().map(|&v| (v / t - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// `-log p_label` with `p = softmax(logits)`.
pub fn cross_entropy_loss(logits: &[f64], label: usize) -> Result<f64> {
    check_finite(logits)?;
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    Ok((log_sum_exp(logits, 1.0) - logits[label]).max(0.0))
}

/// Gradient of [`cross_entropy_loss`] with respect to the logits: `p - onehot`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Result<Vec<f64>> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let mut g = softmax_with_temperature(logits, 1.0)?;
    g[label] -= 1.0;
    Ok(g)
}

fn check_distillation(student: &[f64], teacher: &[f64], c_old: usize) -> Result<()> {
    if c_old == 0 {
        return Err(Error::invalid("distillation needs at least one old class"));
    }
    if teacher.len() != c_old {
        return Err(Error::invalid(format!(
            "teacher provides {} logits, expected {c_old}",
            teacher.len()
        )));
    }
    if student.len() < c_old {
        return Err(Error::invalid(format!(
            "student has {} logits, fewer than {c_old} old classes",
            student.len()
        )));
    }
    check_finite(teacher)?;
    check_finite(&student[..c_old])
}

/// Soft cross-entropy `sum_c -q_hat_c log q_c` over the first `c_old`
/// classes. Both distributions are temperature softmaxes normalized over the
/// old classes only, so student logits at indices `>= c_old` never matter.
pub fn distillation_loss(student: &[f64], teacher: &[f64], c_old: usize, t: f64) -> Result<f64> {
    check_distillation(student, teacher, c_old)?;
    check_temperature(t)?;
    let target = softmax_with_temperature(teacher, t)?;
    let old = &student[..c_old];
    let lse = log_sum_exp(old, t);
    let loss: f64 = target
        .iter()
        .zip(old)
        .map(|(q_hat, &o)| -q_hat * (o / t - lse))
        .sum();
    Ok(loss.max(0.0))
}

/// Gradient of [`distillation_loss`] with respect to all student logits:
/// `(q - q_hat) / t` on old classes, zero elsewhere.
pub fn distillation_grad(student: &[f64], teacher: &[f64], c_old: usize, t: f64) -> Result<Vec<f64>> {
    check_distillation(student, teacher, c_old)?;
    check_temperature(t)?;
    let target = softmax_with_temperature(teacher, t)?;
    let q = softmax_with_temperature(&student[..c_old], t)?;
    let mut g = vec![0.0; student.len()];
    for c in 0..c_old {
        g[c] = (q[c] - target[c]) / t;
    }
    Ok(g)
}

/// `C_old / (C_old + C_new)`.
pub fn lambda_balance(c_old: usize, c_new: usize) -> f64 {
    if c_old == 0 {
        return 0.0;
    }
    c_old as f64 / (c_old + c_new) as f64
}

fn check_teacher(teacher: Option<&[f64]>, c_old: usize) -> Result<()> {
    match (teacher, c_old) {
        (None, n) if n > 0 => Err(Error::InvalidState(format!(
            "{n} old classes but no teacher logits"
        ))),
        (Some(_), 0) => Err(Error::InvalidState("teacher logits given at the first step".into())),
        _ => Ok(()),
    }
}

/// `(1 - lambda) L_CE + lambda L_KD`; exactly `L_CE` when there are no old classes.
pub fn combined_loss(
    student: &[f64],
    label: usize,
    teacher: Option<&[f64]>,
    config: &LossConfig,
    c_old: usize,
    c_new: usize,
) -> Result<f64> {
    check_teacher(teacher, c_old)?;
    let ce = cross_entropy_loss(student, label)?;
    let Some(teacher) = teacher else {
        return Ok(ce);
    };
    let lambda = config.lambda(c_old, c_new);
    let kd = distillation_loss(student, teacher, c_old, config.temperature)?;
    Ok((1.0 - lambda) * ce + lambda * kd)
}

/// Loss and logit gradient of [`combined_loss`].
pub fn combined_loss_grad(
    student: &[f64],
    label: usize,
    teacher: Option<&[f64]>,
    config: &LossConfig,
    c_old: usize,
    c_new: usize,
) -> Result<(f64, Vec<f64>)> {
    check_teacher(teacher, c_old)?;
    let ce = cross_entropy_loss(student, label)?;
    let ce_grad = cross_entropy_grad(student, label)?;
    let Some(teacher) = teacher else {
        return Ok((ce, ce_grad));
    };
    let lambda = config.lambda(c_old, c_new);
    let t = config.temperature;
    let kd = distillation_loss(student, teacher, c_old, t)?;
    let kd_grad = distillation_grad(student, teacher, c_old, t)?;
    let grad = ce_grad
        .iter()
        .zip(&kd_grad)
        .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
        .collect();
    Ok(((1.0 - lambda) * ce + lambda * kd, grad))
}
