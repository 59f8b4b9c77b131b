#![allow(dead_code)]

use wacil::config::{self, ExperimentConfig};
use wacil::data::Dataset;
use wacil::driver::Experiment;
use wacil::train::TrainConfig;
use wacil::Execution;

/// Desk-scale preset with a shortened schedule for fast protocol tests.
pub fn quick_config(preset: &str, seed: u64, epochs: usize) -> ExperimentConfig {
    let mut cfg = config::preset(preset).unwrap();
    cfg.seed = seed;
    cfg.train = TrainConfig::with_epochs(epochs);
    cfg
}

pub fn datasets(cfg: &ExperimentConfig) -> (Dataset, Dataset) {
    cfg.dataset.load(cfg.seed).unwrap()
}

pub fn experiment(cfg: &ExperimentConfig, exec: Execution) -> Experiment {
    let (train, test) = datasets(cfg);
    Experiment::new(&train, &test, &cfg.task_schedule().unwrap(), cfg.settings(), exec).unwrap()
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    let mut m = x.to_vec();
    p[i] += h;
    m[i] -= h;
    (f(&p) - f(&m)) / (2.0 * h)
}
