//! Run directories: persisting a run and re-deriving reports from it.
//!
//! Layout of a finished run:
//!
//! ```text
//! <dir>/config.lock            resolved configuration (explicit class order)
//! <dir>/metrics/step<b>.json   per-step metrics
//! <dir>/metrics.csv            one row per step
//! <dir>/summary.csv            per-step, last and incremental-average accuracy
//! <dir>/timings.csv            wall-clock seconds per step
//! <dir>/checkpoints/step<b>.json
//! <dir>/memory/step<b>.json    exemplar memory after step b
//! <dir>/figures/*.png          written by `plot`
//! ```
//!
//! Everything except `timings.csv` is a pure function of the config.

use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};

use crate::config::{parse_config, ExperimentConfig};
use crate::driver::{Experiment, ExperimentResult};
use crate::model::Checkpoint;
use crate::report::{self, metrics_csv, StepMetrics, Summary};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_lock(&self) -> PathBuf {
        self.root.join("config.lock")
    }

    pub fn step_metrics(&self, step: usize) -> PathBuf {
        self.root.join("metrics").join(format!("step{step}.json"))
    }

    pub fn metrics_csv(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn summary_csv(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn timings_csv(&self) -> PathBuf {
        self.root.join("timings.csv")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("step{step}.json"))
    }

    pub fn memory(&self, step: usize) -> PathBuf {
        self.root.join("memory").join(format!("step{step}.json"))
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    fn lock_path(&self) -> PathBuf {
        self.root.join(".lock")
    }

    /// Takes the writer lock; released when the guard drops.
    pub fn lock(&self) -> Result<RunLock> {
        let path = self.lock_path();
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(RunLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(path)),
            Err(e) => Err(Error::io(format!("creating {}", path.display()), e)),
        }
    }

    /// The resolved config a run was produced with.
    pub fn load_config(&self) -> Result<ExperimentConfig> {
        let path = self.config_lock();
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        parse_config(&path)
    }

    /// Per-step metrics for every step of the recorded schedule.
    pub fn load_steps(&self) -> Result<Vec<StepMetrics>> {
        let config = self.load_config()?;
        let steps = if config.variation.joint_training { 1 } else { config.schedule.steps };
        (1..=steps)
            .map(|b| {
                let path = self.step_metrics(b);
                let text = fs::read_to_string(&path).map_err(|_| Error::MissingArtifact(path.clone()))?;
                Ok(serde_json::from_str(&text)?)
            })
            .collect()
    }
}

/// Lock file guard.
#[derive(Debug)]
pub struct RunLock {
    path: PathBuf,
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dirs(run: &RunDir) -> Result<()> {
    for dir in [run.root().to_path_buf(), run.root.join("metrics"), run.root.join("checkpoints"), run.root.join("memory")] {
        fs::create_dir_all(&dir)
            .map_err(|e| Error::Config(format!("output directory {} is not writable: {e}", dir.display())))?;
    }
    Ok(())
}

/// Runs `config` to completion and persists everything into `config.output`.
pub fn execute(config: &ExperimentConfig) -> Result<(RunDir, ExperimentResult)> {
    config.validate()?;
    let config = config.resolved()?;
    let run = RunDir::new(&config.output);
    create_dirs(&run)?;
    let _lock = run.lock()?;
    write(&run.config_lock(), config.to_toml()?)?;

    let (train, test) = config.dataset.load(config.seed)?;
    let experiment = Experiment::new(&train, &test, &config.task_schedule()?, config.settings(), config.execution)?;
    let result = experiment.run(|metrics, state| {
        let step = metrics.step;
        write(&run.step_metrics(step), serde_json::to_string_pretty(metrics)?)?;
        if let Some(model) = &state.model {
            Checkpoint::new(step, config.seed, model.clone()).save(&run.checkpoint(step))?;
        }
        state.memory.save(&run.memory(step))
    })?;

    write(&run.metrics_csv(), metrics_csv(&result.steps)?)?;
    write(&run.summary_csv(), result.summary.to_csv()?)?;
    let mut timings = String::from("step,wallclock_seconds\n");
    for m in &result.steps {
        timings.push_str(&format!("{},{}\n", m.step, m.wallclock_seconds));
    }
    write(&run.timings_csv(), timings)?;
    Ok((run, result))
}

/// Recomputes the summary from persisted step metrics and rewrites
/// `summary.csv`.
pub fn analyze(dir: &Path) -> Result<Summary> {
    let run = RunDir::new(dir);
    let config = run.load_config()?;
    let steps = run.load_steps()?;
    let mut summary = report::summarize(&steps)?;
    if config.variation.joint_training {
        summary.upper_bound_top1 = Some(summary.last_top1);
    }
    write(&run.summary_csv(), summary.to_csv()?)?;
    Ok(summary)
}

/// Renders norm and confusion figures from persisted step metrics.
pub fn plot(dir: &Path) -> Result<Vec<PathBuf>> {
    let run = RunDir::new(dir);
    let steps = run.load_steps()?;
    let figures = run.figures();
    fs::create_dir_all(&figures).map_err(|e| Error::io(format!("creating {}", figures.display()), e))?;
    report::render_figures(&steps, &figures)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let tmp = tempfile::tempdir().unwrap();
        let run = RunDir::new(tmp.path());
        let guard = run.lock().unwrap();
        assert!(matches!(run.lock(), Err(Error::Locked(_))));
        drop(guard);
        assert!(run.lock().is_ok());
    }

    #[test]
    fn missing_artifacts_are_named() {
        let tmp = tempfile::tempdir().unwrap();
        match plot(tmp.path()) {
            Err(Error::MissingArtifact(p)) => assert!(p.ends_with("config.lock")),
            other => panic!("{other:?}"),
        }
    }
}
