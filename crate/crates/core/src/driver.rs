//! The per-step protocol and full incremental runs.
//!
//! Every step runs, in order: snapshot the teacher, expand the head, build
//! the training pool, train, capture the uncorrected norm report, apply
//! weight aligning (and/or unit-norm post-processing), rebalance the
//! exemplar memory, and evaluate on all classes seen so far.

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{self, NormKind};
use crate::data::{Augmentation, Dataset};
use crate::memory::{self, ClassCandidates, ExemplarMemory, SelectionStrategy};
use crate::model::{ClassifierHead, InitSpec, Mlp, MlpConfig, Model, TaskSchedule};
use crate::report::{self, argmax, StepMetrics, Summary};
use crate::train::{self, Objective, PhaseSettings, TrainConfig};
use crate::losses::LossConfig;
use crate::{seed, Error, Execution, Result};

/// Test samples used to re-check the logit-rescaling equivalence after
/// weight aligning.
const EQUIVALENCE_PROBE: usize = 64;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TeacherSource {
    /// The model as deployed at the end of the previous step.
    #[default]
    PostCorrection,
    /// The previous step's weights before weight aligning / unit-norm.
    PreCorrection,
}

/// Which pieces of the method are switched on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VariationSpec {
    pub use_kd: bool,
    pub use_wa: bool,
    /// Train through a weight-normalization layer instead of correcting afterwards.
    pub use_wnl: bool,
    pub use_unit_norm_post: bool,
    pub restrict_nonnegative: bool,
    pub bias_enabled: bool,
    /// Train on all classes in one step (upper-bound reference).
    pub joint_training: bool,
    pub norm_kind: NormKind,
    pub teacher: TeacherSource,
}

impl Default for VariationSpec {
    fn default() -> Self {
        Self {
            use_kd: true,
            use_wa: true,
            use_wnl: false,
            use_unit_norm_post: false,
            restrict_nonnegative: true,
            bias_enabled: false,
            joint_training: false,
            norm_kind: NormKind::TwoNorm,
            teacher: TeacherSource::PostCorrection,
        }
    }
}

impl VariationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.use_wnl && self.use_wa {
            return Err(Error::Config(
                "variation: use_wnl and use_wa are mutually exclusive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    pub nonnegative_features: bool,
    /// Half-width of the uniform init of new head columns; `1/sqrt(d)` if absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub head_init_half_width: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            feature_dim: 32,
            nonnegative_features: true,
            head_init_half_width: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MemoryConfig {
    pub budget: usize,
    pub strategy: SelectionStrategy,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        Self {
            budget: 50,
            strategy: SelectionStrategy::Herding,
        }
    }
}

/// Everything about a run except the data and the schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSettings {
    pub variation: VariationSpec,
    pub train: TrainConfig,
    pub loss: LossConfig,
    pub model: ModelConfig,
    pub memory: MemoryConfig,
    pub augment: bool,
    pub seed: u64,
}

/// Frozen copy of the previous step's model.
#[derive(Clone, Debug)]
pub struct TeacherSnapshot {
    model: Model,
}

impl TeacherSnapshot {
    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn class_count(&self) -> usize {
        self.model.num_classes()
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.model.logits(input)
    }
}

pub fn snapshot_teacher(model: &Model) -> TeacherSnapshot {
    TeacherSnapshot { model: model.clone() }
}

/// Mutable state carried between steps.
#[derive(Clone, Debug)]
pub struct IncrementalState {
    /// Deployed (post-correction) model; `None` before the first step.
    pub model: Option<Model>,
    /// The same model before post-training correction.
    pub uncorrected: Option<Model>,
    pub memory: ExemplarMemory,
    pub completed_steps: usize,
}

impl IncrementalState {
    pub fn new(memory: &MemoryConfig, seed: u64) -> Self {
        Self {
            model: None,
            uncorrected: None,
            memory: ExemplarMemory::new(memory.budget, memory.strategy, seed::derive(seed, "memory", &[])),
            completed_steps: 0,
        }
    }
}

/// Datasets relabeled into head-column order plus the run settings.
pub struct Experiment {
    train: Dataset,
    test: Dataset,
    schedule: TaskSchedule,
    settings: ExperimentSettings,
    exec: Execution,
}

/// Final record of a run.
#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub steps: Vec<StepMetrics>,
    pub summary: Summary,
    pub final_state: IncrementalState,
}

impl Experiment {
    /// `schedule` is over dataset labels. Samples of unscheduled labels are
    /// dropped; the rest are relabeled to head columns. Joint training
    /// collapses the schedule into a single step.
    pub fn new(
        train: &Dataset,
        test: &Dataset,
        schedule: &TaskSchedule,
        settings: ExperimentSettings,
        exec: Execution,
    ) -> Result<Self> {
        settings.variation.validate()?;
        settings.train.validate()?;
        settings.loss.validate()?;
        if let Some(&bad) = schedule.class_order().iter().find(|&&l| l >= train.num_classes()) {
            return Err(Error::Config(format!(
                "schedule uses label {bad} but the dataset has {} classes",
                train.num_classes()
            )));
        }
        let schedule = if settings.variation.joint_training {
            schedule.joint()
        } else {
            schedule.clone()
        };
        let map = schedule.column_of();
        let n = schedule.num_classes();
        Ok(Self {
            train: train.remap(&map, n),
            test: test.remap(&map, n),
            schedule,
            settings,
            exec,
        })
    }

    pub fn schedule(&self) -> &TaskSchedule {
        &self.schedule
    }

    pub fn settings(&self) -> &ExperimentSettings {
        &self.settings
    }

    pub fn train_data(&self) -> &Dataset {
        &self.train
    }

    pub fn test_data(&self) -> &Dataset {
        &self.test
    }

    pub fn initial_state(&self) -> IncrementalState {
        IncrementalState::new(&self.settings.memory, self.settings.seed)
    }

    /// Head columns introduced at step index `k` (0-based).
    pub fn step_columns(&self, k: usize) -> Vec<usize> {
        (self.schedule.old_count(k)..self.schedule.seen_count(k)).collect()
    }

    /// Training indices of the classes introduced at step index `k`.
    pub fn step_ids(&self, k: usize) -> Vec<usize> {
        self.train.indices_of(&self.step_columns(k))
    }

    fn fresh_model(&self, classes: usize) -> Result<Model> {
        let s = &self.settings;
        let extractor = Mlp::new(
            &MlpConfig {
                input_dim: self.train.dim(),
                hidden: s.model.hidden.clone(),
                feature_dim: s.model.feature_dim,
                nonnegative_features: s.model.nonnegative_features,
            },
            seed::derive(s.seed, "extractor", &[]),
        )?;
        let head = ClassifierHead::initial(
            s.model.feature_dim,
            classes,
            s.variation.bias_enabled,
            self.head_init(1),
        )?;
        let mut model = Model {
            extractor,
            head,
            weight_normalized: s.variation.use_wnl,
        };
        if s.variation.restrict_nonnegative {
            align::clip_in_place(&mut model.head);
        }
        Ok(model)
    }

    fn head_init(&self, step: usize) -> InitSpec {
        InitSpec::Uniform {
            half_width: self.settings.model.head_init_half_width,
            seed: seed::derive(self.settings.seed, "head", &[step as u64]),
        }
    }

    /// Runs the next step of the schedule on `step_ids` (training indices of
    /// that step's classes).
    pub fn run_step(&self, state: IncrementalState, step_ids: &[usize]) -> Result<(IncrementalState, StepMetrics)> {
        let k = state.completed_steps;
        let step = k + 1;
        if k >= self.schedule.total_steps() {
            return Err(Error::Protocol {
                step,
                message: format!("schedule has only {} steps", self.schedule.total_steps()),
            });
        }
        let columns = self.step_columns(k);
        let present: BTreeSet<usize> = step_ids.iter().map(|&i| self.train.label(i)).collect();
        if present != columns.iter().copied().collect::<BTreeSet<_>>() {
            return Err(Error::Protocol {
                step,
                message: format!("step data covers classes {present:?}, schedule expects {columns:?}"),
            });
        }
        self.run_step_checked(state, step_ids).map_err(|e| e.at_step(step))
    }

    fn run_step_checked(&self, state: IncrementalState, step_ids: &[usize]) -> Result<(IncrementalState, StepMetrics)> {
        let started = Instant::now();
        let s = &self.settings;
        let v = &s.variation;
        let k = state.completed_steps;
        let step = k + 1;
        let old_count = self.schedule.old_count(k);
        let new_count = self.schedule.step_size(k);
        let seen = old_count + new_count;

        // (1) teacher
        let teacher = match (&state.model, v.teacher) {
            (Some(m), TeacherSource::PostCorrection) => Some(snapshot_teacher(m)),
            (Some(_), TeacherSource::PreCorrection) => state.uncorrected.as_ref().map(snapshot_teacher),
            (None, _) => None,
        };

        // (2) head expansion
        let mut model = match state.model {
            None => self.fresh_model(new_count)?,
            Some(mut m) => {
                m.head = m.head.expand(new_count, self.head_init(step))?;
                if v.restrict_nonnegative {
                    align::clip_in_place(&mut m.head);
                }
                m
            }
        };

        // (3) training pool
        let pool = memory::training_pool(&state.memory, step_ids);

        // (4) first phase
        let objective = Objective {
            teacher: if v.use_kd { teacher.as_ref() } else { None },
            loss: &s.loss,
            old_count,
            new_count,
        };
        let phase = PhaseSettings {
            config: &s.train,
            augmentation: Augmentation::for_dataset(&self.train, s.augment),
            restrict_nonnegative: v.restrict_nonnegative,
            seed: s.seed,
            step,
            exec: self.exec,
        };
        let epoch_losses = train::train_phase(&mut model, &self.train, &pool, &objective, &phase)?;
        let norms = align::weight_norms(&model.head, v.norm_kind)?;
        let uncorrected = model.clone();

        // (5) second phase
        let test_ids = self.test.indices_of(&(0..seen).collect::<Vec<_>>());
        let mut gamma_applied = None;
        let mut equivalence = None;
        if v.use_wa && old_count > 0 {
            let (aligned, gamma) = align::align_weights_with_gamma(&model.head, v.norm_kind)?;
            model.head = aligned;
            gamma_applied = Some(gamma);
            equivalence = Some(self.equivalence_gap(&uncorrected, &model, gamma, &test_ids)?);
        }
        if v.use_unit_norm_post {
            model.head = align::unit_norm_postprocess(&model.head, v.norm_kind)?;
        }

        // (6) exemplar memory
        let mut memory = state.memory;
        let candidates = self.candidates(&model, &columns_of(old_count, seen), step_ids, memory.strategy);
        memory.rebalance(&candidates)?;

        // (7) evaluation
        let inputs: Vec<&[f64]> = test_ids.iter().map(|&i| self.test.input(i)).collect();
        let labels: Vec<usize> = test_ids.iter().map(|&i| self.test.label(i)).collect();
        let logits = model.logits_batch(&inputs, self.exec)?;
        let predictions: Vec<usize> = logits.iter().map(|o| argmax(o)).collect();
        let old_classes: BTreeSet<usize> = (0..old_count).collect();
        let metrics = StepMetrics {
            step,
            seen_classes: seen,
            new_classes: new_count,
            top1: report::topk_accuracy(&logits, &labels, 1),
            top5: report::topk_accuracy(&logits, &labels, 5.min(seen)),
            errors: report::error_decomposition(&predictions, &labels, &old_classes),
            confusion: report::confusion_matrix(&predictions, &labels, seen)?,
            norms,
            gamma_applied,
            wa_equivalence_max_abs_diff: equivalence,
            memory_counts: memory.per_class.values().map(Vec::len).collect(),
            epoch_losses,
            wallclock_seconds: started.elapsed().as_secs_f64(),
        };
        let state = IncrementalState {
            model: Some(model),
            uncorrected: Some(uncorrected),
            memory,
            completed_steps: step,
        };
        Ok((state, metrics))
    }

    fn candidates(&self, model: &Model, columns: &[usize], step_ids: &[usize], strategy: SelectionStrategy) -> Vec<ClassCandidates> {
        columns
            .iter()
            .map(|&label| {
                let sample_ids: Vec<usize> = step_ids.iter().copied().filter(|&i| self.train.label(i) == label).collect();
                let features = match strategy {
                    SelectionStrategy::Herding => self
                        .exec
                        .map(&sample_ids, |&i| model.features(self.train.input(i))),
                    SelectionStrategy::Random => Vec::new(),
                };
                ClassCandidates {
                    label,
                    sample_ids,
                    features,
                }
            })
            .collect()
    }

    fn equivalence_gap(&self, before: &Model, after: &Model, gamma: f64, test_ids: &[usize]) -> Result<f64> {
        let split = before.head.old_count();
        let mut gap: f64 = 0.0;
        for &i in test_ids.iter().take(EQUIVALENCE_PROBE) {
            let x = self.test.input(i);
            let o = before.logits(x)?;
            let rescaled = align::corrected_logits(&o[..split], &o[split..], gamma)?;
            for (a, b) in rescaled.iter().zip(after.logits(x)?) {
                gap = gap.max((a - b).abs());
            }
        }
        Ok(gap)
    }

    /// Runs every step. `observer` sees each step's metrics and the state
    /// right after it (used to persist checkpoints and memory manifests).
    pub fn run(&self, mut observer: impl FnMut(&StepMetrics, &IncrementalState) -> Result<()>) -> Result<ExperimentResult> {
        let mut state = self.initial_state();
        let mut steps = Vec::with_capacity(self.schedule.total_steps());
        for k in 0..self.schedule.total_steps() {
            let ids = self.step_ids(k);
            let (next, metrics) = self.run_step(state, &ids)?;
            observer(&metrics, &next)?;
            steps.push(metrics);
            state = next;
        }
        let mut summary = report::summarize(&steps)?;
        if self.settings.variation.joint_training {
            summary.upper_bound_top1 = Some(summary.last_top1);
        }
        Ok(ExperimentResult {
            steps,
            summary,
            final_state: state,
        })
    }
}

fn columns_of(from: usize, to: usize) -> Vec<usize> {
    (from..to).collect()
}

/// Convenience wrapper: build an [`Experiment`] and run it to completion.
pub fn run_experiment(
    train: &Dataset,
    test: &Dataset,
    schedule: &TaskSchedule,
    settings: ExperimentSettings,
    exec: Execution,
) -> Result<ExperimentResult> {
    Experiment::new(train, test, schedule, settings, exec)?.run(|_, _| Ok(()))
}
