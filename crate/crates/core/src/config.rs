//! Experiment configuration: a strict TOML schema, `key=value` overrides and
//! the named presets.
//!
//! A minimal file only needs `[dataset]` and `[schedule]`:
//!
//! ```toml
//! [dataset]
//! kind = "synthetic"
//! num_classes = 10
//!
//! [schedule]
//! steps = 5
//! classes_per_step = 2
//! ```
//!
//! Every other section falls back to the desk-scale defaults. Unknown keys
//! are rejected.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_cifar, CifarKind, Dataset, SyntheticDatasetSpec};
use crate::driver::{ExperimentSettings, MemoryConfig, ModelConfig, VariationSpec};
use crate::losses::LossConfig;
use crate::model::TaskSchedule;
use crate::train::TrainConfig;
use crate::{seed, Error, Execution, Result};

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 6] = ["variation1", "variation2", "variation3", "variation4", "ours", "upper_bound"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub execution: Execution,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub variation: VariationSpec,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub memory: MemoryConfig,
}

fn default_output() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
    Cifar100,
}

/// `[dataset]`. Synthetic data takes the generator fields (its seed is
/// derived from the global seed); the CIFAR kinds take `root`,
/// `limit_per_class` and `augment`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<bool>,
}

impl DatasetConfig {
    pub fn synthetic(num_classes: usize) -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            num_classes: Some(num_classes),
            train_per_class: None,
            test_per_class: None,
            input_dim: None,
            separation: None,
            noise: None,
            root: None,
            limit_per_class: None,
            augment: None,
        }
    }

    fn cifar_kind(&self) -> Option<CifarKind> {
        match self.kind {
            DatasetKind::Synthetic => None,
            DatasetKind::Cifar10 => Some(CifarKind::Cifar10),
            DatasetKind::Cifar100 => Some(CifarKind::Cifar100),
        }
    }

    fn validate(&self) -> Result<()> {
        let synthetic_fields = [
            ("num_classes", self.num_classes.is_some()),
            ("train_per_class", self.train_per_class.is_some()),
            ("test_per_class", self.test_per_class.is_some()),
            ("input_dim", self.input_dim.is_some()),
            ("separation", self.separation.is_some()),
            ("noise", self.noise.is_some()),
        ];
        let image_fields = [
            ("root", self.root.is_some()),
            ("limit_per_class", self.limit_per_class.is_some()),
            ("augment", self.augment.is_some()),
        ];
        let (foreign, label) = match self.kind {
            DatasetKind::Synthetic => (&image_fields[..], "synthetic"),
            _ => (&synthetic_fields[..], "image"),
        };
        if let Some((name, _)) = foreign.iter().find(|(_, set)| *set) {
            return Err(Error::Config(format!(
                "dataset.{name} does not apply to {label} datasets"
            )));
        }
        match self.kind {
            DatasetKind::Synthetic => {
                if self.num_classes.is_none() {
                    return Err(Error::Config("dataset.num_classes is required for synthetic data".into()));
                }
                self.synthetic_spec(0).expect("synthetic").validate()
            }
            _ if self.root.is_none() => Err(Error::Config("dataset.root is required for image datasets".into())),
            _ => Ok(()),
        }
    }

    pub fn num_labels(&self) -> usize {
        match self.cifar_kind() {
            Some(kind) => kind.num_classes(),
            None => self.num_classes.unwrap_or(0),
        }
    }

    pub fn augment(&self) -> bool {
        self.cifar_kind().is_some() && self.augment.unwrap_or(true)
    }

    /// Generator parameters for a synthetic dataset under `global_seed`.
    pub fn synthetic_spec(&self, global_seed: u64) -> Option<SyntheticDatasetSpec> {
        (self.kind == DatasetKind::Synthetic).then(|| SyntheticDatasetSpec {
            num_classes: self.num_classes.unwrap_or(0),
            train_per_class: self.train_per_class.unwrap_or(100),
            test_per_class: self.test_per_class.unwrap_or(100),
            input_dim: self.input_dim.unwrap_or(32),
            separation: self.separation.unwrap_or(4.0),
            noise: self.noise.unwrap_or(1.0),
            seed: seed::derive(global_seed, "dataset", &[]),
        })
    }

    /// Loads or generates `(train, test)`.
    pub fn load(&self, global_seed: u64) -> Result<(Dataset, Dataset)> {
        match (self.cifar_kind(), &self.root) {
            (Some(kind), Some(root)) => cifar(kind, root, self.limit_per_class),
            (Some(_), None) => Err(Error::Config("dataset.root is required for image datasets".into())),
            (None, _) => generate_synthetic(&self.synthetic_spec(global_seed).expect("synthetic")),
        }
    }
}

fn cifar(kind: CifarKind, root: &Path, limit: Option<usize>) -> Result<(Dataset, Dataset)> {
    let (train, test) = load_cifar(kind, root)?;
    Ok(match limit {
        Some(n) => (train.limit_per_class(n), test),
        None => (train, test),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes_per_step: Option<usize>,
    /// Uneven step sizes; overrides `steps * classes_per_step`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_sizes: Option<Vec<usize>>,
    /// Dataset labels in the order they are introduced. Seeded shuffle of
    /// all labels when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_order: Option<Vec<usize>>,
}

impl ScheduleConfig {
    pub fn sizes(&self) -> Result<Vec<usize>> {
        let sizes = match (&self.step_sizes, self.classes_per_step) {
            (Some(s), _) => s.clone(),
            (None, Some(c)) => vec![c; self.steps],
            (None, None) => {
                return Err(Error::Config(
                    "schedule: one of classes_per_step or step_sizes is required".into(),
                ))
            }
        };
        if sizes.len() != self.steps {
            return Err(Error::Config(format!(
                "schedule: steps = {} but {} step sizes were given",
                self.steps,
                sizes.len()
            )));
        }
        if self.steps == 0 || sizes.contains(&0) {
            return Err(Error::Config("schedule: steps and step sizes must be positive".into()));
        }
        Ok(sizes)
    }

    pub fn total_classes(&self) -> Result<usize> {
        Ok(self.sizes()?.iter().sum())
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        let total = self.schedule.total_classes()?;
        let labels = self.dataset.num_labels();
        if total > labels {
            return Err(Error::Config(format!(
                "schedule needs {total} classes but the dataset has only {labels} labels"
            )));
        }
        if let Some(order) = &self.schedule.class_order {
            if order.len() != total {
                return Err(Error::Config(format!(
                    "schedule.class_order lists {} labels, the schedule needs {total}",
                    order.len()
                )));
            }
            if let Some(bad) = order.iter().find(|&&l| l >= labels) {
                return Err(Error::Config(format!(
                    "schedule.class_order: label {bad} is outside the dataset's {labels} labels"
                )));
            }
        }
        self.variation.validate()?;
        self.train.validate()?;
        self.loss.validate().map_err(|e| Error::Config(format!("loss: {e}")))?;
        if self.model.feature_dim == 0 || self.model.hidden.contains(&0) {
            return Err(Error::Config("model: layer widths must be positive".into()));
        }
        if !self.variation.joint_training && self.memory.budget < total {
            return Err(Error::Config(format!(
                "memory.budget {} cannot hold one exemplar for each of {total} classes",
                self.memory.budget
            )));
        }
        Ok(())
    }

    /// Class order with the seeded default filled in.
    pub fn class_order(&self) -> Result<Vec<usize>> {
        let total = self.schedule.total_classes()?;
        Ok(match &self.schedule.class_order {
            Some(order) => order.clone(),
            None => {
                let mut labels: Vec<usize> = (0..self.dataset.num_labels()).collect();
                labels.shuffle(&mut seed::rng(self.seed, "class-order", &[]));
                labels.truncate(total);
                labels
            }
        })
    }

    pub fn task_schedule(&self) -> Result<TaskSchedule> {
        TaskSchedule::from_order(&self.class_order()?, &self.schedule.sizes()?)
            .map_err(|e| Error::Config(format!("schedule: {e}")))
    }

    /// The same experiment with every implicit choice written out.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.schedule.class_order = Some(self.class_order()?);
        Ok(out)
    }

    pub fn settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            variation: self.variation.clone(),
            train: self.train.clone(),
            loss: self.loss.clone(),
            model: self.model.clone(),
            memory: self.memory.clone(),
            augment: self.dataset.augment(),
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }
}

/// Parses and validates a config file.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config_str(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    config.validate()?;
    Ok(config)
}

/// Applies dotted `key=value` overrides, e.g. `train.epochs=5` or
/// `variation.use_wa=false`. Values are read as TOML and fall back to a
/// bare string.
pub fn apply_overrides(config: &ExperimentConfig, overrides: &[String]) -> Result<ExperimentConfig> {
    if overrides.is_empty() {
        return Ok(config.clone());
    }
    let mut table: toml::Table = toml::from_str(&config.to_toml()?)
        .map_err(|e| Error::Config(format!("cannot re-read config: {e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not of the form key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("override `{item}` has an empty key segment")));
        }
        set_path(&mut table, &path, parse_value(raw.trim()))
            .map_err(|m| Error::Config(format!("override `{item}`: {m}")))?;
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    parse_config_str(&text)
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> std::result::Result<(), String> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cursor = table;
    for p in parents {
        cursor = cursor
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| format!("`{p}` is not a section"))?;
    }
    cursor.insert(last.to_string(), value);
    Ok(())
}

/// Desk-scale benchmark: 10 synthetic classes over 5 steps of 2.
pub fn desk_config() -> ExperimentConfig {
    ExperimentConfig {
        seed: 0,
        output: default_output(),
        execution: Execution::Parallel,
        dataset: DatasetConfig::synthetic(10),
        schedule: ScheduleConfig {
            steps: 5,
            classes_per_step: Some(2),
            step_sizes: None,
            class_order: None,
        },
        model: ModelConfig::default(),
        variation: VariationSpec::default(),
        loss: LossConfig::default(),
        train: TrainConfig::default(),
        memory: MemoryConfig::default(),
    }
}

/// Variation switches for a named preset.
pub fn preset_variation(name: &str) -> Result<VariationSpec> {
    let base = VariationSpec::default();
    let off = VariationSpec {
        use_kd: false,
        use_wa: false,
        ..base.clone()
    };
    Ok(match name {
        "variation1" => off,
        "variation2" => VariationSpec { use_wa: true, ..off },
        "variation3" => VariationSpec { use_kd: true, ..off },
        "variation4" => VariationSpec {
            use_kd: true,
            use_wnl: true,
            ..off
        },
        "ours" => base,
        "upper_bound" => VariationSpec {
            joint_training: true,
            ..off
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; expected one of {}",
                PRESETS.join(", ")
            )))
        }
    })
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let variation = preset_variation(name)?;
    Ok(ExperimentConfig {
        output: PathBuf::from("runs").join(name),
        variation,
        ..desk_config()
    })
}

/// One-line description of each preset, for `preset-list`.
pub fn preset_description(name: &str) -> &'static str {
    match name {
        "variation1" => "cross-entropy only",
        "variation2" => "cross-entropy, weight aligning",
        "variation3" => "cross-entropy + distillation",
        "variation4" => "cross-entropy + distillation, weight-normalized head",
        "ours" => "cross-entropy + distillation, weight aligning",
        "upper_bound" => "joint training on all classes in one step",
        _ => "",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[dataset]
kind = "synthetic"
num_classes = 10

[schedule]
steps = 5
classes_per_step = 2
"#;

    #[test]
    fn minimal_config_takes_defaults() {
        let c = parse_config_str(MINIMAL).unwrap();
        assert_eq!(c.variation, VariationSpec::default());
        assert_eq!(c.train, TrainConfig::default());
        assert_eq!(c.memory, MemoryConfig::default());
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.seed, 0);
        assert_eq!(c, desk_config());
    }

    #[test]
    fn cifar_split_accepted_and_oversized_rejected() {
        let ok = "[dataset]\nkind = \"cifar100\"\nroot = \"data\"\n[schedule]\nsteps = 5\nclasses_per_step = 20\n[memory]\nbudget = 2000\n";
        assert!(parse_config_str(ok).is_ok());
        let bad = ok.replace("classes_per_step = 20", "classes_per_step = 24");
        let err = parse_config_str(&bad).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("120 classes"), "{err}");
    }

    #[test]
    fn unknown_key_named_with_line() {
        let text = MINIMAL.replace("steps = 5", "steps = 5\nstepz = 3");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("stepz"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn wrong_type_names_field() {
        let text = MINIMAL.replace("num_classes = 10", "num_classes = \"ten\"");
        let err = parse_config_str(&text).unwrap_err().to_string();
        assert!(err.contains("num_classes") || err.contains("line 4"), "{err}");
    }

    #[test]
    fn round_trip_is_identity() {
        for name in PRESETS {
            let c = preset(name).unwrap().resolved().unwrap();
            let again = parse_config_str(&c.to_toml().unwrap()).unwrap();
            assert_eq!(c, again, "{name}");
        }
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c = parse_config_str(MINIMAL).unwrap();
        let o = apply_overrides(
            &c,
            &[
                "train.epochs=5".into(),
                "variation.use_wa=false".into(),
                "output=runs/x".into(),
                "memory.strategy=random".into(),
            ],
        )
        .unwrap();
        assert_eq!(o.train.epochs, 5);
        assert_eq!(o.train.milestones, vec![3, 4]);
        assert!(!o.variation.use_wa);
        assert_eq!(o.output, PathBuf::from("runs/x"));
        assert!(apply_overrides(&c, &["train.epochz=5".into()]).is_err());
        assert!(apply_overrides(&c, &["noequals".into()]).is_err());
    }

    #[test]
    fn presets_wire_variations() {
        let ours = preset_variation("ours").unwrap();
        assert!(ours.use_kd && ours.use_wa && ours.restrict_nonnegative);
        let v1 = preset_variation("variation1").unwrap();
        assert!(!v1.use_kd && !v1.use_wa);
        let v4 = preset_variation("variation4").unwrap();
        assert!(v4.use_kd && v4.use_wnl && !v4.use_wa);
        assert!(preset_variation("upper_bound").unwrap().joint_training);
        assert!(preset("variation9").is_err());
    }

    #[test]
    fn seeded_order_is_a_permutation_prefix() {
        let mut c = desk_config();
        c.seed = 11;
        let order = c.class_order().unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        assert_eq!(order, c.class_order().unwrap());
        c.seed = 12;
        assert_ne!(order, c.class_order().unwrap());
    }

    #[test]
    fn wnl_with_wa_rejected() {
        let text = format!("{MINIMAL}\n[variation]\nuse_wnl = true\n");
        assert!(parse_config_str(&text).is_err());
    }
}
