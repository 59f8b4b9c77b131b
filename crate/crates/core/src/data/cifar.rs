//! CIFAR-10 / CIFAR-100 in the canonical binary layout
//! (`cifar-10-batches-bin/`, `cifar-100-binary/`). Nothing is downloaded
//! here; see `scripts/fetch_cifar.sh`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, ImageShape};
use crate::{Error, Result};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    fn layout(self) -> (&'static str, &'static [&'static str], &'static [&'static str], usize) {
        match self {
            CifarKind::Cifar10 => (
                "cifar-10-batches-bin",
                &[
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ],
                &["test_batch.bin"],
                1,
            ),
            CifarKind::Cifar100 => ("cifar-100-binary", &["train.bin"], &["test.bin"], 2),
        }
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn normalization(self) -> ([f64; 3], [f64; 3]) {
        match self {
            CifarKind::Cifar10 => ([0.4914, 0.4822, 0.4465], [0.2470, 0.2435, 0.2616]),
            CifarKind::Cifar100 => ([0.5071, 0.4865, 0.4409], [0.2673, 0.2564, 0.2762]),
        }
    }
}

fn resolve_dir(root: &Path, sub: &str) -> PathBuf {
    let nested = root.join(sub);
    if nested.is_dir() {
        nested
    } else {
        root.to_path_buf()
    }
}

fn read_split(kind: CifarKind, dir: &Path, files: &[&str], label_bytes: usize) -> Result<Dataset> {
    let record = label_bytes + PIXELS;
    let (mean, std) = kind.normalization();
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for name in files {
        let path = dir.join(name);
        if !path.exists() {
            return Err(Error::MissingArtifact(path));
        }
        let bytes = fs::read(&path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if bytes.len() % record != 0 {
            return Err(Error::invalid(format!(
                "{} is not a whole number of {record}-byte records",
                path.display()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            // CIFAR-100 records are (coarse, fine); the fine label is used
            let label = rec[label_bytes - 1] as usize;
            if label >= kind.num_classes() {
                return Err(Error::invalid(format!("label {label} out of range in {}", path.display())));
            }
            labels.push(label);
            for (i, &px) in rec[label_bytes..].iter().enumerate() {
                let c = i / (SIDE * SIDE);
                inputs.push((f64::from(px) / 255.0 - mean[c]) / std[c]);
            }
        }
    }
    let shape = ImageShape {
        channels: 3,
        height: SIDE,
        width: SIDE,
    };
    Ok(Dataset::new(PIXELS, inputs, labels, kind.num_classes()).with_image_shape(shape))
}

/// Loads `(train, test)` from `root`, which may be the extracted directory
/// itself or its parent.
pub fn load_cifar(kind: CifarKind, root: &Path) -> Result<(Dataset, Dataset)> {
    let (sub, train, test, label_bytes) = kind.layout();
    let dir = resolve_dir(root, sub);
    Ok((
        read_split(kind, &dir, train, label_bytes)?,
        read_split(kind, &dir, test, label_bytes)?,
    ))
}
