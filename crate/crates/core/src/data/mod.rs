//! Labeled datasets: a seeded synthetic generator and the CIFAR binary
//! layouts.

mod cifar;
mod synthetic;

pub use cifar::{load_cifar, CifarKind};
pub use synthetic::{generate_synthetic, SyntheticDatasetSpec};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

/// Row-major sample matrix plus labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    dim: usize,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    num_classes: usize,
    image: Option<ImageShape>,
}

impl Dataset {
    pub fn new(dim: usize, inputs: Vec<f64>, labels: Vec<usize>, num_classes: usize) -> Self {
        assert_eq!(inputs.len(), dim * labels.len(), "input buffer does not match labels");
        assert!(labels.iter().all(|&l| l < num_classes), "label out of range");
        Self {
            dim,
            inputs,
            labels,
            num_classes,
            image: None,
        }
    }

    pub fn with_image_shape(mut self, shape: ImageShape) -> Self {
        assert_eq!(shape.channels * shape.height * shape.width, self.dim);
        self.image = Some(shape);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> Option<ImageShape> {
        self.image
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Indices of samples whose label is in `classes`, in dataset order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        let mut wanted = vec![false; self.num_classes];
        for &c in classes {
            if c < self.num_classes {
                wanted[c] = true;
            }
        }
        (0..self.len()).filter(|&i| wanted[self.labels[i]]).collect()
    }

    /// Keeps at most `limit` samples per class (the first ones in order).
    pub fn limit_per_class(&self, limit: usize) -> Self {
        let mut counts = vec![0usize; self.num_classes];
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            let l = self.labels[i];
            if counts[l] < limit {
                counts[l] += 1;
                inputs.extend_from_slice(self.input(i));
                labels.push(l);
            }
        }
        Self {
            dim: self.dim,
            inputs,
            labels,
            num_classes: self.num_classes,
            image: self.image,
        }
    }

    /// Samples whose label has an entry in `map`, relabeled through it into
    /// `0..num_classes` (used to put labels in schedule order).
    pub fn remap(&self, map: &HashMap<usize, usize>, num_classes: usize) -> Self {
        let mut inputs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..self.len() {
            if let Some(&l) = map.get(&self.labels[i]) {
                inputs.extend_from_slice(self.input(i));
                labels.push(l);
            }
        }
        let mut out = Self::new(self.dim, inputs, labels, num_classes);
        out.image = self.image;
        out
    }
}

/// Training-time augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Augmentation {
    None,
    /// Zero-padded random crop plus random horizontal flip.
    CropFlip { shape: ImageShape, pad: usize },
}

impl Augmentation {
    pub fn for_dataset(data: &Dataset, enabled: bool) -> Self {
        match (enabled, data.image_shape()) {
            (true, Some(shape)) => Augmentation::CropFlip { shape, pad: 4 },
            _ => Augmentation::None,
        }
    }

    pub fn apply(&self, input: &[f64], rng: &mut impl Rng) -> Vec<f64> {
        match *self {
            Augmentation::None => input.to_vec(),
            Augmentation::CropFlip { shape, pad } => {
                let dy = rng.random_range(0..=2 * pad) as isize - pad as isize;
                let dx = rng.random_range(0..=2 * pad) as isize - pad as isize;
                let flip = rng.random_bool(0.5);
                crop_flip(input, shape, dy, dx, flip)
            }
        }
    }
}

fn crop_flip(input: &[f64], shape: ImageShape, dy: isize, dx: isize, flip: bool) -> Vec<f64> {
    let (h, w) = (shape.height as isize, shape.width as isize);
    let mut out = vec![0.0; input.len()];
    for c in 0..shape.channels {
        let plane = c * shape.height * shape.width;
        for y in 0..h {
            for x in 0..w {
                let sx = if flip { w - 1 - x } else { x } + dx;
                let sy = y + dy;
                if (0..h).contains(&sy) && (0..w).contains(&sx) {
                    out[plane + (y * w + x) as usize] = input[plane + (sy * w + sx) as usize];
                }
            }
        }
    }
    out
}
