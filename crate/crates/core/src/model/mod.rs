//! The classifier: a feature extractor composed with a linear head.

mod checkpoint;
mod extractor;
mod head;
mod schedule;

pub use checkpoint::Checkpoint;
pub use extractor::{Dense, FeatureExtractor, Mlp, MlpConfig};
pub use head::{ClassifierHead, InitSpec};
pub(crate) use head::project as project_features;
pub use schedule::TaskSchedule;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::align;
use crate::Result;

/// Extractor plus head. With `weight_normalized` set, the forward pass uses
/// unit-norm head columns (the weight-normalization layer baseline).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub extractor: Mlp,
    pub head: ClassifierHead,
    #[serde(default)]
    pub weight_normalized: bool,
}

impl Model {
    pub fn features(&self, input: &[f64]) -> Vec<f64> {
        self.extractor.features(input)
    }

    /// Head weights as seen by the forward pass.
    pub fn effective_weights(&self) -> Result<Array2<f64>> {
        if self.weight_normalized {
            align::weight_normalization_hook(&self.head)
        } else {
            Ok(self.head.weights().clone())
        }
    }

    pub fn logits(&self, input: &[f64]) -> Result<Vec<f64>> {
        let features = self.features(input);
        if self.weight_normalized {
            let w = self.effective_weights()?;
            Ok(project_features(&w, self.head.bias(), &features))
        } else {
            Ok(self.head.logits(&features)?.to_vec())
        }
    }

    /// Logits for many inputs, reusing the effective weights.
    pub fn logits_batch(&self, inputs: &[&[f64]], exec: crate::Execution) -> Result<Vec<Vec<f64>>> {
        let w = self.effective_weights()?;
        let bias = self.head.bias();
        Ok(exec.map(inputs, |x| project_features(&w, bias, &self.features(x))))
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }
}
