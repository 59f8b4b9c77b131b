use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

/// Maps an input sample to a `feature_dim()`-dimensional feature vector.
pub trait FeatureExtractor {
    fn input_dim(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn features(&self, input: &[f64]) -> Vec<f64>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
    /// Rectify the final layer so every feature is non-negative.
    pub nonnegative_features: bool,
}

/// Fully connected layer, `y = W x + b` with `W` of shape `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = Array2::from_shape_fn((outputs, inputs), |_| rng.random_range(-bound..bound));
        let bias = Array1::from_shape_fn(outputs, |_| rng.random_range(-bound..bound));
        Self { weight, bias }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }
}

/// Multi-layer perceptron with rectified hidden layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub nonnegative_features: bool,
}

/// Per-layer inputs and pre-activations saved by [`Mlp::forward_cached`].
pub(crate) struct ForwardCache {
    inputs: Vec<Array1<f64>>,
    pre: Vec<Array1<f64>>,
    pub(crate) output: Array1<f64>,
}

impl Mlp {
    pub fn new(config: &MlpConfig, seed: u64) -> Result<Self> {
        if config.input_dim == 0 || config.feature_dim == 0 || config.hidden.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        let mut rng = seed::rng(seed, "extractor-init", &[]);
        let mut widths = vec![config.input_dim];
        widths.extend(&config.hidden);
        widths.push(config.feature_dim);
        let layers = widths
            .windows(2)
            .map(|w| Dense::init(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            layers,
            nonnegative_features: config.nonnegative_features,
        })
    }

    fn rectify(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len() || self.nonnegative_features
    }

    pub(crate) fn forward_cached(&self, input: &[f64]) -> ForwardCache {
        let mut x = Array1::from(input.to_vec());
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(x.view());
            let a = if self.rectify(i) { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            inputs.push(x);
            pre.push(z);
            x = a;
        }
        ForwardCache {
            inputs,
            pre,
            output: x,
        }
    }

    /// Accumulates parameter gradients into `grads` given `d loss / d features`.
    pub(crate) fn backward(&self, cache: &ForwardCache, grad_out: Array1<f64>, grads: &mut [Dense]) {
        let mut delta = grad_out;
        for i in (0..self.layers.len()).rev() {
            if self.rectify(i) {
                delta.zip_mut_with(&cache.pre[i], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            let x = &cache.inputs[i];
            let g = &mut grads[i];
            for (mut row, &d) in g.weight.axis_iter_mut(Axis(0)).zip(delta.iter()) {
                if d != 0.0 {
                    row.scaled_add(d, x);
                }
            }
            g.bias += &delta;
            if i > 0 {
                delta = self.layers[i].weight.t().dot(&delta);
            }
        }
    }

    pub fn zero_grads(&self) -> Vec<Dense> {
        self.layers.iter().map(Dense::zeros_like).collect()
    }
}

impl FeatureExtractor for Mlp {
    fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    fn feature_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.nrows()
    }

    fn features(&self, input: &[f64]) -> Vec<f64> {
        let mut x = Array1::from(input.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(x.view());
            if self.rectify(i) {
                x.mapv_inplace(|v| v.max(0.0));
            }
        }
        x.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(nonneg: bool) -> MlpConfig {
        MlpConfig {
            input_dim: 5,
            hidden: vec![7],
            feature_dim: 4,
            nonnegative_features: nonneg,
        }
    }

    #[test]
    fn output_dimension_and_sign() {
        let m = Mlp::new(&config(true), 1).unwrap();
        let mut rng = seed::rng(2, "x", &[]);
        for _ in 0..50 {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = m.features(&x);
            assert_eq!(f.len(), 4);
            assert!(f.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn linear_output_can_be_negative() {
        let m = Mlp::new(&config(false), 1).unwrap();
        let mut rng = seed::rng(3, "x", &[]);
        let any_negative = (0..100).any(|_| {
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            m.features(&x).iter().any(|&v| v < 0.0)
        });
        assert!(any_negative);
    }

    #[test]
    fn cached_forward_matches_features() {
        let m = Mlp::new(&config(true), 4).unwrap();
        let x = [0.1, -0.4, 2.0, 1.5, -0.3];
        assert_eq!(m.forward_cached(&x).output.to_vec(), m.features(&x));
    }

    #[test]
    fn rejects_zero_width() {
        let mut c = config(true);
        c.hidden = vec![0];
        assert!(Mlp::new(&c, 0).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        // scalar loss = sum_k r_k * feature_k
        let m = Mlp::new(&config(false), 8).unwrap();
        let x = [0.3, -0.2, 0.9, 1.1, -0.7];
        let r = Array1::from(vec![0.5, -1.0, 0.25, 2.0]);
        let loss = |m: &Mlp| -> f64 { m.features(&x).iter().zip(r.iter()).map(|(a, b)| a * b).sum() };
        let mut grads = m.zero_grads();
        m.backward(&m.forward_cached(&x), r.clone(), &mut grads);
        let h = 1e-6;
        for l in 0..m.layers.len() {
            for idx in [(0, 0), (1, 2), (2, 1)] {
                let mut p = m.clone();
                p.layers[l].weight[idx] += h;
                let mut q = m.clone();
                q.layers[l].weight[idx] -= h;
                let fd = (loss(&p) - loss(&q)) / (2.0 * h);
                assert!((fd - grads[l].weight[idx]).abs() < 1e-6, "layer {l} {idx:?}");
            }
        }
    }
}
