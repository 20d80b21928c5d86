//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Weights are stored `(inputs × outputs)` so a batch `X` (rows are samples)
//! maps to `X·W + b`. The output layer of the actor is exposed directly:
//! column `j` of its weight matrix together with bias `j` is the weight
//! group of action `j`.

mod checkpoint;
mod optim;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointHeader, CHECKPOINT_VERSION,
};
pub use optim::{Adam, LrSchedule};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Weights and bias of output unit `j`.
    pub fn unit(&self, j: usize) -> (ArrayView1<'_, f64>, f64) {
        (self.weights.column(j), self.bias[j])
    }

    /// Euclidean norm of unit `j`'s weights and bias.
    pub fn unit_norm(&self, j: usize) -> f64 {
        let (w, b) = self.unit(j);
        (w.dot(&w) + b * b).sqrt()
    }

    pub fn zero_unit(&mut self, j: usize) {
        self.weights.column_mut(j).fill(0.0);
        self.bias[j] = 0.0;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `inputs[0]` is the network input.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// Parameter-shaped gradient (or any parameter-shaped quantity).
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weights.raw_dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.raw_dim()))
                .collect(),
        }
    }

    pub fn scale(&mut self, a: f64) {
        for w in &mut self.weights {
            *w *= a;
        }
        for b in &mut self.biases {
            *b *= a;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

impl DenseNet {
    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("network needs at least one layer"));
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::Dimension {
                    expected: l.output_dim(),
                    got: l.bias.len(),
                });
            }
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Dimension {
                    expected: w[0].output_dim(),
                    got: w[1].input_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// ReLU hidden layers (He-normal init) and a linear output layer with
    /// small uniform weights; all biases zero.
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        output_init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for &width in hidden {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid sd");
            let weights = Array2::from_shape_fn((fan_in, width), |_| normal.sample(rng));
            layers.push(Layer {
                weights,
                bias: Array1::zeros(width),
                activation: Activation::Relu,
            });
            fan_in = width;
        }
        let weights = Array2::from_shape_fn((fan_in, output_dim), |_| {
            rng.random_range(-output_init_scale..=output_init_scale)
        });
        layers.push(Layer {
            weights,
            bias: Array1::zeros(output_dim),
            activation: Activation::Linear,
        });
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().output_dim()
    }

    pub fn output_layer(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    pub fn output_layer_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Output for a single input vector.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let x = ArrayView2::from_shape((1, input.len()), input)
            .map_err(|_| Error::Dimension {
                expected: self.input_dim(),
                got: input.len(),
            })?;
        Ok(self.forward_batch(x)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x.ncols())?;
        let mut a = x.to_owned();
        for l in &self.layers {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            if l.activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(x.ncols())?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        for l in &self.layers {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            let out = match l.activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Linear => z.clone(),
            };
            inputs.push(a);
            pre.push(z);
            a = out;
        }
        Ok(ForwardCache {
            inputs,
            pre,
            output: a,
        })
    }

    /// Parameter gradients of a scalar loss given `upstream` = ∂loss/∂output
    /// for every row of the cached batch. Contributions are summed over rows.
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView2<f64>) -> Result<Gradients> {
        if upstream.dim() != cache.output.dim() {
            return Err(Error::Dimension {
                expected: cache.output.len(),
                got: upstream.len(),
            });
        }
        let n = self.layers.len();
        let mut weights = Vec::with_capacity(n);
        let mut biases = Vec::with_capacity(n);
        let mut delta = upstream.to_owned();
        for (i, l) in self.layers.iter().enumerate().rev() {
            if l.activation == Activation::Relu {
                ndarray::Zip::from(&mut delta)
                    .and(&cache.pre[i])
                    .for_each(|d, &z| {
                        if z <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            weights.push(cache.inputs[i].t().dot(&delta));
            biases.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                delta = delta.dot(&l.weights.t());
            }
        }
        weights.reverse();
        biases.reverse();
        Ok(Gradients { weights, biases })
    }

    fn check_input(&self, got: usize) -> Result<()> {
        if got != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// All parameters, layer by layer, weights (row-major) then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weights.iter().copied());
            out.extend(l.bias.iter().copied());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            for w in l.weights.iter_mut() {
                *w = it.next().unwrap();
            }
            for b in l.bias.iter_mut() {
                *b = it.next().unwrap();
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }
}

impl Gradients {
    /// Same values laid out as a network with `template`'s activations, for
    /// storage in a checkpoint.
    pub fn to_net(&self, template: &DenseNet) -> Result<DenseNet> {
        DenseNet::from_layers(
            self.weights
                .iter()
                .zip(&self.biases)
                .zip(template.layers())
                .map(|((w, b), l)| Layer {
                    weights: w.clone(),
                    bias: b.clone(),
                    activation: l.activation,
                })
                .collect(),
        )
    }

    pub fn from_net(net: &DenseNet) -> Self {
        Self {
            weights: net.layers().iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
        }
    }

    /// Flattened in the same order as [`DenseNet::flat_params`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        out
    }
}
