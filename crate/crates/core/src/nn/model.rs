use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{backward_layer, forward_layer, ActivationShape, LayerCache, LayerSpec, ParamInit};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng;

/// Architecture of a user-authentication network: a chain of layers mapping
/// `[B, 1, input_length]` to `[B, embedding_length]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_length: usize,
    pub embedding_length: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// The full-size speech network: three conv/relu/pool/GN blocks, flatten,
    /// a fully connected projection and a sigmoid.
    pub fn speech(embedding_length: usize) -> Self {
        use LayerSpec::*;
        ModelConfig {
            input_length: 1 << 14,
            embedding_length,
            layers: vec![
                Conv1d {
                    channels: 1 << 6,
                    kernel: 21,
                },
                Relu,
                AvgPool1d { rate: 1 << 3 },
                GroupNorm { groups: 2 },
                Conv1d {
                    channels: 1 << 8,
                    kernel: 11,
                },
                Relu,
                AvgPool1d { rate: 1 << 5 },
                GroupNorm { groups: 2 },
                Conv1d {
                    channels: 1 << 10,
                    kernel: 5,
                },
                Relu,
                AvgPool1d { rate: 1 << 6 },
                GroupNorm { groups: 2 },
                Flatten,
                FullyConnected {
                    inputs: 1 << 10,
                    outputs: embedding_length,
                },
                Sigmoid,
            ],
        }
    }

    /// Desk-scale variant of the same block structure for inputs whose
    /// length is a multiple of 64: each block pools by 4, and the flattened
    /// feature vector has `64 * input_length / 64` entries.
    pub fn compact(input_length: usize, embedding_length: usize) -> Self {
        use LayerSpec::*;
        ModelConfig {
            input_length,
            embedding_length,
            layers: vec![
                Conv1d {
                    channels: 16,
                    kernel: 9,
                },
                Relu,
                AvgPool1d { rate: 4 },
                GroupNorm { groups: 2 },
                Conv1d {
                    channels: 32,
                    kernel: 5,
                },
                Relu,
                AvgPool1d { rate: 4 },
                GroupNorm { groups: 2 },
                Conv1d {
                    channels: 64,
                    kernel: 3,
                },
                Relu,
                AvgPool1d { rate: 4 },
                GroupNorm { groups: 2 },
                Flatten,
                FullyConnected {
                    inputs: input_length,
                    outputs: embedding_length,
                },
                Sigmoid,
            ],
        }
    }

    /// Same network with the final projection resized to `n_e` outputs.
    pub fn with_embedding_length(mut self, n_e: usize) -> Self {
        self.embedding_length = n_e;
        if let Some(LayerSpec::FullyConnected { outputs, .. }) = self
            .layers
            .iter_mut()
            .rev()
            .find(|l| matches!(l, LayerSpec::FullyConnected { .. }))
        {
            *outputs = n_e;
        }
        self
    }

    /// Shape-checks the chain and returns the input shape of every layer
    /// followed by the final output shape.
    pub fn shapes(&self) -> Result<Vec<ActivationShape>> {
        if self.input_length == 0 || self.embedding_length == 0 {
            return Err(Error::Config("input and embedding lengths must be positive".into()));
        }
        let mut shape = ActivationShape::Sequence {
            channels: 1,
            length: self.input_length,
        };
        let mut shapes = vec![shape];
        for (i, layer) in self.layers.iter().enumerate() {
            shape = layer.output_shape(i, shape)?;
            shapes.push(shape);
        }
        match self.layers.last() {
            Some(LayerSpec::Sigmoid) => {}
            _ => {
                return Err(Error::InvalidLayer {
                    index: self.layers.len().saturating_sub(1),
                    reason: "the final layer must be a sigmoid".into(),
                })
            }
        }
        if shape != ActivationShape::Features(self.embedding_length) {
            return Err(Error::InvalidLayer {
                index: self.layers.len() - 1,
                reason: format!(
                    "chain ends in {:?}, expected {} embedding outputs",
                    shape, self.embedding_length
                ),
            });
        }
        Ok(shapes)
    }
}

/// Parameter tensors of every layer, in layer order. Layers without
/// parameters hold an empty list.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub version: u32,
    pub layers: Vec<Vec<Tensor>>,
}

impl ModelParams {
    pub fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flatten()
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flatten()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// True when `other` can be combined coordinate-wise with `self`.
    pub fn same_layout(&self, other: &ModelParams) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same_shape(y)))
    }

    /// All values concatenated in layer order.
    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn clear_grads(&mut self) {
        self.tensors_mut().for_each(Tensor::clear_grad);
    }

    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::arg(format!("learning rate {lr} must be a non-negative real")));
        }
        if self.tensors().any(|t| t.grad().is_none()) {
            return Err(Error::State("sgd step without gradients; run backward first".into()));
        }
        for t in self.tensors_mut() {
            let grad = t.grad().expect("checked above").to_vec();
            t.data_mut().iter_mut().zip(&grad).for_each(|(p, g)| *p -= lr * g);
            t.zero_grad();
        }
        Ok(())
    }
}

/// Initializes parameters for `config`: weights and biases uniform in
/// `(-1/sqrt(fan_in), 1/sqrt(fan_in))`, group-norm scale 1 and shift 0.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    let shapes = config.shapes()?;
    let mut layers = Vec::with_capacity(config.layers.len());
    for (i, layer) in config.layers.iter().enumerate() {
        let mut tensors = Vec::new();
        for (j, spec) in layer.params(shapes[i]).into_iter().enumerate() {
            let mut t = Tensor::zeros(spec.shape);
            match spec.init {
                ParamInit::Const(v) => t.data_mut().iter_mut().for_each(|x| *x = v),
                ParamInit::Uniform => {
                    let a = 1.0 / (spec.fan_in as f64).sqrt();
                    let mut r = rng::stream(seed, &[rng::domain::INIT, i as u64, j as u64]);
                    t.data_mut().iter_mut().for_each(|x| *x = r.random_range(-a..a));
                }
            }
            tensors.push(t);
        }
        layers.push(tensors);
    }
    Ok(ModelParams { version: 1, layers })
}

/// A network instance: configuration, parameters, and the activations cached
/// by the most recent forward pass.
#[derive(Debug)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
    shapes: Vec<ActivationShape>,
    cache: Option<ForwardCache>,
}

struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

impl std::fmt::Debug for ForwardCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardCache")
            .field("batch", &self.batch)
            .finish_non_exhaustive()
    }
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams) -> Result<Self> {
        let shapes = config.shapes()?;
        let expected = build_layout(&config, &shapes);
        if params.layers.len() != expected.len()
            || params.layers.iter().zip(&expected).any(|(got, want)| {
                got.len() != want.len() || got.iter().zip(want).any(|(t, s)| t.shape() != s.as_slice())
            })
        {
            return Err(Error::dim("parameters do not match the model configuration"));
        }
        Ok(Model {
            config,
            params,
            shapes,
            cache: None,
        })
    }

    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = build_model(&config, seed)?;
        Model::new(config, params)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    fn check_input(&self, batch: &Tensor) -> Result<usize> {
        let l = self.config.input_length;
        match batch.shape() {
            [b, 1, len] if *b >= 1 && *len == l => Ok(*b),
            other => Err(Error::dim(format!("expected input [B>=1, 1, {l}], got {other:?}"))),
        }
    }

    fn run(&self, batch: &Tensor) -> Result<(Tensor, ForwardCache)> {
        let b = self.check_input(batch)?;
        let mut x = batch.data().to_vec();
        let mut caches = Vec::with_capacity(self.config.layers.len());
        for (i, layer) in self.config.layers.iter().enumerate() {
            let (y, cache) = forward_layer(layer, self.shapes[i], &self.params.layers[i], x, b);
            caches.push(cache);
            x = y;
        }
        let out = Tensor::new(vec![b, self.config.embedding_length], x)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("forward pass".into()));
        }
        Ok((
            out,
            ForwardCache {
                batch: b,
                layers: caches,
            },
        ))
    }

    /// Runs the chain on `[B, 1, L]` and caches activations for `backward`.
    pub fn forward(&mut self, batch: &Tensor) -> Result<Tensor> {
        let (out, cache) = self.run(batch)?;
        self.cache = Some(cache);
        Ok(out)
    }

    /// Forward pass without touching the cache.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.run(batch)?.0)
    }

    /// Back-propagates `loss_grad` (shape `[B, n_e]`) through the cached
    /// forward pass, accumulating into the parameter gradient buffers.
    /// Returns the gradient with respect to the input batch.
    pub fn backward(&mut self, loss_grad: &Tensor) -> Result<Tensor> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let expected = [cache.batch, self.config.embedding_length];
        if loss_grad.shape() != expected {
            let shape = loss_grad.shape().to_vec();
            self.cache = Some(cache);
            return Err(Error::dim(format!("loss gradient {shape:?}, expected {expected:?}")));
        }
        let mut dy = loss_grad.data().to_vec();
        for (i, layer_cache) in cache.layers.into_iter().enumerate().rev() {
            let layer = &self.config.layers[i];
            dy = backward_layer(
                layer,
                self.shapes[i],
                &mut self.params.layers[i],
                layer_cache,
                dy,
                cache.batch,
            );
        }
        for t in self.params.tensors_mut() {
            t.grad_mut();
        }
        let mut shape = vec![cache.batch];
        shape.extend(self.shapes[0].dims());
        Tensor::new(shape, dy)
    }

    pub fn sgd_step(&mut self, lr: f64) -> Result<()> {
        self.params.sgd_step(lr)
    }
}

fn build_layout(config: &ModelConfig, shapes: &[ActivationShape]) -> Vec<Vec<Vec<usize>>> {
    config
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.params(shapes[i]).into_iter().map(|p| p.shape).collect())
        .collect()
}
