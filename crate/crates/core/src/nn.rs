//! Named parameter storage and the small layer vocabulary the denoiser is
//! assembled from.
//!
//! A [`ParamStore`] owns the canonical f64 values. Each forward pass
//! instantiates them as graph leaves ([`Leaves`]), so parameter snapshots
//! stay immutable and shareable while graphs remain thread-confined.

use crate::error::{Error, Result, TensorError};
use crate::rng::Streams;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

/// Ordered collection of named parameter tensors.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, shape: Vec<usize>, value: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        debug_assert!(!self.names.iter().any(|n| n == name), "duplicate {name}");
        self.names.push(name.to_string());
        self.shapes.push(shape);
        self.values.push(value);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn total_params(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// Instantiates every parameter as a graph leaf.
    pub fn leaves(&self, requires_grad: bool) -> Leaves {
        let tensors = self
            .names
            .iter()
            .zip(&self.shapes)
            .zip(&self.values)
            .map(|((_, shape), value)| {
                Tensor::leaf(shape, value.clone(), requires_grad).expect("param leaf")
            })
            .collect();
        Leaves { tensors }
    }

    /// Structural compatibility check (same names and shapes, any values).
    pub fn same_layout(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.shapes == other.shapes
    }
}

/// Per-graph leaf instantiation of a [`ParamStore`].
pub struct Leaves {
    tensors: Vec<Tensor>,
}

impl Leaves {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    /// Gradients in store order, zeros where no gradient flowed.
    pub fn grads(&self) -> Vec<Vec<f64>> {
        self.tensors
            .iter()
            .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
            .collect()
    }
}

/// Registers parameters with deterministic seeded initialization.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    streams: Streams,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, seed: u64) -> Self {
        ParamBuilder {
            store,
            streams: Streams::new(seed),
        }
    }

    fn he_normal(&self, name: &str, n: usize, fan_in: usize) -> Vec<f64> {
        let std = (2.0 / fan_in as f64).sqrt();
        let mut rng = self.streams.stream(name, &[]);
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * std)
            .collect()
    }

    pub fn conv2d(
        &mut self,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: (usize, usize),
        stride: (usize, usize),
        pad: (usize, usize),
    ) -> Conv2dLayer {
        let fan_in = c_in * k.0 * k.1;
        let w = self.he_normal(name, c_out * fan_in, fan_in);
        Conv2dLayer {
            w: self
                .store
                .register(&format!("{name}.weight"), vec![c_out, c_in, k.0, k.1], w),
            b: self
                .store
                .register(&format!("{name}.bias"), vec![c_out], vec![0.0; c_out]),
            stride,
            pad,
        }
    }

    /// 1x1 convolution with all weights and biases exactly zero.
    pub fn conv1x1_zero(&mut self, name: &str, c: usize) -> Conv2dLayer {
        Conv2dLayer {
            w: self
                .store
                .register(&format!("{name}.weight"), vec![c, c, 1, 1], vec![0.0; c * c]),
            b: self
                .store
                .register(&format!("{name}.bias"), vec![c], vec![0.0; c]),
            stride: (1, 1),
            pad: (0, 0),
        }
    }

    pub fn linear(&mut self, name: &str, in_f: usize, out_f: usize) -> LinearLayer {
        let w = self.he_normal(name, out_f * in_f, in_f);
        LinearLayer {
            w: self
                .store
                .register(&format!("{name}.weight"), vec![out_f, in_f], w),
            b: self
                .store
                .register(&format!("{name}.bias"), vec![out_f], vec![0.0; out_f]),
        }
    }

    pub fn group_norm(&mut self, name: &str, channels: usize, groups: usize) -> GroupNormLayer {
        GroupNormLayer {
            gamma: self.store.register(
                &format!("{name}.gamma"),
                vec![channels],
                vec![1.0; channels],
            ),
            beta: self.store.register(
                &format!("{name}.beta"),
                vec![channels],
                vec![0.0; channels],
            ),
            groups,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Conv2dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Conv2dLayer {
    pub fn forward(&self, leaves: &Leaves, x: &Tensor) -> Result<Tensor, TensorError> {
        x.conv2d(leaves.get(self.w), leaves.get(self.b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearLayer {
    pub fn forward(&self, leaves: &Leaves, x: &Tensor) -> Result<Tensor, TensorError> {
        x.linear(leaves.get(self.w), leaves.get(self.b))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroupNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNormLayer {
    pub fn forward(&self, leaves: &Leaves, x: &Tensor) -> Result<Tensor, TensorError> {
        x.group_norm(leaves.get(self.gamma), leaves.get(self.beta), self.groups, 1e-5)
    }
}

/// Largest group count <= `preferred` that divides the channel count.
pub fn norm_groups(channels: usize, preferred: usize) -> usize {
    (1..=preferred.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

/// Elementwise EMA update: shadow <- decay * shadow + (1 - decay) * value.
pub fn ema_update(shadow: &mut ParamStore, params: &ParamStore, decay: f64) -> Result<()> {
    if !shadow.same_layout(params) {
        return Err(Error::invalid("EMA shadow layout differs from parameters"));
    }
    for id in params.ids() {
        let src = params.value(id).to_vec();
        for (s, v) in shadow.value_mut(id).iter_mut().zip(src) {
            *s = decay * *s + (1.0 - decay) * v;
        }
    }
    Ok(())
}
