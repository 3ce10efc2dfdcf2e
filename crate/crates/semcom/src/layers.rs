//! Layer specifications, parameter storage, and initialization.
//!
//! A [`Stack`] is an ordered list of named layers; parameters live in a
//! [`ParamStore`] keyed by `"{layer}.w"` / `"{layer}.b"` flat names. The
//! store is a BTreeMap so iteration order (checkpoints, optimizer state,
//! payload accounting) is canonical.

use crate::error::{Error, Result};
use crate::ops::{self, ConvGeom, GradNeeds};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    Dense {
        in_dim: usize,
        out_dim: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        /// Fractionally-strided (up-sampling) convolution.
        transposed: bool,
    },
    Relu,
    MaxPool2d {
        window: usize,
        stride: usize,
    },
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool2d { .. } => "maxpool2d",
        }
    }

    pub fn conv_geom(&self) -> Option<ConvGeom> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            } => Some(ConvGeom {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                transposed,
            }),
            _ => None,
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Dense { .. } | LayerSpec::Conv2d { .. })
    }

    /// Batched output shape for a batched input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                let n = *input
                    .first()
                    .ok_or_else(|| Error::Shape("dense input must be batched".into()))?;
                let flat: usize = input[1..].iter().product();
                if flat != in_dim {
                    return Err(Error::Shape(format!(
                        "dense expects {in_dim} features, input {input:?} flattens to {flat}"
                    )));
                }
                Ok(vec![n, out_dim])
            }
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geom().unwrap();
                match input {
                    [n, c, h, w] if *c == g.in_channels => {
                        let (oh, ow) = g.out_hw(*h, *w)?;
                        Ok(vec![*n, g.out_channels, oh, ow])
                    }
                    other => Err(Error::Shape(format!(
                        "conv2d expects [N,{},H,W], got {other:?}",
                        g.in_channels
                    ))),
                }
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2d { window, stride } => match input {
                [n, c, h, w] => {
                    if window == 0 || stride == 0 || window > *h || window > *w {
                        return Err(Error::InvalidArgument(format!(
                            "maxpool window {window}/stride {stride} invalid for {h}x{w}"
                        )));
                    }
                    Ok(vec![*n, *c, (h - window) / stride + 1, (w - window) / stride + 1])
                }
                other => Err(Error::Shape(format!(
                    "maxpool2d expects [N,C,H,W], got {other:?}"
                ))),
            },
        }
    }

    /// (weight shape, bias shape) for parametric layers.
    pub fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => {
                Some((vec![out_dim, in_dim], vec![out_dim]))
            }
            LayerSpec::Conv2d { out_channels, .. } => {
                let g = self.conv_geom().unwrap();
                Some((g.weight_shape().to_vec(), vec![out_channels]))
            }
            _ => None,
        }
    }

    /// Multiply-accumulates per sample (weight-apply terms only; relu and
    /// pooling count as zero).
    pub fn macs(&self, input: &[usize]) -> Result<u64> {
        match *self {
            LayerSpec::Dense { in_dim, out_dim } => Ok((in_dim * out_dim) as u64),
            LayerSpec::Conv2d { .. } => {
                let g = self.conv_geom().unwrap();
                match input {
                    [_, _, h, w] => g.macs_per_sample(*h, *w),
                    other => Err(Error::Shape(format!("conv2d macs on {other:?}"))),
                }
            }
            LayerSpec::Relu | LayerSpec::MaxPool2d { .. } => Ok(0),
        }
    }

    /// Fan-in-scaled uniform init (He-style bound √(6/fan_in)); zero bias.
    pub fn init_entry<F: Scalar>(&self, rng: &mut ChaCha8Rng) -> Option<ParamEntry<F>> {
        let (w_shape, b_shape) = self.param_shapes()?;
        let fan_in = match *self {
            LayerSpec::Dense { in_dim, .. } => in_dim,
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => in_channels * kernel * kernel,
            _ => unreachable!(),
        };
        let bound = (6.0 / fan_in as f64).sqrt();
        let n: usize = w_shape.iter().product();
        let data: Vec<F> = (0..n)
            .map(|_| F::of(rng.random_range(-bound..bound)))
            .collect();
        Some(ParamEntry {
            weight: Tensor::new(w_shape, data).expect("consistent shape"),
            bias: Some(Tensor::zeros(&b_shape)),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Option<Tensor<F>>,
}

/// Named parameter tensors with canonical (sorted) iteration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<F: Scalar> {
    entries: BTreeMap<String, Tensor<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<F>) {
        self.entries.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<F>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.entries.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<F>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> u64 {
        self.entries.values().map(|t| t.numel() as u64).sum()
    }

    pub fn byte_size(&self) -> u64 {
        self.param_count() * F::BYTES
    }

    /// Merge another store under a name prefix check: keys must not collide.
    pub fn absorb(&mut self, other: ParamStore<F>) -> Result<()> {
        for (k, v) in other.entries {
            if self.entries.contains_key(&k) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate parameter `{k}` on merge"
                )));
            }
            self.entries.insert(k, v);
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }
}

/// An ordered, named stack of layers with parameter names derived from a
/// stack-level prefix, e.g. `enc.conv1.w`.
#[derive(Debug, Clone)]
pub struct Stack {
    pub prefix: String,
    pub layers: Vec<(String, LayerSpec)>,
}

impl Stack {
    pub fn new(prefix: impl Into<String>, layers: Vec<(&str, LayerSpec)>) -> Self {
        Stack {
            prefix: prefix.into(),
            layers: layers
                .into_iter()
                .map(|(n, l)| (n.to_string(), l))
                .collect(),
        }
    }

    pub fn weight_name(&self, layer: &str) -> String {
        format!("{}.{layer}.w", self.prefix)
    }

    pub fn bias_name(&self, layer: &str) -> String {
        format!("{}.{layer}.b", self.prefix)
    }

    /// All flat parameter names belonging to `layer`.
    pub fn layer_param_names(&self, layer: &str) -> Vec<String> {
        vec![self.weight_name(layer), self.bias_name(layer)]
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mut shape = input.to_vec();
        for (_, spec) in &self.layers {
            shape = spec.output_shape(&shape)?;
        }
        Ok(shape)
    }

    /// Draw fresh parameters. Layers are initialized in stack order from the
    /// supplied stream, so the result is a pure function of the stream state.
    pub fn init_params<F: Scalar>(&self, rng: &mut ChaCha8Rng) -> ParamStore<F> {
        let mut store = ParamStore::new();
        for (name, spec) in &self.layers {
            if let Some(entry) = spec.init_entry::<F>(rng) {
                store.insert(self.weight_name(name), entry.weight);
                if let Some(b) = entry.bias {
                    store.insert(self.bias_name(name), b);
                }
            }
        }
        store
    }

    /// Value-only forward pass (no gradient bookkeeping).
    pub fn forward<F: Scalar>(&self, params: &ParamStore<F>, input: &Tensor<F>) -> Result<Tensor<F>> {
        let mut x = input.clone();
        for (name, spec) in &self.layers {
            x = match spec {
                LayerSpec::Dense { .. } => ops::dense_forward(
                    &x,
                    params.require(&self.weight_name(name))?,
                    Some(params.require(&self.bias_name(name))?),
                )?,
                LayerSpec::Conv2d { .. } => ops::conv2d_forward(
                    &x,
                    params.require(&self.weight_name(name))?,
                    Some(params.require(&self.bias_name(name))?),
                    &spec.conv_geom().unwrap(),
                )?,
                LayerSpec::Relu => ops::relu_forward(&x),
                LayerSpec::MaxPool2d { window, stride } => {
                    ops::maxpool2d_forward(&x, *window, *stride)?.0
                }
            };
        }
        Ok(x)
    }

    /// Per-layer MACs for one sample with the given (unbatched) input shape
    /// [C,H,W] or [D]; returned in stack order as (layer name, MACs).
    pub fn layer_macs(&self, input: &[usize]) -> Result<Vec<(String, u64)>> {
        let mut shape = vec![1];
        shape.extend_from_slice(input);
        let mut out = Vec::new();
        for (name, spec) in &self.layers {
            let m = spec.macs(&shape)?;
            if spec.has_params() {
                out.push((name.clone(), m));
            }
            shape = spec.output_shape(&shape)?;
        }
        Ok(out)
    }
}

/// Gradients keyed by flat parameter name.
pub type GradStore<F> = BTreeMap<String, Tensor<F>>;

/// Flat-name set, used for freeze masks.
pub type NameSet = BTreeSet<String>;

pub fn grad_needs(input: bool, weight: bool, bias: bool) -> GradNeeds {
    GradNeeds {
        input,
        weight,
        bias,
    }
}
