//! Toy architectures: MLPs with optional group-normalised hidden layers and
//! one or more output heads.
//!
//! Parameter naming is positional: hidden layer `i` owns `hidden.{i}.weight`
//! (`[out, in]`), `hidden.{i}.bias`, and for grouped layers the group-indexed
//! `hidden.{i}.scale` / `hidden.{i}.shift` (`[g]`). Output head `h` owns
//! `head.{h}.weight` / `head.{h}.bias`.

mod forward;
mod perm_spec;
mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use forward::{capture_probe, forward, forward_heads, ActivationProbe};
pub use perm_spec::{permutation_spec, GroupBlock, PermGroup, PermSite, PermutationSpec};
pub use train::{reset_norm_stats, train, NormReset, TrainConfig, TrainReport};

/// Epsilon added to group variances before normalising.
pub const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    /// Affine map without a nonlinearity.
    Linear,
    LinearRelu,
    /// Affine map, per-group normalisation with group-shared scale/shift, ReLU.
    GroupedLinear,
    OutputLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub groups: usize,
}

impl LayerSpec {
    pub fn hidden(kind: LayerKind, in_dim: usize, out_dim: usize) -> Self {
        LayerSpec {
            kind,
            in_dim,
            out_dim,
            groups: 1,
        }
    }

    pub fn grouped(in_dim: usize, groups: usize, group_size: usize) -> Self {
        LayerSpec {
            kind: LayerKind::GroupedLinear,
            in_dim,
            out_dim: groups * group_size,
            groups,
        }
    }

    pub fn is_grouped(&self) -> bool {
        self.kind == LayerKind::GroupedLinear
    }

    pub fn group_size(&self) -> usize {
        self.out_dim / self.groups.max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    /// Hidden layers followed by exactly one `OutputLinear` layer.
    pub layers: Vec<LayerSpec>,
    /// Number of parallel output heads sharing the output layer's shape.
    #[serde(default = "one")]
    pub heads: usize,
}

fn one() -> usize {
    1
}

impl ModelSpec {
    /// A ReLU MLP: `input -> hidden[0] -> ... -> output`.
    pub fn mlp(input_dim: usize, hidden: &[usize], output_dim: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(LayerSpec::hidden(LayerKind::LinearRelu, prev, h));
            prev = h;
        }
        layers.push(LayerSpec::hidden(LayerKind::OutputLinear, prev, output_dim));
        ModelSpec {
            input_dim,
            output_dim,
            layers,
            heads: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (out, hidden) = self
            .layers
            .split_last()
            .ok_or_else(|| Error::Spec("model has no layers".into()))?;
        if out.kind != LayerKind::OutputLinear {
            return Err(Error::Spec("last layer must be output_linear".into()));
        }
        if out.out_dim != self.output_dim {
            return Err(Error::Spec(format!(
                "output layer emits {} but output_dim is {}",
                out.out_dim, self.output_dim
            )));
        }
        if self.heads == 0 {
            return Err(Error::Spec("at least one output head is required".into()));
        }
        let mut prev = self.input_dim;
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != prev {
                return Err(Error::Spec(format!(
                    "layer {i} expects {} inputs but receives {prev}",
                    l.in_dim
                )));
            }
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Spec(format!("layer {i} has a zero dimension")));
            }
            if l.groups == 0 || l.out_dim % l.groups != 0 {
                return Err(Error::Spec(format!(
                    "layer {i}: {} groups do not divide {} units",
                    l.groups, l.out_dim
                )));
            }
            if !l.is_grouped() && l.groups != 1 {
                return Err(Error::Spec(format!(
                    "layer {i}: only grouped_linear layers may have groups > 1"
                )));
            }
            prev = l.out_dim;
        }
        if hidden.iter().any(|l| l.kind == LayerKind::OutputLinear) {
            return Err(Error::Spec("output_linear may only appear last".into()));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> &[LayerSpec] {
        &self.layers[..self.layers.len() - 1]
    }

    pub fn output_layer(&self) -> &LayerSpec {
        self.layers.last().expect("validated spec has an output layer")
    }

    pub fn num_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn with_heads(mut self, heads: usize) -> Self {
        self.heads = heads;
        self
    }

    /// Same architecture ignoring the head count.
    pub fn same_trunk(&self, other: &ModelSpec) -> bool {
        self.input_dim == other.input_dim
            && self.output_dim == other.output_dim
            && self.layers == other.layers
    }

    /// Every parameter name with its expected shape, in canonical order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, l) in self.hidden_layers().iter().enumerate() {
            out.push((weight_name(i), vec![l.out_dim, l.in_dim]));
            out.push((bias_name(i), vec![l.out_dim]));
            if l.is_grouped() {
                out.push((scale_name(i), vec![l.groups]));
                out.push((shift_name(i), vec![l.groups]));
            }
        }
        let o = self.output_layer();
        for h in 0..self.heads {
            out.push((head_weight_name(h), vec![o.out_dim, o.in_dim]));
            out.push((head_bias_name(h), vec![o.out_dim]));
        }
        out
    }
}

/// Compact architecture strings: `784-256-256-256-64`.
///
/// Hidden widths may carry a suffix: `32g4` is a grouped layer of 4 groups
/// of 8 units, `64l` a linear layer without ReLU. The first number is the
/// input dimension and the last the output dimension.
impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<&str> = s.split('-').map(str::trim).collect();
        if tokens.len() < 2 {
            return Err(Error::Spec(format!("architecture '{s}' needs input and output dims")));
        }
        let num = |t: &str| -> Result<usize> {
            t.parse::<usize>()
                .map_err(|_| Error::Spec(format!("bad dimension '{t}' in '{s}'")))
        };
        let input_dim = num(tokens[0])?;
        let output_dim = num(tokens[tokens.len() - 1])?;
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for t in &tokens[1..tokens.len() - 1] {
            let layer = if let Some((w, g)) = t.split_once('g') {
                let (w, g) = (num(w)?, num(g)?);
                if g == 0 || w % g != 0 {
                    return Err(Error::Spec(format!("'{t}': groups must divide width")));
                }
                LayerSpec::grouped(prev, g, w / g)
            } else if let Some(w) = t.strip_suffix('l') {
                LayerSpec::hidden(LayerKind::Linear, prev, num(w)?)
            } else {
                LayerSpec::hidden(LayerKind::LinearRelu, prev, num(t)?)
            };
            prev = layer.out_dim;
            layers.push(layer);
        }
        layers.push(LayerSpec::hidden(LayerKind::OutputLinear, prev, output_dim));
        let spec = ModelSpec {
            input_dim,
            output_dim,
            layers,
            heads: 1,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.input_dim)?;
        for l in self.hidden_layers() {
            match l.kind {
                LayerKind::GroupedLinear => write!(f, "-{}g{}", l.out_dim, l.groups)?,
                LayerKind::Linear => write!(f, "-{}l", l.out_dim)?,
                _ => write!(f, "-{}", l.out_dim)?,
            }
        }
        write!(f, "-{}", self.output_dim)
    }
}

pub fn weight_name(i: usize) -> String {
    format!("hidden.{i}.weight")
}
pub fn bias_name(i: usize) -> String {
    format!("hidden.{i}.bias")
}
pub fn scale_name(i: usize) -> String {
    format!("hidden.{i}.scale")
}
pub fn shift_name(i: usize) -> String {
    format!("hidden.{i}.shift")
}
pub fn head_weight_name(h: usize) -> String {
    format!("head.{h}.weight")
}
pub fn head_bias_name(h: usize) -> String {
    format!("head.{h}.bias")
}

/// Running per-group statistics of a grouped layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl NormStats {
    pub fn identity(groups: usize) -> Self {
        NormStats {
            mean: vec![0.0; groups],
            var: vec![1.0; groups],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: BTreeMap<String, Tensor>,
    /// Keyed by hidden-layer index; present for every grouped layer.
    pub norm_stats: BTreeMap<usize, NormStats>,
}

impl ModelState {
    /// Assembles a state and checks it against its spec.
    pub fn from_parts(
        spec: ModelSpec,
        params: BTreeMap<String, Tensor>,
        norm_stats: BTreeMap<usize, NormStats>,
    ) -> Result<Self> {
        let m = ModelState {
            spec,
            params,
            norm_stats,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        let shapes = self.spec.param_shapes();
        for (name, shape) in &shapes {
            let t = self
                .params
                .get(name)
                .ok_or_else(|| Error::Spec(format!("missing parameter {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape(format!(
                    "{name} has shape {:?}, spec wants {shape:?}",
                    t.shape()
                )));
            }
        }
        if self.params.len() != shapes.len() {
            return Err(Error::Spec("state has parameters the model spec does not declare".into()));
        }
        for (i, l) in self.spec.hidden_layers().iter().enumerate() {
            match (l.is_grouped(), self.norm_stats.get(&i)) {
                (true, Some(s)) if s.mean.len() == l.groups && s.var.len() == l.groups => {}
                (true, _) => {
                    return Err(Error::Spec(format!("layer {i} lacks valid norm statistics")))
                }
                (false, Some(_)) => {
                    return Err(Error::Spec(format!("layer {i} is not normalised")))
                }
                (false, None) => {}
            }
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("validated state lacks {name}"))
    }

    pub fn param_mut(&mut self, name: &str) -> &mut Tensor {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("validated state lacks {name}"))
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// All parameters in canonical order as one vector.
    pub fn flatten(&self) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.num_params());
        for (name, _) in self.spec.param_shapes() {
            out.extend_from_slice(self.param(&name).data());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten): a copy of `self` carrying `flat`.
    pub fn with_flat(&self, flat: &[f32]) -> Result<ModelState> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let mut out = self.clone();
        let mut offset = 0;
        for (name, _) in self.spec.param_shapes() {
            let t = out.param_mut(&name);
            let n = t.len();
            t.data_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }
}

/// Fan-in scaled uniform (Kaiming) initialisation, deterministic per seed.
///
/// Weights are drawn from `U(-b, b)` with `b = sqrt(6 / fan_in)`, giving
/// variance `2 / fan_in`; biases and shifts start at zero, scales at one.
pub fn build_model(spec: &ModelSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = BTreeMap::new();
    let mut norm_stats = BTreeMap::new();
    let kaiming = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        let bound = (6.0 / cols as f64).sqrt() as f32;
        let data = (0..rows * cols)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Tensor::matrix(rows, cols, data).expect("positive dims")
    };
    for (i, l) in spec.hidden_layers().iter().enumerate() {
        params.insert(weight_name(i), kaiming(l.out_dim, l.in_dim, &mut rng));
        params.insert(bias_name(i), Tensor::zeros(&[l.out_dim]));
        if l.is_grouped() {
            params.insert(scale_name(i), Tensor::filled(&[l.groups], 1.0));
            params.insert(shift_name(i), Tensor::zeros(&[l.groups]));
            norm_stats.insert(i, NormStats::identity(l.groups));
        }
    }
    let o = spec.output_layer();
    for h in 0..spec.heads {
        params.insert(head_weight_name(h), kaiming(o.out_dim, o.in_dim, &mut rng));
        params.insert(head_bias_name(h), Tensor::zeros(&[o.out_dim]));
    }
    ModelState::from_parts(spec.clone(), params, norm_stats)
}
