use crate::error::{Error, Result};
use crate::tensor::{matmul_nt, Tensor};

use super::{
    bias_name, head_bias_name, head_weight_name, scale_name, shift_name, weight_name, LayerKind,
    ModelState, NormStats, NORM_EPS,
};

/// Post-nonlinearity activations of every hidden layer, one row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationProbe {
    /// `layers[l]` has shape `[D_l, samples]`.
    pub layers: Vec<Tensor>,
    pub samples: usize,
}

impl ActivationProbe {
    pub fn new(layers: Vec<Tensor>) -> Result<Self> {
        let samples = layers
            .first()
            .map(|t| t.cols())
            .ok_or_else(|| Error::InsufficientData("probe without layers".into()))?;
        if samples < 2 {
            return Err(Error::InsufficientData(format!(
                "probes need at least 2 samples, got {samples}"
            )));
        }
        if layers.iter().any(|t| t.rank() != 2 || t.cols() != samples) {
            return Err(Error::Shape("probe layers disagree on sample count".into()));
        }
        Ok(ActivationProbe { layers, samples })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum NormMode {
    /// Normalise with the stored running statistics.
    Running,
    /// Normalise with statistics of the current batch.
    Batch,
}

pub(crate) struct LayerTrace {
    pub input: Tensor,
    /// Normalised pre-activations for grouped layers.
    pub xhat: Option<Tensor>,
    pub inv_std: Vec<f32>,
    pub batch_stats: Option<NormStats>,
    pub output: Tensor,
}

pub(crate) struct Trace {
    pub hidden: Vec<LayerTrace>,
    pub heads: Vec<Tensor>,
}

impl Trace {
    pub fn last_hidden<'a>(&'a self, x: &'a Tensor) -> &'a Tensor {
        self.hidden.last().map(|l| &l.output).unwrap_or(x)
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut z = matmul_nt(x, w)?;
    let bias = b.data();
    for i in 0..z.rows() {
        for (v, &bv) in z.row_mut(i).iter_mut().zip(bias) {
            *v += bv;
        }
    }
    Ok(z)
}

/// Per-group mean and population variance over `batch x group_size` entries.
pub(crate) fn group_moments(z: &Tensor, groups: usize) -> NormStats {
    let (b, d) = (z.rows(), z.cols());
    let k = d / groups;
    let mut mean = vec![0.0f32; groups];
    let mut var = vec![0.0f32; groups];
    let n = (b * k) as f64;
    for g in 0..groups {
        let mut s = 0.0f64;
        for r in 0..b {
            s += z.row(r)[g * k..(g + 1) * k].iter().map(|&v| v as f64).sum::<f64>();
        }
        let mu = s / n;
        let mut ss = 0.0f64;
        for r in 0..b {
            ss += z.row(r)[g * k..(g + 1) * k]
                .iter()
                .map(|&v| (v as f64 - mu).powi(2))
                .sum::<f64>();
        }
        mean[g] = mu as f32;
        var[g] = (ss / n) as f32;
    }
    NormStats { mean, var }
}

pub(crate) fn run(m: &ModelState, x: &Tensor, mode: NormMode) -> Result<Trace> {
    let spec = &m.spec;
    if x.rank() != 2 || x.cols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "input {:?} does not match input_dim {}",
            x.shape(),
            spec.input_dim
        )));
    }
    let mut hidden = Vec::with_capacity(spec.num_hidden());
    let mut current = x.clone();
    for (i, l) in spec.hidden_layers().iter().enumerate() {
        let mut z = affine(&current, m.param(&weight_name(i)), m.param(&bias_name(i)))?;
        let mut xhat = None;
        let mut inv_std = Vec::new();
        let mut batch_stats = None;
        if l.is_grouped() {
            let stats = match mode {
                NormMode::Batch => group_moments(&z, l.groups),
                NormMode::Running => m.norm_stats[&i].clone(),
            };
            let k = l.group_size();
            let scale = m.param(&scale_name(i)).data();
            let shift = m.param(&shift_name(i)).data();
            inv_std = stats.var.iter().map(|&v| 1.0 / (v + NORM_EPS).sqrt()).collect();
            let mut xh = z.clone();
            for r in 0..z.rows() {
                let zr = z.row_mut(r);
                let xr = xh.row_mut(r);
                for g in 0..l.groups {
                    for u in g * k..(g + 1) * k {
                        let n = (xr[u] - stats.mean[g]) * inv_std[g];
                        xr[u] = n;
                        zr[u] = scale[g] * n + shift[g];
                    }
                }
            }
            xhat = Some(xh);
            if mode == NormMode::Batch {
                batch_stats = Some(stats);
            }
        }
        if matches!(l.kind, LayerKind::LinearRelu | LayerKind::GroupedLinear) {
            for v in z.data_mut() {
                *v = v.max(0.0);
            }
        }
        let input = std::mem::replace(&mut current, z.clone());
        hidden.push(LayerTrace {
            input,
            xhat,
            inv_std,
            batch_stats,
            output: z,
        });
    }
    let mut heads = Vec::with_capacity(spec.heads);
    for h in 0..spec.heads {
        heads.push(affine(
            &current,
            m.param(&head_weight_name(h)),
            m.param(&head_bias_name(h)),
        )?);
    }
    Ok(Trace { hidden, heads })
}

fn probe_from(trace: &Trace) -> Result<Option<ActivationProbe>> {
    if trace.hidden.is_empty() {
        return Ok(None);
    }
    let layers = trace
        .hidden
        .iter()
        .map(|l| l.output.transpose())
        .collect::<Result<Vec<_>>>()?;
    let samples = layers[0].cols();
    Ok(Some(ActivationProbe { layers, samples }))
}

/// Inference forward pass returning the first head's output.
///
/// With `capture`, the probe holds every hidden layer's post-nonlinearity
/// activations as `[D_l, batch]`.
pub fn forward(
    m: &ModelState,
    x: &Tensor,
    capture: bool,
) -> Result<(Tensor, Option<ActivationProbe>)> {
    let (mut heads, probe) = forward_heads(m, x, capture)?;
    Ok((heads.swap_remove(0), probe))
}

/// Inference forward pass returning every head's output.
pub fn forward_heads(
    m: &ModelState,
    x: &Tensor,
    capture: bool,
) -> Result<(Vec<Tensor>, Option<ActivationProbe>)> {
    let trace = run(m, x, NormMode::Running)?;
    let probe = if capture { probe_from(&trace)? } else { None };
    Ok((trace.heads, probe))
}

/// Activations of every hidden layer on `inputs`.
pub fn capture_probe(m: &ModelState, inputs: &Tensor) -> Result<ActivationProbe> {
    let trace = run(m, inputs, NormMode::Running)?;
    let probe = probe_from(&trace)?
        .ok_or_else(|| Error::Spec("model has no hidden layers to probe".into()))?;
    ActivationProbe::new(probe.layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};
    use crate::tensor::matmul;

    #[test]
    fn zero_model_gives_zero_logits() {
        let spec = ModelSpec::mlp(3, &[5], 2);
        let mut m = build_model(&spec, 0).unwrap();
        for t in m.params.values_mut() {
            t.data_mut().fill(0.0);
        }
        let x = Tensor::filled(&[4, 3], 1.5);
        let (out, _) = forward(&m, &x, false).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_linear_layer_is_a_matmul() {
        let spec = ModelSpec::mlp(4, &[], 3);
        let m = build_model(&spec, 9).unwrap();
        let x = Tensor::matrix(2, 4, (0..8).map(|v| v as f32 * 0.25).collect()).unwrap();
        let (out, probe) = forward(&m, &x, true).unwrap();
        assert!(probe.is_none());
        let expect = matmul(&x, &m.param("head.0.weight").transpose().unwrap()).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-6);
    }

    #[test]
    fn probe_shapes_follow_hidden_layers() {
        let spec: ModelSpec = "5-7-8g2-3".parse().unwrap();
        let m = build_model(&spec, 1).unwrap();
        let x = Tensor::filled(&[6, 5], 0.3);
        let (_, probe) = forward(&m, &x, true).unwrap();
        let probe = probe.unwrap();
        assert_eq!(probe.samples, 6);
        assert_eq!(probe.layers[0].shape(), &[7, 6]);
        assert_eq!(probe.layers[1].shape(), &[8, 6]);
        assert!(forward(&m, &Tensor::zeros(&[2, 4]), false).is_err());
    }
}
