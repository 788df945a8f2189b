use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::tensor::{matmul, matmul_tn, Tensor};

use super::forward::{run, NormMode, Trace};
use super::{
    bias_name, head_bias_name, head_weight_name, scale_name, shift_name, weight_name, LayerKind,
    ModelState,
};

const STATS_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch: usize,
    pub seed: u64,
    #[serde(default = "default_momentum")]
    pub momentum: f32,
    /// Restrict updates to one hidden layer; `None` trains everything.
    #[serde(default)]
    pub only_hidden_layer: Option<usize>,
    /// L2 penalty on weight matrices (biases and norm affines are exempt).
    #[serde(default)]
    pub weight_decay: f32,
}

fn default_momentum() -> f32 {
    0.9
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.05,
            batch: 64,
            seed: 0,
            momentum: 0.9,
            only_hidden_layer: None,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    /// Settings for the two-task MNIST models at width 256; width 1024 wants
    /// `weight_decay` 1e-2.
    pub fn mnist(seed: u64) -> Self {
        TrainConfig {
            epochs: 20,
            lr: 0.1,
            seed,
            weight_decay: 5e-3,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean cosine-embedding loss per epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Mean of `1 - cos(output_i, target_i)` and its gradient w.r.t. the output.
pub(crate) fn cosine_loss(out: &Tensor, targets: &Tensor) -> (f64, Tensor) {
    let b = out.rows();
    let mut grad = Tensor::zeros(out.shape());
    let mut total = 0.0f64;
    for i in 0..b {
        let o = out.row(i);
        let t = targets.row(i);
        let no = o.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-8);
        let nt = t.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt().max(1e-8);
        let dot: f64 = o.iter().zip(t).map(|(&a, &c)| a as f64 * c as f64).sum();
        let cos = dot / (no * nt);
        total += 1.0 - cos;
        let g = grad.row_mut(i);
        for j in 0..o.len() {
            let d = t[j] as f64 / (no * nt) - cos * o[j] as f64 / (no * no);
            g[j] = (-d / b as f64) as f32;
        }
    }
    (total / b as f64, grad)
}

fn col_sums(t: &Tensor) -> Vec<f32> {
    let mut s = vec![0.0f64; t.cols()];
    for i in 0..t.rows() {
        for (acc, &v) in s.iter_mut().zip(t.row(i)) {
            *acc += v as f64;
        }
    }
    s.into_iter().map(|v| v as f32).collect()
}

/// Gradients of the mean cosine-embedding loss for one batch.
fn backward(
    m: &ModelState,
    trace: &Trace,
    x: &Tensor,
    targets: &Tensor,
) -> Result<(f64, BTreeMap<String, Vec<f32>>)> {
    let spec = &m.spec;
    let mut grads = BTreeMap::new();
    let (loss, d_out) = cosine_loss(&trace.heads[0], targets);
    let h_last = trace.last_hidden(x);
    let w_head = m.param(&head_weight_name(0));
    grads.insert(head_weight_name(0), matmul_tn(&d_out, h_last)?.into_data());
    grads.insert(head_bias_name(0), col_sums(&d_out));
    let mut d_act = matmul(&d_out, w_head)?;

    for (i, l) in spec.hidden_layers().iter().enumerate().rev() {
        let lt = &trace.hidden[i];
        let mut dz = d_act;
        if matches!(l.kind, LayerKind::LinearRelu | LayerKind::GroupedLinear) {
            for (g, &o) in dz.data_mut().iter_mut().zip(lt.output.data()) {
                if o <= 0.0 {
                    *g = 0.0;
                }
            }
        }
        if l.is_grouped() {
            let xhat = lt.xhat.as_ref().expect("grouped layers record xhat");
            let k = l.group_size();
            let scale = m.param(&scale_name(i)).data();
            let b = dz.rows();
            let n = (b * k) as f64;
            let mut d_scale = vec![0.0f32; l.groups];
            let mut d_shift = vec![0.0f32; l.groups];
            for g in 0..l.groups {
                let (mut s_dy, mut s_dy_xh) = (0.0f64, 0.0f64);
                for r in 0..b {
                    let dy = &dz.row(r)[g * k..(g + 1) * k];
                    let xh = &xhat.row(r)[g * k..(g + 1) * k];
                    for (a, c) in dy.iter().zip(xh) {
                        s_dy += *a as f64;
                        s_dy_xh += *a as f64 * *c as f64;
                    }
                }
                d_scale[g] = s_dy_xh as f32;
                d_shift[g] = s_dy as f32;
                // dxhat = dy * scale; means are over the group's batch entries.
                let mean_dxh = scale[g] as f64 * s_dy / n;
                let mean_dxh_xh = scale[g] as f64 * s_dy_xh / n;
                let inv = lt.inv_std[g] as f64;
                for r in 0..b {
                    let xh: Vec<f32> = xhat.row(r)[g * k..(g + 1) * k].to_vec();
                    let dzr = &mut dz.row_mut(r)[g * k..(g + 1) * k];
                    for (v, &c) in dzr.iter_mut().zip(&xh) {
                        let dxh = *v as f64 * scale[g] as f64;
                        *v = (inv * (dxh - mean_dxh - c as f64 * mean_dxh_xh)) as f32;
                    }
                }
            }
            grads.insert(scale_name(i), d_scale);
            grads.insert(shift_name(i), d_shift);
        }
        grads.insert(weight_name(i), matmul_tn(&dz, &lt.input)?.into_data());
        grads.insert(bias_name(i), col_sums(&dz));
        d_act = matmul(&dz, m.param(&weight_name(i)))?;
    }
    Ok((loss, grads))
}

fn trainable(name: &str, only: Option<usize>) -> bool {
    match only {
        None => true,
        Some(i) => name.starts_with(&format!("hidden.{i}.")),
    }
}

/// SGD with momentum on the cosine-embedding loss `1 - cos(output, target)`.
///
/// Deterministic given `cfg.seed`. Grouped layers normalise with batch
/// statistics during training and keep an exponential running average.
pub fn train(
    m: &ModelState,
    data: &TaskDataset,
    cfg: &TrainConfig,
) -> Result<(ModelState, TrainReport)> {
    if data.len() == 0 {
        return Err(Error::InsufficientData("training set is empty".into()));
    }
    if m.spec.heads != 1 {
        return Err(Error::Contract("training expects a single-head model".into()));
    }
    if data.targets.cols() != m.spec.output_dim || data.inputs.cols() != m.spec.input_dim {
        return Err(Error::Shape("dataset does not fit the model".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    if let Some(i) = cfg.only_hidden_layer {
        if i >= m.spec.num_hidden() {
            return Err(Error::Contract(format!("no hidden layer {i}")));
        }
    }
    let mut model = m.clone();
    let mut velocity: BTreeMap<String, Vec<f32>> = model
        .params
        .iter()
        .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0f64;
        for chunk in order.chunks(cfg.batch) {
            let x = data.inputs.gather_rows(chunk);
            let t = data.targets.gather_rows(chunk);
            let trace = run(&model, &x, NormMode::Batch)?;
            let (loss, grads) = backward(&model, &trace, &x, &t)?;
            total += loss * chunk.len() as f64;
            for (name, g) in &grads {
                if !trainable(name, cfg.only_hidden_layer) {
                    continue;
                }
                let v = velocity.get_mut(name).expect("velocity per param");
                let decay = if name.ends_with(".weight") { cfg.weight_decay } else { 0.0 };
                let p = model.param_mut(name).data_mut();
                for ((pv, vv), &gv) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vv = cfg.momentum * *vv + gv + decay * *pv;
                    *pv -= cfg.lr * *vv;
                }
            }
            for (i, lt) in trace.hidden.iter().enumerate() {
                if let Some(bs) = &lt.batch_stats {
                    if cfg.only_hidden_layer.map_or(false, |only| only != i) {
                        continue;
                    }
                    let rs = model.norm_stats.get_mut(&i).expect("grouped layer stats");
                    for g in 0..bs.mean.len() {
                        rs.mean[g] += STATS_MOMENTUM * (bs.mean[g] - rs.mean[g]);
                        rs.var[g] += STATS_MOMENTUM * (bs.var[g] - rs.var[g]);
                    }
                }
            }
        }
        let epoch_loss = total / data.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Contract("training diverged".into()));
        }
        epoch_losses.push(epoch_loss);
    }
    Ok((model, TrainReport { epoch_losses }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormReset {
    /// Statistics of this many layers were recomputed.
    Updated(usize),
    /// The model has no normalised layers; nothing changed.
    NoNormLayers,
}

/// Recomputes every grouped layer's running statistics from one sweep over
/// `probe_inputs`, each layer seeing the already-reset layers below it.
pub fn reset_norm_stats(m: &ModelState, probe_inputs: &Tensor) -> Result<(ModelState, NormReset)> {
    if m.norm_stats.is_empty() {
        log::warn!("reset_norm_stats: model has no normalised layers");
        return Ok((m.clone(), NormReset::NoNormLayers));
    }
    let trace = run(m, probe_inputs, NormMode::Batch)?;
    let mut out = m.clone();
    let mut count = 0;
    for (i, lt) in trace.hidden.into_iter().enumerate() {
        if let Some(stats) = lt.batch_stats {
            out.norm_stats.insert(i, stats);
            count += 1;
        }
    }
    Ok((out, NormReset::Updated(count)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs_task;
    use crate::model::forward::group_moments;
    use crate::model::{build_model, forward, ModelSpec};

    fn toy() -> (ModelState, TaskDataset) {
        let data = blobs_task(200, 6, 8, 6.0, 11).unwrap();
        let m = build_model(&ModelSpec::mlp(6, &[16], 8), 2).unwrap();
        (m, data)
    }

    #[test]
    fn zero_epochs_is_identity() {
        let (m, data) = toy();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let (out, report) = train(&m, &data, &cfg).unwrap();
        assert_eq!(out, m);
        assert!(report.epoch_losses.is_empty());
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (m, data) = toy();
        let cfg = TrainConfig {
            epochs: 50,
            lr: 0.1,
            batch: 32,
            seed: 4,
            ..Default::default()
        };
        let (trained, report) = train(&m, &data, &cfg).unwrap();
        let acc = crate::eval::task_accuracy(&trained, &data, 0).unwrap();
        assert!(acc >= 0.99, "accuracy {acc}");
        let (_, again) = train(&m, &data, &cfg).unwrap();
        assert_eq!(report.final_loss(), again.final_loss());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let spec: ModelSpec = "3-6g2-4-5".parse().unwrap();
        let mut m = build_model(&spec, 5).unwrap();
        m.param_mut("hidden.0.shift").data_mut()[1] = 0.3;
        m.param_mut("hidden.0.scale").data_mut()[0] = 1.4;
        let data = blobs_task(8, 3, 5, 1.0, 3).unwrap();
        let x = &data.inputs;
        let t = &data.targets;
        let trace = run(&m, x, NormMode::Batch).unwrap();
        let (_, grads) = backward(&m, &trace, x, t).unwrap();
        let loss_at = |m: &ModelState| cosine_loss(&run(m, x, NormMode::Batch).unwrap().heads[0], t).0;
        for (name, g) in &grads {
            for idx in [0usize, g.len() / 2, g.len() - 1] {
                let mut plus = m.clone();
                plus.param_mut(name).data_mut()[idx] += 1e-3;
                let mut minus = m.clone();
                minus.param_mut(name).data_mut()[idx] -= 1e-3;
                let fd = (loss_at(&plus) - loss_at(&minus)) / 2e-3;
                assert!(
                    (fd - g[idx] as f64).abs() < 2e-3 * (1.0 + fd.abs()),
                    "{name}[{idx}]: fd {fd} vs {}",
                    g[idx]
                );
            }
        }
    }

    #[test]
    fn norm_reset_matches_probe_moments() {
        let spec: ModelSpec = "4-8g2-6g3-3".parse().unwrap();
        let m = build_model(&spec, 1).unwrap();
        let probe = blobs_task(64, 4, 3, 2.0, 9).unwrap().inputs;
        let (reset, outcome) = reset_norm_stats(&m, &probe).unwrap();
        assert_eq!(outcome, NormReset::Updated(2));
        // Layer 0 pre-activations only depend on its own weights.
        let z0 = crate::tensor::matmul_nt(&probe, reset.param("hidden.0.weight")).unwrap();
        let expect = group_moments(&z0, 2);
        for g in 0..2 {
            assert!((expect.mean[g] - reset.norm_stats[&0].mean[g]).abs() < 1e-5);
            assert!((expect.var[g] - reset.norm_stats[&0].var[g]).abs() < 1e-5);
        }
        // Layer 1 sees layer 0 normalised with the new statistics.
        let (_, p) = forward(&reset, &probe, true).unwrap();
        let h0 = p.unwrap().layers[0].transpose().unwrap();
        let z1 = crate::tensor::matmul_nt(&h0, reset.param("hidden.1.weight")).unwrap();
        let expect = group_moments(&z1, 3);
        for g in 0..3 {
            assert!((expect.mean[g] - reset.norm_stats[&1].mean[g]).abs() < 1e-5);
            assert!((expect.var[g] - reset.norm_stats[&1].var[g]).abs() < 1e-5);
        }
        let (twice, _) = reset_norm_stats(&reset, &probe).unwrap();
        assert_eq!(twice, reset);
    }

    #[test]
    fn norm_reset_without_norm_layers_is_a_noop() {
        let (m, data) = toy();
        let (out, outcome) = reset_norm_stats(&m, &data.inputs).unwrap();
        assert_eq!(outcome, NormReset::NoNormLayers);
        assert_eq!(out, m);
    }
}
