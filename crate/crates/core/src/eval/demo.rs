use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::{sample_probe, TaskDataset};
use crate::error::{Error, Result};
use crate::model::{bias_name, build_model, capture_probe, train, weight_name, LayerKind, ModelState, TrainConfig};
use crate::tensor::{matmul_nt, pearson_rows, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoConfig {
    /// Training run for the retrained layer; its seed also drives the
    /// re-initialisation.
    pub retrain: TrainConfig,
    /// Start the retrained layer from fresh weights instead of the parent's.
    pub reinit: bool,
    pub probe_samples: usize,
}

impl Default for DemoConfig {
    fn default() -> Self {
        DemoConfig {
            retrain: TrainConfig {
                epochs: 5,
                ..Default::default()
            },
            reinit: false,
            probe_samples: 512,
        }
    }
}

/// One (parent unit, retrained unit) pair averaged into a merged unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub i: usize,
    pub j: usize,
    /// Cosine of incoming weights plus bias.
    pub weight_sim: f64,
    /// Pearson correlation of the two units' activations.
    pub act_sim: f64,
    /// Lower of the merged unit's activation correlations with its parents.
    pub merged_min_parent_sim: f64,
    /// Both units vary over the probe; a constant unit correlates 0 with
    /// everything.
    pub both_alive: bool,
}

/// Copies of `model` whose hidden layer `layer` is retrained alone.
pub fn retrain_layer(model: &ModelState, layer: usize, task: &TaskDataset, cfg: &DemoConfig) -> Result<ModelState> {
    let mut start = model.clone();
    if cfg.reinit {
        let fresh = build_model(&model.spec, cfg.retrain.seed ^ 0x5eed_0f_1a7e)?;
        for name in [weight_name(layer), bias_name(layer)] {
            *start.param_mut(&name) = fresh.param(&name).clone();
        }
    }
    let tc = TrainConfig {
        only_hidden_layer: Some(layer),
        ..cfg.retrain.clone()
    };
    Ok(train(&start, task, &tc)?.0)
}

fn pre_activations(m: &ModelState, layer: usize, x: &Tensor) -> Result<Tensor> {
    let input = if layer == 0 {
        x.clone()
    } else {
        capture_probe(m, x)?.layers[layer - 1].transpose()?
    };
    let mut z = matmul_nt(m.param(&weight_name(layer)), &input)?;
    let b = m.param(&bias_name(layer)).data();
    for (u, &bu) in b.iter().enumerate() {
        z.row_mut(u).iter_mut().for_each(|v| *v += bu);
    }
    Ok(z)
}

fn incoming(m: &ModelState, layer: usize) -> Result<Tensor> {
    let w = m.param(&weight_name(layer));
    let b = m.param(&bias_name(layer));
    Tensor::hstack(&[w, &b.clone().reshape(vec![b.len(), 1])?])
}

fn cosine_matrix(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    crate::tensor::cosine_rows(x, y)
}

/// Scatter data for the weight/activation disagreement: every unit `i` of
/// `parent`'s layer against every unit `j` of `child`'s, where the two
/// models differ only in that layer.
pub fn unit_pair_rows(parent: &ModelState, child: &ModelState, layer: usize, probe: &Tensor) -> Result<Vec<DemoRow>> {
    let l = parent
        .spec
        .hidden_layers()
        .get(layer)
        .ok_or_else(|| Error::Contract(format!("no hidden layer {layer}")))?;
    if l.kind == LayerKind::GroupedLinear {
        return Err(Error::Contract("the demo needs an ungrouped layer".into()));
    }
    let relu = l.kind == LayerKind::LinearRelu;
    let act = |z: &Tensor| if relu { z.map(|v| v.max(0.0)) } else { z.clone() };
    let zp = pre_activations(parent, layer, probe)?;
    let zc = pre_activations(child, layer, probe)?;
    let (ap, ac) = (act(&zp), act(&zc));
    let ws = cosine_matrix(&incoming(parent, layer)?, &incoming(child, layer)?)?;
    let as_ = pearson_rows(&ap, &ac)?;
    let d = zp.rows();
    let s = zp.cols();
    let varies = |t: &Tensor, u: usize| {
        let r = t.row(u);
        r.iter().any(|&v| v != r[0])
    };
    let alive_p: Vec<bool> = (0..d).map(|u| varies(&ap, u)).collect();
    let alive_c: Vec<bool> = (0..d).map(|u| varies(&ac, u)).collect();
    let mut rows = Vec::with_capacity(d * d);
    for i in 0..d {
        // merged pre-activation is the mean of the parents' pre-activations
        let mut merged = Tensor::zeros(&[d, s]);
        for j in 0..d {
            for ((m, &p), &c) in merged.row_mut(j).iter_mut().zip(zp.row(i)).zip(zc.row(j)) {
                *m = 0.5 * (p + c);
            }
        }
        let merged = act(&merged);
        let to_p = pearson_rows(&merged, &ap.block(i, 0, 1, s)?)?;
        let to_c = pearson_rows(&merged, &ac)?;
        for j in 0..d {
            rows.push(DemoRow {
                i,
                j,
                weight_sim: ws.at(i, j) as f64,
                act_sim: as_.at(i, j) as f64,
                merged_min_parent_sim: (to_p.at(j, 0) as f64).min(to_c.at(j, j) as f64),
                both_alive: alive_p[i] && alive_c[j],
            });
        }
    }
    Ok(rows)
}

/// Retrains one hidden layer of `model` on `task` and reports every unit
/// pair between the original and the retrained layer.
pub fn inconsistency_demo(
    model: &ModelState,
    retrain_layer_idx: usize,
    task: &TaskDataset,
    cfg: &DemoConfig,
) -> Result<(ModelState, Vec<DemoRow>)> {
    if retrain_layer_idx >= model.spec.num_hidden() {
        return Err(Error::Contract(format!("no hidden layer {retrain_layer_idx}")));
    }
    let child = retrain_layer(model, retrain_layer_idx, task, cfg)?;
    let probe = sample_probe(&[task], cfg.probe_samples, cfg.retrain.seed)?;
    let rows = unit_pair_rows(model, &child, retrain_layer_idx, &probe)?;
    Ok((child, rows))
}

/// `i,j,weight_sim,act_sim,merged_min_parent_sim,both_alive`.
pub fn write_demo_csv(rows: &[DemoRow], mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "i,j,weight_sim,act_sim,merged_min_parent_sim,both_alive")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.i, r.j, r.weight_sim, r.act_sim, r.merged_min_parent_sim, r.both_alive as u8
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs_task;
    use crate::model::ModelSpec;

    #[test]
    fn self_pairs_are_fully_similar() {
        let task = blobs_task(64, 5, 6, 2.0, 0).unwrap();
        let m = build_model(&ModelSpec::mlp(5, &[7, 6], 6), 3).unwrap();
        let probe = task.inputs.clone();
        let rows = unit_pair_rows(&m, &m, 1, &probe).unwrap();
        assert_eq!(rows.len(), 36);
        for r in rows.iter().filter(|r| r.i == r.j) {
            assert!((r.weight_sim - 1.0).abs() < 1e-6);
            assert_eq!(r.both_alive, r.act_sim != 0.0);
            if r.both_alive {
                assert!((r.act_sim - 1.0).abs() < 1e-6);
                assert!((r.merged_min_parent_sim - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn retraining_touches_only_one_layer() {
        let task = blobs_task(64, 5, 6, 2.0, 0).unwrap();
        let m = build_model(&ModelSpec::mlp(5, &[7, 6], 6), 3).unwrap();
        let cfg = DemoConfig {
            retrain: TrainConfig { epochs: 1, ..Default::default() },
            probe_samples: 32,
            ..Default::default()
        };
        let (child, rows) = inconsistency_demo(&m, 0, &task, &cfg).unwrap();
        assert_eq!(rows.len(), 49);
        for (name, t) in &m.params {
            let same = child.param(name) == t;
            assert_eq!(same, !name.starts_with("hidden.0."), "{name}");
        }
        assert!(inconsistency_demo(&m, 5, &task, &cfg).is_err());
    }
}
