//! Accuracy and loss metrics, the alpha sweep, barrier scans, the
//! parameter-space loss landscape and the weight/activation inconsistency
//! demo.

mod barrier;
mod compare;
mod demo;
mod landscape;

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::matcher::{match_mudsc, MatchConfig, MatchMode};
use crate::merger::{merge_and_reset, HeadMode};
use crate::model::{forward_heads, ActivationProbe, ModelState};
use crate::tensor::{matmul_nt, Tensor};

pub use barrier::{barrier_height, barrier_scan, write_barrier_csv, BarrierPoint};
pub use compare::{compare_methods, Method, MethodResult};
pub use demo::{inconsistency_demo, write_demo_csv, DemoConfig, DemoRow};
pub use landscape::{landscape, write_landscape_csv, write_markers_csv, LandscapeGrid, Marker};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    /// Accuracy with every task's classes competing.
    pub joint_acc: f64,
    pub task_accs: Vec<f64>,
    pub avg_acc: f64,
    pub loss_per_task: Vec<f64>,
}

/// The head that answers `task`: its task id, clamped to the head count.
pub fn head_for(m: &ModelState, task: &TaskDataset) -> usize {
    task.task_id.min(m.spec.heads - 1)
}

fn check_fit(m: &ModelState, task: &TaskDataset) -> Result<()> {
    if task.inputs.cols() != m.spec.input_dim || task.class_targets.cols() != m.spec.output_dim {
        return Err(Error::Shape(format!("task {} does not fit the model", task.name)));
    }
    if task.is_empty() {
        return Err(Error::InsufficientData(format!("task {} is empty", task.name)));
    }
    Ok(())
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean `1 - cos(output, target)` of one output against the task targets.
fn cosine_loss_of(out: &Tensor, targets: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..out.rows() {
        let (o, t) = (out.row(i), targets.row(i));
        let dot: f64 = o.iter().zip(t).map(|(&a, &b)| a as f64 * b as f64).sum();
        let no = o.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt().max(1e-8);
        let nt = t.iter().map(|&a| (a as f64).powi(2)).sum::<f64>().sqrt().max(1e-8);
        total += 1.0 - dot / (no * nt);
    }
    total / out.rows() as f64
}

fn head_output(m: &ModelState, task: &TaskDataset, head: usize) -> Result<Tensor> {
    check_fit(m, task)?;
    let (mut outs, _) = forward_heads(m, &task.inputs, false)?;
    let h = head.min(outs.len() - 1);
    Ok(outs.swap_remove(h))
}

/// Fraction of samples whose output is closest (by dot product with the
/// orthonormal class targets) to their own class target.
pub fn task_accuracy(m: &ModelState, task: &TaskDataset, head: usize) -> Result<f64> {
    let out = head_output(m, task, head)?;
    Ok(accuracy_of(&out, task)?)
}

fn accuracy_of(out: &Tensor, task: &TaskDataset) -> Result<f64> {
    let scores = matmul_nt(out, &task.class_targets)?;
    let hits = (0..scores.rows())
        .filter(|&i| argmax(scores.row(i)) == task.labels[i])
        .count();
    Ok(hits as f64 / scores.rows() as f64)
}

/// Mean cosine-embedding loss of `head` on `task`.
pub fn task_loss(m: &ModelState, task: &TaskDataset, head: usize) -> Result<f64> {
    let out = head_output(m, task, head)?;
    Ok(cosine_loss_of(&out, &task.targets))
}

pub fn evaluate(m: &ModelState, tasks: &[&TaskDataset]) -> Result<EvalReport> {
    evaluate_named(m, tasks, "model")
}

/// Per-task accuracy and loss through each task's head, plus joint accuracy
/// where a sample must beat every class of every task, each class scored
/// through its own task's head.
pub fn evaluate_named(m: &ModelState, tasks: &[&TaskDataset], model_id: &str) -> Result<EvalReport> {
    if tasks.is_empty() {
        return Err(Error::InsufficientData("no tasks to evaluate".into()));
    }
    let mut task_accs = Vec::with_capacity(tasks.len());
    let mut loss_per_task = Vec::with_capacity(tasks.len());
    let (mut joint_hits, mut joint_total) = (0usize, 0usize);
    for task in tasks {
        check_fit(m, task)?;
        let (outs, _) = forward_heads(m, &task.inputs, false)?;
        let own = &outs[head_for(m, task)];
        task_accs.push(accuracy_of(own, task)?);
        loss_per_task.push(cosine_loss_of(own, &task.targets));
        // scores[t][i, c]: class c of task t through task t's head
        let scores: Vec<Tensor> = tasks
            .iter()
            .map(|t| matmul_nt(&outs[head_for(m, t)], &t.class_targets))
            .collect::<Result<_>>()?;
        for i in 0..task.len() {
            let mut best = (f32::NEG_INFINITY, usize::MAX);
            for (t, s) in tasks.iter().zip(&scores) {
                for (c, &v) in s.row(i).iter().enumerate() {
                    if v > best.0 {
                        best = (v, t.class_ids[c]);
                    }
                }
            }
            joint_hits += (best.1 == task.class_ids[task.labels[i]]) as usize;
        }
        joint_total += task.len();
    }
    let avg_acc = task_accs.iter().sum::<f64>() / task_accs.len() as f64;
    Ok(EvalReport {
        model_id: model_id.to_string(),
        joint_acc: joint_hits as f64 / joint_total as f64,
        task_accs,
        avg_acc,
        loss_per_task,
    })
}

/// `(l_theta - l_zero) / (l_one - l_zero)`: 1 at the reference model, 0 at
/// the trivial estimator.
pub fn scaled_performance(l_theta: f64, l_one: f64, l_zero: f64) -> Result<f64> {
    if l_one == l_zero {
        return Err(Error::Degenerate(format!(
            "reference and baseline losses are both {l_one}"
        )));
    }
    Ok((l_theta - l_zero) / (l_one - l_zero))
}

/// Parses `start:stop:step` (inclusive stop) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Contract(format!("cannot parse alpha grid {text:?}"));
    let grid: Vec<f64> = if text.contains(':') {
        let parts: Vec<f64> = text
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let [start, stop, step] = parts[..] else {
            return Err(bad());
        };
        if step <= 0.0 || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=count).map(|i| start + i as f64 * step).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    Ok(grid)
}

/// `{0.0, 0.1, ..., 1.0}`.
pub fn default_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaPoint {
    pub alpha: f64,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub best_alpha: f64,
    pub points: Vec<AlphaPoint>,
}

/// Dual-space matching and merging at every `alpha` in `grid`, scored by
/// average per-task accuracy on `train_tasks`. Ties go to the smaller alpha.
/// `reset_inputs` refreshes running statistics of normalised layers.
pub fn alpha_search(
    models: &[&ModelState],
    probes: &[&ActivationProbe],
    train_tasks: &[&TaskDataset],
    cfg: &MatchConfig,
    grid: &[f64],
    reset_inputs: Option<&Tensor>,
) -> Result<AlphaSearch> {
    if grid.is_empty() {
        return Err(Error::Contract("alpha grid is empty".into()));
    }
    let mut points = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = MatchConfig {
            alpha,
            mode: MatchMode::Mudsc,
            ..cfg.clone()
        };
        let outcome = match_mudsc(models, probes, &cfg)?;
        let merged = merge_and_reset(models, &outcome.perms, HeadMode::Separate, reset_inputs)?;
        let report = evaluate_named(&merged, train_tasks, &format!("mudsc_alpha_{alpha}"))?;
        points.push(AlphaPoint { alpha, report });
    }
    let best = points
        .iter()
        .max_by(|a, b| {
            a.report
                .avg_acc
                .total_cmp(&b.report.avg_acc)
                .then(b.alpha.total_cmp(&a.alpha))
        })
        .expect("non-empty grid");
    Ok(AlphaSearch {
        best_alpha: best.alpha,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs_task;
    use crate::model::{build_model, ModelSpec};

    #[test]
    fn scaled_performance_anchors() {
        assert_eq!(scaled_performance(10.0, 10.0, 4.0).unwrap(), 1.0);
        assert_eq!(scaled_performance(4.0, 10.0, 4.0).unwrap(), 0.0);
        assert_eq!(scaled_performance(7.0, 10.0, 4.0).unwrap(), 0.5);
        assert!(matches!(scaled_performance(1.0, 2.0, 2.0), Err(Error::Degenerate(_))));
    }

    /// One hidden unit per class fires on its class; the head maps it onto
    /// the class target.
    fn memoriser(task: &TaskDataset) -> ModelState {
        let spec = ModelSpec::mlp(task.inputs.cols(), &[2], task.class_targets.cols());
        let mut m = build_model(&spec, 0).unwrap();
        for t in m.params.values_mut() {
            t.data_mut().fill(0.0);
        }
        let mut w = Tensor::zeros(&[2, task.inputs.cols()]);
        for i in 0..task.len() {
            let l = task.labels[i];
            for (acc, &x) in w.row_mut(l).iter_mut().zip(task.inputs.row(i)) {
                *acc += x * if l == 1 { 1.0 } else { -1.0 };
            }
        }
        let w1 = w.row(1).to_vec();
        let w0: Vec<f32> = w1.iter().map(|v| -v).collect();
        *m.param_mut("hidden.0.weight") = Tensor::from_rows(&[w0, w1]).unwrap();
        *m.param_mut("head.0.weight") = task.class_targets.transpose().unwrap();
        m
    }

    #[test]
    fn memoriser_is_perfect() {
        let task = blobs_task(200, 4, 6, 8.0, 2).unwrap();
        let m = memoriser(&task);
        let r = evaluate(&m, &[&task]).unwrap();
        assert_eq!(r.task_accs, vec![1.0]);
        assert_eq!(r.joint_acc, 1.0);
        assert_eq!(r.avg_acc, 1.0);
    }

    #[test]
    fn random_model_is_at_chance() {
        let task = blobs_task(2000, 4, 6, 0.0, 5).unwrap();
        let m = build_model(&ModelSpec::mlp(4, &[16], 6), 1).unwrap();
        let acc = task_accuracy(&m, &task, 0).unwrap();
        assert!((acc - 0.5).abs() < 0.05, "{acc}");
    }

    #[test]
    fn average_is_mean_of_tasks() {
        let a = blobs_task(100, 4, 6, 3.0, 1).unwrap();
        let mut b = blobs_task(100, 4, 6, 3.0, 2).unwrap();
        b.task_id = 1;
        let m = build_model(&ModelSpec::mlp(4, &[8], 6).with_heads(2), 3).unwrap();
        let r = evaluate(&m, &[&a, &b]).unwrap();
        assert!((r.avg_acc - (r.task_accs[0] + r.task_accs[1]) / 2.0).abs() < 1e-9);
        assert_eq!(r.loss_per_task.len(), 2);
    }

    #[test]
    fn grids() {
        assert_eq!(default_grid().len(), 11);
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        assert_eq!(parse_grid("0,1").unwrap(), vec![0.0, 1.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("a").is_err());
    }
}
