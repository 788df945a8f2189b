use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::merger::interpolate;
use crate::model::ModelState;

use super::{head_for, task_loss};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierPoint {
    pub lambda: f64,
    /// One cosine-embedding loss per task.
    pub losses: Vec<f64>,
}

impl BarrierPoint {
    pub fn mean_loss(&self) -> f64 {
        self.losses.iter().sum::<f64>() / self.losses.len() as f64
    }
}

/// Task losses along the straight line from `a` to `b_aligned` at
/// `num_points` evenly spaced `lambda` values, endpoints included.
pub fn barrier_scan(
    a: &ModelState,
    b_aligned: &ModelState,
    tasks: &[&TaskDataset],
    num_points: usize,
) -> Result<Vec<BarrierPoint>> {
    if num_points < 2 {
        return Err(Error::Contract("a barrier scan needs at least 2 points".into()));
    }
    if tasks.is_empty() {
        return Err(Error::InsufficientData("no tasks to scan".into()));
    }
    (0..num_points)
        .map(|i| {
            let lambda = i as f64 / (num_points - 1) as f64;
            let m = interpolate(a, b_aligned, lambda)?;
            let losses = tasks
                .iter()
                .map(|t| task_loss(&m, t, head_for(&m, t)))
                .collect::<Result<_>>()?;
            Ok(BarrierPoint { lambda, losses })
        })
        .collect()
}

/// Mean loss above the chord between the endpoints, at each point.
fn excess(points: &[BarrierPoint]) -> Vec<f64> {
    let (first, last) = (points[0].mean_loss(), points[points.len() - 1].mean_loss());
    points
        .iter()
        .map(|p| p.mean_loss() - ((1.0 - p.lambda) * first + p.lambda * last))
        .collect()
}

/// Largest excess of the mean loss over the endpoint chord.
pub fn barrier_height(points: &[BarrierPoint]) -> f64 {
    excess(points).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// `lambda,loss_<task>...,loss_mean,derived_excess_over_chord`.
pub fn write_barrier_csv(
    points: &[BarrierPoint],
    task_names: &[&str],
    mut w: impl Write,
) -> std::io::Result<()> {
    write!(w, "lambda")?;
    for n in task_names {
        write!(w, ",loss_{n}")?;
    }
    writeln!(w, ",loss_mean,derived_excess_over_chord")?;
    for (p, e) in points.iter().zip(excess(points)) {
        write!(w, "{}", p.lambda)?;
        for l in &p.losses {
            write!(w, ",{l}")?;
        }
        writeln!(w, ",{},{e}", p.mean_loss())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::blobs_task;
    use crate::model::{build_model, ModelSpec};

    #[test]
    fn self_scan_is_flat_and_endpoints_match() {
        let task = blobs_task(64, 4, 6, 2.0, 1).unwrap();
        let a = build_model(&ModelSpec::mlp(4, &[8], 6), 1).unwrap();
        let b = build_model(&ModelSpec::mlp(4, &[8], 6), 2).unwrap();
        let flat = barrier_scan(&a, &a, &[&task], 11).unwrap();
        let losses: Vec<f64> = flat.iter().map(|p| p.losses[0]).collect();
        let spread = losses.iter().cloned().fold(f64::MIN, f64::max)
            - losses.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-6);

        let scan = barrier_scan(&a, &b, &[&task], 5).unwrap();
        assert!((scan[0].losses[0] - task_loss(&a, &task, 0).unwrap()).abs() < 1e-6);
        assert!((scan[4].losses[0] - task_loss(&b, &task, 0).unwrap()).abs() < 1e-6);
        assert!(barrier_scan(&a, &b, &[&task], 1).is_err());

        let mut out = Vec::new();
        write_barrier_csv(&scan, &["blobs"], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("lambda,loss_blobs,loss_mean,derived_excess_over_chord\n"));
        assert_eq!(text.lines().count(), 6);
        assert!(barrier_height(&flat).abs() < 1e-6);
    }
}
