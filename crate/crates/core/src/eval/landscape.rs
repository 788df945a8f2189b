use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::tensor::{dgemm_nt, symmetric_eig_f64};

use super::{head_for, task_loss};

/// Grid extent relative to the markers' bounding box.
const MARGIN: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub name: String,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    /// Mean of the flattened models.
    pub center: Vec<f32>,
    /// Two unit-norm principal directions; the second may be zero.
    pub basis: [Vec<f32>; 2],
    /// Variance captured by each direction (Gram eigenvalues).
    pub variances: [f64; 2],
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `losses[iy * xs.len() + ix][t]`.
    pub losses: Vec<Vec<f64>>,
    pub markers: Vec<Marker>,
}

impl LandscapeGrid {
    pub fn mean_loss(&self, point: usize) -> f64 {
        let l = &self.losses[point];
        l.iter().sum::<f64>() / l.len() as f64
    }

    /// Parameters at plane coordinates `(x, y)`.
    pub fn point(&self, template: &ModelState, x: f64, y: f64) -> Result<ModelState> {
        let flat: Vec<f32> = (0..self.center.len())
            .map(|i| {
                (self.center[i] as f64 + x * self.basis[0][i] as f64 + y * self.basis[1][i] as f64)
                    as f32
            })
            .collect();
        template.with_flat(&flat)
    }
}

fn axis(lo: f64, hi: f64, res: usize) -> Vec<f64> {
    let mid = 0.5 * (lo + hi);
    let mut half = 0.5 * (hi - lo) * MARGIN;
    if half < 1e-9 {
        half = 1.0;
    }
    if res == 1 {
        return vec![mid];
    }
    (0..res)
        .map(|i| mid - half + 2.0 * half * i as f64 / (res - 1) as f64)
        .collect()
}

/// Projects the models onto their top two principal directions and
/// evaluates every task's loss on a `grid_res x grid_res` plane through the
/// models' mean.
///
/// Directions come from the `M x M` Gram matrix of centred parameter
/// vectors, so the cost is linear in the parameter count.
pub fn landscape(
    models: &[(&str, &ModelState)],
    tasks: &[&TaskDataset],
    grid_res: usize,
) -> Result<LandscapeGrid> {
    if models.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "a 2-D principal plane needs at least 3 models, got {}",
            models.len()
        )));
    }
    if grid_res == 0 || tasks.is_empty() {
        return Err(Error::Contract("landscape needs tasks and a positive grid size".into()));
    }
    let template = models[0].1;
    if models.iter().any(|(_, m)| m.spec != template.spec) {
        return Err(Error::Spec("landscape models must share one architecture".into()));
    }
    let m_count = models.len();
    let flats: Vec<Vec<f32>> = models.iter().map(|(_, m)| m.flatten()).collect();
    let p = flats[0].len();
    let mut center = vec![0.0f64; p];
    for f in &flats {
        for (c, &v) in center.iter_mut().zip(f) {
            *c += v as f64;
        }
    }
    center.iter_mut().for_each(|c| *c /= m_count as f64);
    let mut xc = Vec::with_capacity(m_count * p);
    for f in &flats {
        xc.extend(f.iter().zip(&center).map(|(&v, c)| v as f64 - c));
    }
    let gram = dgemm_nt(m_count, m_count, p, &xc, &xc);
    let eig = symmetric_eig_f64(&gram, m_count)?;
    let top = eig.values[0].max(0.0);
    let mut basis = [vec![0.0f32; p], vec![0.0f32; p]];
    let mut variances = [0.0; 2];
    for k in 0..2 {
        let lambda = eig.values[k];
        if lambda <= 1e-12 * top.max(1e-300) || lambda <= 0.0 {
            continue;
        }
        variances[k] = lambda;
        let u = eig.vector(k);
        let scale = 1.0 / lambda.sqrt();
        for (i, b) in basis[k].iter_mut().enumerate() {
            let d: f64 = (0..m_count).map(|r| xc[r * p + i] * u[r]).sum();
            *b = (d * scale) as f32;
        }
    }
    let markers: Vec<Marker> = models
        .iter()
        .enumerate()
        .map(|(r, (name, _))| {
            let row = &xc[r * p..(r + 1) * p];
            let proj = |b: &[f32]| row.iter().zip(b).map(|(x, &d)| x * d as f64).sum::<f64>();
            Marker {
                name: name.to_string(),
                x: proj(&basis[0]),
                y: proj(&basis[1]),
            }
        })
        .collect();
    let bounds = |f: fn(&Marker) -> f64| {
        markers
            .iter()
            .map(f)
            .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = bounds(|m| m.x);
    let (y0, y1) = bounds(|m| m.y);
    let xs = axis(x0, x1, grid_res);
    let ys = axis(y0, y1, grid_res);
    let mut grid = LandscapeGrid {
        center: center.iter().map(|&c| c as f32).collect(),
        basis,
        variances,
        xs,
        ys,
        losses: Vec::with_capacity(grid_res * grid_res),
        markers,
    };
    for &y in &grid.ys {
        for &x in &grid.xs {
            let m = grid.point(template, x, y)?;
            let losses: Vec<f64> = tasks
                .iter()
                .map(|t| task_loss(&m, t, head_for(&m, t)))
                .collect::<Result<_>>()?;
            if losses.iter().any(|l| !l.is_finite()) {
                return Err(Error::Contract(format!("non-finite loss at ({x}, {y})")));
            }
            grid.losses.push(losses);
        }
    }
    Ok(grid)
}

/// `x,y,loss_avg,loss_<task>...`.
pub fn write_landscape_csv(
    grid: &LandscapeGrid,
    task_names: &[&str],
    mut w: impl Write,
) -> std::io::Result<()> {
    write!(w, "x,y,loss_avg")?;
    for n in task_names {
        write!(w, ",loss_{n}")?;
    }
    writeln!(w)?;
    let mut idx = 0;
    for &y in &grid.ys {
        for &x in &grid.xs {
            write!(w, "{x},{y},{}", grid.mean_loss(idx))?;
            for l in &grid.losses[idx] {
                write!(w, ",{l}")?;
            }
            writeln!(w)?;
            idx += 1;
        }
    }
    Ok(())
}

/// `name,x,y`.
pub fn write_markers_csv(grid: &LandscapeGrid, mut w: impl Write) -> std::io::Result<()> {
    writeln!(w, "name,x,y")?;
    for m in &grid.markers {
        writeln!(w, "{},{},{}", m.name, m.x, m.y)?;
    }
    Ok(())
}
