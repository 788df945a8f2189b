//! Unit-similarity matrices in activation space and weight space, and their
//! linear combination.
//!
//! Every matrix covers all units of all models at one layer: rows and
//! columns are model 0's units followed by model 1's, so the top-right block
//! is the cross-model block the assignment solvers consume.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::PermutationSet;
use crate::model::{
    bias_name, head_weight_name, weight_name, ActivationProbe, ModelState,
};
use crate::tensor::{cosine_self_f64, pearson_self_f64, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityKind {
    Activation,
    Weight,
    Combined,
}

/// Square f64 similarity matrix over the stacked units of every model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    /// Row-major `n x n`.
    pub values: Vec<f64>,
    pub n: usize,
    pub layer: usize,
    pub kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::matrix(self.n, self.n, self.values.iter().map(|&v| v as f32).collect())
            .expect("square buffer")
    }

    /// Rows `0..split`, columns `split..n`: first model against the rest.
    pub fn cross_block(&self, split: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(split * (self.n - split));
        for i in 0..split {
            out.extend_from_slice(&self.values[i * self.n + split..(i + 1) * self.n]);
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.at(i, j) - self.at(j, i)).abs());
            }
        }
        worst
    }

    /// Frobenius inner product with a same-sized row-major matrix.
    pub fn inner(&self, other: &[f64]) -> Result<f64> {
        if other.len() != self.values.len() {
            return Err(Error::Shape(format!(
                "inner product of {} and {} entries",
                self.values.len(),
                other.len()
            )));
        }
        Ok(self.values.iter().zip(other).map(|(a, b)| a * b).sum())
    }

    /// `layer,i,j,value` rows with a header.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "layer,i,j,value")?;
        for i in 0..self.n {
            for j in 0..self.n {
                writeln!(w, "{},{i},{j},{}", self.layer, self.at(i, j))?;
            }
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }
}

/// Per-unit weight representations at one layer, stacked across models.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightFeatures {
    /// `[models * D_l, D_{l-1} + 1 + D_{l+1}]`: incoming weights, bias,
    /// outgoing weights.
    pub z: Tensor,
    pub layer: usize,
    pub units_per_model: usize,
}

pub fn activation_similarity(probes: &[&ActivationProbe], layer: usize) -> Result<SimilarityMatrix> {
    let first = probes
        .first()
        .ok_or_else(|| Error::InsufficientData("no probes".into()))?;
    let mut parts = Vec::with_capacity(probes.len());
    for p in probes {
        if p.samples != first.samples {
            return Err(Error::Shape(format!(
                "probes have {} and {} samples",
                first.samples, p.samples
            )));
        }
        let a = p.layers.get(layer).ok_or_else(|| {
            Error::Shape(format!("probe has {} layers, asked for {layer}", p.layers.len()))
        })?;
        parts.push(a);
    }
    let stacked = Tensor::vstack(&parts)?;
    Ok(SimilarityMatrix {
        values: pearson_self_f64(&stacked)?,
        n: stacked.rows(),
        layer,
        kind: SimilarityKind::Activation,
    })
}

/// Weight features of one model at `layer`, in original unit order.
///
/// `prev[i]` is the original unit of layer `l-1` sitting at position `i`;
/// `next` likewise for layer `l+1`. `None` means identity. Input and output
/// axes are never permuted.
pub fn model_features(
    m: &ModelState,
    layer: usize,
    prev: Option<&[usize]>,
    next: Option<&[usize]>,
) -> Result<Tensor> {
    let hidden = m.spec.num_hidden();
    if layer >= hidden {
        return Err(Error::Shape(format!("layer {layer} out of {hidden} hidden layers")));
    }
    let w = m.param(&weight_name(layer));
    let b = m.param(&bias_name(layer));
    let outgoing: Vec<&Tensor> = if layer + 1 < hidden {
        vec![m.param(&weight_name(layer + 1))]
    } else {
        (0..m.spec.heads).map(|h| m.param(&head_weight_name(h))).collect()
    };
    let (d, d_in) = (w.rows(), w.cols());
    let d_out: usize = outgoing.iter().map(|t| t.rows()).sum();
    if let Some(p) = prev {
        if layer == 0 || p.len() != d_in {
            return Err(Error::Permutation(format!("incoming perm does not fit layer {layer}")));
        }
    }
    if let Some(p) = next {
        if layer + 1 >= hidden || p.len() != d_out {
            return Err(Error::Permutation(format!("outgoing perm does not fit layer {layer}")));
        }
    }
    let width = d_in + 1 + d_out;
    let mut z = vec![0.0f32; d * width];
    for u in 0..d {
        let row = &mut z[u * width..(u + 1) * width];
        let wr = w.row(u);
        match prev {
            Some(p) => {
                for (dst, &src) in row[..d_in].iter_mut().zip(p) {
                    *dst = wr[src];
                }
            }
            None => row[..d_in].copy_from_slice(wr),
        }
        row[d_in] = b.data()[u];
        let mut col = d_in + 1;
        for t in &outgoing {
            for m_ in 0..t.rows() {
                let src = next.map_or(m_, |p| p[m_]);
                row[col] = t.at(src, u);
                col += 1;
            }
        }
    }
    Tensor::matrix(d, width, z)
}

pub fn weight_features(
    models: &[&ModelState],
    perms: &PermutationSet,
    layer: usize,
) -> Result<WeightFeatures> {
    let hidden = models
        .first()
        .ok_or_else(|| Error::InsufficientData("no models".into()))?
        .spec
        .num_hidden();
    let mut parts = Vec::with_capacity(models.len());
    for (n, m) in models.iter().enumerate() {
        let prev = (layer > 0).then(|| perms.get(layer - 1, n)).transpose()?;
        let next = (layer + 1 < hidden).then(|| perms.get(layer + 1, n)).transpose()?;
        parts.push(model_features(m, layer, prev, next)?);
    }
    let units_per_model = parts[0].rows();
    if parts.iter().any(|p| p.shape() != parts[0].shape()) {
        return Err(Error::Spec("models disagree on layer shapes".into()));
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Ok(WeightFeatures {
        z: Tensor::vstack(&refs)?,
        layer,
        units_per_model,
    })
}

pub fn weight_similarity(z: &WeightFeatures) -> Result<SimilarityMatrix> {
    Ok(SimilarityMatrix {
        values: cosine_self_f64(&z.z)?,
        n: z.z.rows(),
        layer: z.layer,
        kind: SimilarityKind::Weight,
    })
}

/// Mean and population std of a buffer, two-pass in f64.
pub fn moments_f64(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `(v - mean) / std` over all entries; constant input maps to zeros.
pub fn zscore_f64(v: &[f64]) -> Vec<f64> {
    let (mean, std) = moments_f64(v);
    if std < 1e-12 {
        return vec![0.0; v.len()];
    }
    v.iter().map(|x| (x - mean) / std).collect()
}

/// `alpha * zscore(ws) + (1 - alpha) * zscore(as_)`.
pub fn combine(ws: &SimilarityMatrix, as_: &SimilarityMatrix, alpha: f64) -> Result<SimilarityMatrix> {
    combine_with(ws, as_, alpha, true)
}

/// [`combine`] with optional standardisation; `standardize = false` mixes
/// the raw kernels.
pub fn combine_with(
    ws: &SimilarityMatrix,
    as_: &SimilarityMatrix,
    alpha: f64,
    standardize: bool,
) -> Result<SimilarityMatrix> {
    check_alpha(alpha)?;
    if ws.n != as_.n {
        return Err(Error::Shape(format!("combining {0}x{0} with {1}x{1}", ws.n, as_.n)));
    }
    let (w, a) = if standardize {
        (zscore_f64(&ws.values), zscore_f64(&as_.values))
    } else {
        (ws.values.clone(), as_.values.clone())
    };
    Ok(SimilarityMatrix {
        values: w.iter().zip(&a).map(|(w, a)| alpha * w + (1.0 - alpha) * a).collect(),
        n: ws.n,
        layer: ws.layer,
        kind: SimilarityKind::Combined,
    })
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Contract(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}
