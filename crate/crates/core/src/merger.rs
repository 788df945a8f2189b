//! Permuting models into a shared basis and averaging their parameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matcher::{check_perm, group_perm_of, PermutationSet};
use crate::model::{
    head_bias_name, head_weight_name, permutation_spec, reset_norm_stats, ModelState, NormStats,
    PermutationSpec,
};
use crate::tensor::Tensor;

/// How output heads are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum HeadMode {
    /// Heads are parameters like any other and get averaged.
    Average,
    /// Every model keeps its own heads; the merged model has one head per
    /// input head, in model order.
    #[default]
    Separate,
}

fn permute_axis(t: &Tensor, axis: usize, p: &[usize]) -> Result<Tensor> {
    match (t.rank(), axis) {
        (1, 0) => Tensor::vector(p.iter().map(|&i| t.data()[i]).collect()),
        (2, 0) => Ok(t.gather_rows(p)),
        (2, 1) => t.gather_cols(p),
        _ => Err(Error::Shape(format!("cannot permute axis {axis} of {:?}", t.shape()))),
    }
}

/// Reorders every site of every permutation group: unit `perms[l][j]`
/// moves to position `j`. The result computes the same function.
pub fn apply_perms(m: &ModelState, spec: &PermutationSpec, perms: &[Vec<usize>]) -> Result<ModelState> {
    if perms.len() != spec.groups.len() {
        return Err(Error::Permutation(format!(
            "{} permutations for {} groups",
            perms.len(),
            spec.groups.len()
        )));
    }
    let mut out = m.clone();
    for (g, p) in spec.groups.iter().zip(perms) {
        check_perm(p, g.size, g.block)
            .map_err(|e| Error::Permutation(format!("layer {}: {e}", g.layer)))?;
        for site in &g.sites {
            let t = out.params.get_mut(&site.param).ok_or_else(|| {
                Error::Spec(format!("permutation site {} missing from model", site.param))
            })?;
            *t = permute_axis(t, site.axis, p)?;
        }
        if let Some(block) = g.block {
            let gp = group_perm_of(p, block).expect("checked above");
            for site in &g.group_sites {
                let t = out.param_mut(&site.param);
                *t = permute_axis(t, site.axis, &gp)?;
            }
            if let Some(s) = out.norm_stats.get_mut(&g.layer) {
                s.mean = gp.iter().map(|&i| s.mean[i]).collect();
                s.var = gp.iter().map(|&i| s.var[i]).collect();
            }
        }
    }
    Ok(out)
}

/// `Σ_n w_n x_n`, accumulated in model order in f32.
fn weighted(parts: &[(f32, &[f32])]) -> Vec<f32> {
    let mut acc: Vec<f32> = parts[0].1.iter().map(|&v| parts[0].0 * v).collect();
    for (w, x) in &parts[1..] {
        for (a, &v) in acc.iter_mut().zip(x.iter()) {
            *a += w * v;
        }
    }
    acc
}

fn combine_states(models: &[&ModelState], weights: &[f32], skip_heads: bool) -> Result<ModelState> {
    let base = models[0];
    let mut params = BTreeMap::new();
    for (name, t) in &base.params {
        if skip_heads && name.starts_with("head.") {
            continue;
        }
        let parts = models
            .iter()
            .zip(weights)
            .map(|(m, &w)| {
                let other = m
                    .params
                    .get(name)
                    .filter(|o| o.shape() == t.shape())
                    .ok_or_else(|| Error::Spec(format!("models disagree on {name}")))?;
                Ok((w, other.data()))
            })
            .collect::<Result<Vec<_>>>()?;
        params.insert(name.clone(), Tensor::new(t.shape().to_vec(), weighted(&parts))?);
    }
    let mut norm_stats = BTreeMap::new();
    for (&l, s) in &base.norm_stats {
        let stats: Vec<&NormStats> = models
            .iter()
            .map(|m| m.norm_stats.get(&l).ok_or_else(|| Error::Spec(format!("layer {l} lacks stats"))))
            .collect::<Result<_>>()?;
        let pick = |f: fn(&NormStats) -> &[f32]| {
            weighted(&stats.iter().zip(weights).map(|(s, &w)| (w, f(s))).collect::<Vec<_>>())
        };
        let mean = pick(|s| &s.mean);
        let var = pick(|s| &s.var);
        debug_assert_eq!(mean.len(), s.mean.len());
        norm_stats.insert(l, NormStats { mean, var });
    }
    Ok(ModelState {
        spec: base.spec.clone(),
        params,
        norm_stats,
    })
}

fn check_weights(weights: &[f64], n: usize) -> Result<()> {
    if weights.len() != n {
        return Err(Error::Contract(format!("{} mixing weights for {n} models", weights.len())));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Contract(format!("mixing weights sum to {sum}, not 1")));
    }
    Ok(())
}

/// Permutes every model into the common basis and convex-combines all
/// parameters and running statistics. `weights` defaults to uniform.
///
/// Averaged running statistics are only an estimate for the merged model;
/// refresh them with [`crate::model::reset_norm_stats`] before evaluating.
pub fn merge(
    models: &[&ModelState],
    perms: &PermutationSet,
    weights: Option<&[f64]>,
    heads: HeadMode,
) -> Result<ModelState> {
    let n = models.len();
    if n == 0 {
        return Err(Error::InsufficientData("nothing to merge".into()));
    }
    if perms.num_models() != n {
        return Err(Error::Permutation(format!(
            "permutation set covers {} models, got {n}",
            perms.num_models()
        )));
    }
    let uniform = vec![1.0 / n as f64; n];
    let weights = weights.unwrap_or(&uniform);
    check_weights(weights, n)?;
    let spec = permutation_spec(&models[0].spec);
    let mut aligned = Vec::with_capacity(n);
    for (i, m) in models.iter().enumerate() {
        if !m.spec.same_trunk(&models[0].spec) {
            return Err(Error::Spec(format!("model {i} has a different architecture")));
        }
        aligned.push(apply_perms(m, &spec, &perms.for_model(i)?)?);
    }
    let refs: Vec<&ModelState> = aligned.iter().collect();
    let w32: Vec<f32> = weights.iter().map(|&w| w as f32).collect();
    match heads {
        HeadMode::Average => {
            if refs.iter().any(|m| m.spec.heads != refs[0].spec.heads) {
                return Err(Error::Spec("averaging heads needs equal head counts".into()));
            }
            combine_states(&refs, &w32, false)
        }
        HeadMode::Separate => {
            let mut out = combine_states(&refs, &w32, true)?;
            let mut next = 0;
            for m in &refs {
                for h in 0..m.spec.heads {
                    out.params.insert(head_weight_name(next), m.param(&head_weight_name(h)).clone());
                    out.params.insert(head_bias_name(next), m.param(&head_bias_name(h)).clone());
                    next += 1;
                }
            }
            out.spec = out.spec.with_heads(next);
            out.validate()?;
            Ok(out)
        }
    }
}

/// [`merge`] followed by a running-statistics refresh on `reset_inputs`
/// when the architecture has normalised layers.
pub fn merge_and_reset(
    models: &[&ModelState],
    perms: &PermutationSet,
    heads: HeadMode,
    reset_inputs: Option<&Tensor>,
) -> Result<ModelState> {
    let merged = merge(models, perms, None, heads)?;
    match reset_inputs {
        Some(x) if !merged.norm_stats.is_empty() => Ok(reset_norm_stats(&merged, x)?.0),
        _ => Ok(merged),
    }
}

/// `(1 - lambda) * a + lambda * b_aligned`, parameter-wise, including heads
/// and running statistics.
pub fn interpolate(a: &ModelState, b_aligned: &ModelState, lambda: f64) -> Result<ModelState> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Contract(format!("lambda {lambda} outside [0, 1]")));
    }
    if a.spec != b_aligned.spec {
        return Err(Error::Spec("interpolation endpoints differ in architecture".into()));
    }
    combine_states(&[a, b_aligned], &[(1.0 - lambda) as f32, lambda as f32], false)
}
