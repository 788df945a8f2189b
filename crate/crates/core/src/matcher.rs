//! Whole-model matching pipelines for a pair of models.
//!
//! Model 0 is the reference and always keeps identity permutations; model 1
//! is permuted into its basis. Three modes are provided:
//!
//! * activation: one pass, each layer solved on activation correlations;
//! * weight: coordinate ascent on weight-feature cosines, starting from
//!   identity, where each layer's features depend on its neighbours' perms;
//! * mudsc: activation initialisation, then coordinate ascent on an
//!   `alpha`-weighted mix of the weight and activation similarities.
//!
//! The iterative modes maximise the total objective
//! `F(P) = Σ_l Σ_j S_l(P)[j, P_l[j]]` with
//! `S_l = alpha * K_w(Z_l(P)) + (1 - alpha) * K_a(A_l)`. A round
//! re-solves every layer in a seeded order and is kept if `F` rises. If it
//! does not, the round is replayed keeping only layer updates that raise the
//! terms they touch, so `F` never decreases between rounds.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assignment::{
    greedy_zip_f64, group_align_f64, group_zip_f64, is_bijection, solve_lsa_f64,
};
use crate::error::{Error, Result};
use crate::model::{permutation_spec, ActivationProbe, GroupBlock, ModelState, PermutationSpec};
use crate::similarity::{activation_similarity, check_alpha, model_features};
use crate::tensor::{cosine_cross_f64, cosine_self_f64, Tensor};

/// `layers[l][n]` is model `n`'s permutation of hidden layer `l`:
/// `layers[l][n][j]` is the original unit placed at position `j`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PermutationSet {
    pub layers: Vec<Vec<Vec<usize>>>,
}

impl PermutationSet {
    pub fn identity(sizes: &[usize], models: usize) -> Self {
        PermutationSet {
            layers: sizes
                .iter()
                .map(|&d| vec![(0..d).collect(); models])
                .collect(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_models(&self) -> usize {
        self.layers.first().map_or(0, Vec::len)
    }

    pub fn get(&self, layer: usize, model: usize) -> Result<&[usize]> {
        self.layers
            .get(layer)
            .and_then(|l| l.get(model))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Permutation(format!("no permutation for layer {layer}, model {model}"))
            })
    }

    /// Per-layer permutations of one model.
    pub fn for_model(&self, model: usize) -> Result<Vec<Vec<usize>>> {
        (0..self.num_layers())
            .map(|l| self.get(l, model).map(<[usize]>::to_vec))
            .collect()
    }

    /// Bijective, sized per the permutation spec, and group-respecting on grouped layers.
    pub fn validate(&self, spec: &PermutationSpec) -> Result<()> {
        if self.layers.len() != spec.groups.len() {
            return Err(Error::Permutation(format!(
                "{} permutation layers for {} groups",
                self.layers.len(),
                spec.groups.len()
            )));
        }
        for (l, g) in spec.groups.iter().enumerate() {
            for (n, p) in self.layers[l].iter().enumerate() {
                check_perm(p, g.size, g.block)
                    .map_err(|e| Error::Permutation(format!("layer {l}, model {n}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

pub(crate) fn check_perm(
    p: &[usize],
    size: usize,
    block: Option<GroupBlock>,
) -> std::result::Result<(), String> {
    if p.len() != size {
        return Err(format!("length {} but layer has {size} units", p.len()));
    }
    if !is_bijection(p) {
        return Err("not a bijection".into());
    }
    if let Some(b) = block {
        group_perm_of(p, b).ok_or("permutation splits a group")?;
    }
    Ok(())
}

/// The group permutation induced by a group-respecting unit permutation.
pub fn group_perm_of(p: &[usize], block: GroupBlock) -> Option<Vec<usize>> {
    let k = block.size;
    (0..block.groups)
        .map(|a| {
            let g = p[a * k] / k;
            p[a * k..(a + 1) * k].iter().all(|&u| u / k == g).then_some(g)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Flavor {
    /// Exact linear sum assignment (group alignment on grouped layers).
    Align,
    /// Greedy zip (group zip on grouped layers).
    Zip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MatchMode {
    Activation,
    Weight,
    Mudsc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchConfig {
    pub alpha: f64,
    pub flavor: Flavor,
    pub mode: MatchMode,
    pub max_rounds: usize,
    /// Minimum objective gain of a full pass to keep iterating.
    pub tol: f64,
    /// Drives the per-round random layer order.
    pub seed: u64,
    /// Mix the fixed activation similarity into every round instead of the
    /// running cached mix.
    pub fresh_activation: bool,
    /// Mix raw kernels instead of z-scored ones.
    pub raw_combine: bool,
}

impl Default for MatchConfig {
    fn default() -> Self {
        MatchConfig {
            alpha: 0.5,
            flavor: Flavor::Align,
            mode: MatchMode::Mudsc,
            max_rounds: 100,
            tol: 1e-8,
            seed: 0,
            fresh_activation: false,
            raw_combine: false,
        }
    }
}

impl MatchConfig {
    pub fn new(mode: MatchMode, flavor: Flavor, alpha: f64) -> Self {
        MatchConfig {
            mode,
            flavor,
            alpha,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        if self.max_rounds == 0 {
            return Err(Error::Contract("max_rounds must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// 0 is the initialisation.
    pub round: usize,
    pub layer_order_hash: u64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchOutcome {
    pub perms: PermutationSet,
    pub trace: Vec<TraceRow>,
    pub layer_objectives: Vec<f64>,
    /// Full passes run after initialisation.
    pub rounds: usize,
    pub converged: bool,
}

impl MatchOutcome {
    pub fn objective(&self) -> f64 {
        self.layer_objectives.iter().sum()
    }

    pub fn write_trace_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "round,layer_order_hash,objective")?;
        for r in &self.trace {
            writeln!(w, "{},{:016x},{}", r.round, r.layer_order_hash, r.objective)?;
        }
        Ok(())
    }

    pub fn save_trace_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_trace_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Runs the pipeline named by `cfg.mode`. Probes are required for the
/// activation and mudsc modes.
pub fn run_match(
    models: &[&ModelState],
    probes: Option<&[&ActivationProbe]>,
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    let need = || Error::InsufficientData(format!("{:?} matching needs activation probes", cfg.mode));
    match cfg.mode {
        MatchMode::Activation => match_activation(models, probes.ok_or_else(need)?, cfg),
        MatchMode::Weight => match_weight(models, cfg),
        MatchMode::Mudsc => match_mudsc(models, probes.ok_or_else(need)?, cfg),
    }
}

pub fn match_activation(
    models: &[&ModelState],
    probes: &[&ActivationProbe],
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    Matcher::new(models, Some(probes), cfg, MatchMode::Activation)?.run()
}

pub fn match_weight(models: &[&ModelState], cfg: &MatchConfig) -> Result<MatchOutcome> {
    Matcher::new(models, None, cfg, MatchMode::Weight)?.run()
}

pub fn match_mudsc(
    models: &[&ModelState],
    probes: &[&ActivationProbe],
    cfg: &MatchConfig,
) -> Result<MatchOutcome> {
    Matcher::new(models, Some(probes), cfg, MatchMode::Mudsc)?.run()
}

/// Weight-feature cosine statistics that do not depend on model 1's perms.
struct WeightLayer {
    /// Model 0's features (its perms are fixed to identity).
    z_ref: Tensor,
    /// Sum and sum of squares over both within-model blocks.
    within_sum: f64,
    within_sq: f64,
    total: f64,
}

struct Matcher<'a> {
    b: &'a ModelState,
    cfg: MatchConfig,
    mode: MatchMode,
    /// Weight of the weight-space term in the objective.
    alpha: f64,
    spec: PermutationSpec,
    /// Cross-model activation block per layer, standardised unless raw.
    act: Vec<Option<Vec<f64>>>,
    weight: Vec<Option<WeightLayer>>,
    perms: Vec<Vec<usize>>,
    /// Cross-model weight block per layer for the current perms.
    cache: Vec<Option<Vec<f64>>>,
}

impl<'a> Matcher<'a> {
    fn new(
        models: &[&'a ModelState],
        probes: Option<&[&ActivationProbe]>,
        cfg: &MatchConfig,
        mode: MatchMode,
    ) -> Result<Self> {
        cfg.validate()?;
        if models.len() != 2 {
            return Err(Error::Contract(format!(
                "matching supports exactly 2 models, got {}",
                models.len()
            )));
        }
        let (a, b) = (models[0], models[1]);
        if !a.spec.same_trunk(&b.spec) {
            return Err(Error::Spec("models do not share an architecture".into()));
        }
        let spec = permutation_spec(&a.spec);
        let layers = spec.groups.len();
        let alpha = match mode {
            MatchMode::Activation => 0.0,
            MatchMode::Weight => 1.0,
            MatchMode::Mudsc => cfg.alpha,
        };

        let mut act = vec![None; layers];
        if mode != MatchMode::Weight {
            let probes = probes.ok_or_else(|| Error::InsufficientData("no probes".into()))?;
            if probes.len() != 2 {
                return Err(Error::Contract("need one probe per model".into()));
            }
            for (l, g) in spec.groups.iter().enumerate() {
                for p in probes {
                    if p.layers.len() != layers || p.layers[l].rows() != g.size {
                        return Err(Error::Shape(format!(
                            "probe layer {l} does not match the model's {} units",
                            g.size
                        )));
                    }
                }
                let full = activation_similarity(probes, l)?;
                let cross = full.cross_block(g.size);
                act[l] = Some(if cfg.raw_combine {
                    cross
                } else {
                    let (mean, std) = crate::similarity::moments_f64(&full.values);
                    standardise(cross, mean, std)
                });
            }
        }

        let mut weight: Vec<Option<WeightLayer>> = Vec::with_capacity(layers);
        for l in 0..layers {
            if alpha == 0.0 {
                weight.push(None);
                continue;
            }
            let z_ref = model_features(a, l, None, None)?;
            let z_b = model_features(b, l, None, None)?;
            let (s0, q0) = sum_sq(&cosine_self_f64(&z_ref)?);
            let (s1, q1) = sum_sq(&cosine_self_f64(&z_b)?);
            let n = 2.0 * z_ref.rows() as f64;
            weight.push(Some(WeightLayer {
                z_ref,
                within_sum: s0 + s1,
                within_sq: q0 + q1,
                total: n * n,
            }));
        }

        let perms = spec.groups.iter().map(|g| (0..g.size).collect()).collect();
        Ok(Matcher {
            b,
            cfg: cfg.clone(),
            mode,
            alpha,
            spec,
            act,
            weight,
            perms,
            cache: vec![None; layers],
        })
    }

    fn layers(&self) -> usize {
        self.spec.groups.len()
    }

    /// Cross-model weight block of layer `l` under `perms`.
    fn weight_block(&self, l: usize, perms: &[Vec<usize>]) -> Result<Vec<f64>> {
        let wl = self.weight[l].as_ref().expect("weight term enabled");
        let prev = (l > 0).then(|| perms[l - 1].as_slice());
        let next = (l + 1 < self.layers()).then(|| perms[l + 1].as_slice());
        let z_b = model_features(self.b, l, prev, next)?;
        let cross = cosine_cross_f64(&wl.z_ref, &z_b)?;
        if self.cfg.raw_combine {
            return Ok(cross);
        }
        let (s, q) = sum_sq(&cross);
        let mean = (wl.within_sum + 2.0 * s) / wl.total;
        let var = ((wl.within_sq + 2.0 * q) / wl.total - mean * mean).max(0.0);
        Ok(standardise(cross, mean, var.sqrt()))
    }

    fn current_weight_block(&mut self, l: usize) -> Result<&[f64]> {
        if self.cache[l].is_none() {
            self.cache[l] = Some(self.weight_block(l, &self.perms)?);
        }
        Ok(self.cache[l].as_deref().expect("just filled"))
    }

    /// `S_l` of the objective for a given weight block.
    fn objective_matrix(&self, l: usize, weight: Option<&[f64]>) -> Vec<f64> {
        mix(self.alpha, weight, self.act[l].as_deref())
    }

    fn term(&self, l: usize, weight: Option<&[f64]>, perm: &[usize]) -> f64 {
        let n = self.spec.groups[l].size;
        let a = self.alpha;
        perm.iter()
            .enumerate()
            .map(|(j, &u)| {
                let w = weight.map_or(0.0, |w| w[j * n + u]);
                let s = self.act[l].as_ref().map_or(0.0, |s| s[j * n + u]);
                if a == 1.0 {
                    w
                } else if a == 0.0 {
                    s
                } else {
                    a * w + (1.0 - a) * s
                }
            })
            .sum()
    }

    fn layer_objectives(&mut self) -> Result<Vec<f64>> {
        (0..self.layers())
            .map(|l| {
                let w = if self.alpha > 0.0 {
                    Some(self.current_weight_block(l)?.to_vec())
                } else {
                    None
                };
                Ok(self.term(l, w.as_deref(), &self.perms[l]))
            })
            .collect()
    }

    fn solve(&self, l: usize, sim: &[f64]) -> Result<Vec<usize>> {
        let g = &self.spec.groups[l];
        let n = g.size;
        Ok(match (self.cfg.flavor, g.block) {
            (Flavor::Align, None) => solve_lsa_f64(sim, n)?.perm,
            (Flavor::Zip, None) => greedy_zip_f64(sim, n)?.perm,
            (Flavor::Align, Some(b)) => group_align_f64(sim, n, b.groups, b.size)?.unit_perm(),
            (Flavor::Zip, Some(b)) => {
                let grouping = group_align_f64(sim, n, b.groups, b.size)?.group_perm;
                group_zip_f64(sim, n, b.groups, b.size, &grouping)?.unit_perm()
            }
        })
    }

    /// Re-solves layer `l`. When `guarded`, the result is kept only if the
    /// terms it touches rise. `cached` is the running similarity of the
    /// literal update rule.
    fn update_layer(&mut self, l: usize, cached: &mut Option<Vec<f64>>, guarded: bool) -> Result<()> {
        let weight = self.current_weight_block(l)?.to_vec();
        let proposal_sim = match self.mode {
            MatchMode::Weight => weight.clone(),
            _ if self.cfg.fresh_activation => self.objective_matrix(l, Some(&weight)),
            _ => {
                let prev = cached.as_deref().or(self.act[l].as_deref());
                let next = mix(self.alpha, Some(&weight), prev);
                *cached = Some(next.clone());
                next
            }
        };
        let proposal = self.solve(l, &proposal_sim)?;
        if proposal == self.perms[l] {
            return Ok(());
        }
        let last = self.layers() - 1;
        let mut trial = self.perms.clone();
        trial[l] = proposal;
        let mut old = self.term(l, Some(&weight), &self.perms[l]);
        let mut new = self.term(l, Some(&weight), &trial[l]);
        let mut fresh = Vec::new();
        for k in [l.checked_sub(1), (l < last).then_some(l + 1)].into_iter().flatten() {
            let cur = self.current_weight_block(k)?.to_vec();
            let moved = self.weight_block(k, &trial)?;
            old += self.term(k, Some(&cur), &self.perms[k]);
            new += self.term(k, Some(&moved), &trial[k]);
            fresh.push((k, moved));
        }
        if !guarded || new > old {
            self.perms = trial;
            for (k, moved) in fresh {
                self.cache[k] = Some(moved);
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<MatchOutcome> {
        let layers = self.layers();
        if self.mode != MatchMode::Weight {
            for l in 0..layers {
                let sim = self.act[l].clone().expect("activation term enabled");
                self.perms[l] = self.solve(l, &sim)?;
            }
        }
        let mut objectives = self.layer_objectives()?;
        let mut f = objectives.iter().sum::<f64>();
        let mut trace = vec![TraceRow {
            round: 0,
            layer_order_hash: 0,
            objective: f,
        }];
        let mut rounds = 0;
        let mut converged = self.mode == MatchMode::Activation || self.alpha == 0.0;
        if !converged {
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
            let mut cached: Vec<Option<Vec<f64>>> = vec![None; layers];
            let mut order: Vec<usize> = (0..layers).collect();
            while rounds < self.cfg.max_rounds {
                rounds += 1;
                order.sort_unstable();
                order.shuffle(&mut rng);
                let saved = (self.perms.clone(), self.cache.clone(), cached.clone());
                for &l in &order {
                    self.update_layer(l, &mut cached[l], false)?;
                }
                objectives = self.layer_objectives()?;
                let mut next = objectives.iter().sum::<f64>();
                if next <= f {
                    (self.perms, self.cache, cached) = saved;
                    for &l in &order {
                        self.update_layer(l, &mut cached[l], true)?;
                    }
                    objectives = self.layer_objectives()?;
                    next = objectives.iter().sum::<f64>();
                }
                trace.push(TraceRow {
                    round: rounds,
                    layer_order_hash: order_hash(&order),
                    objective: next,
                });
                let gain = next - f;
                f = next;
                if gain < self.cfg.tol {
                    converged = true;
                    break;
                }
            }
        }
        let perms = PermutationSet {
            layers: self
                .perms
                .into_iter()
                .map(|p| vec![(0..p.len()).collect(), p])
                .collect(),
        };
        Ok(MatchOutcome {
            perms,
            trace,
            layer_objectives: objectives,
            rounds,
            converged,
        })
    }
}

fn mix(alpha: f64, weight: Option<&[f64]>, act: Option<&[f64]>) -> Vec<f64> {
    match (weight, act) {
        (Some(w), _) if alpha == 1.0 => w.to_vec(),
        (_, Some(a)) if alpha == 0.0 => a.to_vec(),
        (Some(w), Some(a)) => w
            .iter()
            .zip(a)
            .map(|(w, a)| alpha * w + (1.0 - alpha) * a)
            .collect(),
        (Some(w), None) => w.to_vec(),
        (None, Some(a)) => a.to_vec(),
        (None, None) => Vec::new(),
    }
}

fn sum_sq(v: &[f64]) -> (f64, f64) {
    v.iter().fold((0.0, 0.0), |(s, q), x| (s + x, q + x * x))
}

fn standardise(mut v: Vec<f64>, mean: f64, std: f64) -> Vec<f64> {
    if std < 1e-12 {
        v.fill(0.0);
    } else {
        for x in &mut v {
            *x = (*x - mean) / std;
        }
    }
    v
}

/// FNV-1a over the layer indices.
fn order_hash(order: &[usize]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &l in order {
        for byte in (l as u64).to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::merger::apply_perms;
    use crate::model::{build_model, capture_probe, ModelSpec};
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn inputs(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn permuted_pair(arch: &str, seed: u64) -> (ModelState, ModelState, Vec<Vec<usize>>) {
        let a = build_model(&arch.parse::<ModelSpec>().unwrap(), seed).unwrap();
        let spec = permutation_spec(&a.spec);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let pi: Vec<Vec<usize>> = spec
            .groups
            .iter()
            .map(|g| match g.block {
                None => {
                    let mut p: Vec<usize> = (0..g.size).collect();
                    p.shuffle(&mut rng);
                    p
                }
                Some(b) => {
                    let mut outer: Vec<usize> = (0..b.groups).collect();
                    outer.shuffle(&mut rng);
                    outer
                        .into_iter()
                        .flat_map(|o| {
                            let mut inner: Vec<usize> = (0..b.size).collect();
                            inner.shuffle(&mut rng);
                            inner.into_iter().map(move |t| o * b.size + t)
                        })
                        .collect()
                }
            })
            .collect();
        let b = apply_perms(&a, &spec, &pi).unwrap();
        (a, b, pi)
    }

    fn run_all(arch: &str, seed: u64) {
        let (a, b, pi) = permuted_pair(arch, seed);
        let x = inputs(200, a.spec.input_dim, seed);
        let pa = capture_probe(&a, &x).unwrap();
        let pb = capture_probe(&b, &x).unwrap();
        for flavor in [Flavor::Align, Flavor::Zip] {
            let mut outcomes = vec![
                match_activation(&[&a, &b], &[&pa, &pb], &MatchConfig::new(MatchMode::Activation, flavor, 0.0)).unwrap(),
                match_weight(&[&a, &b], &MatchConfig::new(MatchMode::Weight, flavor, 1.0)).unwrap(),
            ];
            for alpha in [0.0, 0.5, 1.0] {
                let cfg = MatchConfig::new(MatchMode::Mudsc, flavor, alpha);
                outcomes.push(match_mudsc(&[&a, &b], &[&pa, &pb], &cfg).unwrap());
            }
            for (k, o) in outcomes.into_iter().enumerate() {
                // b's unit j is a's unit pi[j]; matching a's unit j to b's
                // unit u therefore means u = pi⁻¹[j]
                let got = o.perms.for_model(1).unwrap();
                for (l, p) in got.iter().enumerate() {
                    for (j, &u) in p.iter().enumerate() {
                        assert_eq!(pi[l][u], j, "{arch} {flavor:?} outcome {k} layer {l}");
                    }
                }
                assert!(o.perms.for_model(0).unwrap().iter().all(|p| p.iter().enumerate().all(|(i, &v)| i == v)));
            }
        }
    }

    #[test]
    fn permuted_copies_are_recovered() {
        for seed in 0..3 {
            run_all("6-10-12-8-3", seed);
        }
    }

    #[test]
    fn permuted_grouped_copies_are_recovered() {
        run_all("6-12g3-8g2-3", 4);
    }

    #[test]
    fn self_match_is_identity_and_alpha_zero_is_activation() {
        let a = build_model(&"5-8-6-3".parse::<ModelSpec>().unwrap(), 1).unwrap();
        let b = build_model(&"5-8-6-3".parse::<ModelSpec>().unwrap(), 2).unwrap();
        let x = inputs(64, 5, 0);
        let (pa, pb) = (capture_probe(&a, &x).unwrap(), capture_probe(&b, &x).unwrap());
        let id = PermutationSet::identity(&[8, 6], 2);
        let self_match = match_activation(&[&a, &a], &[&pa, &pa], &MatchConfig::default()).unwrap();
        assert_eq!(self_match.perms, id);
        for flavor in [Flavor::Align, Flavor::Zip] {
            let act = match_activation(&[&a, &b], &[&pa, &pb], &MatchConfig::new(MatchMode::Activation, flavor, 0.0)).unwrap();
            let mud = match_mudsc(&[&a, &b], &[&pa, &pb], &MatchConfig::new(MatchMode::Mudsc, flavor, 0.0)).unwrap();
            assert_eq!(act.perms, mud.perms);
            assert_eq!(act.trace.len(), 1);
        }
    }

    #[test]
    fn traces_are_monotone_and_deterministic() {
        let a = build_model(&"5-16-16-16-3".parse::<ModelSpec>().unwrap(), 7).unwrap();
        let b = build_model(&"5-16-16-16-3".parse::<ModelSpec>().unwrap(), 8).unwrap();
        let x = inputs(128, 5, 3);
        let (pa, pb) = (capture_probe(&a, &x).unwrap(), capture_probe(&b, &x).unwrap());
        for (mode, alpha) in [(MatchMode::Weight, 1.0), (MatchMode::Mudsc, 0.5), (MatchMode::Mudsc, 1.0)] {
            for fresh in [false, true] {
                let cfg = MatchConfig { fresh_activation: fresh, seed: 11, ..MatchConfig::new(mode, Flavor::Align, alpha) };
                let o = run_match(&[&a, &b], Some(&[&pa, &pb]), &cfg).unwrap();
                for w in o.trace.windows(2) {
                    assert!(w[1].objective >= w[0].objective - 1e-9, "{mode:?} {:?}", o.trace);
                }
                assert!(o.converged);
                let again = run_match(&[&a, &b], Some(&[&pa, &pb]), &cfg).unwrap();
                assert_eq!(o, again);
                assert!((o.objective() - o.trace.last().unwrap().objective).abs() < 1e-9);
            }
        }
        let one = MatchConfig { max_rounds: 1, ..MatchConfig::new(MatchMode::Weight, Flavor::Align, 1.0) };
        let o = match_weight(&[&a, &b], &one).unwrap();
        assert_eq!(o.rounds, 1);
        assert_eq!(o.trace.len(), 2);
    }

    #[test]
    fn contract_errors() {
        let a = build_model(&"5-8-3".parse::<ModelSpec>().unwrap(), 1).unwrap();
        let c = build_model(&"5-9-3".parse::<ModelSpec>().unwrap(), 1).unwrap();
        assert!(matches!(match_weight(&[&a, &c], &MatchConfig::default()), Err(Error::Spec(_))));
        assert!(match_weight(&[&a], &MatchConfig::default()).is_err());
        let bad = MatchConfig { alpha: 1.5, ..Default::default() };
        assert!(match_weight(&[&a, &a], &bad).is_err());
        assert!(run_match(&[&a, &a], None, &MatchConfig::default()).is_err());
    }

    #[test]
    fn permutation_set_validation_and_json() {
        let spec = permutation_spec(&"4-6g2-5-3".parse::<ModelSpec>().unwrap());
        let mut set = PermutationSet::identity(&[6, 5], 2);
        set.validate(&spec).unwrap();
        set.layers[0][1] = vec![3, 4, 5, 0, 1, 2];
        set.validate(&spec).unwrap();
        assert_eq!(group_perm_of(&set.layers[0][1], spec.groups[0].block.unwrap()), Some(vec![1, 0]));
        let back = PermutationSet::from_json(&set.to_json().unwrap()).unwrap();
        assert_eq!(back, set);
        set.layers[0][1] = vec![3, 1, 5, 0, 4, 2];
        assert!(set.validate(&spec).is_err());
        set.layers[0][1] = vec![0, 0, 1, 2, 3, 4];
        assert!(set.validate(&spec).is_err());
    }

    #[test]
    fn trace_csv_format() {
        let a = build_model(&"5-8-8-3".parse::<ModelSpec>().unwrap(), 1).unwrap();
        let b = build_model(&"5-8-8-3".parse::<ModelSpec>().unwrap(), 2).unwrap();
        let o = match_weight(&[&a, &b], &MatchConfig::new(MatchMode::Weight, Flavor::Align, 1.0)).unwrap();
        let mut buf = Vec::new();
        o.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("round,layer_order_hash,objective"));
        assert_eq!(lines.count(), o.trace.len());
    }
}
