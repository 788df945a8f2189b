//! Side-by-side evaluation of every matcher on one model pair.

use serde::{Deserialize, Serialize};

use crate::data::TaskDataset;
use crate::error::Result;
use crate::matcher::{run_match, Flavor, MatchConfig, MatchMode, PermutationSet};
use crate::merger::{merge_and_reset, HeadMode};
use crate::model::{capture_probe, ModelState};
use crate::tensor::Tensor;

use super::{alpha_search, evaluate_named, EvalReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Identity permutations.
    DirectAverage,
    WeightAlign,
    ActivationAlign,
    MudscAlign,
    WeightZip,
    ActivationZip,
    MudscZip,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::DirectAverage,
        Method::WeightAlign,
        Method::ActivationAlign,
        Method::MudscAlign,
        Method::WeightZip,
        Method::ActivationZip,
        Method::MudscZip,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::DirectAverage => "direct_average",
            Method::WeightAlign => "weight_align",
            Method::ActivationAlign => "activation_align",
            Method::MudscAlign => "mudsc_align",
            Method::WeightZip => "weight_zip",
            Method::ActivationZip => "activation_zip",
            Method::MudscZip => "mudsc_zip",
        }
    }

    fn mode_flavor(self) -> Option<(MatchMode, Flavor)> {
        Some(match self {
            Method::DirectAverage => return None,
            Method::WeightAlign => (MatchMode::Weight, Flavor::Align),
            Method::ActivationAlign => (MatchMode::Activation, Flavor::Align),
            Method::MudscAlign => (MatchMode::Mudsc, Flavor::Align),
            Method::WeightZip => (MatchMode::Weight, Flavor::Zip),
            Method::ActivationZip => (MatchMode::Activation, Flavor::Zip),
            Method::MudscZip => (MatchMode::Mudsc, Flavor::Zip),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: Method,
    /// Chosen by [`alpha_search`] for the dual-space methods.
    pub alpha: Option<f64>,
    pub rounds: usize,
    pub report: EvalReport,
}

/// Matches, merges and evaluates `a` and `b` with every method in
/// `methods`. Activations come from `probe_inputs`; dual-space methods pick
/// alpha on `train_tasks` over `grid`; reports are on `test_tasks`.
pub fn compare_methods(
    a: &ModelState,
    b: &ModelState,
    probe_inputs: &Tensor,
    train_tasks: &[&TaskDataset],
    test_tasks: &[&TaskDataset],
    grid: &[f64],
    methods: &[Method],
) -> Result<Vec<MethodResult>> {
    let pa = capture_probe(a, probe_inputs)?;
    let pb = capture_probe(b, probe_inputs)?;
    let models = [a, b];
    let probes = [&pa, &pb];
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let (perms, alpha, rounds) = match method.mode_flavor() {
            None => {
                let sizes = a.spec.hidden_layers().iter().map(|l| l.out_dim).collect::<Vec<_>>();
                (PermutationSet::identity(&sizes, 2), None, 0)
            }
            Some((mode, flavor)) => {
                let mut cfg = MatchConfig::new(mode, flavor, 0.5);
                if mode == MatchMode::Mudsc {
                    cfg.alpha = alpha_search(&models, &probes, train_tasks, &cfg, grid, Some(probe_inputs))?.best_alpha;
                }
                let outcome = run_match(&models, Some(&probes), &cfg)?;
                let alpha = (mode == MatchMode::Mudsc).then_some(cfg.alpha);
                (outcome.perms, alpha, outcome.rounds)
            }
        };
        let merged = merge_and_reset(&models, &perms, HeadMode::Separate, Some(probe_inputs))?;
        let report = evaluate_named(&merged, test_tasks, method.name())?;
        out.push(MethodResult { method, alpha, rounds, report });
    }
    Ok(out)
}
