//! Randomised invariants across tensors, models, similarity, assignment,
//! matching, merging and evaluation.

mod common;

use dualmerge::assignment::{greedy_zip, group_align, objective, solve_lsa};
use dualmerge::data::blobs_task;
use dualmerge::eval::{alpha_search, barrier_scan, head_for, scaled_performance, task_loss};
use dualmerge::matcher::{run_match, Flavor, MatchConfig, MatchMode, PermutationSet};
use dualmerge::merger::{apply_perms, merge, HeadMode};
use dualmerge::model::{build_model, capture_probe, forward, forward_heads, permutation_spec, ModelSpec};
use dualmerge::similarity::{activation_similarity, model_features, weight_features, weight_similarity};
use dualmerge::tensor::{cosine_rows, matmul, pearson_rows, zscore};
use dualmerge::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{inverse, random_perms, shuffled, uniform_inputs};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-1.0f32..1.0, rows * cols).prop_map(move |v| Tensor::matrix(rows, cols, v).unwrap())
}

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..9, 1usize..9, 1usize..9, 1usize..9)
}

const ARCHS: [&str; 4] = ["6-10-8-3", "6-12g3-8g2-3", "5-8-6-7-4", "4-6g2-9-6g3-2"];

fn cheap() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

proptest! {
    #[test]
    fn matmul_is_associative((m, k, n, p) in dims(), seed in any::<u64>()) {
        let a = uniform_inputs(m, k, seed);
        let b = uniform_inputs(k, n, seed ^ 1);
        let c = uniform_inputs(n, p, seed ^ 2);
        let l = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let r = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = (a.frobenius() * b.frobenius() * c.frobenius()) as f32;
        prop_assert!(l.max_abs_diff(&r) / scale < 1e-5);
    }

    #[test]
    fn row_kernels_ignore_row_rescaling(
        x in matrix(4, 12),
        y in matrix(3, 12),
        scales in prop::collection::vec(0.5f32..4.0, 4),
        shifts in prop::collection::vec(-2.0f32..2.0, 4),
    ) {
        let mut scaled = x.clone();
        let mut moved = x.clone();
        for r in 0..4 {
            scaled.row_mut(r).iter_mut().for_each(|v| *v *= scales[r]);
            moved.row_mut(r).iter_mut().for_each(|v| *v = scales[r] * *v + shifts[r]);
        }
        prop_assert!(cosine_rows(&scaled, &y).unwrap().max_abs_diff(&cosine_rows(&x, &y).unwrap()) < 1e-6);
        prop_assert!(pearson_rows(&moved, &y).unwrap().max_abs_diff(&pearson_rows(&x, &y).unwrap()) < 1e-6);
    }

    #[test]
    fn zscore_is_idempotent(x in matrix(5, 7)) {
        let once = zscore(&x);
        prop_assert!(zscore(&once).max_abs_diff(&once) < 1e-6);
    }

    #[test]
    fn permuting_units_preserves_outputs(arch in 0usize..ARCHS.len(), seed in any::<u64>()) {
        let m = build_model(&ARCHS[arch].parse::<ModelSpec>().unwrap().with_heads(2), seed).unwrap();
        let x = uniform_inputs(8, m.spec.input_dim, seed);
        let moved = apply_perms(&m, &permutation_spec(&m.spec), &random_perms(&m, seed ^ 7)).unwrap();
        let (want, _) = forward_heads(&m, &x, false).unwrap();
        let (got, _) = forward_heads(&moved, &x, false).unwrap();
        for (g, w) in got.iter().zip(&want) {
            prop_assert!(g.max_abs_diff(w) < 1e-5);
        }
    }

    #[test]
    fn weight_features_follow_permutations(arch in 0usize..ARCHS.len(), seed in any::<u64>()) {
        let m = build_model(&ARCHS[arch].parse::<ModelSpec>().unwrap(), seed).unwrap();
        let sigma = random_perms(&m, seed ^ 3);
        let moved = apply_perms(&m, &permutation_spec(&m.spec), &sigma).unwrap();
        let hidden = m.spec.num_hidden();
        for l in 0..hidden {
            let f = model_features(&m, l, None, None).unwrap();
            let g = model_features(&moved, l, None, None).unwrap();
            let d_in = m.spec.hidden_layers()[l].in_dim;
            let col = |c: usize| {
                if c < d_in && l > 0 {
                    sigma[l - 1][c]
                } else if c > d_in && l + 1 < hidden {
                    d_in + 1 + sigma[l + 1][c - d_in - 1]
                } else {
                    c
                }
            };
            for u in 0..g.rows() {
                for c in 0..g.cols() {
                    prop_assert_eq!(g.at(u, c), f.at(sigma[l][u], col(c)));
                }
            }
        }
    }

    #[test]
    fn lsa_beats_sampled_permutations(n in 1usize..10, seed in any::<u64>()) {
        let sim = uniform_inputs(n, n, seed);
        let best = solve_lsa(&sim).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..1000 {
            prop_assert!(objective(&sim, &shuffled(n, &mut rng)) <= best.objective + 1e-9);
        }
        prop_assert!(greedy_zip(&sim).unwrap().objective <= best.objective + 1e-9);
    }

    #[test]
    fn grouping_never_gains(groups in 1usize..5, size in 1usize..5, seed in any::<u64>()) {
        let n = groups * size;
        let sim = uniform_inputs(n, n, seed);
        let grouped = group_align(&sim, groups, size).unwrap();
        let mut perm = grouped.unit_perm();
        perm.sort_unstable();
        prop_assert_eq!(perm, (0..n).collect::<Vec<_>>());
        prop_assert!(grouped.objective <= solve_lsa(&sim).unwrap().objective + 1e-9);
    }

    #[test]
    fn scaled_performance_is_affine_invariant(
        t in -5.0f64..5.0,
        one in -5.0f64..5.0,
        zero in -5.0f64..5.0,
        a in prop_oneof![-4.0f64..-0.25, 0.25f64..4.0],
        b in -3.0f64..3.0,
    ) {
        prop_assume!((one - zero).abs() > 1e-2);
        let base = scaled_performance(t, one, zero).unwrap();
        let moved = scaled_performance(a * t + b, a * one + b, a * zero + b).unwrap();
        prop_assert!((base - moved).abs() < 1e-9 * base.abs().max(1.0));
    }
}

proptest! {
    #![proptest_config(cheap())]

    #[test]
    fn similarity_matrices_are_symmetric(arch in 0usize..ARCHS.len(), seed in any::<u64>()) {
        let spec: ModelSpec = ARCHS[arch].parse().unwrap();
        let a = build_model(&spec, seed).unwrap();
        let b = build_model(&spec, seed ^ 5).unwrap();
        let x = uniform_inputs(20, spec.input_dim, seed);
        let probes = [&capture_probe(&a, &x).unwrap(), &capture_probe(&b, &x).unwrap()];
        let sizes = permutation_spec(&spec).sizes();
        let perms = PermutationSet {
            layers: sizes.iter().enumerate().map(|(l, &d)| vec![(0..d).collect(), random_perms(&b, seed)[l].clone()]).collect(),
        };
        for l in 0..sizes.len() {
            prop_assert!(activation_similarity(&probes, l).unwrap().max_asymmetry() < 1e-6);
            let ws = weight_similarity(&weight_features(&[&a, &b], &perms, l).unwrap()).unwrap();
            prop_assert!(ws.max_asymmetry() < 1e-6);
        }
    }

    #[test]
    fn merge_ignores_model_order(seed in any::<u64>()) {
        let spec = ModelSpec::mlp(5, &[8, 6], 3);
        let a = build_model(&spec, seed).unwrap();
        let b = build_model(&spec, seed ^ 9).unwrap();
        let p = random_perms(&a, seed ^ 4);
        let ab = PermutationSet { layers: p.iter().map(|q| vec![(0..q.len()).collect(), q.clone()]).collect() };
        let ba = PermutationSet { layers: p.iter().map(|q| vec![(0..q.len()).collect(), inverse(q)]).collect() };
        let m1 = merge(&[&a, &b], &ab, None, HeadMode::Average).unwrap();
        let m2 = merge(&[&b, &a], &ba, None, HeadMode::Average).unwrap();
        let x = uniform_inputs(10, 5, seed);
        prop_assert!(forward(&m1, &x, false).unwrap().0.max_abs_diff(&forward(&m2, &x, false).unwrap().0) < 1e-6);
    }

    #[test]
    fn matching_is_deterministic_and_anchored(
        arch in 0usize..ARCHS.len(),
        seed in any::<u64>(),
        alpha in 0.0f64..1.0,
        zip in any::<bool>(),
    ) {
        let spec: ModelSpec = ARCHS[arch].parse().unwrap();
        let a = build_model(&spec, seed).unwrap();
        let b = build_model(&spec, seed ^ 11).unwrap();
        let x = uniform_inputs(40, spec.input_dim, seed);
        let probes = [&capture_probe(&a, &x).unwrap(), &capture_probe(&b, &x).unwrap()];
        let flavor = if zip { Flavor::Zip } else { Flavor::Align };
        let cfg = MatchConfig { seed, ..MatchConfig::new(MatchMode::Mudsc, flavor, alpha) };
        let first = run_match(&[&a, &b], Some(&probes), &cfg).unwrap();
        let again = run_match(&[&a, &b], Some(&probes), &cfg).unwrap();
        prop_assert_eq!(&first.perms, &again.perms);
        prop_assert_eq!(&first.trace, &again.trace);
        for p in first.perms.for_model(0).unwrap() {
            let n = p.len();
            prop_assert_eq!(p, (0..n).collect::<Vec<_>>());
        }
    }

    #[test]
    fn barrier_endpoints_are_the_models(seed in any::<u64>(), mode in 0usize..3, zip in any::<bool>()) {
        let task_a = blobs_task(60, 6, 4, 2.0, seed).unwrap();
        let mut task_b = blobs_task(60, 6, 4, 2.0, seed ^ 1).unwrap();
        task_b.task_id = 1;
        let spec = ModelSpec::mlp(6, &[10, 8], 4);
        let a = build_model(&spec, seed).unwrap();
        let b = build_model(&spec, seed ^ 2).unwrap();
        let probes = [&capture_probe(&a, &task_a.inputs).unwrap(), &capture_probe(&b, &task_a.inputs).unwrap()];
        let mode = [MatchMode::Activation, MatchMode::Weight, MatchMode::Mudsc][mode];
        let flavor = if zip { Flavor::Zip } else { Flavor::Align };
        let o = run_match(&[&a, &b], Some(&probes), &MatchConfig::new(mode, flavor, 0.5)).unwrap();
        let b_aligned = apply_perms(&b, &permutation_spec(&spec), &o.perms.for_model(1).unwrap()).unwrap();
        let tasks = [&task_a, &task_b];
        let scan = barrier_scan(&a, &b_aligned, &tasks, 5).unwrap();
        for (t, task) in tasks.iter().enumerate() {
            let la = task_loss(&a, task, head_for(&a, task)).unwrap();
            let lb = task_loss(&b, task, head_for(&b, task)).unwrap();
            prop_assert!((scan[0].losses[t] - la).abs() < 1e-6);
            prop_assert!((scan[4].losses[t] - lb).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn alpha_search_is_reproducible(seed in any::<u64>()) {
        let task_a = blobs_task(80, 6, 4, 3.0, seed).unwrap();
        let mut task_b = blobs_task(80, 6, 4, 3.0, seed ^ 1).unwrap();
        task_b.task_id = 1;
        let spec = ModelSpec::mlp(6, &[10, 8], 4);
        let a = build_model(&spec, seed).unwrap();
        let b = build_model(&spec, seed ^ 2).unwrap();
        let probes = [&capture_probe(&a, &task_a.inputs).unwrap(), &capture_probe(&b, &task_a.inputs).unwrap()];
        let cfg = MatchConfig { seed, ..Default::default() };
        let grid = [0.0, 0.3, 0.7, 1.0];
        let run = || alpha_search(&[&a, &b], &probes, &[&task_a, &task_b], &cfg, &grid, None).unwrap();
        let (first, again) = (run(), run());
        prop_assert_eq!(first.best_alpha.to_bits(), again.best_alpha.to_bits());
        prop_assert_eq!(first.points, again.points);
    }
}
