//! Shuffle the hidden units of a network, then ask every matcher to undo
//! the shuffle. Averaging the original with the realigned copy must give
//! back the original function.
//!
//!     cargo run --release --example permuted_copy_recovery

use dualmerge::assignment::invert;
use dualmerge::matcher::{run_match, Flavor, MatchConfig, MatchMode};
use dualmerge::merger::{apply_perms, merge, HeadMode};
use dualmerge::model::{build_model, capture_probe, forward, permutation_spec, ModelSpec};
use dualmerge::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dualmerge::Result<()> {
    let spec: ModelSpec = "32-128-128-128-10".parse()?;
    let a = build_model(&spec, 7)?;
    let pspec = permutation_spec(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pi: Vec<Vec<usize>> = pspec
        .sizes()
        .iter()
        .map(|&n| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let b = apply_perms(&a, &pspec, &pi)?;
    let x = Tensor::matrix(512, 32, (0..512 * 32).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (pa, pb) = (capture_probe(&a, &x)?, capture_probe(&b, &x)?);
    let want: Vec<Vec<usize>> = pi.iter().map(|p| invert(p)).collect();
    let reference = forward(&a, &x, false)?.0;

    println!("{:<11} {:<6} {:>5} {:>9} {:>7} {:>11}", "mode", "flavor", "alpha", "recovered", "rounds", "max |err|");
    for flavor in [Flavor::Align, Flavor::Zip] {
        for (mode, alpha) in [
            (MatchMode::Activation, 0.0),
            (MatchMode::Weight, 1.0),
            (MatchMode::Mudsc, 0.5),
        ] {
            let outcome = run_match(&[&a, &b], Some(&[&pa, &pb]), &MatchConfig::new(mode, flavor, alpha))?;
            let merged = merge(&[&a, &b], &outcome.perms, None, HeadMode::Average)?;
            let out = forward(&merged, &x, false)?.0;
            let err = out
                .data()
                .iter()
                .zip(reference.data())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0f32, f32::max);
            println!(
                "{:<11} {:<6} {:>5} {:>9} {:>7} {:>11.2e}",
                format!("{mode:?}"),
                format!("{flavor:?}"),
                alpha,
                outcome.perms.for_model(1)? == want,
                outcome.rounds,
                err
            );
        }
    }
    Ok(())
}
