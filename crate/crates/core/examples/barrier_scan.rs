//! Loss along the straight line between two networks. A shuffled copy sits
//! on a flat line once realigned; two independently trained networks show
//! a bump that alignment lowers.
//!
//!     cargo run --release --example barrier_scan

use std::path::PathBuf;

use dualmerge::data::{make_mnist_tasks, sample_probe, DataSource, Split, TaskKind};
use dualmerge::eval::{barrier_height, barrier_scan, BarrierPoint};
use dualmerge::matcher::{match_activation, Flavor, MatchConfig, MatchMode};
use dualmerge::merger::apply_perms;
use dualmerge::model::{build_model, capture_probe, permutation_spec, train, ModelSpec, ModelState, TrainConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn show(label: &str, points: &[BarrierPoint]) {
    let losses: Vec<String> = points.iter().map(|p| format!("{:.3}", p.mean_loss())).collect();
    println!("{label:<22} height {:>7.4}  {}", barrier_height(points), losses.join(" "));
}

fn main() -> dualmerge::Result<()> {
    let source = DataSource::Idx(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"));
    let (prime, _) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Train, 0, 64)?;
    let (test, _) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Test, 0, 64)?;
    let spec: ModelSpec = "784-128-128-128-64".parse()?;
    let fit = |seed| -> dualmerge::Result<ModelState> {
        Ok(train(&build_model(&spec, seed)?, &prime, &TrainConfig::mnist(seed))?.0)
    };
    let a = fit(0)?;
    let b = fit(1)?;
    let pspec = permutation_spec(&spec);
    let align = |other: &ModelState| -> dualmerge::Result<ModelState> {
        let x = sample_probe(&[&prime], 1024, 0)?;
        let cfg = MatchConfig::new(MatchMode::Activation, Flavor::Align, 0.0);
        let o = match_activation(&[&a, other], &[&capture_probe(&a, &x)?, &capture_probe(other, &x)?], &cfg)?;
        apply_perms(other, &pspec, &o.perms.for_model(1)?)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let shuffle: Vec<Vec<usize>> = pspec
        .sizes()
        .iter()
        .map(|&n| {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut rng);
            p
        })
        .collect();
    let shuffled = apply_perms(&a, &pspec, &shuffle)?;
    println!("mean test loss at lambda = 0, 0.1, ..., 1");
    show("shuffled copy", &barrier_scan(&a, &shuffled, &[&test], 11)?);
    show("shuffled copy, aligned", &barrier_scan(&a, &align(&shuffled)?, &[&test], 11)?);
    show("independent", &barrier_scan(&a, &b, &[&test], 11)?);
    show("independent, aligned", &barrier_scan(&a, &align(&b)?, &[&test], 11)?);
    Ok(())
}
