//! Match two MNIST models trained on different questions while sliding the
//! balance between weight-space and activation-space similarity. Shows the
//! per-round objective and how much each alpha agrees with the two
//! single-space matchings.
//!
//!     cargo run --release --example dual_space_matching

use std::path::PathBuf;

use dualmerge::data::{make_mnist_tasks, sample_probe, DataSource, Split, TaskKind};
use dualmerge::eval::evaluate;
use dualmerge::matcher::{match_activation, match_mudsc, match_weight, Flavor, MatchConfig, MatchMode, PermutationSet};
use dualmerge::merger::{merge, HeadMode};
use dualmerge::model::{build_model, capture_probe, train, ModelSpec, TrainConfig};

fn agreement(x: &PermutationSet, y: &PermutationSet) -> f64 {
    let (mut same, mut total) = (0, 0);
    for (lx, ly) in x.layers.iter().zip(&y.layers) {
        for (u, v) in lx[1].iter().zip(&ly[1]) {
            same += (u == v) as usize;
            total += 1;
        }
    }
    same as f64 / total as f64
}

fn main() -> dualmerge::Result<()> {
    let source = DataSource::Idx(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"));
    let (prime, odd) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Train, 0, 64)?;
    let (prime_test, odd_test) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Test, 0, 64)?;
    let spec: ModelSpec = "784-128-128-128-64".parse()?;
    let a = train(&build_model(&spec, 0)?, &prime, &TrainConfig::mnist(0))?.0;
    let b = train(&build_model(&spec, 1)?, &odd, &TrainConfig::mnist(1))?.0;
    let x = sample_probe(&[&prime, &odd], 1024, 0)?;
    let (pa, pb) = (capture_probe(&a, &x)?, capture_probe(&b, &x)?);
    let models = [&a, &b];
    let probes = [&pa, &pb];

    let act = match_activation(&models, &probes, &MatchConfig::new(MatchMode::Activation, Flavor::Align, 0.0))?;
    let wgt = match_weight(&models, &MatchConfig::new(MatchMode::Weight, Flavor::Align, 1.0))?;
    println!("{:>5} {:>7} {:>8} {:>8} {:>8}  trace", "alpha", "rounds", "~act", "~weight", "avg acc");
    for alpha in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let o = match_mudsc(&models, &probes, &MatchConfig::new(MatchMode::Mudsc, Flavor::Align, alpha))?;
        let merged = merge(&models, &o.perms, None, HeadMode::Separate)?;
        let acc = evaluate(&merged, &[&prime_test, &odd_test])?.avg_acc;
        let trace: Vec<String> = o.trace.iter().map(|r| format!("{:.1}", r.objective)).collect();
        println!(
            "{alpha:>5} {:>7} {:>8.3} {:>8.3} {:>8.4}  {}",
            o.rounds,
            agreement(&o.perms, &act.perms),
            agreement(&o.perms, &wgt.perms),
            acc,
            trace.join(" ")
        );
    }
    Ok(())
}
