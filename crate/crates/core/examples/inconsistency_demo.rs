//! Train a network on the prime task, retrain one hidden layer on the odd
//! task and compare every unit of the old layer with every unit of the new
//! one. Some pairs keep nearly the same incoming weights yet respond
//! differently to the same inputs.
//!
//!     cargo run --release --example inconsistency_demo -- fig1_demo.csv

use std::path::PathBuf;

use dualmerge::data::{make_mnist_tasks, DataSource, Split, TaskKind};
use dualmerge::eval::{inconsistency_demo, write_demo_csv, DemoConfig};
use dualmerge::model::{build_model, train, ModelSpec, TrainConfig};
use dualmerge::Error;

fn main() -> dualmerge::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fig1_demo.csv".into()));
    let source = DataSource::Idx(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"));
    let (prime, odd) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Train, 0, 64)?;
    let spec: ModelSpec = "784-128-128-128-64".parse()?;
    let parent = train(&build_model(&spec, 0)?, &prime, &TrainConfig::default())?.0;
    let (_, rows) = inconsistency_demo(&parent, 1, &odd, &DemoConfig::default())?;

    let live = rows.iter().filter(|r| r.both_alive).count();
    let hits: Vec<_> = rows.iter().filter(|r| r.both_alive && r.weight_sim > 0.9 && r.act_sim < 0.5).collect();
    println!(
        "{} unit pairs ({live} between live units), {} live pairs with weight sim > 0.9 and activation sim < 0.5",
        rows.len(),
        hits.len()
    );
    for r in hits.iter().take(5) {
        println!("  units ({:>3}, {:>3}): weight {:.3} activation {:.3}", r.i, r.j, r.weight_sim, r.act_sim);
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.merged_min_parent_sim.total_cmp(&b.merged_min_parent_sim))
        .expect("rows");
    println!(
        "best merged unit ({}, {}): weight {:.3} activation {:.3} min parent {:.3}",
        best.i, best.j, best.weight_sim, best.act_sim, best.merged_min_parent_sim
    );
    let mut buf = Vec::new();
    write_demo_csv(&rows, &mut buf).map_err(|e| Error::io(&out, e))?;
    std::fs::write(&out, buf).map_err(|e| Error::io(&out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}
