//! Two MLPs trained on different MNIST questions (is the digit prime? is it
//! odd?) merged by every matcher and scored on the test split.
//!
//!     cargo run --release --example mnist_prime_odd
//!     cargo run --release --example mnist_prime_odd -- --width 1024 --weight-decay 1e-2
//!
//! Training starts from [`TrainConfig::mnist`]; the flags override it. Prints
//! per-method joint and per-task accuracy averaged over seeds.

use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use dualmerge::data::{make_mnist_tasks, sample_probe, DataSource, Split, TaskKind};
use dualmerge::eval::{compare_methods, evaluate_named, parse_grid, Method};
use dualmerge::model::{build_model, train, ModelSpec, TrainConfig};

#[derive(Parser)]
struct Args {
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    weight_decay: Option<f32>,
    #[arg(long, default_value_t = 1024)]
    probe_samples: usize,
    /// Alpha grid for the dual-space methods, `start:stop:step` or a list.
    #[arg(long, default_value = "0:1:0.1")]
    grid: String,
    /// Directory of IDX files; defaults to the bundled 5k subset.
    #[arg(long)]
    data: Option<PathBuf>,
}

fn main() -> dualmerge::Result<()> {
    let args = Args::parse();
    let dir = args
        .data
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"));
    let source = DataSource::Idx(dir);
    let (train_a, train_b) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Train, 0, 64)?;
    let (test_a, test_b) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Test, 0, 64)?;
    let w = args.width;
    let spec: ModelSpec = format!("784-{w}-{w}-{w}-64").parse()?;

    let grid = parse_grid(&args.grid)?;
    let mut sums = vec![(0.0, 0.0, 0.0); Method::ALL.len()];
    let mut solo = (0.0, 0.0);
    let started = Instant::now();
    for seed in 0..args.seeds {
        let fit = |task, s: u64| {
            let base = TrainConfig::mnist(s);
            let cfg = TrainConfig {
                epochs: args.epochs.unwrap_or(base.epochs),
                lr: args.lr.unwrap_or(base.lr),
                weight_decay: args.weight_decay.unwrap_or(base.weight_decay),
                ..base
            };
            train(&build_model(&spec, s)?, task, &cfg).map(|(m, _)| m)
        };
        let t0 = Instant::now();
        let a = fit(&train_a, 2 * seed)?;
        let b = fit(&train_b, 2 * seed + 1)?;
        let ra = evaluate_named(&a, &[&test_a], "a")?;
        let rb = evaluate_named(&b, &[&test_b], "b")?;
        solo.0 += ra.avg_acc;
        solo.1 += rb.avg_acc;
        let trained = t0.elapsed().as_secs_f64();
        let probe = sample_probe(&[&train_a, &train_b], args.probe_samples, seed)?;
        let results = compare_methods(
            &a,
            &b,
            &probe,
            &[&train_a, &train_b],
            &[&test_a, &test_b],
            &grid,
            &Method::ALL,
        )?;
        println!("seed {seed}: training {trained:.1}s, matching and evaluation {:.1}s", t0.elapsed().as_secs_f64() - trained);
        for (acc, r) in sums.iter_mut().zip(&results) {
            acc.0 += r.report.task_accs[0];
            acc.1 += r.report.task_accs[1];
            acc.2 += r.report.avg_acc;
            println!(
                "seed {seed} {:<17} prime {:.4} odd {:.4} avg {:.4} joint {:.4} alpha {:?} rounds {}",
                r.method.name(),
                r.report.task_accs[0],
                r.report.task_accs[1],
                r.report.avg_acc,
                r.report.joint_acc,
                r.alpha,
                r.rounds
            );
        }
    }
    let n = args.seeds as f64;
    println!("\nwidth {w}, {} seeds, {:.1}s", args.seeds, started.elapsed().as_secs_f64());
    println!("standalone: prime {:.2} odd {:.2}", 100.0 * solo.0 / n, 100.0 * solo.1 / n);
    println!("{:<17} {:>7} {:>7} {:>7}", "method", "prime", "odd", "avg");
    for (m, s) in Method::ALL.iter().zip(&sums) {
        println!(
            "{:<17} {:>7.2} {:>7.2} {:>7.2}",
            m.name(),
            100.0 * s.0 / n,
            100.0 * s.1 / n,
            100.0 * s.2 / n
        );
    }
    Ok(())
}
