//! Loss over the best-fit plane (PCA on flattened parameters) through two
//! models, the second one aligned to the first, and both merges. Writes
//! `landscape.csv` and `markers.csv` into the given directory (default: the
//! system temp dir).
//!
//!     cargo run --release --example loss_landscape -- /tmp/landscape

use std::path::PathBuf;

use dualmerge::data::{make_mnist_tasks, sample_probe, DataSource, Split, TaskKind};
use dualmerge::eval::{landscape, write_landscape_csv, write_markers_csv};
use dualmerge::matcher::{match_mudsc, Flavor, MatchConfig, MatchMode, PermutationSet};
use dualmerge::merger::{apply_perms, merge, HeadMode};
use dualmerge::model::{build_model, capture_probe, permutation_spec, train, ModelSpec, TrainConfig};
use dualmerge::Error;

fn main() -> dualmerge::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(std::env::temp_dir);
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let source = DataSource::Idx(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k"));
    let (prime, odd) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Train, 0, 64)?;
    let (prime_test, odd_test) = make_mnist_tasks(&source, TaskKind::PrimeOdd, Split::Test, 0, 64)?;
    let spec: ModelSpec = "784-64-64-64-64".parse()?;
    let a = train(&build_model(&spec, 0)?, &prime, &TrainConfig::mnist(0))?.0;
    let b = train(&build_model(&spec, 1)?, &odd, &TrainConfig::mnist(1))?.0;

    let x = sample_probe(&[&prime, &odd], 1024, 0)?;
    let o = match_mudsc(
        &[&a, &b],
        &[&capture_probe(&a, &x)?, &capture_probe(&b, &x)?],
        &MatchConfig::new(MatchMode::Mudsc, Flavor::Align, 0.5),
    )?;
    let b_aligned = apply_perms(&b, &permutation_spec(&spec), &o.perms.for_model(1)?)?;
    // one shared head so all three models live in the same parameter space
    let merged = merge(&[&a, &b], &o.perms, None, HeadMode::Average)?;
    let direct = merge(&[&a, &b], &PermutationSet::identity(&[64, 64, 64], 2), None, HeadMode::Average)?;

    let grid = landscape(
        &[
            ("prime_model", &a),
            ("odd_model", &b),
            ("odd_aligned", &b_aligned),
            ("merged", &merged),
            ("direct", &direct),
        ],
        &[&prime_test, &odd_test],
        41,
    )?;
    let names = ["prime", "odd"];
    let mut buf = Vec::new();
    write_landscape_csv(&grid, &names, &mut buf).map_err(|e| Error::io(&out, e))?;
    let path = out.join("landscape.csv");
    std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;
    buf.clear();
    write_markers_csv(&grid, &mut buf).map_err(|e| Error::io(&out, e))?;
    let path = out.join("markers.csv");
    std::fs::write(&path, &buf).map_err(|e| Error::io(&path, e))?;

    println!("principal variances {:.3} {:.3}", grid.variances[0], grid.variances[1]);
    for m in &grid.markers {
        println!("{:<12} ({:>8.3}, {:>8.3})", m.name, m.x, m.y);
    }
    let (best, _) = (0..grid.losses.len())
        .map(|i| (i, grid.mean_loss(i)))
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .expect("non-empty grid");
    let (bx, by) = (grid.xs[best % grid.xs.len()], grid.ys[best / grid.xs.len()]);
    println!("lowest mean loss {:.4} at ({bx:.3}, {by:.3})", grid.mean_loss(best));
    println!("wrote {}", out.display());
    Ok(())
}
