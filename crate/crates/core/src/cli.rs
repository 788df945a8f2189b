//! Batch command-line frontend. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.
//!
//! Exit codes: 0 success, 1 failed self-check, 2 contract or data error,
//! 3 I/O error. Failures print one JSON line on stderr:
//! `{"error":"<kind>","message":"...","exit_code":N}`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::assignment::invert;
use crate::data::{blobs_task, make_mnist_tasks, sample_probe, DataSource, Split, TaskDataset, TaskKind};
use crate::error::{Error, Result};
use crate::eval::{
    alpha_search, barrier_height, barrier_scan, evaluate_named, inconsistency_demo, landscape, parse_grid,
    write_barrier_csv, write_demo_csv, write_landscape_csv, write_markers_csv, DemoConfig,
};
use crate::matcher::{run_match, Flavor, MatchConfig, MatchMode, PermutationSet};
use crate::merger::{apply_perms, merge, merge_and_reset, HeadMode};
use crate::model::{
    build_model, capture_probe, forward_heads, permutation_spec, train, ModelSpec, ModelState, TrainConfig,
};
use crate::similarity::{activation_similarity, combine, weight_features, weight_similarity, zscore_f64};
use crate::store::{load_model, save_model};
use crate::tensor::Tensor;

const BLOB_SAMPLES: usize = 1000;
const BLOB_SEPARATION: f32 = 4.0;

#[derive(Parser, Debug)]
#[command(name = "dualmerge", version, about = "Merge independently trained MLPs by dual-space unit matching")]
pub struct Cli {
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train one model on one side of a two-task construction.
    Train(TrainArgs),
    /// Compute permutations aligning model b to model a.
    Match(MatchArgs),
    /// Permute and average two models.
    Merge(MergeArgs),
    /// Joint and per-task accuracy and loss.
    Eval(EvalArgs),
    /// Sweep alpha for dual-space matching, scored on training data.
    AlphaSearch(AlphaArgs),
    /// Loss along the straight line between two models.
    Barrier(BarrierArgs),
    /// Loss over the principal plane of three or more models.
    Landscape(LandscapeArgs),
    /// Weight similarity against activation similarity after retraining
    /// one layer.
    #[command(name = "fig1-demo")]
    Fig1Demo(DemoArgs),
    /// Permuted-copy recovery and similarity-mixing identity checks.
    Selfcheck,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskChoice {
    #[value(name = "prime_odd")]
    PrimeOdd,
    #[value(name = "class_split")]
    ClassSplit,
    Blobs,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Side {
    A,
    B,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
}

impl From<SplitChoice> for Split {
    fn from(s: SplitChoice) -> Split {
        match s {
            SplitChoice::Train => Split::Train,
            SplitChoice::Test => Split::Test,
        }
    }
}

#[derive(Args, Clone, Debug)]
pub struct TaskArgs {
    #[arg(long, alias = "tasks", value_enum, default_value = "prime_odd")]
    pub task: TaskChoice,
    /// Directory of MNIST IDX files.
    #[arg(long, default_value = "data/mnist-5k")]
    pub data: PathBuf,
    /// Seeded synthetic digits instead of IDX files.
    #[arg(long)]
    pub synthetic: bool,
    /// Drives the class split and the blob directions.
    #[arg(long, default_value_t = 0)]
    pub task_seed: u64,
}

#[derive(Args, Clone, Debug)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Probe rows drawn from the union of both tasks' training inputs.
    #[arg(long, default_value_t = 1024)]
    pub probe_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, value_enum, default_value = "a")]
    pub side: Side,
    /// Layer widths, e.g. `784-256-256-256-64`; `g<k>` suffix groups a
    /// layer into k normalised groups.
    #[arg(long)]
    pub arch: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub weight_decay: Option<f32>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct MatchArgs {
    #[arg(long, value_enum, default_value = "mudsc")]
    pub mode: MatchMode,
    #[arg(long, value_enum, default_value = "align")]
    pub flavor: Flavor,
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[arg(long, default_value_t = 100)]
    pub max_rounds: usize,
    /// Recompute the activation term every update instead of carrying the
    /// running mix forward.
    #[arg(long)]
    pub fresh_activation: bool,
    /// Mix raw kernels without standardising them.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Objective trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MergeArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub perms: PathBuf,
    #[arg(long, value_enum, default_value = "separate")]
    pub heads: HeadMode,
    /// Probe data for refreshing running statistics of grouped layers.
    #[command(flatten)]
    pub probe: ProbeArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
}

#[derive(Args, Debug)]
pub struct AlphaArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// `start:stop:step` or a comma list.
    #[arg(long, default_value = "0:1:0.1")]
    pub grid: String,
    #[arg(long, value_enum, default_value = "align")]
    pub flavor: Flavor,
    #[command(flatten)]
    pub probe: ProbeArgs,
}

#[derive(Args, Debug)]
pub struct BarrierArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    /// Align b with these permutations first.
    #[arg(long)]
    pub perms: Option<PathBuf>,
    #[arg(long, default_value_t = 11)]
    pub points: usize,
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    #[arg(long, default_value = "barrier.csv")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct LandscapeArgs {
    /// Three or more models sharing one architecture, heads included.
    #[arg(long, num_args = 3.., required = true)]
    pub models: Vec<PathBuf>,
    /// Marker names; defaults to the file stems.
    #[arg(long, num_args = 1..)]
    pub names: Vec<String>,
    #[arg(long, default_value_t = 41)]
    pub grid_res: usize,
    #[command(flatten)]
    pub tasks: TaskArgs,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    #[arg(long, default_value = "landscape.csv")]
    pub out: PathBuf,
    #[arg(long, default_value = "markers.csv")]
    pub markers: PathBuf,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Hidden layer to retrain.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[command(flatten)]
    pub tasks: TaskArgs,
    /// Task whose training split drives the retraining.
    #[arg(long, value_enum, default_value = "b")]
    pub side: Side,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    /// Re-draw the layer's weights before retraining instead of starting
    /// from the trained ones.
    #[arg(long)]
    pub reinit: bool,
    #[arg(long, default_value = "fig1_demo.csv")]
    pub out: PathBuf,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            let line = json!({"error": e.kind(), "message": e.to_string(), "exit_code": e.exit_code()});
            eprintln!("{line}");
            e.exit_code()
        }
    }
}

fn execute(cli: &Cli) -> Result<i32> {
    let out = match &cli.command {
        Command::Train(a) => cmd_train(a)?,
        Command::Match(a) => cmd_match(a)?,
        Command::Merge(a) => cmd_merge(a)?,
        Command::Eval(a) => cmd_eval(a)?,
        Command::AlphaSearch(a) => cmd_alpha(a)?,
        Command::Barrier(a) => cmd_barrier(a)?,
        Command::Landscape(a) => cmd_landscape(a)?,
        Command::Fig1Demo(a) => cmd_demo(a)?,
        Command::Selfcheck => {
            let (checks, passed) = selfcheck()?;
            let text = checks
                .iter()
                .map(|c| format!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail))
                .collect::<Vec<_>>()
                .join("\n");
            let value = json!({
                "command": "selfcheck",
                "passed": passed,
                "checks": checks.iter().map(|c| json!({"name": c.name, "passed": c.passed, "detail": c.detail})).collect::<Vec<_>>(),
            });
            emit(cli.json, &value, &text);
            return Ok(if passed { 0 } else { 1 });
        }
    };
    emit(cli.json, &out.0, &out.1);
    Ok(0)
}

fn emit(as_json: bool, value: &Value, text: &str) {
    if as_json {
        println!("{value}");
    } else {
        println!("{text}");
    }
}

type Output = (Value, String);

/// Both tasks of the construction, shaped for a model with the given dims.
pub fn load_tasks(
    t: &TaskArgs,
    split: Split,
    input_dim: usize,
    output_dim: usize,
) -> Result<(TaskDataset, TaskDataset)> {
    let kind = match t.task {
        TaskChoice::PrimeOdd => TaskKind::PrimeOdd,
        TaskChoice::ClassSplit => TaskKind::ClassSplit,
        TaskChoice::Blobs => return blobs_pair(split, input_dim, output_dim, t.task_seed),
    };
    let source = if t.synthetic {
        DataSource::Synthetic { seed: t.task_seed }
    } else {
        DataSource::Idx(t.data.clone())
    };
    let pair = make_mnist_tasks(&source, kind, split, t.task_seed, output_dim)?;
    if pair.0.inputs.cols() != input_dim {
        return Err(Error::Shape(format!(
            "digit images have {} pixels but the model takes {input_dim} inputs",
            pair.0.inputs.cols()
        )));
    }
    Ok(pair)
}

/// Two blob tasks with independent directions; class ids 0/1 and 2/3.
fn blobs_pair(split: Split, input_dim: usize, output_dim: usize, seed: u64) -> Result<(TaskDataset, TaskDataset)> {
    let make = |task_id: usize, name: &str| -> Result<TaskDataset> {
        let all = blobs_task(2 * BLOB_SAMPLES, input_dim, output_dim, BLOB_SEPARATION, seed * 2 + task_id as u64)?;
        let idx: Vec<usize> = match split {
            Split::Train => (0..BLOB_SAMPLES).collect(),
            Split::Test => (BLOB_SAMPLES..2 * BLOB_SAMPLES).collect(),
        };
        let part = all.subset(&idx);
        TaskDataset::new(
            name,
            task_id,
            part.inputs,
            part.labels,
            vec![2 * task_id, 2 * task_id + 1],
            output_dim,
        )
    };
    Ok((make(0, "blobs_a")?, make(1, "blobs_b")?))
}

fn probe_inputs(p: &ProbeArgs, m: &ModelState) -> Result<Tensor> {
    let (a, b) = load_tasks(&p.tasks, Split::Train, m.spec.input_dim, m.spec.output_dim)?;
    sample_probe(&[&a, &b], p.probe_samples, p.seed)
}

fn pick(side: Side, pair: (TaskDataset, TaskDataset)) -> TaskDataset {
    match side {
        Side::A => pair.0,
        Side::B => pair.1,
    }
}

fn save_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn save_csv(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<()> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

fn read_perms(path: &Path) -> Result<PermutationSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PermutationSet::from_json(&text)
}

fn cmd_train(a: &TrainArgs) -> Result<Output> {
    let spec: ModelSpec = a.arch.parse()?;
    let task = pick(a.side, load_tasks(&a.tasks, Split::Train, spec.input_dim, spec.output_dim)?);
    let base = match a.tasks.task {
        TaskChoice::Blobs => TrainConfig { seed: a.seed, ..Default::default() },
        _ => TrainConfig::mnist(a.seed),
    };
    let cfg = TrainConfig {
        epochs: a.epochs.unwrap_or(base.epochs),
        lr: a.lr.unwrap_or(base.lr),
        weight_decay: a.weight_decay.unwrap_or(base.weight_decay),
        batch: a.batch.unwrap_or(base.batch),
        ..base
    };
    let (model, report) = train(&build_model(&spec, a.seed)?, &task, &cfg)?;
    save_model(&model, &a.out)?;
    let eval = evaluate_named(&model, &[&task], &task.name)?;
    let run_path = PathBuf::from(format!("{}.train.json", a.out.display()));
    let run = json!({
        "task": task.name,
        "arch": a.arch,
        "config": cfg,
        "epoch_losses": report.epoch_losses,
        "train_acc": eval.avg_acc,
    });
    save_text(&run_path, &format!("{run:#}\n"))?;
    let value = json!({
        "command": "train",
        "task": task.name,
        "out": a.out,
        "run": run_path,
        "epoch_losses": report.epoch_losses,
        "train_acc": eval.avg_acc,
    });
    let text = format!(
        "trained {} on {} ({} epochs): loss {:.4}, train acc {:.4}",
        a.arch,
        task.name,
        cfg.epochs,
        report.final_loss().unwrap_or(f64::NAN),
        eval.avg_acc
    );
    Ok((value, text))
}

fn cmd_match(a: &MatchArgs) -> Result<Output> {
    let (ma, mb) = (load_model(&a.a)?, load_model(&a.b)?);
    let cfg = MatchConfig {
        max_rounds: a.max_rounds,
        fresh_activation: a.fresh_activation,
        raw_combine: a.raw,
        seed: a.probe.seed,
        ..MatchConfig::new(a.mode, a.flavor, a.alpha)
    };
    cfg.validate()?;
    let probes = if a.mode == MatchMode::Weight {
        None
    } else {
        let x = probe_inputs(&a.probe, &ma)?;
        Some((capture_probe(&ma, &x)?, capture_probe(&mb, &x)?))
    };
    let refs = probes.as_ref().map(|(p, q)| [p, q]);
    let outcome = run_match(&[&ma, &mb], refs.as_ref().map(|r| &r[..]), &cfg)?;
    save_text(&a.out, &outcome.perms.to_json()?)?;
    let trace = a
        .trace
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.trace.csv", a.out.display())));
    outcome.save_trace_csv(&trace)?;
    let value = json!({
        "command": "match",
        "out": a.out,
        "trace": trace,
        "objective": outcome.objective(),
        "rounds": outcome.rounds,
        "converged": outcome.converged,
    });
    let alpha = match a.mode {
        MatchMode::Activation => 0.0,
        MatchMode::Weight => 1.0,
        MatchMode::Mudsc => cfg.alpha,
    };
    let text = format!(
        "{:?}/{:?} alpha {alpha}: objective {:.6} after {} rounds -> {}",
        a.mode,
        a.flavor,
        outcome.objective(),
        outcome.rounds,
        a.out.display()
    );
    Ok((value, text))
}

fn cmd_merge(a: &MergeArgs) -> Result<Output> {
    let (ma, mb) = (load_model(&a.a)?, load_model(&a.b)?);
    let perms = read_perms(&a.perms)?;
    perms.validate(&permutation_spec(&ma.spec))?;
    let merged = if ma.norm_stats.is_empty() {
        merge(&[&ma, &mb], &perms, None, a.heads)?
    } else {
        let x = probe_inputs(&a.probe, &ma)?;
        merge_and_reset(&[&ma, &mb], &perms, a.heads, Some(&x))?
    };
    save_model(&merged, &a.out)?;
    let value = json!({"command": "merge", "out": a.out, "heads": merged.spec.heads});
    Ok((value, format!("merged model with {} heads -> {}", merged.spec.heads, a.out.display())))
}

fn cmd_eval(a: &EvalArgs) -> Result<Output> {
    let m = load_model(&a.model)?;
    let (ta, tb) = load_tasks(&a.tasks, a.split.into(), m.spec.input_dim, m.spec.output_dim)?;
    let id = a.model.display().to_string();
    let report = evaluate_named(&m, &[&ta, &tb], &id)?;
    let mut text = format!("{id}: joint {:.4} avg {:.4}", report.joint_acc, report.avg_acc);
    for (t, (acc, loss)) in [&ta, &tb].iter().zip(report.task_accs.iter().zip(&report.loss_per_task)) {
        text.push_str(&format!("\n  {:<8} acc {acc:.4} loss {loss:.4}", t.name));
    }
    Ok((serde_json::to_value(&report)?, text))
}

fn cmd_alpha(a: &AlphaArgs) -> Result<Output> {
    let (ma, mb) = (load_model(&a.a)?, load_model(&a.b)?);
    let grid = parse_grid(&a.grid)?;
    let x = probe_inputs(&a.probe, &ma)?;
    let (ta, tb) = load_tasks(&a.probe.tasks, Split::Train, ma.spec.input_dim, ma.spec.output_dim)?;
    let (pa, pb) = (capture_probe(&ma, &x)?, capture_probe(&mb, &x)?);
    let cfg = MatchConfig {
        seed: a.probe.seed,
        ..MatchConfig::new(MatchMode::Mudsc, a.flavor, 0.5)
    };
    let search = alpha_search(&[&ma, &mb], &[&pa, &pb], &[&ta, &tb], &cfg, &grid, Some(&x))?;
    let mut text = format!("{:>6} {:>8} {:>8} {:>8} {:>8}", "alpha", "joint", "avg", &ta.name, &tb.name);
    for p in &search.points {
        let r = &p.report;
        text.push_str(&format!(
            "\n{:>6.2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
            p.alpha, r.joint_acc, r.avg_acc, r.task_accs[0], r.task_accs[1]
        ));
    }
    text.push_str(&format!("\nbest alpha {}", search.best_alpha));
    Ok((serde_json::to_value(&search)?, text))
}

fn cmd_barrier(a: &BarrierArgs) -> Result<Output> {
    let (ma, mb) = (load_model(&a.a)?, load_model(&a.b)?);
    let (ma, mb) = match &a.perms {
        None => (ma, mb),
        Some(path) => {
            let perms = read_perms(path)?;
            let spec = permutation_spec(&ma.spec);
            (
                apply_perms(&ma, &spec, &perms.for_model(0)?)?,
                apply_perms(&mb, &spec, &perms.for_model(1)?)?,
            )
        }
    };
    let (ta, tb) = load_tasks(&a.tasks, a.split.into(), ma.spec.input_dim, ma.spec.output_dim)?;
    let points = barrier_scan(&ma, &mb, &[&ta, &tb], a.points)?;
    let names = [ta.name.as_str(), tb.name.as_str()];
    save_csv(&a.out, |w| write_barrier_csv(&points, &names, w))?;
    let height = barrier_height(&points);
    let value = json!({"command": "barrier", "out": a.out, "barrier_height": height, "points": points});
    Ok((value, format!("barrier height {height:.6} over {} points -> {}", points.len(), a.out.display())))
}

fn cmd_landscape(a: &LandscapeArgs) -> Result<Output> {
    let models = a.models.iter().map(|p| load_model(p)).collect::<Result<Vec<_>>>()?;
    let names: Vec<String> = if a.names.is_empty() {
        a.models
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect()
    } else if a.names.len() == models.len() {
        a.names.clone()
    } else {
        return Err(Error::Contract(format!("{} names for {} models", a.names.len(), models.len())));
    };
    let first = &models[0];
    let (ta, tb) = load_tasks(&a.tasks, a.split.into(), first.spec.input_dim, first.spec.output_dim)?;
    let named: Vec<(&str, &ModelState)> = names.iter().map(String::as_str).zip(&models).collect();
    let grid = landscape(&named, &[&ta, &tb], a.grid_res)?;
    let tn = [ta.name.as_str(), tb.name.as_str()];
    save_csv(&a.out, |w| write_landscape_csv(&grid, &tn, w))?;
    save_csv(&a.markers, |w| write_markers_csv(&grid, w))?;
    let value = json!({
        "command": "landscape",
        "out": a.out,
        "markers": grid.markers,
        "variances": grid.variances,
    });
    Ok((value, format!("{}x{} grid -> {}, markers -> {}", a.grid_res, a.grid_res, a.out.display(), a.markers.display())))
}

fn cmd_demo(a: &DemoArgs) -> Result<Output> {
    let m = load_model(&a.model)?;
    let task = pick(a.side, load_tasks(&a.tasks, Split::Train, m.spec.input_dim, m.spec.output_dim)?);
    let defaults = DemoConfig::default();
    let cfg = DemoConfig {
        retrain: TrainConfig {
            epochs: a.epochs,
            seed: a.seed,
            ..defaults.retrain.clone()
        },
        reinit: a.reinit,
        ..defaults
    };
    let (_, rows) = inconsistency_demo(&m, a.layer, &task, &cfg)?;
    save_csv(&a.out, |w| write_demo_csv(&rows, w))?;
    let inconsistent = rows.iter().filter(|r| r.both_alive && r.weight_sim > 0.9 && r.act_sim < 0.5).count();
    let value = json!({"command": "fig1-demo", "out": a.out, "rows": rows.len(), "high_weight_low_act": inconsistent});
    let text = format!(
        "{} unit pairs, {inconsistent} between live units with weight sim > 0.9 and activation sim < 0.5 -> {}",
        rows.len(),
        a.out.display()
    );
    Ok((value, text))
}

pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Runs the built-in checks; the flag is true when all pass.
pub fn selfcheck() -> Result<(Vec<Check>, bool)> {
    let mut checks = Vec::new();
    let spec: ModelSpec = "8-16-12g3-16-4".parse()?;
    let a = build_model(&spec, 0)?;
    let pspec = permutation_spec(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pi: Vec<Vec<usize>> = pspec
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
                outer.iter().flat_map(|&o| (0..b.size).map(move |t| o * b.size + t)).collect()
            }
        })
        .collect();
    let b = apply_perms(&a, &pspec, &pi)?;
    let x = Tensor::matrix(256, 8, (0..256 * 8).map(|_| rng.gen_range(-1.0f32..1.0)).collect())?;
    let (pa, pb) = (capture_probe(&a, &x)?, capture_probe(&b, &x)?);
    let want: Vec<Vec<usize>> = pi.iter().map(|p| invert(p)).collect();
    let reference = forward_heads(&a, &x, false)?.0;
    let runs = [
        (MatchMode::Activation, 0.0),
        (MatchMode::Weight, 1.0),
        (MatchMode::Mudsc, 0.0),
        (MatchMode::Mudsc, 0.5),
        (MatchMode::Mudsc, 1.0),
    ];
    for flavor in [Flavor::Align, Flavor::Zip] {
        for (mode, alpha) in runs {
            let cfg = MatchConfig::new(mode, flavor, alpha);
            let o = run_match(&[&a, &b], Some(&[&pa, &pb]), &cfg)?;
            let merged = merge(&[&a, &b], &o.perms, None, HeadMode::Average)?;
            let out = forward_heads(&merged, &x, false)?.0;
            let err = out
                .iter()
                .zip(&reference)
                .flat_map(|(o, r)| o.data().iter().zip(r.data()).map(|(p, q)| (p - q).abs()))
                .fold(0.0f32, f32::max);
            let recovered = o.perms.for_model(1)? == want;
            checks.push(Check {
                name: format!("recover {mode:?}/{flavor:?} alpha {alpha}"),
                passed: recovered && err < 1e-5,
                detail: format!("permutation recovered: {recovered}, max output error {err:.2e}"),
            });
        }
    }

    let other = build_model(&spec, 2)?;
    let po = capture_probe(&other, &x)?;
    let ident = PermutationSet::identity(&pspec.sizes(), 2);
    let mut worst = 0.0f64;
    for draw in 0..20 {
        let layer = draw % pspec.groups.len();
        let alpha: f64 = rng.gen();
        let ws = weight_similarity(&weight_features(&[&a, &other], &ident, layer)?)?;
        let as_ = activation_similarity(&[&pa, &po], layer)?;
        let n = ws.n;
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(&mut rng);
        let mut mask = vec![0.0; n * n];
        for (i, &j) in p.iter().enumerate() {
            mask[i * n + j] = 1.0;
        }
        let lhs = combine(&ws, &as_, alpha)?.inner(&mask)?;
        let dot = |v: &[f64]| v.iter().zip(&mask).map(|(a, b)| a * b).sum::<f64>();
        let rhs = alpha * dot(&zscore_f64(&ws.values)) + (1.0 - alpha) * dot(&zscore_f64(&as_.values));
        worst = worst.max((lhs - rhs).abs());
    }
    checks.push(Check {
        name: "mixed similarity is linear in alpha".into(),
        passed: worst < 1e-9,
        detail: format!("max deviation over 20 draws {worst:.2e}"),
    });
    let passed = checks.iter().all(|c| c.passed);
    Ok((checks, passed))
}
