//! Task datasets: MNIST IDX loading, the prime/odd and class-split task
//! constructions, seeded synthetic fallbacks, and fixed orthonormal class
//! targets that stand in for text-encoder embeddings.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Global class identities; each indexes one orthonormal target vector.
pub mod class_id {
    pub const fn digit(d: usize) -> usize {
        d
    }
    pub const NOT_PRIME: usize = 10;
    pub const PRIME: usize = 11;
    pub const EVEN: usize = 12;
    pub const ODD: usize = 13;
}

const TARGET_SEED: u64 = 0x7a12_6e75;
const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// The first `count` vectors of a fixed seeded orthonormal family in `dim`
/// dimensions (Gaussian draws, modified Gram-Schmidt). Vector `k` depends
/// only on `dim` and `k`.
pub fn class_targets(dim: usize, count: usize) -> Result<Tensor> {
    if count > dim {
        return Err(Error::Contract(format!(
            "{count} orthonormal targets do not fit in {dim} dimensions"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(TARGET_SEED ^ dim as u64);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Tensor::matrix(
        count.max(1),
        dim,
        if count == 0 {
            vec![0.0; dim]
        } else {
            basis.into_iter().flatten().map(|x| x as f32).collect()
        },
    )
}

/// A labelled task whose classes are identified by target vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub name: String,
    pub task_id: usize,
    /// `[samples, input_dim]`.
    pub inputs: Tensor,
    /// `[samples, output_dim]`, row `i` is the target of `labels[i]`.
    pub targets: Tensor,
    /// Index into `class_ids` per sample.
    pub labels: Vec<usize>,
    /// Global class identity of each local class.
    pub class_ids: Vec<usize>,
    /// `[classes, output_dim]`, orthonormal rows.
    pub class_targets: Tensor,
}

impl TaskDataset {
    pub fn new(
        name: impl Into<String>,
        task_id: usize,
        inputs: Tensor,
        labels: Vec<usize>,
        class_ids: Vec<usize>,
        output_dim: usize,
    ) -> Result<Self> {
        if inputs.rank() != 2 || inputs.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} labels for inputs {:?}",
                labels.len(),
                inputs.shape()
            )));
        }
        if class_ids.is_empty() || labels.iter().any(|&l| l >= class_ids.len()) {
            return Err(Error::Contract("labels must index the class list".into()));
        }
        let max_id = *class_ids.iter().max().expect("non-empty");
        let bank = class_targets(output_dim, max_id + 1)?;
        let class_targets = bank.gather_rows(&class_ids);
        let targets = class_targets.gather_rows(&labels);
        Ok(TaskDataset {
            name: name.into(),
            task_id,
            inputs,
            targets,
            labels,
            class_ids,
            class_targets,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn subset(&self, idx: &[usize]) -> TaskDataset {
        TaskDataset {
            name: self.name.clone(),
            task_id: self.task_id,
            inputs: self.inputs.gather_rows(idx),
            targets: self.targets.gather_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_ids: self.class_ids.clone(),
            class_targets: self.class_targets.clone(),
        }
    }

    /// The first `n` samples (or all of them).
    pub fn head(&self, n: usize) -> TaskDataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Two Gaussian blobs at `±separation/2` along a seeded random direction,
/// labelled 0/1 with class ids 0 and 1.
pub fn blobs_task(
    samples: usize,
    input_dim: usize,
    output_dim: usize,
    separation: f32,
    seed: u64,
) -> Result<TaskDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<f32> = (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = dir.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-6);
    dir.iter_mut().for_each(|v| *v /= n);
    let mut data = Vec::with_capacity(samples * input_dim);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let label = i % 2;
        let sign = if label == 1 { 0.5 } else { -0.5 };
        for d in &dir {
            let noise: f32 = StandardNormal.sample(&mut rng);
            data.push(sign * separation * d + noise);
        }
        labels.push(label);
    }
    TaskDataset::new(
        "blobs",
        0,
        Tensor::matrix(samples, input_dim, data)?,
        labels,
        vec![0, 1],
        output_dim,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Where digit images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    /// A directory holding `{train,t10k}-{images-idx3,labels-idx1}-ubyte`
    /// files, optionally gzipped.
    Idx(PathBuf),
    /// Seeded Gaussian class blobs shaped like 28x28 digits.
    Synthetic { seed: u64 },
}

/// Flattened 28x28 images scaled to `[0, 1]` with their digit labels.
#[derive(Debug, Clone)]
pub struct Digits {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parses an IDX image file (magic `0x00000803`) into `[n, rows*cols]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::format(path, format!("image magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols || n == 0 {
        return Err(Error::format(
            path,
            format!("expected {} pixel bytes, found {}", n * rows * cols, body.len()),
        ));
    }
    Tensor::matrix(n, rows * cols, body.iter().map(|&b| b as f32 / 255.0).collect())
}

/// Parses an IDX label file (magic `0x00000801`).
pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::format(path, format!("label magic {magic:#010x}")));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(path, format!("expected {n} labels, found {}", body.len())));
    }
    if let Some(bad) = body.iter().find(|&&l| l > 9) {
        return Err(Error::format(path, format!("label {bad} is not a digit")));
    }
    Ok(body.to_vec())
}

fn find_idx(dir: &Path, stem: &str) -> Result<PathBuf> {
    for name in [format!("{stem}.gz"), stem.to_string(), stem.replacen("-idx", ".idx", 1)] {
        let p = dir.join(&name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::io(
        dir.join(stem),
        std::io::Error::new(std::io::ErrorKind::NotFound, "IDX file not found"),
    ))
}

/// Loads one split of the digit images.
pub fn load_digits(source: &DataSource, split: Split) -> Result<Digits> {
    match source {
        DataSource::Idx(dir) => {
            let prefix = match split {
                Split::Train => "train",
                Split::Test => "t10k",
            };
            let ip = find_idx(dir, &format!("{prefix}-images-idx3-ubyte"))?;
            let lp = find_idx(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
            let images = parse_idx_images(&read_maybe_gz(&ip)?, &ip)?;
            let labels = parse_idx_labels(&read_maybe_gz(&lp)?, &lp)?;
            if images.rows() != labels.len() {
                return Err(Error::format(&lp, "image and label counts differ"));
            }
            Ok(Digits { images, labels })
        }
        DataSource::Synthetic { seed } => synthetic_digits(*seed, split),
    }
}

/// Ten seeded sparse prototype images plus Gaussian pixel noise.
fn synthetic_digits(seed: u64, split: Split) -> Result<Digits> {
    const DIM: usize = 784;
    let mut proto_rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f32>> = (0..10)
        .map(|_| {
            (0..DIM)
                .map(|_| {
                    let u: f32 = proto_rng.gen();
                    if u > 0.8 {
                        proto_rng.gen_range(0.5..1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    let (per_class, stream) = match split {
        Split::Train => (400, 1),
        Split::Test => (100, 2),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(stream));
    let mut labels: Vec<u8> = (0..10u8).flat_map(|d| std::iter::repeat(d).take(per_class)).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(labels.len() * DIM);
    for &l in &labels {
        let gain: f32 = rng.gen_range(0.7..1.0);
        for &p in &prototypes[l as usize] {
            let noise: f32 = StandardNormal.sample(&mut rng);
            data.push((p * gain + 0.25 * noise).clamp(0.0, 1.0));
        }
    }
    Ok(Digits {
        images: Tensor::matrix(labels.len(), DIM, data)?,
        labels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    /// Task A: is the digit prime? Task B: is it odd?
    PrimeOdd,
    /// The ten digits split into two disjoint five-class tasks.
    ClassSplit,
}

pub fn is_prime_digit(d: u8) -> bool {
    matches!(d, 2 | 3 | 5 | 7)
}

pub fn is_odd_digit(d: u8) -> bool {
    d % 2 == 1
}

/// Seeded partition of the ten digits into two disjoint halves.
pub fn class_split_partition(seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut digits: Vec<usize> = (0..10).collect();
    digits.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut a = digits[..5].to_vec();
    let mut b = digits[5..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    (a, b)
}

/// Builds the two-task construction over digit images.
///
/// `seed` only matters for [`TaskKind::ClassSplit`], where it drives the
/// partition (train and test splits of the same seed agree).
pub fn make_mnist_tasks(
    source: &DataSource,
    kind: TaskKind,
    split: Split,
    seed: u64,
    output_dim: usize,
) -> Result<(TaskDataset, TaskDataset)> {
    let digits = load_digits(source, split)?;
    tasks_from_digits(&digits, kind, seed, output_dim)
}

pub fn tasks_from_digits(
    digits: &Digits,
    kind: TaskKind,
    seed: u64,
    output_dim: usize,
) -> Result<(TaskDataset, TaskDataset)> {
    match kind {
        TaskKind::PrimeOdd => {
            let prime: Vec<usize> = digits.labels.iter().map(|&d| is_prime_digit(d) as usize).collect();
            let odd: Vec<usize> = digits.labels.iter().map(|&d| is_odd_digit(d) as usize).collect();
            let a = TaskDataset::new(
                "prime",
                0,
                digits.images.clone(),
                prime,
                vec![class_id::NOT_PRIME, class_id::PRIME],
                output_dim,
            )?;
            let b = TaskDataset::new(
                "odd",
                1,
                digits.images.clone(),
                odd,
                vec![class_id::EVEN, class_id::ODD],
                output_dim,
            )?;
            Ok((a, b))
        }
        TaskKind::ClassSplit => {
            let (left, right) = class_split_partition(seed);
            let build = |name: &str, task_id: usize, classes: &[usize]| {
                let idx: Vec<usize> = (0..digits.labels.len())
                    .filter(|&i| classes.contains(&(digits.labels[i] as usize)))
                    .collect();
                let labels = idx
                    .iter()
                    .map(|&i| {
                        classes
                            .iter()
                            .position(|&c| c == digits.labels[i] as usize)
                            .expect("filtered")
                    })
                    .collect();
                TaskDataset::new(
                    name,
                    task_id,
                    digits.images.gather_rows(&idx),
                    labels,
                    classes.iter().map(|&c| class_id::digit(c)).collect(),
                    output_dim,
                )
            };
            Ok((build("split_a", 0, &left)?, build("split_b", 1, &right)?))
        }
    }
}

/// `n` probe rows drawn without replacement from the union of the tasks'
/// distinct inputs; shared input tensors are only counted once.
pub fn sample_probe(tasks: &[&TaskDataset], n: usize, seed: u64) -> Result<Tensor> {
    let mut sources: Vec<&Tensor> = Vec::new();
    for t in tasks {
        if !sources.iter().any(|s| *s == &t.inputs) {
            sources.push(&t.inputs);
        }
    }
    let pool = Tensor::vstack(&sources)?;
    let mut idx: Vec<usize> = (0..pool.rows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n.min(pool.rows()));
    if idx.len() < 2 {
        return Err(Error::InsufficientData("probe needs at least 2 samples".into()));
    }
    Ok(pool.gather_rows(&idx))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn targets_are_orthonormal_and_stable() {
        let t = class_targets(64, 14).unwrap();
        for i in 0..14 {
            for j in 0..14 {
                let d: f64 = t.row(i).iter().zip(t.row(j)).map(|(&a, &b)| a as f64 * b as f64).sum();
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((d - e).abs() < 1e-6);
            }
        }
        let prefix = class_targets(64, 3).unwrap();
        assert_eq!(prefix.row(2), t.row(2));
        assert!(class_targets(4, 5).is_err());
    }

    #[test]
    fn digit_semantics() {
        assert!(is_prime_digit(2) && !is_odd_digit(2));
        assert!(!is_prime_digit(9) && is_odd_digit(9));
        assert!(!is_prime_digit(1) && is_odd_digit(1));
    }

    #[test]
    fn class_split_is_a_partition() {
        for seed in 0..5 {
            let (a, b) = class_split_partition(seed);
            assert_eq!(a.len(), 5);
            let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn idx_parsing_and_magic_errors() {
        let p = Path::new("mem");
        let mut img = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 2];
        img.extend([0, 255, 51, 0]);
        let t = parse_idx_images(&img, p).unwrap();
        assert_eq!(t.shape(), &[2, 2]);
        assert_eq!(t.at(0, 1), 1.0);
        let lab = [0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        assert_eq!(parse_idx_labels(&lab, p).unwrap(), vec![7, 3]);
        let mut bad = img.clone();
        bad[3] = 1;
        assert!(matches!(parse_idx_images(&bad, p), Err(Error::Format { .. })));
        assert!(matches!(parse_idx_labels(&img, p), Err(Error::Format { .. })));
    }

    #[test]
    fn synthetic_tasks_carry_labels() {
        let src = DataSource::Synthetic { seed: 3 };
        let (a, b) = make_mnist_tasks(&src, TaskKind::PrimeOdd, Split::Test, 0, 64).unwrap();
        assert_eq!(a.len(), 1000);
        assert_eq!(a.inputs, b.inputs);
        assert_eq!(a.class_ids, vec![class_id::NOT_PRIME, class_id::PRIME]);
        let (a, b) = make_mnist_tasks(&src, TaskKind::ClassSplit, Split::Test, 7, 64).unwrap();
        assert_eq!(a.len() + b.len(), 1000);
        assert!(a.class_ids.iter().all(|c| !b.class_ids.contains(c)));
        let probe = sample_probe(&[&a, &b], 100, 1).unwrap();
        assert_eq!(probe.shape(), &[100, 784]);
    }
}
