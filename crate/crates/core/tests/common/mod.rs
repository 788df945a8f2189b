#![allow(dead_code)]

use std::path::PathBuf;

use dualmerge::data::{make_mnist_tasks, DataSource, Split, TaskDataset, TaskKind};
use dualmerge::merger::apply_perms;
use dualmerge::model::{build_model, permutation_spec, ModelSpec, ModelState};
use dualmerge::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

pub fn prime_odd(split: Split) -> (TaskDataset, TaskDataset) {
    make_mnist_tasks(&DataSource::Idx(data_dir()), TaskKind::PrimeOdd, split, 0, 64).unwrap()
}

pub fn uniform_inputs(n: usize, d: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// A random permutation per hidden layer that respects group blocks.
pub fn random_perms(m: &ModelState, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    permutation_spec(&m.spec)
        .groups
        .iter()
        .map(|g| match g.block {
            None => shuffled(g.size, &mut rng),
            Some(b) => shuffled(b.groups, &mut rng)
                .into_iter()
                .flat_map(|o| shuffled(b.size, &mut rng).into_iter().map(move |t| o * b.size + t))
                .collect(),
        })
        .collect()
}

/// `(a, pi(a), pi)` for a freshly initialised model.
pub fn permuted_pair(arch: &str, seed: u64) -> (ModelState, ModelState, Vec<Vec<usize>>) {
    let a = build_model(&arch.parse::<ModelSpec>().unwrap(), seed).unwrap();
    let pi = random_perms(&a, seed.wrapping_add(1000));
    let b = apply_perms(&a, &permutation_spec(&a.spec), &pi).unwrap();
    (a, b, pi)
}

pub fn inverse(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &v) in p.iter().enumerate() {
        inv[v] = i;
    }
    inv
}

/// Every permutation of `0..n` in lexicographic order.
pub fn all_perms(n: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for v in 0..used.len() {
            if !used[v] {
                used[v] = true;
                prefix.push(v);
                go(prefix, used, out);
                prefix.pop();
                used[v] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}
