//! Maximum-similarity matchings between the units of two models.
//!
//! All solvers take a cross-model block `sim[i, j]` (rows: units of the
//! reference model, columns: units of the other model) and return
//! `perm[i] = j`. Ties resolve towards lower indices, so every solver is
//! deterministic across runs and platforms.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    /// Sum of matched similarities, accumulated in row order.
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    /// `group_perm[a]` is the group of the other model matched to group `a`.
    pub group_perm: Vec<usize>,
    /// `inner_perms[a][t]` is the unit (within `group_perm[a]`) matched to
    /// unit `t` of group `a`.
    pub inner_perms: Vec<Vec<usize>>,
    pub objective: f64,
}

impl GroupAssignment {
    /// The composed unit-level permutation.
    pub fn unit_perm(&self) -> Vec<usize> {
        let k = self.inner_perms.first().map_or(0, Vec::len);
        let mut perm = Vec::with_capacity(self.group_perm.len() * k);
        for (a, &b) in self.group_perm.iter().enumerate() {
            perm.extend(self.inner_perms[a].iter().map(|&t| b * k + t));
        }
        perm
    }
}

pub fn is_bijection(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || seen[p] {
            return false;
        }
        seen[p] = true;
    }
    true
}

pub fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// `Σ_i sim[i, perm[i]]` in f64, summed in row order.
pub fn objective(sim: &Tensor, perm: &[usize]) -> f64 {
    perm.iter()
        .enumerate()
        .map(|(i, &j)| sim.at(i, j) as f64)
        .sum()
}

/// [`objective`] on a row-major `n x n` f64 buffer.
pub fn objective_f64(sim: &[f64], n: usize, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| sim[i * n + j]).sum()
}

fn to_f64(sim: &Tensor) -> Result<(Vec<f64>, usize)> {
    let (r, c) = sim.dims2()?;
    if r != c {
        return Err(Error::Shape(format!("assignment needs a square matrix, got {r}x{c}")));
    }
    Ok((sim.data().iter().map(|&v| v as f64).collect(), r))
}

fn check_square(sim: &[f64], n: usize) -> Result<()> {
    if sim.len() != n * n {
        return Err(Error::Shape(format!(
            "assignment needs a square matrix, got {} entries for n = {n}",
            sim.len()
        )));
    }
    if sim.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("similarity matrix has non-finite entries".into()));
    }
    Ok(())
}

fn sub_block(sim: &[f64], n: usize, r0: usize, c0: usize, k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k * k);
    for r in r0..r0 + k {
        out.extend_from_slice(&sim[r * n + c0..r * n + c0 + k]);
    }
    out
}

/// Exact maximum-weight perfect matching (linear sum assignment).
///
/// Shortest augmenting paths with Dijkstra-style potentials on the negated
/// similarities; `O(n³)` worst case.
pub fn solve_lsa(sim: &Tensor) -> Result<Assignment> {
    let (v, n) = to_f64(sim)?;
    solve_lsa_f64(&v, n)
}

pub fn solve_lsa_f64(sim: &[f64], n: usize) -> Result<Assignment> {
    check_square(sim, n)?;
    let cost: Vec<f64> = sim.iter().map(|&v| -v).collect();
    let perm = lsa_min_cost(&cost, n);
    let objective = objective_f64(sim, n, &perm);
    Ok(Assignment { perm, objective })
}

/// Minimum-cost assignment on a row-major `n x n` cost buffer.
pub(crate) fn lsa_min_cost(cost: &[f64], n: usize) -> Vec<usize> {
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut col4row = vec![NONE; n];
    let mut row4col = vec![NONE; n];
    let mut path = vec![NONE; n];
    let mut spc = vec![f64::INFINITY; n];
    let mut sr = vec![false; n];
    let mut sc = vec![false; n];
    let mut remaining: Vec<usize> = Vec::with_capacity(n);

    for cur_row in 0..n {
        spc.fill(f64::INFINITY);
        sr.fill(false);
        sc.fill(false);
        remaining.clear();
        remaining.extend(0..n);
        let mut min_val = 0.0f64;
        let mut i = cur_row;
        let sink = loop {
            sr[i] = true;
            let row = &cost[i * n..(i + 1) * n];
            let mut best = NONE;
            let mut lowest = f64::INFINITY;
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - u[i] - v[j];
                if r < spc[j] {
                    path[j] = i;
                    spc[j] = r;
                }
                let better = if best == NONE {
                    true
                } else {
                    let bj = remaining[best];
                    spc[j] < lowest
                        || (spc[j] == lowest
                            && ((row4col[j] == NONE && row4col[bj] != NONE)
                                || ((row4col[j] == NONE) == (row4col[bj] == NONE) && j < bj)))
                };
                if better {
                    lowest = spc[j];
                    best = it;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(best);
            sc[j] = true;
            if row4col[j] == NONE {
                break j;
            }
            i = row4col[j];
        };
        u[cur_row] += min_val;
        for r in 0..n {
            if sr[r] && r != cur_row {
                u[r] += min_val - spc[col4row[r]];
            }
        }
        for c in 0..n {
            if sc[c] {
                v[c] -= min_val - spc[c];
            }
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row4col[j] = r;
            std::mem::swap(&mut col4row[r], &mut j);
            if r == cur_row {
                break;
            }
        }
    }
    col4row
}

/// Greedy zip matching: repeatedly fix the most similar remaining pair
/// `(i, j)` and retire row `i` and column `j`. Ties go to the lowest `i`,
/// then the lowest `j`.
pub fn greedy_zip(sim: &Tensor) -> Result<Assignment> {
    let (v, n) = to_f64(sim)?;
    greedy_zip_f64(&v, n)
}

pub fn greedy_zip_f64(sim: &[f64], n: usize) -> Result<Assignment> {
    check_square(sim, n)?;
    let mut order: Vec<u32> = (0..(n * n) as u32).collect();
    order.sort_unstable_by(|&a, &b| sim[b as usize].total_cmp(&sim[a as usize]).then(a.cmp(&b)));
    let mut perm = vec![usize::MAX; n];
    let mut col_used = vec![false; n];
    let mut left = n;
    for idx in order {
        if left == 0 {
            break;
        }
        let (i, j) = (idx as usize / n, idx as usize % n);
        if perm[i] == usize::MAX && !col_used[j] {
            perm[i] = j;
            col_used[j] = true;
            left -= 1;
        }
    }
    let objective = objective_f64(sim, n, &perm);
    Ok(Assignment { perm, objective })
}

fn check_groups(sim: &[f64], n: usize, groups: usize, size: usize) -> Result<()> {
    check_square(sim, n)?;
    if groups == 0 || size == 0 || groups * size != n {
        return Err(Error::Shape(format!(
            "{n} units cannot be split into {groups} groups of {size}"
        )));
    }
    Ok(())
}

/// Group alignment: exact LSA inside every pair of groups, then an LSA over
/// the groups on the mean matched similarity of each pair. Unmatched group
/// pairs are discarded. The composition is optimal among all
/// group-respecting permutations.
pub fn group_align(sim: &Tensor, groups: usize, size: usize) -> Result<GroupAssignment> {
    let (v, n) = to_f64(sim)?;
    group_align_f64(&v, n, groups, size)
}

pub fn group_align_f64(
    sim: &[f64],
    n: usize,
    groups: usize,
    size: usize,
) -> Result<GroupAssignment> {
    check_groups(sim, n, groups, size)?;
    let mut inner = vec![Vec::new(); groups * groups];
    let mut cost = Vec::with_capacity(groups * groups);
    for a in 0..groups {
        for b in 0..groups {
            let asg = solve_lsa_f64(&sub_block(sim, n, a * size, b * size, size), size)?;
            cost.push(-asg.objective / size as f64);
            inner[a * groups + b] = asg.perm;
        }
    }
    let group_perm = lsa_min_cost(&cost, groups);
    let inner_perms = group_perm
        .iter()
        .enumerate()
        .map(|(a, &b)| std::mem::take(&mut inner[a * groups + b]))
        .collect();
    Ok(finish_group(sim, n, group_perm, inner_perms))
}

/// Group zip: greedy zip inside each group pair chosen by `grouping`.
pub fn group_zip(
    sim: &Tensor,
    groups: usize,
    size: usize,
    grouping: &[usize],
) -> Result<GroupAssignment> {
    let (v, n) = to_f64(sim)?;
    group_zip_f64(&v, n, groups, size, grouping)
}

pub fn group_zip_f64(
    sim: &[f64],
    n: usize,
    groups: usize,
    size: usize,
    grouping: &[usize],
) -> Result<GroupAssignment> {
    check_groups(sim, n, groups, size)?;
    if grouping.len() != groups || !is_bijection(grouping) {
        return Err(Error::Permutation(format!(
            "grouping {grouping:?} is not a bijection on {groups} groups"
        )));
    }
    let inner_perms = grouping
        .iter()
        .enumerate()
        .map(|(a, &b)| {
            greedy_zip_f64(&sub_block(sim, n, a * size, b * size, size), size).map(|z| z.perm)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(finish_group(sim, n, grouping.to_vec(), inner_perms))
}

fn finish_group(
    sim: &[f64],
    n: usize,
    group_perm: Vec<usize>,
    inner_perms: Vec<Vec<usize>>,
) -> GroupAssignment {
    let mut out = GroupAssignment {
        group_perm,
        inner_perms,
        objective: 0.0,
    };
    out.objective = objective_f64(sim, n, &out.unit_perm());
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(n, n, (0..n * n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn identity_dominant() {
        let asg = solve_lsa(&Tensor::identity(5)).unwrap();
        assert_eq!(asg.perm, vec![0, 1, 2, 3, 4]);
        assert_eq!(asg.objective, 5.0);
        assert_eq!(greedy_zip(&Tensor::identity(5)).unwrap().perm, asg.perm);
    }

    #[test]
    fn forced_swap() {
        let s = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let asg = solve_lsa(&s).unwrap();
        assert_eq!(asg.perm, vec![1, 0]);
        assert_eq!(asg.objective, 2.0);
    }

    #[test]
    fn greedy_is_worse_than_lsa_on_the_trap() {
        let s = Tensor::from_rows(&[[10.0, 9.0, 0.0], [9.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).unwrap();
        let g = greedy_zip(&s).unwrap();
        assert_eq!(g.perm, vec![0, 1, 2]);
        assert_eq!(g.objective, 11.0);
        let l = solve_lsa(&s).unwrap();
        assert_eq!(l.objective, 19.0);
    }

    #[test]
    fn rejects_non_square() {
        let s = Tensor::zeros(&[2, 3]);
        assert!(matches!(solve_lsa(&s), Err(Error::Shape(_))));
        assert!(matches!(greedy_zip(&s), Err(Error::Shape(_))));
        assert!(group_align(&Tensor::zeros(&[6, 6]), 4, 2).is_err());
        assert!(group_zip(&Tensor::zeros(&[4, 4]), 2, 2, &[0, 0]).is_err());
    }

    #[test]
    fn ungrouped_degenerate_cases() {
        let s = random(6, 3);
        let ga = group_align(&s, 1, 6).unwrap();
        let l = solve_lsa(&s).unwrap();
        assert_eq!(ga.unit_perm(), l.perm);
        assert_eq!(ga.group_perm, vec![0]);
        let gz = group_zip(&s, 1, 6, &[0]).unwrap();
        assert_eq!(gz.unit_perm(), greedy_zip(&s).unwrap().perm);
    }

    #[test]
    fn block_diagonal_groups_stay_put() {
        let (g, k) = (3, 4);
        let mut s = random(g * k, 8).map(|v| v * 0.1);
        for a in 0..g {
            for i in 0..k {
                s.set(a * k + i, a * k + i, 1.0);
            }
        }
        let ga = group_align(&s, g, k).unwrap();
        assert_eq!(ga.group_perm, vec![0, 1, 2]);
        assert_eq!(ga.unit_perm(), (0..12).collect::<Vec<_>>());
        let gz = group_zip(&s, g, k, &ga.group_perm).unwrap();
        assert_eq!(gz.unit_perm(), (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn grouped_objectives_are_bounded() {
        for seed in 0..20 {
            let s = random(12, 100 + seed);
            let ga = group_align(&s, 3, 4).unwrap();
            let gz = group_zip(&s, 3, 4, &ga.group_perm).unwrap();
            let l = solve_lsa(&s).unwrap();
            assert!(ga.objective <= l.objective + 1e-9);
            for a in 0..3 {
                let b = ga.group_perm[a];
                let block = s.block(a * 4, b * 4, 4, 4).unwrap();
                let zip_pair = objective(&block, &gz.inner_perms[a]);
                let lsa_pair = objective(&block, &ga.inner_perms[a]);
                assert!(zip_pair <= lsa_pair + 1e-9);
            }
        }
    }

    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                out.push(q);
            }
        }
        out
    }

    #[test]
    fn lsa_matches_factorial_brute_force() {
        for n in 1..=7 {
            let all = permutations(n);
            for seed in 0..4 {
                let s = random(n, 1000 * n as u64 + seed);
                let best = all.iter().map(|p| objective(&s, p)).fold(f64::MIN, f64::max);
                let asg = solve_lsa(&s).unwrap();
                assert!((asg.objective - best).abs() < 1e-9, "n={n} seed={seed}");
            }
        }
    }

    #[test]
    fn group_align_matches_exhaustive_grouped_search() {
        for g in 1..=3 {
            for k in 1..=3 {
                let gp = permutations(g);
                let kp = permutations(k);
                for seed in 0..3 {
                    let s = random(g * k, 7000 + 100 * (g * 3 + k) as u64 + seed);
                    // every group-respecting permutation is a group perm plus one inner perm per group
                    let mut best = f64::MIN;
                    for outer in &gp {
                        let mut total = 0.0;
                        for (a, &b) in outer.iter().enumerate() {
                            let block = s.block(a * k, b * k, k, k).unwrap();
                            total += kp
                                .iter()
                                .map(|p| objective(&block, p))
                                .fold(f64::MIN, f64::max);
                        }
                        best = best.max(total);
                    }
                    let ga = group_align(&s, g, k).unwrap();
                    assert!((ga.objective - best).abs() < 1e-6, "g={g} k={k}");
                }
            }
        }
    }

    #[test]
    fn greedy_never_beats_lsa() {
        for seed in 0..100 {
            let s = random(2 + (seed as usize % 30), 500 + seed);
            assert!(greedy_zip(&s).unwrap().objective <= solve_lsa(&s).unwrap().objective + 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn solvers_return_bijections(n in 1usize..24, seed in 0u64..1000) {
            let s = random(n, seed);
            let l = solve_lsa(&s).unwrap();
            let g = greedy_zip(&s).unwrap();
            prop_assert!(is_bijection(&l.perm));
            prop_assert!(is_bijection(&g.perm));
            prop_assert!(g.objective <= l.objective + 1e-9);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let mut p: Vec<usize> = (0..n).collect();
                rand::seq::SliceRandom::shuffle(p.as_mut_slice(), &mut rng);
                prop_assert!(objective(&s, &p) <= l.objective + 1e-9);
            }
        }
    }
}
