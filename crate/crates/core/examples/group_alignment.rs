//! Layers split into normalised groups only admit permutations that move
//! whole groups and reorder units inside a group. Group alignment solves
//! the outer assignment on mean block similarity and the inner ones per
//! matched block.
//!
//!     cargo run --release --example group_alignment

use dualmerge::assignment::{group_align, group_zip, solve_lsa};
use dualmerge::matcher::{group_perm_of, match_mudsc, Flavor, MatchConfig, MatchMode};
use dualmerge::merger::apply_perms;
use dualmerge::model::{build_model, capture_probe, permutation_spec, ModelSpec};
use dualmerge::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> dualmerge::Result<()> {
    // 6 units in 3 groups of 2: the free optimum splits groups apart
    #[rustfmt::skip]
    let sim = Tensor::matrix(6, 6, vec![
        0.4, 1.0, 0.5, 0.4, 0.6, 1.0,
        0.9, 0.5, 0.8, 0.5, 0.5, 0.8,
        0.4, 0.7, 0.7, 0.9, 0.1, 0.7,
        0.9, 1.0, 0.0, 0.9, 1.0, 1.0,
        0.1, 1.0, 0.9, 0.8, 0.5, 0.2,
        0.8, 0.9, 0.3, 0.5, 0.4, 0.9,
    ])?;
    let free = solve_lsa(&sim)?;
    let grouped = group_align(&sim, 3, 2)?;
    let zipped = group_zip(&sim, 3, 2, &grouped.group_perm)?;
    println!("unconstrained   {:?} objective {:.2}", free.perm, free.objective);
    println!("group align     {:?} objective {:.2} groups {:?}", grouped.unit_perm(), grouped.objective, grouped.group_perm);
    println!("group zip       {:?} objective {:.2}", zipped.unit_perm(), zipped.objective);

    let spec: ModelSpec = "12-32g4-24g3-16-5".parse()?;
    let a = build_model(&spec, 3)?;
    let pspec = permutation_spec(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
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
                let mut p = Vec::with_capacity(g.size);
                for o in outer {
                    let mut inner: Vec<usize> = (0..b.size).collect();
                    inner.shuffle(&mut rng);
                    p.extend(inner.into_iter().map(|t| o * b.size + t));
                }
                p
            }
        })
        .collect();
    let b = apply_perms(&a, &pspec, &pi)?;
    let x = Tensor::matrix(256, 12, (0..256 * 12).map(|_| rng.gen_range(-1.0..1.0)).collect())?;
    let (pa, pb) = (capture_probe(&a, &x)?, capture_probe(&b, &x)?);
    let o = match_mudsc(&[&a, &b], &[&pa, &pb], &MatchConfig::new(MatchMode::Mudsc, Flavor::Align, 0.5))?;
    for (l, g) in pspec.groups.iter().enumerate() {
        let got = o.perms.get(l, 1)?;
        let exact = got.iter().enumerate().all(|(j, &u)| pi[l][u] == j);
        let groups = g.block.and_then(|blk| group_perm_of(got, blk));
        println!("layer {l}: recovered {exact}, group order {groups:?}");
    }
    Ok(())
}
