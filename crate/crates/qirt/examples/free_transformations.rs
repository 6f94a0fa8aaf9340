//! Free transformations of instrument sets.
//!
//! 1. Reachability: the canonical trash-and-prepare supermap maps any input
//!    set to any target set of trash-and-prepare instruments, so every free
//!    set of that theory is reachable from anything.
//! 2. Monotonicity: applying one free supermap to both sets in a distance
//!    comparison can only shrink the set distance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qirt::distances::set_distance;
use qirt::transforms::{canonical_tp_spec, random_tp_set, tp_free_transform};

fn main() -> qirt::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let input = random_tp_set(&mut rng, 2, 2, 2);
    let target = random_tp_set(&mut rng, 2, 2, 2);

    let spec = canonical_tp_spec(&input, &target)?;
    let reached = tp_free_transform(&spec, &input)?;
    let err: f64 = reached
        .instruments
        .iter()
        .zip(&target.instruments)
        .flat_map(|(a, b)| a.branches.iter().zip(&b.branches))
        .map(|(x, y)| x.choi.max_abs_diff(&y.choi))
        .fold(0.0, f64::max)
    ;
    println!("canonical supermap reaches the target set, max Choi error = {err:.2e}");
    assert!(err <= 1e-8);

    let other = random_tp_set(&mut rng, 2, 2, 2);
    let before = set_distance(&input, &other)?.value;
    let after = set_distance(
        &tp_free_transform(&spec, &input)?,
        &tp_free_transform(&spec, &other)?,
    )?
    .value;
    println!("set distance before = {before:.6}, after the same supermap = {after:.6}");
    assert!(after <= before + 1e-7);
    Ok(())
}
