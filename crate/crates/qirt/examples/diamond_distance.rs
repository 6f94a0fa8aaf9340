//! Diamond-norm distances between channels, measurements, and instruments.
//!
//! Computes the exact diamond distance between the qubit identity and the
//! fully depolarizing channel (known value: 3/2), cross-checks it with the
//! sampled lower-bound oracle, and then compares two instruments through
//! their flag channels.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qirt::distances::{diamond_distance, diamond_lower_bound, instrument_distance};
use qirt::qobjects::{pauli_example_instrument, CpMap, Instrument};

fn main() -> qirt::Result<()> {
    let id = CpMap::identity(2);
    let dep = CpMap::depolarizing(2, 0.0)?;

    let exact = diamond_distance(&id, &dep)?;
    println!("D(identity, fully-depolarizing) = {:.9}   (exact value 1.5)", exact.value);

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
    let lower = diamond_lower_bound(&id, &dep, 200, &mut rng)?;
    println!("sampled lower bound with 200 draws = {:.9}", lower.value);
    assert!(lower.value <= exact.value + 1e-7);

    // Instruments are compared through their flag channels, which retain the
    // classical outcome alongside the quantum output.  Here: the example
    // instrument vs applying its induced channel and rolling a uniform
    // four-sided die for the outcome.
    let a = pauli_example_instrument();
    let induced = a.induced_channel();
    let uniform_branch = CpMap::from_choi(2, 2, induced.choi.scale_re(0.25))?;
    let b = Instrument::new(vec![uniform_branch; 4], None)?;
    let d = instrument_distance(&a, &b)?;
    println!("D(example instrument, induced channel + uniform outcome) = {:.9}", d.value);
    Ok(())
}
