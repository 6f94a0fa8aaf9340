//! Randomized monotonicity checks for every resource theory.
//!
//! For each theory, the harness draws random instrument sets and random free
//! supermaps of that theory, applies the supermap to both sets, and verifies
//! that the set distance never increases beyond numerical tolerance.

use qirt::transforms::{monotonicity_harness, TheoryTag};

fn main() -> qirt::Result<()> {
    let trials = 3;
    for theory in TheoryTag::all() {
        let report = monotonicity_harness(theory, trials, 0x5EED)?;
        println!(
            "{:<5} {} trials, max violation {:+.3e}, passed: {}",
            theory.name(),
            report.trials,
            report.max_violation,
            report.passed(1e-7),
        );
        assert!(report.passed(1e-7));
    }
    Ok(())
}
