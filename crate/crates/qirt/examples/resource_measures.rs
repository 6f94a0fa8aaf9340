//! Robustness, weight, and distance-based resource measures of an instrument
//! set against a free class.
//!
//! Measures the four-outcome Pauli-conjugation instrument against the
//! entanglement-breaking free set (PPT cone, exact for qubit outputs) and
//! shows the mixture bound R <= 2r/(1+r) linking the distance measure to the
//! generalized robustness.

use qirt::measures::{
    distance_measure, mixture_distance_bound, robustness, weight, FreeSetSpec,
};
use qirt::qobjects::{pauli_example_instrument, InstrumentSet};

fn main() -> qirt::Result<()> {
    let set = InstrumentSet::singleton(pauli_example_instrument());
    let spec = FreeSetSpec::eb_ppt();

    let r = robustness(&set, &spec)?;
    println!("robustness  r = {:.6}   ({:?})", r.value, r.bound_direction);

    let w = weight(&set, &spec)?;
    if w.value.is_finite() {
        println!("weight      w = {:.6}", w.value);
    } else {
        println!("weight      w = inf (no free component)");
    }

    let d = distance_measure(&set, &spec)?;
    println!("distance    R = {:.6}", d.value);

    let bound = mixture_distance_bound(r.value);
    println!("mixture bound: R <= 2r/(1+r) = {:.6}", bound);
    assert!(d.value <= bound + 1e-6);
    Ok(())
}
