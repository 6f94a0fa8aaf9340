//! Free-set membership classification of a single instrument.
//!
//! The four-outcome Pauli-conjugation instrument is the standard separating
//! example: every branch is entangling (so it is not entanglement-breaking),
//! yet its induced channel — the depolarizing channel at t = 1/3 — is
//! entanglement-breaking, so the instrument is weakly entanglement-breaking.
//! It does not break incompatibility: measuring in the Heisenberg picture
//! preserves an incompatible pair.

use qirt::classify::{
    breaks_incompatibility, is_entanglement_breaking, is_trash_and_prepare,
    is_weak_entanglement_breaking, WitnessFamily,
};
use qirt::qobjects::pauli_example_instrument;

fn main() -> qirt::Result<()> {
    let inst = pauli_example_instrument();

    let tp = is_trash_and_prepare(&inst);
    println!("trash-and-prepare:          {:?}  margin {:.3e}", tp.status, tp.margin);

    let eb = is_entanglement_breaking(&inst);
    println!("entanglement-breaking:      {:?}  margin {:.3e}", eb.status, eb.margin);
    assert!(eb.is_non_member());

    let web = is_weak_entanglement_breaking(&inst);
    println!("weakly entanglement-break.: {:?}  margin {:.3e}", web.status, web.margin);
    assert!(web.is_member());

    let fam = WitnessFamily::default_qubit()?;
    let ib = breaks_incompatibility(&inst, &fam)?;
    println!("incompatibility-breaking:   {:?}  margin {:.3e}", ib.status, ib.margin);
    assert!(ib.is_non_member());
    Ok(())
}
