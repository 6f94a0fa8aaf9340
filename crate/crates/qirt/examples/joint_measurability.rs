//! Joint measurability of noisy sharp qubit measurements.
//!
//! The smeared sigma-z / sigma-x pair (1-t)/2 I + t P is jointly measurable
//! exactly for t <= 1/sqrt(2).  The feasibility SDP certifies membership with
//! an explicit joint POVM and non-membership with a dual witness.

use qirt::classify::{joint_measurement, Certificate};
use qirt::qobjects::Povm;

fn noisy(p: &Povm, t: f64) -> Povm {
    let id = qirt::linalg::ComplexMatrix::identity(2);
    let elements = p
        .elements
        .iter()
        .map(|e| e.scale_re(t).add(&id.scale_re((1.0 - t) / 2.0)))
        .collect();
    Povm::new(elements, None).expect("valid POVM")
}

fn main() -> qirt::Result<()> {
    for t in [0.5, 0.70, 1.0 / std::f64::consts::SQRT_2, 0.72, 0.9] {
        let z = noisy(&Povm::sharp_z(), t);
        let x = noisy(&Povm::sharp_x(), t);
        let v = joint_measurement(&[z, x])?;
        let kind = match v.certificate {
            Some(Certificate::JointPovm { .. }) => "joint POVM",
            Some(Certificate::DualWitnesses { .. }) => "dual witness",
            _ => "none",
        };
        println!("t = {t:.4}: {:?}  (margin {:.2e}, certificate: {kind})", v.status, v.margin);
    }
    Ok(())
}
