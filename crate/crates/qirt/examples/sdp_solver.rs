//! Direct use of the dense SDP solver through the builder interface.
//!
//! Solves min mu subject to mu*I - A >= 0 for a Hermitian A, i.e. computes
//! the maximum eigenvalue of A, and compares it against the eigensolver.

use qirt::linalg::{ops, ComplexMatrix};
use qirt::sdp::{MatExpr, SdpBuilder, SdpOptions};

fn main() -> qirt::Result<()> {
    // A = 0.3 sigma_x + 0.5 sigma_z + 0.2 I, max eigenvalue 0.2 + sqrt(0.34).
    let a = ops::sigma_x()
        .scale_re(0.3)
        .add(&ops::sigma_z().scale_re(0.5))
        .add(&ComplexMatrix::identity(2).scale_re(0.2));

    let mut builder = SdpBuilder::new();
    let mu = builder.free_scalar();
    let expr = MatExpr::zero(2)
        .push_scalar(mu, ComplexMatrix::identity(2))
        .sub_const(&a);
    builder.add_psd_ge_zero(&expr);
    builder.minimize(vec![], vec![(mu, 1.0)]);
    let sol = builder.solve(&SdpOptions::default())?;

    let eig_max = a.hermitian_eigs()?.0[0];
    println!("SDP optimum      = {:.10}", sol.objective);
    println!("max eigenvalue   = {:.10}", eig_max);
    println!("duality gap      = {:.2e}", sol.gap);
    assert!((sol.objective - eig_max).abs() <= 1e-7);
    Ok(())
}
