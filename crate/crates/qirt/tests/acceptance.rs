//! End-to-end acceptance suite: one test per criterion, each printing a
//! single PASS line with its runtime when it succeeds.  Tolerances are pinned
//! in the assertions.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qirt::classify::{
    breaks_incompatibility, is_entanglement_breaking, is_parallel_compatible,
    is_traditionally_compatible, is_weak_entanglement_breaking, joint_measurement, Certificate,
    WitnessFamily,
};
use qirt::distances::{diamond_distance, diamond_lower_bound, set_distance};
use qirt::linalg::{ops, ComplexMatrix};
use qirt::measures::{
    compact_qubit_witnesses, distance_measure, extended_measure, hierarchy_report,
    mixture_distance_bound, robustness, weight, FreeSetSpec,
};
use qirt::qobjects::{
    pauli_example_instrument, random, CpMap, Instrument, InstrumentSet, Povm,
};
use qirt::transforms::{instrument_post_process, monotonicity_harness, TheoryTag};

const SEED: u64 = 0x5EED;

fn report(n: usize, name: &str, started: Instant, budget_s: f64) {
    let elapsed = started.elapsed().as_secs_f64();
    println!("criterion {n} ({name}): PASS in {elapsed:.2}s (budget {budget_s:.0}s)");
    assert!(elapsed < budget_s, "criterion {n} exceeded its {budget_s}s budget: {elapsed:.2}s");
}

fn proj0() -> ComplexMatrix {
    ComplexMatrix::proj(&ComplexMatrix::ket(2, 0))
}

fn proj1() -> ComplexMatrix {
    ComplexMatrix::proj(&ComplexMatrix::ket(2, 1))
}

fn proj_plus() -> ComplexMatrix {
    ComplexMatrix::proj(&ops::plus_ket())
}

fn proj_minus() -> ComplexMatrix {
    ComplexMatrix::proj(&ops::minus_ket())
}

#[test]
fn criterion_01_eb_threshold_bisection() {
    let started = Instant::now();
    let is_eb = |t: f64| {
        let inst = Instrument::from_channel(CpMap::depolarizing(2, t).unwrap());
        is_entanglement_breaking(&inst).is_member()
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..20 {
        let mid = 0.5 * (lo + hi);
        if is_eb(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let boundary = 0.5 * (lo + hi);
    assert!(
        (boundary - 1.0 / 3.0).abs() <= 1e-4,
        "bisection boundary {boundary} should bracket 1/3 within 1e-4"
    );
    report(1, "EB threshold bisection at 1/3", started, 5.0);
}

#[test]
fn criterion_02_example_instrument_eb_vs_web() {
    let started = Instant::now();
    let inst = pauli_example_instrument();
    let eb = is_entanglement_breaking(&inst);
    assert!(eb.is_non_member() && eb.margin >= 1e-6, "EB NonMember margin {}", eb.margin);
    let web = is_weak_entanglement_breaking(&inst);
    assert!(web.is_member(), "WEB must be Member");
    // The induced channel lies exactly on the EB boundary, so the
    // eigenvalue margin is 0; the constructive measure-prepare decomposition
    // certifies membership with margin 1/3.
    let margin = qirt::cli::web_decomposition_margin(&inst).unwrap();
    assert!(margin >= 1e-6, "decomposition margin {margin}");
    report(2, "example instrument EB NonMember / WEB Member", started, 5.0);
}

#[test]
fn criterion_03_heisenberg_measurements_and_incompatible_pair() {
    let started = Instant::now();
    let inst = pauli_example_instrument();
    let ia = inst.heisenberg_measurement(&Povm::sharp_z()).unwrap();
    let ib = inst.heisenberg_measurement(&Povm::sharp_x()).unwrap();
    let half = 0.5;
    let sixth = 1.0 / 6.0;
    // Effects indexed x-major over (instrument outcome x, sharp outcome y).
    let expected_a = [
        (half, proj0()),
        (half, proj1()),
        (sixth, proj1()),
        (sixth, proj0()),
        (sixth, proj1()),
        (sixth, proj0()),
        (sixth, proj0()),
        (sixth, proj1()),
    ];
    let expected_b = [
        (half, proj_plus()),
        (half, proj_minus()),
        (sixth, proj_plus()),
        (sixth, proj_minus()),
        (sixth, proj_minus()),
        (sixth, proj_plus()),
        (sixth, proj_minus()),
        (sixth, proj_plus()),
    ];
    assert_eq!(ia.elements.len(), 8);
    assert_eq!(ib.elements.len(), 8);
    for (elem, (c, p)) in ia.elements.iter().zip(&expected_a) {
        assert!(elem.max_abs_diff(&p.scale_re(*c)) <= 1e-10);
    }
    for (elem, (c, p)) in ib.elements.iter().zip(&expected_b) {
        assert!(elem.max_abs_diff(&p.scale_re(*c)) <= 1e-10);
    }
    // Outcome relabeling collecting {(1,1),(4,1),(2,2),(3,2)} into z = 1.
    let to_first = [true, false, false, true, false, true, true, false];
    let nu: Vec<Vec<f64>> = to_first
        .iter()
        .map(|&f| if f { vec![1.0, 0.0] } else { vec![0.0, 1.0] })
        .collect();
    let m = ia.post_process(&nu).unwrap();
    let n = ib.post_process(&nu).unwrap();
    assert!(m.elements[0].max_abs_diff(&proj0()) <= 1e-10, "M must be the sharp z PVM");
    let n1 = proj_plus().scale_re(2.0 / 3.0).add(&proj_minus().scale_re(1.0 / 3.0));
    assert!(n.elements[0].max_abs_diff(&n1) <= 1e-10);
    let pair = joint_measurement(&[m, n]).unwrap();
    assert!(pair.is_non_member() && pair.margin >= 1e-6, "dual margin {}", pair.margin);
    assert!(matches!(pair.certificate, Some(Certificate::DualWitnesses { .. })));
    let fam = WitnessFamily::default_qubit().unwrap();
    let ibk = breaks_incompatibility(&inst, &fam).unwrap();
    assert!(ibk.is_non_member());
    report(3, "Heisenberg table + incompatible relabeled pair", started, 10.0);
}

#[test]
fn criterion_04_depolarizing_threshold_consistency() {
    let started = Instant::now();
    let noisy_pair = |t: f64| {
        let dep = Instrument::from_channel(CpMap::depolarizing(2, t).unwrap());
        let z = dep.heisenberg_measurement(&Povm::sharp_z()).unwrap();
        let x = dep.heisenberg_measurement(&Povm::sharp_x()).unwrap();
        joint_measurement(&[z, x]).unwrap()
    };
    let inside = noisy_pair(2.0 / 3.0);
    assert!(inside.is_member() && inside.margin >= 1e-7, "t=2/3 margin {}", inside.margin);
    let outside = noisy_pair(0.72);
    assert!(outside.is_non_member(), "t=0.72 is past the 1/sqrt(2) boundary");
    report(4, "depolarizing joint-measurability thresholds", started, 10.0);
}

#[test]
fn criterion_05_diamond_norm_cross_validation() {
    let started = Instant::now();
    let d = diamond_distance(&CpMap::identity(2), &CpMap::depolarizing(2, 0.0).unwrap()).unwrap();
    assert!((d.value - 1.5).abs() <= 1e-6, "identity-vs-depolarizing distance {}", d.value);
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    for _ in 0..20 {
        let a = random::channel(&mut rng, 2, 2, 2);
        let b = random::channel(&mut rng, 2, 2, 2);
        let sdp = diamond_distance(&a, &b).unwrap().value;
        let lb = diamond_lower_bound(&a, &b, 60, &mut rng).unwrap().value;
        assert!(lb <= sdp + 1e-7, "lower bound {lb} above SDP value {sdp}");
        assert!(lb >= 0.9 * sdp, "best sampled {lb} below 0.9 x {sdp}");
    }
    report(5, "diamond norm vs sampled oracle on 20 pairs", started, 60.0);
}

fn random_set(rng: &mut ChaCha8Rng, k: usize, n_outcomes: usize) -> InstrumentSet {
    InstrumentSet::new((0..k).map(|_| random::instrument(rng, 2, 2, n_outcomes)).collect())
        .unwrap()
}

fn mix_sets(a: &InstrumentSet, b: &InstrumentSet, lambda: f64) -> InstrumentSet {
    let instruments = a
        .instruments
        .iter()
        .zip(&b.instruments)
        .map(|(x, y)| {
            let branches = x
                .branches
                .iter()
                .zip(&y.branches)
                .map(|(p, q)| {
                    CpMap::from_choi_unchecked(
                        p.dim_in,
                        p.dim_out,
                        p.choi.scale_re(lambda).add(&q.choi.scale_re(1.0 - lambda)),
                    )
                })
                .collect();
            Instrument::new(branches, None).unwrap()
        })
        .collect();
    InstrumentSet::new(instruments).unwrap()
}

#[test]
fn criterion_06_contractivity_and_joint_convexity() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut max_violation = f64::NEG_INFINITY;
    for _ in 0..100 {
        let a = random_set(&mut rng, 2, 2);
        let b = random_set(&mut rng, 2, 2);
        // One processor family per set member, shared between the two sets.
        let processors: Vec<Vec<Instrument>> = (0..2)
            .map(|_| (0..2).map(|_| random::instrument(&mut rng, 2, 2, 2)).collect())
            .collect();
        let before = set_distance(&a, &b).unwrap().value;
        let after = set_distance(
            &instrument_post_process(&a, &processors).unwrap(),
            &instrument_post_process(&b, &processors).unwrap(),
        )
        .unwrap()
        .value;
        max_violation = max_violation.max(after - before);
    }
    assert!(max_violation <= 1e-7, "post-processing increase {max_violation:.3e}");

    let mut convexity_violation = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (a1, b1) = (random_set(&mut rng, 2, 2), random_set(&mut rng, 2, 2));
        let (a2, b2) = (random_set(&mut rng, 2, 2), random_set(&mut rng, 2, 2));
        let lambda: f64 = rand::Rng::gen(&mut rng);
        let lhs = set_distance(&mix_sets(&a1, &a2, lambda), &mix_sets(&b1, &b2, lambda))
            .unwrap()
            .value;
        let rhs = lambda * set_distance(&a1, &b1).unwrap().value
            + (1.0 - lambda) * set_distance(&a2, &b2).unwrap().value;
        convexity_violation = convexity_violation.max(lhs - rhs);
    }
    assert!(convexity_violation <= 1e-7, "joint-convexity violation {convexity_violation:.3e}");
    report(6, "contractivity (100 pairs) + joint convexity (50 draws)", started, 300.0);
}

#[test]
fn criterion_07_bound_chain_against_tc() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let spec = FreeSetSpec::tc();
    for trial in 0..20 {
        // Pairs of instruments: traditional compatibility of a singleton is
        // trivial, so the chain is only informative on sets of two or more.
        let set = random_set(&mut rng, 2, 2);
        let rext = extended_measure(&set, &spec, 2).unwrap().value;
        let rdist = distance_measure(&set, &spec).unwrap().value;
        let rob = robustness(&set, &spec).unwrap().value;
        let wgt = weight(&set, &spec).unwrap().value;
        let cap = mixture_distance_bound(rob).min(mixture_distance_bound(wgt));
        assert!(rext <= rdist + 1e-6, "trial {trial}: extended {rext} > distance {rdist}");
        assert!(rdist <= cap + 1e-6, "trial {trial}: distance {rdist} > mixture cap {cap}");
        assert!(rdist <= 2.0 + 1e-6, "trial {trial}: distance above the diamond-norm cap of 2");
    }
    report(7, "extended <= distance <= mixture bounds on 20 pairs", started, 300.0);
}

#[test]
fn criterion_08_hierarchy_chains() {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let witnesses = compact_qubit_witnesses().unwrap();
    for trial in 0..20 {
        let inst = random::instrument(&mut rng, 2, 2, 2);
        let h = hierarchy_report(&inst, &witnesses).unwrap();
        assert!(h.r_ip >= h.r_ep - 1e-6, "trial {trial}: r_ip {} < r_ep {}", h.r_ip, h.r_ep);
        assert!(h.r_ep >= h.r_sep - 1e-6, "trial {trial}: r_ep {} < r_sep {}", h.r_ep, h.r_sep);
        assert!(
            h.r_smip <= h.r_sep + 1e-6,
            "trial {trial}: witness-relaxed r_smip {} above r_sep {}",
            h.r_smip,
            h.r_sep
        );
        assert!(h.chain_ok, "trial {trial}: chain violated by {:.3e}", h.max_violation);
    }
    report(8, "measure hierarchy on 20 random instruments", started, 600.0);
}

#[test]
fn criterion_09_monotonicity_harness_all_theories() {
    let started = Instant::now();
    for theory in TheoryTag::all() {
        let h = monotonicity_harness(theory, 25, SEED).unwrap();
        assert!(
            h.passed(1e-7),
            "theory {}: max distance increase {:.3e}",
            theory.name(),
            h.max_violation
        );
    }
    report(9, "25 monotonicity trials x 7 theories", started, 600.0);
}

#[test]
fn criterion_10_no_cloning_and_compatibility_sanity() {
    let started = Instant::now();
    let id = Instrument::from_channel(CpMap::identity(2));
    let v = is_parallel_compatible(&[id.clone(), id.clone()]).unwrap();
    assert!(v.is_non_member(), "two identity channels cannot be parallel compatible");
    assert!(matches!(v.certificate, Some(Certificate::DualWitnesses { .. })));
    // Different induced channels violate weak compatibility, so traditional
    // compatibility must be rejected as well.
    let dep = Instrument::from_channel(CpMap::depolarizing(2, 0.0).unwrap());
    let tc = is_traditionally_compatible(&[id, dep]).unwrap();
    assert!(tc.is_non_member(), "weak-compatibility violators must fail TC");
    report(10, "no-cloning + TC implies weak compatibility", started, 5.0);
}
