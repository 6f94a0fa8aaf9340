//! Membership tests for the free-object classes of instruments, with
//! certificates and honest `Inconclusive` verdicts.
//!
//! Feasibility questions are decided through "maximum slack" semidefinite
//! programs: maximize t such that the sought object shifted by t·I satisfies
//! the defining linear constraints. A strictly positive optimum certifies
//! membership with an interior point, a strictly negative optimum certifies
//! infeasibility through the dual multipliers, and values within the
//! borderline band (1e-6) are reported as `Inconclusive` rather than forced
//! either way. Where a closed-form construction exists (commuting
//! measurements, identical instruments, trash-and-prepare products) it is
//! tried first, which also settles boundary cases the slack program cannot.

use crate::linalg::ComplexMatrix;
use crate::qobjects::{Instrument, Povm};
use crate::sdp::{LinMap, LinStep, MatExpr, SdpBuilder, SdpOptions};
use crate::{QirtError, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Definitive verdicts carry at least this much margin.
pub const MIN_MARGIN: f64 = 1e-8;
/// Slack programs within this band of zero are inconclusive.
pub const BORDERLINE: f64 = 1e-6;
/// Entrywise tolerance for exact linear membership tests.
pub const ENTRYWISE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerdictStatus {
    Member,
    NonMember,
    Inconclusive,
}

/// Which decision procedure produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relaxation {
    /// The test is exact for this input class.
    Exact,
    /// Positive-partial-transpose necessary condition only.
    PptRelaxation,
    /// Verified against a finite witness family (evidence, not proof, for
    /// Member; proof for NonMember).
    WitnessFamily,
}

/// Supporting evidence attached to a verdict.
#[derive(Debug, Clone)]
pub enum Certificate {
    Note(String),
    /// Explicit joint measurement over the product outcome grid.
    JointPovm { outcome_shape: Vec<usize>, elements: Vec<ComplexMatrix> },
    /// Explicit joint instrument branch Choi matrices.
    JointChois { outcome_shape: Vec<usize>, chois: Vec<ComplexMatrix> },
    /// Dual multipliers of the marginal constraints witnessing infeasibility.
    DualWitnesses { label: String, operators: Vec<ComplexMatrix> },
    /// Per-witness-set outcomes (label, slack margin).
    PerWitnessSet(Vec<(String, f64)>),
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub margin: f64,
    pub certificate: Option<Certificate>,
    pub relaxation: Relaxation,
}

impl Verdict {
    pub fn member(margin: f64, relaxation: Relaxation, certificate: Option<Certificate>) -> Self {
        Self { status: VerdictStatus::Member, margin: margin.max(MIN_MARGIN), certificate, relaxation }
    }

    pub fn non_member(margin: f64, relaxation: Relaxation, certificate: Option<Certificate>) -> Self {
        Self {
            status: VerdictStatus::NonMember,
            margin: margin.max(MIN_MARGIN),
            certificate,
            relaxation,
        }
    }

    pub fn inconclusive(relaxation: Relaxation, note: &str) -> Self {
        Self {
            status: VerdictStatus::Inconclusive,
            margin: 0.0,
            certificate: Some(Certificate::Note(note.into())),
            relaxation,
        }
    }

    pub fn is_member(&self) -> bool {
        self.status == VerdictStatus::Member
    }

    pub fn is_non_member(&self) -> bool {
        self.status == VerdictStatus::NonMember
    }
}

// ---------------------------------------------------------------------------
// Trash-and-prepare and weak compatibility (entrywise linear tests)
// ---------------------------------------------------------------------------

/// Member iff every branch has constant-output form Φ_a(ρ) = Tr[ρ]·p_a σ_a,
/// i.e. each branch Choi equals I_in ⊗ τ_a with τ_a ⪰ 0.
pub fn is_trash_and_prepare(inst: &Instrument) -> Verdict {
    let din = inst.dim_in;
    let dout = inst.dim_out;
    let mut defect: f64 = 0.0;
    for b in &inst.branches {
        let tau = match b.choi.partial_trace(&[din, dout], &[1]) {
            Ok(t) => t.scale_re(1.0 / din as f64),
            Err(_) => return Verdict::inconclusive(Relaxation::Exact, "partial trace failed"),
        };
        let model = ComplexMatrix::identity(din).tensor(&tau);
        defect = defect.max(b.choi.max_abs_diff(&model));
        match tau.min_eig() {
            Ok(min) => defect = defect.max((-min).max(0.0)),
            Err(_) => return Verdict::inconclusive(Relaxation::Exact, "eigensolve failed"),
        }
    }
    if defect <= ENTRYWISE_TOL {
        Verdict::member(ENTRYWISE_TOL - defect, Relaxation::Exact, None)
    } else if defect >= 10.0 * ENTRYWISE_TOL {
        Verdict::non_member(
            defect,
            Relaxation::Exact,
            Some(Certificate::Note(format!("constant-branch defect {:.3e}", defect))),
        )
    } else {
        Verdict::inconclusive(Relaxation::Exact, "constant-branch defect near tolerance")
    }
}

/// Member iff all instruments share the same induced channel (entrywise Choi
/// equality within tolerance).
pub fn is_weakly_compatible(insts: &[Instrument]) -> Result<Verdict> {
    if insts.len() < 2 {
        return Err(QirtError::InvalidArgument("need at least two instruments".into()));
    }
    let first = insts[0].induced_channel();
    let mut defect: f64 = 0.0;
    for inst in &insts[1..] {
        if inst.dim_in != insts[0].dim_in || inst.dim_out != insts[0].dim_out {
            return Err(QirtError::DimensionMismatch("instrument dims differ".into()));
        }
        defect = defect.max(inst.induced_channel().choi.max_abs_diff(&first.choi));
    }
    Ok(if defect <= ENTRYWISE_TOL {
        Verdict::member(ENTRYWISE_TOL - defect, Relaxation::Exact, None)
    } else if defect >= 10.0 * ENTRYWISE_TOL {
        Verdict::non_member(
            defect,
            Relaxation::Exact,
            Some(Certificate::Note(format!("induced-channel defect {:.3e}", defect))),
        )
    } else {
        Verdict::inconclusive(Relaxation::Exact, "induced-channel defect near tolerance")
    })
}

// ---------------------------------------------------------------------------
// Entanglement breaking (PPT criterion)
// ---------------------------------------------------------------------------

fn ppt_branch_verdict(choi: &ComplexMatrix, din: usize, dout: usize) -> Verdict {
    let pt = match choi.partial_transpose(&[din, dout], 0) {
        Ok(m) => m,
        Err(_) => return Verdict::inconclusive(Relaxation::Exact, "partial transpose failed"),
    };
    let min = match pt.min_eig() {
        Ok(m) => m,
        Err(_) => return Verdict::inconclusive(Relaxation::Exact, "eigensolve failed"),
    };
    if min < -10.0 * ENTRYWISE_TOL {
        // a negative partial transpose proves the Choi is entangled
        return Verdict::non_member(
            -min,
            Relaxation::Exact,
            Some(Certificate::Note(format!("negative partial transpose, eigenvalue {:.3e}", min))),
        );
    }
    if min < -ENTRYWISE_TOL {
        return Verdict::inconclusive(Relaxation::Exact, "partial transpose near zero");
    }
    if din * dout <= 6 {
        // in 2⊗2 and 2⊗3, positive partial transpose is also sufficient
        Verdict::member(min.max(MIN_MARGIN), Relaxation::Exact, None)
    } else {
        Verdict::inconclusive(
            Relaxation::PptRelaxation,
            "PPT holds but separability is undecided in this dimension",
        )
    }
}

/// Member iff every branch is an entanglement-breaking CP map.
pub fn is_entanglement_breaking(inst: &Instrument) -> Verdict {
    let mut worst_member_margin = f64::INFINITY;
    let mut inconclusive: Option<Verdict> = None;
    for b in &inst.branches {
        let v = ppt_branch_verdict(&b.choi, inst.dim_in, inst.dim_out);
        match v.status {
            VerdictStatus::NonMember => return v,
            VerdictStatus::Inconclusive => inconclusive = Some(v),
            VerdictStatus::Member => worst_member_margin = worst_member_margin.min(v.margin),
        }
    }
    if let Some(v) = inconclusive {
        return v;
    }
    Verdict::member(worst_member_margin, Relaxation::Exact, None)
}

/// Member iff the induced channel is entanglement-breaking.
pub fn is_weak_entanglement_breaking(inst: &Instrument) -> Verdict {
    is_entanglement_breaking(&Instrument::from_channel(inst.induced_channel()))
}

// ---------------------------------------------------------------------------
// Joint measurability
// ---------------------------------------------------------------------------

pub(crate) fn product_iter(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        let mut next = Vec::with_capacity(out.len() * n);
        for prefix in &out {
            for k in 0..n {
                let mut v = prefix.clone();
                v.push(k);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Try the nested product construction
/// G(x⃗) = √M_n(x_n)···√M₂(x₂) M₁(x₁) √M₂(x₂)···√M_n(x_n),
/// which is an exact joint measurement whenever the POVMs commute.
fn product_joint_candidate(povms: &[Povm]) -> Option<(Vec<usize>, Vec<ComplexMatrix>)> {
    let shape: Vec<usize> = povms.iter().map(|p| p.n_outcomes()).collect();
    let sqrt: Vec<Vec<ComplexMatrix>> = povms[1..]
        .iter()
        .map(|p| p.elements.iter().map(|e| e.psd_sqrt().ok()).collect::<Option<Vec<_>>>())
        .collect::<Option<Vec<_>>>()?;
    let idxs = product_iter(&shape);
    let mut elements = Vec::with_capacity(idxs.len());
    for x in &idxs {
        let mut g = povms[0].elements[x[0]].clone();
        for (i, s) in sqrt.iter().enumerate() {
            let r = &s[x[i + 1]];
            g = r.matmul(&g).matmul(r);
        }
        if g.min_eig().ok()? < -1e-10 {
            return None;
        }
        elements.push(g.herm_part());
    }
    // verify every marginal exactly
    for (i, p) in povms.iter().enumerate() {
        for a in 0..p.n_outcomes() {
            let mut acc = ComplexMatrix::zeros(p.dim, p.dim);
            for (x, g) in idxs.iter().zip(&elements) {
                if x[i] == a {
                    acc = acc.add(g);
                }
            }
            if acc.max_abs_diff(&p.elements[a]) > 1e-9 {
                return None;
            }
        }
    }
    Some((shape, elements))
}

/// Maximum-slack joint measurement program: maximize t with
/// G(x⃗) ⪰ t·I and exact marginals. Returns (t*, marginal duals, joint).
fn joint_povm_slack(povms: &[Povm], opts: &SdpOptions) -> Result<(f64, Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    let d = povms[0].dim;
    let shape: Vec<usize> = povms.iter().map(|p| p.n_outcomes()).collect();
    let idxs = product_iter(&shape);
    let mut b = SdpBuilder::new();
    let gvars: Vec<_> = idxs.iter().map(|_| b.herm_psd_var(d)).collect();
    let t = b.free_scalar();
    for (i, p) in povms.iter().enumerate() {
        let count: usize = shape.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &n)| n).product();
        for a in 0..p.n_outcomes() {
            let mut e = MatExpr::zero(d).sub_const(&p.elements[a]);
            for (x, &gv) in idxs.iter().zip(&gvars) {
                if x[i] == a {
                    e = e.push(gv, LinMap::identity());
                }
            }
            e = e.push_scalar(t, ComplexMatrix::identity(d).scale_re(count as f64));
            b.add_matrix_eq(&e);
        }
    }
    b.minimize(vec![], vec![(t, -1.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let tstar = -sol.objective;
    let tval = sol.scalar(t);
    let joint: Vec<ComplexMatrix> = gvars
        .iter()
        .map(|&g| {
            let gp = sol.value_of(g);
            gp.add(&ComplexMatrix::identity(d).scale_re(tval))
        })
        .collect();
    Ok((tstar, sol.group_duals.clone(), joint))
}

/// Joint measurability of a list of POVMs on a common space.
pub fn joint_measurement(povms: &[Povm]) -> Result<Verdict> {
    joint_measurement_with(povms, &SdpOptions::default())
}

pub fn joint_measurement_with(povms: &[Povm], opts: &SdpOptions) -> Result<Verdict> {
    if povms.len() < 2 {
        return Err(QirtError::InvalidArgument("need at least two measurements".into()));
    }
    let d = povms[0].dim;
    if povms.iter().any(|p| p.dim != d) {
        return Err(QirtError::DimensionMismatch("measurements act on different spaces".into()));
    }
    // closed-form joint for (effectively) commuting measurements; also settles
    // boundary cases such as a sharp PVM with itself
    if let Some((shape, elements)) = product_joint_candidate(povms) {
        return Ok(Verdict::member(
            MIN_MARGIN,
            Relaxation::Exact,
            Some(Certificate::JointPovm { outcome_shape: shape, elements }),
        ));
    }
    let (tstar, duals, joint) = joint_povm_slack(povms, opts)?;
    let shape: Vec<usize> = povms.iter().map(|p| p.n_outcomes()).collect();
    Ok(if tstar > BORDERLINE {
        Verdict::member(
            tstar,
            Relaxation::Exact,
            Some(Certificate::JointPovm { outcome_shape: shape, elements: joint }),
        )
    } else if tstar < -BORDERLINE {
        Verdict::non_member(
            -tstar,
            Relaxation::Exact,
            Some(Certificate::DualWitnesses { label: "marginal multipliers".into(), operators: duals }),
        )
    } else {
        Verdict::inconclusive(Relaxation::Exact, "joint-measurement slack within borderline band")
    })
}

// ---------------------------------------------------------------------------
// Witness families and incompatibility breaking
// ---------------------------------------------------------------------------

/// A finite family of incompatible measurement sets used to probe whether an
/// instrument destroys incompatibility.
#[derive(Debug, Clone)]
pub struct WitnessFamily {
    pub sets: Vec<Vec<Povm>>,
    pub labels: Vec<String>,
    pub note: String,
}

impl WitnessFamily {
    /// Build a family, verifying every member set is itself incompatible.
    pub fn new(sets: Vec<Vec<Povm>>, labels: Vec<String>, note: String) -> Result<Self> {
        if sets.len() != labels.len() {
            return Err(QirtError::InvalidArgument("labels must match sets".into()));
        }
        for (set, label) in sets.iter().zip(&labels) {
            let v = joint_measurement(set)?;
            if !v.is_non_member() {
                return Err(QirtError::InvalidObject(format!(
                    "witness set '{}' is not certified incompatible",
                    label
                )));
            }
        }
        Ok(Self { sets, labels, note })
    }

    /// Default qubit family: the two-MUB pair (σz, σx) — also the pair from
    /// the worked Heisenberg-picture example — the MUB triple, and five
    /// seeded random sharp PVM pairs in generic directions.
    pub fn default_qubit() -> Result<Self> {
        let z = Povm::sharp_z();
        let x = Povm::sharp_x();
        let y = Povm::sharp_y();
        let mut sets = vec![vec![z.clone(), x.clone()], vec![z.clone(), x.clone(), y.clone()]];
        let mut labels = vec!["mub-pair-zx".into(), "mub-triple-zxy".into()];
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let mut found = 0;
        while found < 5 {
            let p1 = random_sharp_pvm(&mut rng);
            let p2 = random_sharp_pvm(&mut rng);
            if let Ok(v) = joint_measurement(&[p1.clone(), p2.clone()]) {
                if v.is_non_member() {
                    sets.push(vec![p1, p2]);
                    labels.push(format!("random-pair-{}", found));
                    found += 1;
                }
            }
        }
        Self::new(sets, labels, "default qubit witness family".into())
    }
}

/// Sharp qubit PVM along a random direction (eigenbasis of a random
/// Hermitian matrix).
fn random_sharp_pvm(rng: &mut ChaCha8Rng) -> Povm {
    let h = crate::qobjects::random::ginibre(rng, 2, 2).herm_part();
    let (_, vecs) = h.hermitian_eigs().expect("eigendecomposition");
    let elements: Vec<ComplexMatrix> = (0..2)
        .map(|k| {
            let mut col = ComplexMatrix::zeros(2, 1);
            col[(0, 0)] = vecs[(0, k)];
            col[(1, 0)] = vecs[(1, k)];
            ComplexMatrix::outer(&col, &col)
        })
        .collect();
    Povm::new(elements, None).expect("PVM from orthonormal columns")
}

/// Member iff the Heisenberg pictures I†[ℳ] of every witness set are jointly
/// measurable; a single surviving incompatible set refutes membership.
pub fn breaks_incompatibility(inst: &Instrument, family: &WitnessFamily) -> Result<Verdict> {
    let mut per_set = Vec::new();
    let mut member_margin = f64::INFINITY;
    let mut any_inconclusive = false;
    for (set, label) in family.sets.iter().zip(&family.labels) {
        if set.iter().any(|p| p.dim != inst.dim_out) {
            return Err(QirtError::DimensionMismatch(
                "witness measurements must act on the instrument output space".into(),
            ));
        }
        let heisenberg: Vec<Povm> =
            set.iter().map(|m| inst.heisenberg_measurement(m)).collect::<Result<_>>()?;
        let v = joint_measurement(&heisenberg)?;
        match v.status {
            VerdictStatus::NonMember => {
                // this incompatible set survives the instrument: a proof of
                // non-membership
                return Ok(Verdict::non_member(
                    v.margin,
                    Relaxation::Exact,
                    Some(Certificate::PerWitnessSet(vec![(label.clone(), -v.margin)])),
                ));
            }
            VerdictStatus::Member => {
                member_margin = member_margin.min(v.margin);
                per_set.push((label.clone(), v.margin));
            }
            VerdictStatus::Inconclusive => {
                any_inconclusive = true;
                per_set.push((label.clone(), 0.0));
            }
        }
    }
    if any_inconclusive {
        return Ok(Verdict::inconclusive(
            Relaxation::WitnessFamily,
            "some witness sets were borderline",
        ));
    }
    Ok(Verdict::member(
        member_margin,
        Relaxation::WitnessFamily,
        Some(Certificate::PerWitnessSet(per_set)),
    ))
}

/// `breaks_incompatibility` applied to the induced channel alone.
pub fn is_weak_incompatibility_breaking(inst: &Instrument, family: &WitnessFamily) -> Result<Verdict> {
    breaks_incompatibility(&Instrument::from_channel(inst.induced_channel()), family)
}

// ---------------------------------------------------------------------------
// Traditional and parallel compatibility
// ---------------------------------------------------------------------------

fn instruments_identical(insts: &[Instrument]) -> bool {
    let first = &insts[0];
    insts[1..].iter().all(|i| {
        i.branches.len() == first.branches.len()
            && i.branches
                .iter()
                .zip(&first.branches)
                .all(|(a, b)| a.choi.max_abs_diff(&b.choi) <= 1e-10)
    })
}

/// Traditional compatibility: a joint instrument over the product outcome
/// grid whose outcome-sum marginals reproduce every instrument.
pub fn is_traditionally_compatible(insts: &[Instrument]) -> Result<Verdict> {
    is_traditionally_compatible_with(insts, &SdpOptions::default())
}

pub fn is_traditionally_compatible_with(insts: &[Instrument], opts: &SdpOptions) -> Result<Verdict> {
    if insts.len() < 2 {
        return Err(QirtError::InvalidArgument("need at least two instruments".into()));
    }
    let din = insts[0].dim_in;
    let dout = insts[0].dim_out;
    if insts.iter().any(|i| i.dim_in != din || i.dim_out != dout) {
        return Err(QirtError::DimensionMismatch("instrument dims differ".into()));
    }
    // traditional compatibility implies weak compatibility; refuse early with
    // the induced-channel defect as certificate
    let weak = is_weakly_compatible(insts)?;
    if weak.is_non_member() {
        return Ok(Verdict::non_member(
            weak.margin,
            Relaxation::Exact,
            Some(Certificate::Note("induced channels differ (weak compatibility fails)".into())),
        ));
    }
    // identical instruments admit the diagonal joint
    if instruments_identical(insts) {
        let shape: Vec<usize> = insts.iter().map(|i| i.n_outcomes()).collect();
        let idxs = product_iter(&shape);
        let chois = idxs
            .iter()
            .map(|x| {
                if x.iter().all(|&k| k == x[0]) {
                    insts[0].branches[x[0]].choi.clone()
                } else {
                    ComplexMatrix::zeros(din * dout, din * dout)
                }
            })
            .collect();
        return Ok(Verdict::member(
            MIN_MARGIN,
            Relaxation::Exact,
            Some(Certificate::JointChois { outcome_shape: shape, chois }),
        ));
    }
    let d = din * dout;
    let shape: Vec<usize> = insts.iter().map(|i| i.n_outcomes()).collect();
    let idxs = product_iter(&shape);
    let mut b = SdpBuilder::new();
    let jvars: Vec<_> = idxs.iter().map(|_| b.herm_psd_var(d)).collect();
    let t = b.free_scalar();
    for (i, inst) in insts.iter().enumerate() {
        let count: usize = shape.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &n)| n).product();
        for a in 0..inst.n_outcomes() {
            let mut e = MatExpr::zero(d).sub_const(&inst.branches[a].choi);
            for (x, &jv) in idxs.iter().zip(&jvars) {
                if x[i] == a {
                    e = e.push(jv, LinMap::identity());
                }
            }
            e = e.push_scalar(t, ComplexMatrix::identity(d).scale_re(count as f64));
            b.add_matrix_eq(&e);
        }
    }
    b.minimize(vec![], vec![(t, -1.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let tstar = -sol.objective;
    Ok(if tstar > BORDERLINE {
        let tval = sol.scalar(t);
        let chois = jvars
            .iter()
            .map(|&v| sol.value_of(v).add(&ComplexMatrix::identity(d).scale_re(tval)))
            .collect();
        Verdict::member(
            tstar,
            Relaxation::Exact,
            Some(Certificate::JointChois { outcome_shape: shape, chois }),
        )
    } else if tstar < -BORDERLINE {
        Verdict::non_member(
            -tstar,
            Relaxation::Exact,
            Some(Certificate::DualWitnesses {
                label: "outcome-marginal multipliers".into(),
                operators: sol.group_duals.clone(),
            }),
        )
    } else {
        Verdict::inconclusive(Relaxation::Exact, "traditional-compatibility slack within borderline band")
    })
}

/// Kraus map tracing out all tensor factors except those in `keep`
/// (which must be listed in increasing order).
pub(crate) fn trace_keep_map(dims: &[usize], keep: &[usize]) -> LinMap {
    let traced: Vec<usize> = (0..dims.len()).filter(|i| !keep.contains(i)).collect();
    let traced_shape: Vec<usize> = traced.iter().map(|&i| dims[i]).collect();
    let combos = product_iter(&traced_shape);
    let kraus = combos
        .iter()
        .map(|combo| {
            let mut k: Option<ComplexMatrix> = None;
            let mut t = 0;
            for (f, &df) in dims.iter().enumerate() {
                let factor = if keep.contains(&f) {
                    ComplexMatrix::identity(df)
                } else {
                    let bra = ComplexMatrix::ket(df, combo[t]).adjoint();
                    t += 1;
                    bra
                };
                k = Some(match k {
                    None => factor,
                    Some(prev) => prev.tensor(&factor),
                });
            }
            k.expect("nonempty factor list")
        })
        .collect();
    LinMap { steps: vec![LinStep::Kraus(kraus)] }
}

/// Detect measure-and-prepare form: branch Chois M_a^T ⊗ σ_a. Returns the
/// POVM elements (untransposed) and the prepared states.
fn measure_prepare_form(inst: &Instrument) -> Option<(Vec<ComplexMatrix>, Vec<ComplexMatrix>)> {
    let din = inst.dim_in;
    let dout = inst.dim_out;
    let mut povm = Vec::new();
    let mut states = Vec::new();
    for b in &inst.branches {
        let weight = b.choi.trace().re;
        if weight < 1e-12 {
            povm.push(ComplexMatrix::zeros(din, din));
            states.push(ComplexMatrix::identity(dout).scale_re(1.0 / dout as f64));
            continue;
        }
        let mt = b.choi.partial_trace(&[din, dout], &[0]).ok()?; // M^T · Tr σ... = M^T when σ normalized below
        let sigma = b.choi.partial_trace(&[din, dout], &[1]).ok()?.scale_re(1.0 / weight);
        let model = mt.tensor(&sigma);
        if b.choi.max_abs_diff(&model) > 1e-9 {
            return None;
        }
        povm.push(mt.transpose().conj());
        states.push(sigma);
    }
    Some((povm, states))
}

/// Parallel compatibility: a joint instrument into the tensor product of all
/// output spaces whose partial-trace marginals reproduce every instrument.
pub fn is_parallel_compatible(insts: &[Instrument]) -> Result<Verdict> {
    is_parallel_compatible_with(insts, &SdpOptions::default())
}

pub fn is_parallel_compatible_with(insts: &[Instrument], opts: &SdpOptions) -> Result<Verdict> {
    if insts.len() < 2 {
        return Err(QirtError::InvalidArgument("need at least two instruments".into()));
    }
    let din = insts[0].dim_in;
    if insts.iter().any(|i| i.dim_in != din) {
        return Err(QirtError::DimensionMismatch("instrument input dims differ".into()));
    }
    let douts: Vec<usize> = insts.iter().map(|i| i.dim_out).collect();
    let shape: Vec<usize> = insts.iter().map(|i| i.n_outcomes()).collect();

    // closed-form candidates first
    if let Some(v) = parallel_candidates(insts, &douts, &shape) {
        return Ok(v);
    }

    let dtot: usize = din * douts.iter().product::<usize>();
    let idxs = product_iter(&shape);
    let mut dims = vec![din];
    dims.extend(&douts);
    let mut b = SdpBuilder::new();
    let jvars: Vec<_> = idxs.iter().map(|_| b.herm_psd_var(dtot)).collect();
    let t = b.free_scalar();
    for (i, inst) in insts.iter().enumerate() {
        let count: usize = shape.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &n)| n).product();
        let other_dim: usize = douts.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &d)| d).product();
        let tk = trace_keep_map(&dims, &[0, i + 1]);
        for a in 0..inst.n_outcomes() {
            let d_marg = din * inst.dim_out;
            let mut e = MatExpr::zero(d_marg).sub_const(&inst.branches[a].choi);
            for (x, &jv) in idxs.iter().zip(&jvars) {
                if x[i] == a {
                    e = e.push(jv, tk.clone());
                }
            }
            e = e.push_scalar(
                t,
                ComplexMatrix::identity(d_marg).scale_re((count * other_dim) as f64),
            );
            b.add_matrix_eq(&e);
        }
    }
    b.minimize(vec![], vec![(t, -1.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let tstar = -sol.objective;
    Ok(if tstar > BORDERLINE {
        let tval = sol.scalar(t);
        let chois = jvars
            .iter()
            .map(|&v| sol.value_of(v).add(&ComplexMatrix::identity(dtot).scale_re(tval)))
            .collect();
        Verdict::member(
            tstar,
            Relaxation::Exact,
            Some(Certificate::JointChois { outcome_shape: shape, chois }),
        )
    } else if tstar < -BORDERLINE {
        Verdict::non_member(
            -tstar,
            Relaxation::Exact,
            Some(Certificate::DualWitnesses {
                label: "partial-trace marginal multipliers".into(),
                operators: sol.group_duals.clone(),
            }),
        )
    } else {
        Verdict::inconclusive(Relaxation::Exact, "parallel-compatibility slack within borderline band")
    })
}

/// Closed-form parallel joints: products of trash-and-prepare instruments,
/// and broadcasting a shared measure-and-prepare instrument.
fn parallel_candidates(insts: &[Instrument], douts: &[usize], shape: &[usize]) -> Option<Verdict> {
    let din = insts[0].dim_in;
    // all trash-and-prepare: prepare every output independently
    if insts.iter().all(|i| is_trash_and_prepare(i).is_member()) {
        let taus: Vec<Vec<ComplexMatrix>> = insts
            .iter()
            .map(|i| {
                i.branches
                    .iter()
                    .map(|b| {
                        b.choi
                            .partial_trace(&[din, i.dim_out], &[1])
                            .expect("partial trace")
                            .scale_re(1.0 / din as f64)
                    })
                    .collect()
            })
            .collect();
        let idxs = product_iter(shape);
        let chois = idxs
            .iter()
            .map(|x| {
                let mut prod = ComplexMatrix::identity(din);
                for (i, &k) in x.iter().enumerate() {
                    prod = prod.tensor(&taus[i][k]);
                }
                prod
            })
            .collect();
        return Some(Verdict::member(
            MIN_MARGIN,
            Relaxation::Exact,
            Some(Certificate::JointChois { outcome_shape: shape.to_vec(), chois }),
        ));
    }
    // identical measure-and-prepare instruments: measure once, broadcast
    if insts.len() == 2 && douts[0] == douts[1] && instruments_identical(insts) {
        if let Some((povm, states)) = measure_prepare_form(&insts[0]) {
            let idxs = product_iter(shape);
            let chois = idxs
                .iter()
                .map(|x| {
                    if x[0] == x[1] {
                        let m = povm[x[0]].transpose().conj();
                        m.tensor(&states[x[0]]).tensor(&states[x[0]])
                    } else {
                        let d = din * douts[0] * douts[1];
                        ComplexMatrix::zeros(d, d)
                    }
                })
                .collect();
            return Some(Verdict::member(
                MIN_MARGIN,
                Relaxation::Exact,
                Some(Certificate::JointChois { outcome_shape: shape.to_vec(), chois }),
            ));
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Closed-form depolarizing thresholds
// ---------------------------------------------------------------------------

/// Sufficient depolarizing-parameter thresholds for dimension d:
/// entanglement breaking, n-wise incompatibility breaking, and full
/// incompatibility breaking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepolarizingThresholds {
    pub d: usize,
    pub n: usize,
    /// t ≤ 1/(1+d): entanglement breaking.
    pub eb: f64,
    /// t ≤ (n+d)/(n(1+d)): any n measurements become compatible.
    pub n_ibc: f64,
    /// t ≤ (3d−1)(d−1)^(d−1)/(d^d(d+1)): all measurements become compatible.
    pub ibc: f64,
}

pub fn depolarizing_thresholds(d: usize, n: usize) -> Result<DepolarizingThresholds> {
    if d < 2 || n < 2 {
        return Err(QirtError::InvalidArgument("need d ≥ 2 and n ≥ 2".into()));
    }
    let df = d as f64;
    let nf = n as f64;
    Ok(DepolarizingThresholds {
        d,
        n,
        eb: 1.0 / (1.0 + df),
        n_ibc: (nf + df) / (nf * (1.0 + df)),
        ibc: (3.0 * df - 1.0) * (df - 1.0).powi(d as i32 - 1) / (df.powi(d as i32) * (df + 1.0)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::re;
    use crate::qobjects::{measure_prepare_channel, pauli_example_instrument, random, CpMap};

    fn smear(p: &Povm, eta: f64) -> Povm {
        let id = ComplexMatrix::identity(p.dim);
        let n = p.n_outcomes() as f64;
        let elements = p
            .elements
            .iter()
            .map(|e| e.scale_re(eta).add(&id.scale_re((1.0 - eta) / n)))
            .collect();
        Povm::new(elements, None).unwrap()
    }

    fn one_outcome(ch: CpMap) -> Instrument {
        Instrument::from_channel(ch)
    }

    #[test]
    fn trash_and_prepare_examples() {
        let ket0 = ComplexMatrix::proj(&ComplexMatrix::ket(2, 0));
        let tp = one_outcome(CpMap::trash_prepare(2, &ket0).unwrap());
        assert!(is_trash_and_prepare(&tp).is_member());
        let id = one_outcome(CpMap::identity(2));
        assert!(is_trash_and_prepare(&id).is_non_member());
        assert!(is_trash_and_prepare(&pauli_example_instrument()).is_non_member());
    }

    #[test]
    fn entanglement_breaking_threshold_and_examples() {
        let below = one_outcome(CpMap::depolarizing(2, 0.30).unwrap());
        assert!(is_entanglement_breaking(&below).is_member());
        let above = one_outcome(CpMap::depolarizing(2, 0.34).unwrap());
        assert!(is_entanglement_breaking(&above).is_non_member());
        assert!(is_entanglement_breaking(&pauli_example_instrument()).is_non_member());
    }

    #[test]
    fn weak_entanglement_breaking_examples() {
        // the example instrument sums to depolarizing(2, 1/3), which is EB
        assert!(is_weak_entanglement_breaking(&pauli_example_instrument()).is_member());
        assert!(is_weak_entanglement_breaking(&one_outcome(CpMap::identity(2))).is_non_member());
        // any EB instrument is weakly EB
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random::povm(&mut rng, 2, 2);
        let mp = one_outcome(measure_prepare_channel(&m));
        assert!(is_entanglement_breaking(&mp).is_member());
        assert!(is_weak_entanglement_breaking(&mp).is_member());
    }

    #[test]
    fn joint_measurement_examples() {
        let z = Povm::sharp_z();
        let x = Povm::sharp_x();
        // commuting (identical) sharp PVMs: product joint, exact
        let v = joint_measurement(&[z.clone(), z.clone()]).unwrap();
        assert!(v.is_member());
        assert!(matches!(v.certificate, Some(Certificate::JointPovm { .. })));
        // MUB pair: incompatible with dual certificate
        let v = joint_measurement(&[z.clone(), x.clone()]).unwrap();
        assert!(v.is_non_member());
        assert!(v.margin > 1e-6);
        assert!(matches!(v.certificate, Some(Certificate::DualWitnesses { .. })));
        // sharp σz with an unsharp σx: still incompatible (sharp PVMs admit
        // joints only with commuting partners)
        let v = joint_measurement(&[z.clone(), smear(&x, 1.0 / 3.0)]).unwrap();
        assert!(v.is_non_member(), "margin {}", v.margin);
        // noise region boundary η² + η² = 1: inside compatible, outside not
        let v = joint_measurement(&[smear(&z, 0.70), smear(&x, 0.70)]).unwrap();
        assert!(v.is_member(), "0.70 margin {}", v.margin);
        let v = joint_measurement(&[smear(&z, 0.72), smear(&x, 0.72)]).unwrap();
        assert!(v.is_non_member(), "0.72 margin {}", v.margin);
    }

    #[test]
    fn joint_measurement_monotone_under_coarse_graining() {
        // classical post-processing of a compatible pair stays compatible;
        // the table mirrors the ν-table of the Heisenberg worked example
        let z = smear(&Povm::sharp_z(), 0.6);
        let x = smear(&Povm::sharp_x(), 0.6);
        assert!(joint_measurement(&[z.clone(), x.clone()]).unwrap().is_member());
        let nu = vec![vec![1.0, 0.0], vec![2.0 / 3.0, 1.0 / 3.0]];
        let zc = z.post_process(&nu).unwrap();
        let xc = x.post_process(&nu).unwrap();
        assert!(joint_measurement(&[zc, xc]).unwrap().is_member());
    }

    #[test]
    fn default_witness_family_is_incompatible_throughout() {
        let fam = WitnessFamily::default_qubit().unwrap();
        assert_eq!(fam.sets.len(), 7);
        // construction already verified incompatibility of each set
    }

    #[test]
    fn incompatibility_breaking_examples() {
        let fam = WitnessFamily::default_qubit().unwrap();
        // the example instrument leaves the worked-example pair incompatible
        let v = breaks_incompatibility(&pauli_example_instrument(), &fam).unwrap();
        assert!(v.is_non_member());
        // depolarizing at the full-IBC threshold passes every witness set
        let dep = one_outcome(CpMap::depolarizing(2, 5.0 / 12.0).unwrap());
        let v = breaks_incompatibility(&dep, &fam).unwrap();
        assert!(v.is_member(), "margin {}", v.margin);
        assert_eq!(v.relaxation, Relaxation::WitnessFamily);
        // an EB instrument always breaks incompatibility
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random::povm(&mut rng, 2, 2);
        let mp = one_outcome(measure_prepare_channel(&m));
        assert!(breaks_incompatibility(&mp, &fam).unwrap().is_member());
    }

    #[test]
    fn weak_incompatibility_breaking_examples() {
        let fam = WitnessFamily::default_qubit().unwrap();
        // induced channel of the example instrument is depolarizing(2, 1/3)
        let v = is_weak_incompatibility_breaking(&pauli_example_instrument(), &fam).unwrap();
        assert!(v.is_member());
        let v = is_weak_incompatibility_breaking(&one_outcome(CpMap::identity(2)), &fam).unwrap();
        assert!(v.is_non_member());
        // 0.72 > 1/√2: the MUB witness survives this much depolarizing noise
        let v = is_weak_incompatibility_breaking(
            &one_outcome(CpMap::depolarizing(2, 0.72).unwrap()),
            &fam,
        )
        .unwrap();
        assert!(v.is_non_member());
    }

    #[test]
    fn traditional_compatibility_examples() {
        let lz = Instrument::luders(&Povm::sharp_z()).unwrap();
        // identical instruments: diagonal joint
        let v = is_traditionally_compatible(&[lz.clone(), lz.clone()]).unwrap();
        assert!(v.is_member());
        // different induced channels: weak compatibility fails
        let lx = Instrument::luders(&Povm::sharp_x()).unwrap();
        let v = is_traditionally_compatible(&[lz.clone(), lx.clone()]).unwrap();
        assert!(v.is_non_member());
        // weakly compatible but traditionally incompatible: measure σz vs σx,
        // both preparing the same fixed state (shared induced channel)
        let sigma = ComplexMatrix::identity(2).scale_re(0.5);
        let mk = |p: &Povm| {
            let branches = p
                .elements
                .iter()
                .map(|m| {
                    CpMap::from_choi_unchecked(2, 2, m.transpose().conj().tensor(&sigma))
                })
                .collect();
            Instrument::new(branches, None).unwrap()
        };
        let iz = mk(&Povm::sharp_z());
        let ix = mk(&Povm::sharp_x());
        assert!(is_weakly_compatible(&[iz.clone(), ix.clone()]).unwrap().is_member());
        let v = is_traditionally_compatible(&[iz, ix]).unwrap();
        assert!(v.is_non_member(), "margin {}", v.margin);
        assert!(matches!(v.certificate, Some(Certificate::DualWitnesses { .. })));
    }

    #[test]
    fn parallel_compatibility_examples() {
        // trash-and-prepare pair: product joint
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s1 = random::density(&mut rng, 2);
        let s2 = random::density(&mut rng, 2);
        let t1 = Instrument::from_channel(CpMap::trash_prepare(2, &s1).unwrap());
        let t2 = Instrument::from_channel(CpMap::trash_prepare(2, &s2).unwrap());
        let v = is_parallel_compatible(&[t1, t2]).unwrap();
        assert!(v.is_member());
        // two identity channels: forbidden by no-cloning
        let id = Instrument::from_channel(CpMap::identity(2));
        let v = is_parallel_compatible(&[id.clone(), id.clone()]).unwrap();
        assert!(v.is_non_member(), "margin {}", v.margin);
        assert!(matches!(v.certificate, Some(Certificate::DualWitnesses { .. })));
        // identical measure-and-prepare instruments: broadcast the record
        let mp = {
            let p = Povm::sharp_z();
            let branches = p
                .elements
                .iter()
                .map(|m| {
                    CpMap::from_choi_unchecked(
                        2,
                        2,
                        m.transpose().conj().tensor(&ComplexMatrix::outer(
                            &ComplexMatrix::ket(2, 0),
                            &ComplexMatrix::ket(2, 0),
                        )),
                    )
                })
                .collect();
            Instrument::new(branches, None).unwrap()
        };
        let v = is_parallel_compatible(&[mp.clone(), mp.clone()]).unwrap();
        assert!(v.is_member());
    }

    #[test]
    fn parallel_compatibility_preserved_by_post_processing() {
        // a PC pair stays PC after post-processing each side
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s1 = random::density(&mut rng, 2);
        let s2 = random::density(&mut rng, 2);
        let t1 = Instrument::from_channel(CpMap::trash_prepare(2, &s1).unwrap());
        let t2 = Instrument::from_channel(CpMap::trash_prepare(2, &s2).unwrap());
        let proc1 = vec![random::instrument(&mut rng, 2, 2, 2)];
        let proc2 = vec![random::instrument(&mut rng, 2, 2, 2)];
        let p1 = t1.post_process(&proc1).unwrap();
        let p2 = t2.post_process(&proc2).unwrap();
        let v = is_parallel_compatible(&[p1, p2]).unwrap();
        assert!(v.is_member() || v.status == VerdictStatus::Inconclusive);
        // post-processing a trash-and-prepare instrument cannot fail PC with
        // another such post-processing outright
        assert!(!v.is_non_member());
    }

    #[test]
    fn threshold_formulas() {
        let t = depolarizing_thresholds(2, 2).unwrap();
        assert!((t.eb - 1.0 / 3.0).abs() < 1e-15);
        assert!((t.n_ibc - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.ibc - 5.0 / 12.0).abs() < 1e-15);
        assert!((depolarizing_thresholds(3, 2).unwrap().eb - 0.25).abs() < 1e-15);
        assert!((depolarizing_thresholds(2, 3).unwrap().n_ibc - 5.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn venn_hierarchy_on_structured_and_random_instruments() {
        let fam = WitnessFamily::default_qubit().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut insts: Vec<Instrument> = Vec::new();
        for _ in 0..6 {
            // trash-and-prepare instruments (deepest class)
            let p1: f64 = 0.2 + 0.6 * rand::Rng::gen::<f64>(&mut rng);
            let s1 = random::density(&mut rng, 2);
            let s2 = random::density(&mut rng, 2);
            let b1 = CpMap::from_choi_unchecked(
                2,
                2,
                ComplexMatrix::identity(2).tensor(&s1.scale_re(p1)),
            );
            let b2 = CpMap::from_choi_unchecked(
                2,
                2,
                ComplexMatrix::identity(2).tensor(&s2.scale_re(1.0 - p1)),
            );
            insts.push(Instrument::new(vec![b1, b2], None).unwrap());
        }
        for _ in 0..6 {
            // measure-and-prepare instruments (entanglement-breaking)
            let p = random::povm(&mut rng, 2, 2);
            let s1 = random::density(&mut rng, 2);
            let s2 = random::density(&mut rng, 2);
            let branches = vec![
                CpMap::from_choi_unchecked(2, 2, p.elements[0].transpose().conj().tensor(&s1)),
                CpMap::from_choi_unchecked(2, 2, p.elements[1].transpose().conj().tensor(&s2)),
            ];
            insts.push(Instrument::new(branches, None).unwrap());
        }
        for _ in 0..6 {
            insts.push(random::instrument(&mut rng, 2, 2, 2));
        }
        for inst in &insts {
            let tp = is_trash_and_prepare(inst);
            let eb = is_entanglement_breaking(inst);
            let web = is_weak_entanglement_breaking(inst);
            if tp.is_member() {
                assert!(eb.is_member(), "TP ⊂ EB violated");
            }
            if eb.is_member() {
                assert!(web.is_member(), "EB ⊂ WEB violated");
                let ib = breaks_incompatibility(inst, &fam).unwrap();
                assert!(ib.is_member(), "EB ⊂ IB violated");
                let wib = is_weak_incompatibility_breaking(inst, &fam).unwrap();
                assert!(wib.is_member(), "IB ⊂ WIB violated");
            }
        }
    }

    #[test]
    fn verdict_margins_respect_minimum() {
        let v = Verdict::member(0.0, Relaxation::Exact, None);
        assert!(v.margin >= MIN_MARGIN);
        let v = Verdict::non_member(1e-12, Relaxation::Exact, None);
        assert!(v.margin >= MIN_MARGIN);
    }

    #[test]
    fn measure_prepare_form_detection() {
        let p = Povm::sharp_z();
        let sigma = {
            let mut m = ComplexMatrix::zeros(2, 2);
            m[(0, 0)] = re(0.7);
            m[(1, 1)] = re(0.3);
            m
        };
        let branches: Vec<CpMap> = p
            .elements
            .iter()
            .map(|m| CpMap::from_choi_unchecked(2, 2, m.transpose().conj().tensor(&sigma)))
            .collect();
        let inst = Instrument::new(branches, None).unwrap();
        let (povm, states) = measure_prepare_form(&inst).unwrap();
        assert!(povm[0].max_abs_diff(&p.elements[0]) < 1e-10);
        assert!(states[0].max_abs_diff(&sigma) < 1e-10);
        // a Lüders σz instrument is measure-prepare with pure preparations
        let lz = Instrument::luders(&Povm::sharp_z()).unwrap();
        assert!(measure_prepare_form(&lz).is_some());
        // identity channel is not
        assert!(measure_prepare_form(&Instrument::from_channel(CpMap::identity(2))).is_none());
    }
}
