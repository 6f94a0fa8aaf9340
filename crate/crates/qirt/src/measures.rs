//! Resource quantification for instrument sets relative to a chosen free set.
//!
//! All measures share one ingredient: an SDP-representable description of the
//! free *cone* (nonnegative multiples of free instrument sets). The cone is
//! emitted once per tag by [`emit_free_cone`], parameterized by a "level"
//! (the total trace scale the free point must carry), and each measure then
//! couples the cone to the input set in its own way:
//!
//! - [`robustness`]: least `r` such that mixing the set with *some* noise set
//!   at weight `r/(1+r)` lands in the free set.
//! - [`weight`]: least `r` such that the set is a convex combination of a free
//!   set (weight `1/(1+r)`) and an arbitrary remainder. May be `+∞`.
//! - [`distance_measure`]: least worst-case flag-channel diamond distance from
//!   the set to any free set with the same outcome counts.
//! - [`extended_measure`]: the same distance minimized over trivial ancilla
//!   enlargements of the input set (truncated at a maximum ancilla dimension,
//!   so the reported value is an upper bound on the untruncated infimum).
//! - [`hierarchy_report`]: the distance measure across the nested free classes
//!   of a single instrument, with the expected orderings checked.

use crate::classify::{product_iter, trace_keep_map, WitnessFamily};
use crate::linalg::ComplexMatrix;
use crate::qobjects::{Instrument, InstrumentSet, Povm};
use crate::sdp::{
    BuilderSolution, LinMap, LinStep, MatExpr, MatTerm, Relation, ScalarId, SdpBuilder,
    SdpOptions, VarId,
};
use crate::{QirtError, Result};

// ---------------------------------------------------------------------------
// Free-set specification
// ---------------------------------------------------------------------------

/// SDP-representable free classes of instrument sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FreeTag {
    /// Trash-and-prepare branches: every branch Choi is I ⊗ τ_a.
    Tp,
    /// Each branch Choi is PPT (exact entanglement-breaking for dims ≤ 2×3).
    EbPpt,
    /// The summed (induced-channel) Choi of each instrument is PPT.
    WebPpt,
    /// Traditionally compatible: one joint instrument post-processes to all.
    Tc,
    /// Parallel compatible: one broadcast instrument marginalizes to all.
    Pc,
    /// Incompatibility-breaking against a finite witness family (relaxation).
    IbWitness,
    /// Weak-incompatibility-breaking against a witness family (relaxation).
    WibWitness,
}

impl FreeTag {
    pub fn name(self) -> &'static str {
        match self {
            FreeTag::Tp => "TP",
            FreeTag::EbPpt => "EB_PPT",
            FreeTag::WebPpt => "WEB_PPT",
            FreeTag::Tc => "TC",
            FreeTag::Pc => "PC",
            FreeTag::IbWitness => "IB_Witness",
            FreeTag::WibWitness => "WIB_Witness",
        }
    }

    pub fn from_name(s: &str) -> Result<Self> {
        Ok(match s {
            "TP" => FreeTag::Tp,
            "EB_PPT" => FreeTag::EbPpt,
            "WEB_PPT" => FreeTag::WebPpt,
            "TC" => FreeTag::Tc,
            "PC" => FreeTag::Pc,
            "IB_Witness" => FreeTag::IbWitness,
            "WIB_Witness" => FreeTag::WibWitness,
            other => return Err(QirtError::UnsupportedTag(other.to_string())),
        })
    }
}

/// A free set to measure against: a tag plus, for witness-based tags, the
/// family of incompatible measurement sets the free objects must defeat.
#[derive(Debug, Clone)]
pub struct FreeSetSpec {
    pub tag: FreeTag,
    pub witnesses: Option<WitnessFamily>,
    pub note: String,
}

impl FreeSetSpec {
    pub fn tp() -> Self {
        Self { tag: FreeTag::Tp, witnesses: None, note: "trash-and-prepare branches".into() }
    }

    pub fn eb_ppt() -> Self {
        Self {
            tag: FreeTag::EbPpt,
            witnesses: None,
            note: "branchwise PPT Chois (exact entanglement-breaking for dims ≤ 2×3)".into(),
        }
    }

    pub fn web_ppt() -> Self {
        Self {
            tag: FreeTag::WebPpt,
            witnesses: None,
            note: "PPT induced-channel Choi (exact for dims ≤ 2×3)".into(),
        }
    }

    pub fn tc() -> Self {
        Self { tag: FreeTag::Tc, witnesses: None, note: "traditionally compatible sets".into() }
    }

    pub fn pc() -> Self {
        Self { tag: FreeTag::Pc, witnesses: None, note: "parallel compatible sets".into() }
    }

    pub fn ib_witness(witnesses: WitnessFamily) -> Self {
        Self {
            tag: FreeTag::IbWitness,
            witnesses: Some(witnesses),
            note: "incompatibility-breaking against a finite witness family".into(),
        }
    }

    pub fn wib_witness(witnesses: WitnessFamily) -> Self {
        Self {
            tag: FreeTag::WibWitness,
            witnesses: Some(witnesses),
            note: "weak-incompatibility-breaking against a finite witness family".into(),
        }
    }

    /// Whether a value computed over this free set is exact or only a lower
    /// bound on the measure over the true (smaller) free set.
    pub fn bound_direction(&self, din: usize, dout: usize) -> BoundDirection {
        match self.tag {
            FreeTag::Tp | FreeTag::Tc | FreeTag::Pc => BoundDirection::Exact,
            FreeTag::EbPpt | FreeTag::WebPpt => {
                if din * dout <= 6 {
                    BoundDirection::Exact
                } else {
                    BoundDirection::LowerBound
                }
            }
            FreeTag::IbWitness | FreeTag::WibWitness => BoundDirection::LowerBound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundDirection {
    Exact,
    LowerBound,
}

/// Result of one measure computation.
#[derive(Debug, Clone)]
pub struct MeasureResult {
    pub value: f64,
    pub bound_direction: BoundDirection,
    /// Branch Chois of the optimal free competitor, normalized to trace
    /// level 1, indexed `[instrument][outcome]`. `None` when no finite
    /// competitor exists (infinite weight).
    pub free_point: Option<Vec<Vec<ComplexMatrix>>>,
    pub iterations: usize,
    pub note: String,
}

/// Compact qubit witness family (one mutually unbiased pair plus the triple)
/// for witness-based free sets inside measure SDPs, where a large family
/// would blow up the joint-variable grids.
pub fn compact_qubit_witnesses() -> Result<WitnessFamily> {
    let z = Povm::sharp_z();
    let x = Povm::sharp_x();
    let y = Povm::sharp_y();
    WitnessFamily::new(
        vec![vec![z.clone(), x.clone()], vec![z, x, y]],
        vec!["mub-pair-zx".into(), "mub-triple-zxy".into()],
        "compact qubit witness family for measure SDPs".into(),
    )
}

// ---------------------------------------------------------------------------
// Matrix-expression helpers
// ---------------------------------------------------------------------------

fn map_expr(e: &MatExpr, map: &LinMap, out_dim: usize) -> MatExpr {
    MatExpr {
        dim: out_dim,
        terms: e
            .terms
            .iter()
            .map(|t| MatTerm { var: t.var, map: t.map.clone().then_map(map) })
            .collect(),
        scalar_terms: e.scalar_terms.iter().map(|(s, m)| (*s, map.apply(m))).collect(),
        constant: map.apply(&e.constant),
    }
}

fn add_expr(mut a: MatExpr, b: &MatExpr) -> MatExpr {
    debug_assert_eq!(a.dim, b.dim);
    a.terms.extend(b.terms.iter().cloned());
    a.scalar_terms.extend(b.scalar_terms.iter().map(|(s, m)| (*s, m.clone())));
    a.constant = a.constant.add(&b.constant);
    a
}

fn neg_expr(e: &MatExpr) -> MatExpr {
    MatExpr {
        dim: e.dim,
        terms: e
            .terms
            .iter()
            .map(|t| MatTerm { var: t.var, map: t.map.clone().then(LinStep::Scale(-1.0)) })
            .collect(),
        scalar_terms: e.scalar_terms.iter().map(|(s, m)| (*s, m.scale_re(-1.0))).collect(),
        constant: e.constant.scale_re(-1.0),
    }
}

fn sub_expr(a: MatExpr, b: &MatExpr) -> MatExpr {
    add_expr(a, &neg_expr(b))
}

fn eval_expr(sol: &BuilderSolution, e: &MatExpr) -> ComplexMatrix {
    let mut acc = e.constant.clone();
    for t in &e.terms {
        acc = acc.add(&t.map.apply(sol.value_of(t.var)));
    }
    for (s, m) in &e.scalar_terms {
        acc = acc.add(&m.scale_re(sol.scalar(*s)));
    }
    acc
}

/// X ↦ Tr_out[X (I ⊗ M)] for a PSD effect M on the output factor, as a
/// completely positive structural map (Kraus ops I ⊗ ⟨k|√M).
fn heisenberg_effect_map(din: usize, effect: &ComplexMatrix) -> Result<LinMap> {
    let dout = effect.rows;
    let sqrt = effect.psd_sqrt()?;
    let id_in = ComplexMatrix::identity(din);
    let kraus: Vec<ComplexMatrix> = (0..dout)
        .map(|k| {
            let bra = ComplexMatrix::ket(dout, k).adjoint().matmul(&sqrt);
            id_in.tensor(&bra)
        })
        .collect();
    Ok(LinMap { steps: vec![LinStep::Kraus(kraus)] })
}

// ---------------------------------------------------------------------------
// Free-cone emitter
// ---------------------------------------------------------------------------

/// Affine scalar expression c + Σ w_k s_k used as the trace level of the cone.
#[derive(Clone)]
struct Level {
    constant: f64,
    scalars: Vec<(ScalarId, f64)>,
}

impl Level {
    fn one() -> Self {
        Self { constant: 1.0, scalars: Vec::new() }
    }

    fn one_plus(r: ScalarId) -> Self {
        Self { constant: 1.0, scalars: vec![(r, 1.0)] }
    }

    /// level · I as a constraint expression.
    fn times_identity(&self, dim: usize) -> MatExpr {
        let id = ComplexMatrix::identity(dim);
        let mut e = MatExpr::zero(dim).add_const(&id.scale_re(self.constant));
        for (s, w) in &self.scalars {
            e = e.push_scalar(*s, id.scale_re(*w));
        }
        e
    }
}

/// Branch-Choi expressions of a point in the free cone at the given trace
/// level, indexed `[instrument][outcome]`. Expressions are guaranteed PSD by
/// construction (each is a PSD variable or a CP image / sum of PSD variables).
struct FreeCone {
    branch: Vec<Vec<MatExpr>>,
}

fn emit_free_cone(
    b: &mut SdpBuilder,
    spec: &FreeSetSpec,
    din: usize,
    dout: usize,
    n_out: &[usize],
    level: &Level,
) -> Result<FreeCone> {
    let d = din * dout;
    let n_sets = n_out.len();

    // Trace-preservation of each instrument in the cone: Tr_out Σ_a F_a = level·I.
    let tp_constraint = |b: &mut SdpBuilder, branches: &[MatExpr]| {
        let mut e = MatExpr::zero(din);
        for br in branches {
            e = add_expr(e, &map_expr(br, &LinMap::trace_second(din, dout), din));
        }
        b.add_matrix_eq(&sub_expr(e, &level.times_identity(din)));
    };

    match spec.tag {
        FreeTag::Tp => {
            let mut branch = Vec::new();
            for &na in n_out {
                let mut row = Vec::new();
                let mut taus = Vec::new();
                for _ in 0..na {
                    let tau = b.herm_psd_var(dout);
                    taus.push(tau);
                    row.push(MatExpr::zero(d).push(tau, LinMap::tensor_id_left(din, dout)));
                }
                // Σ_a Tr τ_a = level.
                let id = ComplexMatrix::identity(dout);
                let mats: Vec<(VarId, ComplexMatrix)> =
                    taus.iter().map(|&t| (t, id.clone())).collect();
                let scalars: Vec<(ScalarId, f64)> =
                    level.scalars.iter().map(|&(s, w)| (s, -w)).collect();
                b.add_pairing(mats, scalars, Relation::Eq, level.constant);
                branch.push(row);
            }
            Ok(FreeCone { branch })
        }
        FreeTag::EbPpt => {
            let pt = LinMap::partial_transpose(vec![din, dout], 0);
            let mut branch = Vec::new();
            for &na in n_out {
                let mut row = Vec::new();
                for _ in 0..na {
                    let j = b.herm_psd_var(d);
                    let p = b.herm_psd_var(d);
                    let e = MatExpr::var(d, p).push(j, pt.clone().then(LinStep::Scale(-1.0)));
                    b.add_matrix_eq(&e);
                    row.push(MatExpr::var(d, j));
                }
                tp_constraint(b, &row);
                branch.push(row);
            }
            Ok(FreeCone { branch })
        }
        FreeTag::WebPpt => {
            let pt = LinMap::partial_transpose(vec![din, dout], 0);
            let mut branch = Vec::new();
            for &na in n_out {
                let mut row = Vec::new();
                let p = b.herm_psd_var(d);
                let mut e = MatExpr::var(d, p);
                for _ in 0..na {
                    let j = b.herm_psd_var(d);
                    e = e.push(j, pt.clone().then(LinStep::Scale(-1.0)));
                    row.push(MatExpr::var(d, j));
                }
                b.add_matrix_eq(&e);
                tp_constraint(b, &row);
                branch.push(row);
            }
            Ok(FreeCone { branch })
        }
        FreeTag::Tc => {
            let combos = product_iter(n_out);
            let joints: Vec<VarId> = combos.iter().map(|_| b.herm_psd_var(d)).collect();
            let mut branch = Vec::new();
            for (i, &na) in n_out.iter().enumerate() {
                let mut row = Vec::new();
                for a in 0..na {
                    let mut e = MatExpr::zero(d);
                    for (x, combo) in combos.iter().enumerate() {
                        if combo[i] == a {
                            e = e.push(joints[x], LinMap::identity());
                        }
                    }
                    row.push(e);
                }
                branch.push(row);
            }
            // One TP constraint suffices: every instrument's branch sum equals
            // the full joint sum.
            tp_constraint(b, &branch[0].clone());
            Ok(FreeCone { branch })
        }
        FreeTag::Pc => {
            let mut dims = vec![din];
            dims.extend(std::iter::repeat(dout).take(n_sets));
            let total: usize = dims.iter().product();
            let combos = product_iter(n_out);
            let joints: Vec<VarId> = combos.iter().map(|_| b.herm_psd_var(total)).collect();
            let mut branch = Vec::new();
            for (i, &na) in n_out.iter().enumerate() {
                let keep = trace_keep_map(&dims, &[0, i + 1]);
                let mut row = Vec::new();
                for a in 0..na {
                    let mut e = MatExpr::zero(d);
                    for (x, combo) in combos.iter().enumerate() {
                        if combo[i] == a {
                            e = e.push(joints[x], keep.clone());
                        }
                    }
                    row.push(e);
                }
                branch.push(row);
            }
            // TP of the joint broadcast instrument.
            let dout_all = total / din;
            let mut e = MatExpr::zero(din);
            for &j in &joints {
                e = e.push(j, LinMap::trace_second(din, dout_all));
            }
            b.add_matrix_eq(&sub_expr(e, &level.times_identity(din)));
            Ok(FreeCone { branch })
        }
        FreeTag::IbWitness | FreeTag::WibWitness => {
            let fam = spec.witnesses.as_ref().ok_or_else(|| {
                QirtError::InvalidArgument("witness-based free set requires a witness family".into())
            })?;
            for set in &fam.sets {
                for m in set {
                    if m.dim != dout {
                        return Err(QirtError::DimensionMismatch(
                            "witness measurements must act on the instrument output space".into(),
                        ));
                    }
                }
            }
            let mut branch = Vec::new();
            for &na in n_out {
                let mut row = Vec::new();
                for _ in 0..na {
                    let j = b.herm_psd_var(d);
                    row.push(MatExpr::var(d, j));
                }
                tp_constraint(b, &row);

                for set in &fam.sets {
                    match spec.tag {
                        FreeTag::WibWitness => {
                            // The induced channel must map the witness set to a
                            // jointly measurable one in the Heisenberg picture.
                            let mut s_expr = MatExpr::zero(d);
                            for br in &row {
                                s_expr = add_expr(s_expr, br);
                            }
                            let shape: Vec<usize> =
                                set.iter().map(|m| m.n_outcomes()).collect();
                            let combos = product_iter(&shape);
                            let h: Vec<VarId> =
                                combos.iter().map(|_| b.herm_psd_var(din)).collect();
                            for (y, povm) in set.iter().enumerate() {
                                for m in 0..povm.n_outcomes() {
                                    let hm = heisenberg_effect_map(din, &povm.elements[m])?;
                                    let mut e = map_expr(&s_expr, &hm, din);
                                    for (x, combo) in combos.iter().enumerate() {
                                        if combo[y] == m {
                                            e = e.push(h[x], LinMap::scale(-1.0));
                                        }
                                    }
                                    b.add_matrix_eq(&e);
                                }
                            }
                        }
                        FreeTag::IbWitness => {
                            // The flagged Heisenberg measurements (outcome =
                            // branch index × witness outcome) must be jointly
                            // measurable across the witness set.
                            let shape: Vec<usize> =
                                set.iter().map(|m| na * m.n_outcomes()).collect();
                            let combos = product_iter(&shape);
                            let h: Vec<VarId> =
                                combos.iter().map(|_| b.herm_psd_var(din)).collect();
                            for (y, povm) in set.iter().enumerate() {
                                let nm = povm.n_outcomes();
                                for a in 0..na {
                                    for m in 0..nm {
                                        let hm =
                                            heisenberg_effect_map(din, &povm.elements[m])?;
                                        let flat = a * nm + m;
                                        let mut e = map_expr(&row[a], &hm, din);
                                        for (x, combo) in combos.iter().enumerate() {
                                            if combo[y] == flat {
                                                e = e.push(h[x], LinMap::scale(-1.0));
                                            }
                                        }
                                        b.add_matrix_eq(&e);
                                    }
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                }
                branch.push(row);
            }
            Ok(FreeCone { branch })
        }
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

fn set_shape(set: &InstrumentSet) -> Result<(usize, usize, Vec<usize>)> {
    if set.is_empty() {
        return Err(QirtError::InvalidArgument("empty instrument set".into()));
    }
    let din = set.dim_in();
    let dout = set.dim_out();
    let n_out = set.instruments.iter().map(|i| i.n_outcomes()).collect();
    Ok((din, dout, n_out))
}

fn require_mixture_tag(spec: &FreeSetSpec, what: &str) -> Result<()> {
    match spec.tag {
        FreeTag::IbWitness | FreeTag::WibWitness => Err(QirtError::UnsupportedTag(format!(
            "{} is only available for the TP, EB_PPT, WEB_PPT, TC, and PC free sets (witness relaxations would not certify a mixture bound); got {}",
            what,
            spec.tag.name()
        ))),
        _ => Ok(()),
    }
}

fn extract_free_point(
    sol: &BuilderSolution,
    cone: &FreeCone,
    scale: f64,
) -> Vec<Vec<ComplexMatrix>> {
    cone.branch
        .iter()
        .map(|row| row.iter().map(|e| eval_expr(sol, e).scale_re(scale)).collect())
        .collect()
}

/// Least `r ≥ 0` such that `(Λ + r·Ñ)/(1+r)` is free for some noise set `Ñ`
/// with the same shape. Zero iff the set is free (up to solver tolerance).
pub fn robustness(set: &InstrumentSet, spec: &FreeSetSpec) -> Result<MeasureResult> {
    robustness_with(set, spec, &SdpOptions::default())
}

pub fn robustness_with(
    set: &InstrumentSet,
    spec: &FreeSetSpec,
    opts: &SdpOptions,
) -> Result<MeasureResult> {
    require_mixture_tag(spec, "robustness")?;
    let (din, dout, n_out) = set_shape(set)?;
    let mut b = SdpBuilder::new();
    let r = b.nonneg_scalar();
    let level = Level::one_plus(r);
    let cone = emit_free_cone(&mut b, spec, din, dout, &n_out, &level)?;

    let id_in = ComplexMatrix::identity(din);
    for (i, inst) in set.instruments.iter().enumerate() {
        // Noise branches N_a = r·Ñ_a: PSD with Tr_out Σ_a N_a = r·I.
        let mut tp = MatExpr::zero(din).push_scalar(r, id_in.scale_re(-1.0));
        for (a, br) in inst.branches.iter().enumerate() {
            let n = b.herm_psd_var(din * dout);
            tp = tp.push(n, LinMap::trace_second(din, dout));
            // Free point = Λ_a + N_a.
            let e = cone.branch[i][a].clone().sub_const(&br.choi).push(n, LinMap::scale(-1.0));
            b.add_matrix_eq(&e);
        }
        b.add_matrix_eq(&tp);
    }
    b.minimize(vec![], vec![(r, 1.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let value = sol.objective.max(0.0);
    let free_point = Some(extract_free_point(&sol, &cone, 1.0 / (1.0 + value)));
    Ok(MeasureResult {
        value,
        bound_direction: spec.bound_direction(din, dout),
        free_point,
        iterations: sol.iterations,
        note: spec.note.clone(),
    })
}

/// Least `r ≥ 0` such that `Λ = (Φ + r·Ñ)/(1+r)` with `Φ` free. Infinite when
/// no free set is absolutely continuous with respect to `Λ` (value `+∞`).
///
/// Solved in the bounded parameterization `q = 1/(1+r)`: maximize the free
/// component weight `q` such that a free-cone point at level `q` fits under
/// `Λ` branchwise; the remainder is then automatically a valid noise set.
pub fn weight(set: &InstrumentSet, spec: &FreeSetSpec) -> Result<MeasureResult> {
    weight_with(set, spec, &SdpOptions::default())
}

/// Free weights below this threshold are reported as infinite weight.
pub const WEIGHT_INFINITY_THRESHOLD: f64 = 1e-7;

pub fn weight_with(
    set: &InstrumentSet,
    spec: &FreeSetSpec,
    opts: &SdpOptions,
) -> Result<MeasureResult> {
    require_mixture_tag(spec, "weight")?;
    let (din, dout, n_out) = set_shape(set)?;
    let mut b = SdpBuilder::new();
    let q = b.nonneg_scalar();
    let level = Level { constant: 0.0, scalars: vec![(q, 1.0)] };
    let cone = emit_free_cone(&mut b, spec, din, dout, &n_out, &level)?;

    for (i, inst) in set.instruments.iter().enumerate() {
        for (a, br) in inst.branches.iter().enumerate() {
            // Λ_a − F_a ⪰ 0; the remainder (Λ−F)/(1−q) is then a valid noise
            // instrument because both sides are trace-preserving at their levels.
            let e = neg_expr(&cone.branch[i][a]).add_const(&br.choi);
            b.add_psd_ge_zero(&e);
        }
    }
    b.minimize(vec![], vec![(q, -1.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let qstar = (-sol.objective).clamp(0.0, 1.0);
    if qstar <= WEIGHT_INFINITY_THRESHOLD {
        return Ok(MeasureResult {
            value: f64::INFINITY,
            bound_direction: spec.bound_direction(din, dout),
            free_point: None,
            iterations: sol.iterations,
            note: format!("{} (no finite free component exists)", spec.note),
        });
    }
    let value = (1.0 / qstar - 1.0).max(0.0);
    let free_point = Some(extract_free_point(&sol, &cone, 1.0 / qstar));
    Ok(MeasureResult {
        value,
        bound_direction: spec.bound_direction(din, dout),
        free_point,
        iterations: sol.iterations,
        note: spec.note.clone(),
    })
}

/// Least worst-case flag-channel diamond distance from the set to any member
/// of the free set with matching outcome counts.
pub fn distance_measure(set: &InstrumentSet, spec: &FreeSetSpec) -> Result<MeasureResult> {
    distance_measure_with(set, spec, &SdpOptions::default())
}

pub fn distance_measure_with(
    set: &InstrumentSet,
    spec: &FreeSetSpec,
    opts: &SdpOptions,
) -> Result<MeasureResult> {
    let (din, dout, n_out) = set_shape(set)?;
    let mut b = SdpBuilder::new();
    let mu = b.nonneg_scalar();
    let cone = emit_free_cone(&mut b, spec, din, dout, &n_out, &Level::one())?;

    let d = din * dout;
    let id_in = ComplexMatrix::identity(din);
    for (i, inst) in set.instruments.iter().enumerate() {
        let n = n_out[i];
        let big = d * n;
        // Flagged Chois of the target and the free competitor.
        let mut target_flag = ComplexMatrix::zeros(big, big);
        let mut free_flag = MatExpr::zero(big);
        for (a, br) in inst.branches.iter().enumerate() {
            let flag = LinMap::tensor_flag(d, n, a);
            target_flag = target_flag.add(&flag.apply(&br.choi));
            free_flag = add_expr(free_flag, &map_expr(&cone.branch[i][a], &flag, big));
        }
        // Dual diamond-norm program on the difference, with a shared epigraph
        // scale μ: Z ⪰ Δ, Tr_out Z ⪯ μ·I, distance = 2μ.
        let z = b.herm_psd_var(big);
        let e = add_expr(MatExpr::var(big, z).sub_const(&target_flag), &free_flag);
        b.add_psd_ge_zero(&e);
        let e2 = MatExpr::zero(din)
            .push_scalar(mu, id_in.clone())
            .push(z, LinMap::trace_second(din, dout * n).then(LinStep::Scale(-1.0)));
        b.add_psd_ge_zero(&e2);
    }
    b.minimize(vec![], vec![(mu, 2.0)]);
    let sol = b.solve(opts)?;
    sol.ok()?;
    let value = sol.objective.max(0.0);
    let free_point = Some(extract_free_point(&sol, &cone, 1.0));
    Ok(MeasureResult {
        value,
        bound_direction: spec.bound_direction(din, dout),
        free_point,
        iterations: sol.iterations,
        note: spec.note.clone(),
    })
}

/// Distance measure minimized over trivial ancilla enlargements of the input
/// (branches Λ_a ⊗ Tr_B), truncated at `max_dim_b`. The `dim_b = 1` term
/// equals [`distance_measure`], so the result never exceeds it; the reported
/// value is an upper bound on the untruncated infimum.
pub fn extended_measure(
    set: &InstrumentSet,
    spec: &FreeSetSpec,
    max_dim_b: usize,
) -> Result<MeasureResult> {
    extended_measure_with(set, spec, max_dim_b, &SdpOptions::default())
}

pub fn extended_measure_with(
    set: &InstrumentSet,
    spec: &FreeSetSpec,
    max_dim_b: usize,
    opts: &SdpOptions,
) -> Result<MeasureResult> {
    if max_dim_b == 0 {
        return Err(QirtError::InvalidArgument("max_dim_b must be at least 1".into()));
    }
    let mut best: Option<(usize, MeasureResult)> = None;
    for dim_b in 1..=max_dim_b {
        let res = distance_measure_with(&set.enlarge(dim_b), spec, opts)?;
        let better = best.as_ref().map(|(_, b)| res.value < b.value).unwrap_or(true);
        if better {
            best = Some((dim_b, res));
        }
    }
    let (dim_b, mut res) = best.expect("at least one enlargement");
    res.note = format!(
        "{} (ancilla enlargement truncated at dim {}; minimum attained at dim {}; upper bound on the untruncated infimum)",
        res.note, max_dim_b, dim_b
    );
    Ok(res)
}

// ---------------------------------------------------------------------------
// Hierarchy report
// ---------------------------------------------------------------------------

/// Distance-measure values of one instrument across the nested free classes,
/// with the orderings implied by the inclusions checked numerically.
#[derive(Debug, Clone)]
pub struct HierarchyReport {
    /// Distance to trash-and-prepare instruments.
    pub r_ip: f64,
    /// Distance to branchwise-PPT (entanglement-breaking) instruments.
    pub r_ep: f64,
    /// Distance to instruments with PPT induced channel.
    pub r_sep: f64,
    /// Distance to incompatibility-breaking instruments (witness relaxation).
    pub r_mip: f64,
    /// Distance to weak-incompatibility-breaking instruments (witness relaxation).
    pub r_smip: f64,
    /// Largest violation of the expected orderings (≤ 0 up to tolerance).
    pub max_violation: f64,
    pub chain_ok: bool,
}

pub fn hierarchy_report(inst: &Instrument, witnesses: &WitnessFamily) -> Result<HierarchyReport> {
    hierarchy_report_with(inst, witnesses, &SdpOptions::default())
}

pub fn hierarchy_report_with(
    inst: &Instrument,
    witnesses: &WitnessFamily,
    opts: &SdpOptions,
) -> Result<HierarchyReport> {
    let set = InstrumentSet::singleton(inst.clone());
    let r_ip = distance_measure_with(&set, &FreeSetSpec::tp(), opts)?.value;
    let r_ep = distance_measure_with(&set, &FreeSetSpec::eb_ppt(), opts)?.value;
    let r_sep = distance_measure_with(&set, &FreeSetSpec::web_ppt(), opts)?.value;
    let r_mip =
        distance_measure_with(&set, &FreeSetSpec::ib_witness(witnesses.clone()), opts)?.value;
    let r_smip =
        distance_measure_with(&set, &FreeSetSpec::wib_witness(witnesses.clone()), opts)?.value;
    // Inclusions: TP ⊆ EB ⊆ WEB ⊆ WIB-witness, EB ⊆ IB-witness ⊆ WIB-witness.
    let violations = [
        r_ep - r_ip,
        r_sep - r_ep,
        r_mip - r_ep,
        r_smip - r_sep,
        r_smip - r_mip,
    ];
    let max_violation = violations.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(HierarchyReport {
        r_ip,
        r_ep,
        r_sep,
        r_mip,
        r_smip,
        max_violation,
        chain_ok: max_violation <= 1e-6,
    })
}

/// Convenience: 2·r/(1+r), the mixture-to-distance conversion factor.
pub fn mixture_distance_bound(r: f64) -> f64 {
    if r.is_infinite() {
        2.0
    } else {
        2.0 * r / (1.0 + r)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::re;
    use crate::qobjects::{pauli_example_instrument, random, CpMap};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn luders_z() -> Instrument {
        Instrument::luders(&Povm::sharp_z()).unwrap()
    }

    fn luders_x() -> Instrument {
        Instrument::luders(&Povm::sharp_x()).unwrap()
    }

    fn identity_instrument() -> Instrument {
        Instrument::from_channel(CpMap::identity(2))
    }

    fn trash_prepare_instrument() -> Instrument {
        // Two branches, each trash-and-prepare with weight 1/2.
        let s0 = ComplexMatrix::proj(&ComplexMatrix::ket(2, 0));
        let id_half = ComplexMatrix::identity(2).scale_re(0.5);
        let b0 = CpMap::trash_prepare(2, &s0).unwrap();
        let b1 = CpMap::trash_prepare(2, &id_half).unwrap();
        let half = |c: CpMap| CpMap::from_choi_unchecked(2, 2, c.choi.scale_re(0.5));
        Instrument::new(vec![half(b0), half(b1)], None).unwrap()
    }

    #[test]
    fn free_sets_have_zero_measures() {
        let tp = InstrumentSet::singleton(trash_prepare_instrument());
        for (label, res) in [
            ("rob", robustness(&tp, &FreeSetSpec::tp()).unwrap()),
            ("weight", weight(&tp, &FreeSetSpec::tp()).unwrap()),
            ("dist", distance_measure(&tp, &FreeSetSpec::tp()).unwrap()),
        ] {
            assert!(res.value.abs() <= 1e-6, "{label} of a free set should vanish: {}", res.value);
        }

        // Sharp Lüders branches are measure-and-prepare, hence branchwise PPT.
        let eb = InstrumentSet::singleton(luders_z());
        assert!(robustness(&eb, &FreeSetSpec::eb_ppt()).unwrap().value <= 1e-6);
        assert!(distance_measure(&eb, &FreeSetSpec::eb_ppt()).unwrap().value <= 1e-6);

        // An identical pair is traditionally compatible; a trash-and-prepare
        // pair is parallel compatible.
        let pair = InstrumentSet::new(vec![luders_z(), luders_z()]).unwrap();
        assert!(robustness(&pair, &FreeSetSpec::tc()).unwrap().value <= 1e-6);
        let tp_pair =
            InstrumentSet::new(vec![trash_prepare_instrument(), trash_prepare_instrument()])
                .unwrap();
        assert!(robustness(&tp_pair, &FreeSetSpec::pc()).unwrap().value <= 1e-6);
    }

    #[test]
    fn robustness_of_identity_vs_ppt_branches_is_one() {
        // With arbitrary noise instruments the optimum is isotropic by a
        // twirling argument; optimizing N = αI + β|Ω⟩⟨Ω| under N ⪰ 0,
        // Tr_out N = r·I, and PT(J_id + N) ⪰ 0 gives α = 2/3, β = −1/3,
        // r = 2α + β = 1 (the d−1 of the maximally entangled Choi). Noise
        // restricted to the fully depolarizing channel would need r = 2; the
        // general optimum must beat it.
        let set = InstrumentSet::singleton(identity_instrument());
        let res = robustness(&set, &FreeSetSpec::eb_ppt()).unwrap();
        assert!(
            (res.value - 1.0).abs() <= 1e-5,
            "expected robustness 1, got {}",
            res.value
        );
        assert!(res.value < 2.0);
        assert_eq!(res.bound_direction, BoundDirection::Exact);
    }

    #[test]
    fn weight_of_identity_vs_ppt_branches_is_infinite() {
        // The identity Choi is rank one and entangled, so no PPT component of
        // positive weight fits under it.
        let set = InstrumentSet::singleton(identity_instrument());
        let res = weight(&set, &FreeSetSpec::eb_ppt()).unwrap();
        assert!(res.value.is_infinite(), "expected +inf, got {}", res.value);
        assert!(res.free_point.is_none());
        assert_eq!(mixture_distance_bound(res.value), 2.0);
    }

    /// Independent feasibility oracle for the compatibility robustness of a
    /// pair at fixed r: a joint instrument and admissible noise reproducing
    /// the noisy pair, decided by the certified phase-1 feasibility solver.
    fn tc_pair_feasible_at(pair: &[Instrument; 2], r: f64) -> bool {
        let din = pair[0].dim_in;
        let dout = pair[0].dim_out;
        let d = din * dout;
        let shape = [pair[0].n_outcomes(), pair[1].n_outcomes()];
        let combos = product_iter(&shape);
        let mut b = SdpBuilder::new();
        let joints: Vec<VarId> = combos.iter().map(|_| b.herm_psd_var(d)).collect();
        let id_in = ComplexMatrix::identity(din);
        for (i, inst) in pair.iter().enumerate() {
            let mut tp = MatExpr::zero(din).add_const(&id_in.scale_re(-r));
            for (a, br) in inst.branches.iter().enumerate() {
                let n = b.herm_psd_var(d);
                tp = tp.push(n, LinMap::trace_second(din, dout));
                let mut e = MatExpr::zero(d).push(n, LinMap::scale(-1.0)).sub_const(&br.choi);
                for (x, combo) in combos.iter().enumerate() {
                    if combo[i] == a {
                        e = e.push(joints[x], LinMap::identity());
                    }
                }
                b.add_matrix_eq(&e);
            }
            b.add_matrix_eq(&tp);
        }
        let p = b.build();
        let sol = crate::sdp::feasibility(&p).unwrap();
        // Borderline verdicts only occur inside the bisection's final band.
        sol.status != crate::sdp::SdpStatus::Infeasible
    }

    #[test]
    fn tc_robustness_matches_bisection_oracle() {
        let pair = [luders_z(), luders_x()];
        let set = InstrumentSet::new(vec![pair[0].clone(), pair[1].clone()]).unwrap();
        let res = robustness(&set, &FreeSetSpec::tc()).unwrap();
        assert!(res.value > 1e-3, "sharp conjugate pair must be robustly incompatible");

        // Bisection on r using the independent feasibility oracle.
        assert!(!tc_pair_feasible_at(&pair, 1e-4));
        let (mut lo, mut hi) = (0.0f64, 4.0f64);
        assert!(tc_pair_feasible_at(&pair, hi));
        for _ in 0..25 {
            let mid = 0.5 * (lo + hi);
            if tc_pair_feasible_at(&pair, mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let oracle = 0.5 * (lo + hi);
        assert!(
            (res.value - oracle).abs() <= 1e-5,
            "robustness {} vs oracle {}",
            res.value,
            oracle
        );
    }

    /// Independent feasibility oracle for the trash-and-prepare weight at a
    /// fixed free component q = 1/(1+r): τ_a ⪰ 0 with Σ Tr τ_a = q and
    /// Λ_a − I⊗τ_a ⪰ 0.
    fn tp_weight_feasible_at(inst: &Instrument, q: f64) -> bool {
        let din = inst.dim_in;
        let dout = inst.dim_out;
        let d = din * dout;
        let mut b = SdpBuilder::new();
        let id_out = ComplexMatrix::identity(dout);
        let mut taus = Vec::new();
        for br in &inst.branches {
            let tau = b.herm_psd_var(dout);
            taus.push(tau);
            let e = MatExpr::zero(d)
                .push(tau, LinMap::tensor_id_left(din, dout).then(LinStep::Scale(-1.0)))
                .add_const(&br.choi);
            b.add_psd_ge_zero(&e);
        }
        let mats: Vec<(VarId, ComplexMatrix)> =
            taus.iter().map(|&v| (v, id_out.clone())).collect();
        b.add_pairing(mats, vec![], Relation::Eq, q);
        let p = b.build();
        let sol = crate::sdp::feasibility(&p).unwrap();
        sol.status != crate::sdp::SdpStatus::Infeasible
    }

    #[test]
    fn tp_weight_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED);
        let inst = random::instrument(&mut rng, 2, 2, 2);
        let set = InstrumentSet::singleton(inst.clone());
        let res = weight(&set, &FreeSetSpec::tp()).unwrap();
        assert!(res.value.is_finite(), "generic full-rank instrument has finite weight");

        // Bisection on q; the feasible region is [0, q*].
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        assert!(tp_weight_feasible_at(&inst, 1e-6));
        for _ in 0..30 {
            let mid = 0.5 * (lo + hi);
            if tp_weight_feasible_at(&inst, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Compare in the bounded q parameter: the map r = 1/q − 1 amplifies
        // the oracle's boundary-detection error by 1/q².
        let q_oracle = 0.5 * (lo + hi);
        let q_sdp = 1.0 / (1.0 + res.value);
        assert!(
            (q_sdp - q_oracle).abs() <= 2e-5,
            "weight {} (q {}) vs oracle q {}",
            res.value,
            q_sdp,
            q_oracle
        );
    }

    #[test]
    fn distance_of_identity_to_trash_and_prepare() {
        // The best trash-and-prepare approximation of the identity prepares
        // the maximally mixed state; the diamond distance is then 3/2.
        let set = InstrumentSet::singleton(identity_instrument());
        let res = distance_measure(&set, &FreeSetSpec::tp()).unwrap();
        assert!((res.value - 1.5).abs() <= 1e-5, "got {}", res.value);

        // Cross-check: the optimizer really is a valid free instrument at the
        // reported distance.
        let fp = res.free_point.as_ref().unwrap();
        let comp = Instrument::new(
            fp[0]
                .iter()
                .map(|c| CpMap::from_choi_unchecked(2, 2, c.clone()))
                .collect(),
            None,
        )
        .unwrap();
        let d = crate::distances::instrument_distance(&identity_instrument(), &comp).unwrap();
        assert!((d.value - res.value).abs() <= 1e-3, "{} vs {}", d.value, res.value);
    }

    #[test]
    fn mixture_bounds_dominate_distance() {
        // D ≤ 2r/(1+r) for both robustness and weight, and the extended
        // distance never exceeds the plain one.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = FreeSetSpec::eb_ppt();
        for _ in 0..2 {
            let inst = random::instrument(&mut rng, 2, 2, 2);
            let set = InstrumentSet::singleton(inst);
            let dist = distance_measure(&set, &spec).unwrap().value;
            let ext = extended_measure(&set, &spec, 2).unwrap().value;
            let rob = robustness(&set, &spec).unwrap().value;
            let w = weight(&set, &spec).unwrap().value;
            let cap = mixture_distance_bound(rob).min(mixture_distance_bound(w));
            assert!(ext <= dist + 1e-6, "extended {} vs distance {}", ext, dist);
            assert!(dist <= cap + 1e-6, "distance {} vs mixture cap {}", dist, cap);
        }
    }

    #[test]
    fn measures_are_antitone_in_nested_free_sets() {
        let set = InstrumentSet::singleton(pauli_example_instrument());
        let r_tp = robustness(&set, &FreeSetSpec::tp()).unwrap().value;
        let r_eb = robustness(&set, &FreeSetSpec::eb_ppt()).unwrap().value;
        let r_web = robustness(&set, &FreeSetSpec::web_ppt()).unwrap().value;
        assert!(r_tp >= r_eb - 1e-6, "{} vs {}", r_tp, r_eb);
        assert!(r_eb >= r_web - 1e-6, "{} vs {}", r_eb, r_web);
    }

    #[test]
    fn robustness_is_faithful_on_ppt_branches() {
        // Positive for the entangling example, zero for measure-and-prepare.
        let hot = InstrumentSet::singleton(pauli_example_instrument());
        assert!(robustness(&hot, &FreeSetSpec::eb_ppt()).unwrap().value > 1e-4);
        let cold = InstrumentSet::singleton(luders_z());
        assert!(robustness(&cold, &FreeSetSpec::eb_ppt()).unwrap().value <= 1e-6);
    }

    #[test]
    fn robustness_is_convex_under_branchwise_mixing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random::instrument(&mut rng, 2, 2, 2);
        let b = random::instrument(&mut rng, 2, 2, 2);
        let mix = Instrument::new(
            a.branches
                .iter()
                .zip(&b.branches)
                .map(|(x, y)| {
                    CpMap::from_choi_unchecked(
                        2,
                        2,
                        x.choi.scale_re(0.5).add(&y.choi.scale_re(0.5)),
                    )
                })
                .collect(),
            None,
        )
        .unwrap();
        let spec = FreeSetSpec::eb_ppt();
        let ra = robustness(&InstrumentSet::singleton(a), &spec).unwrap().value;
        let rb = robustness(&InstrumentSet::singleton(b), &spec).unwrap().value;
        let rm = robustness(&InstrumentSet::singleton(mix), &spec).unwrap().value;
        assert!(rm <= 0.5 * ra + 0.5 * rb + 1e-6, "{} vs avg of {} and {}", rm, ra, rb);
    }

    #[test]
    fn hierarchy_report_separates_the_example_instrument() {
        let witnesses = compact_qubit_witnesses().unwrap();
        let rep = hierarchy_report(&pauli_example_instrument(), &witnesses).unwrap();
        assert!(rep.r_ep > 1e-3, "entangling branches: r_ep = {}", rep.r_ep);
        assert!(rep.r_sep <= 1e-6, "PPT induced channel: r_sep = {}", rep.r_sep);
        assert!(rep.r_smip <= 1e-6, "r_smip = {}", rep.r_smip);
        assert!(rep.chain_ok, "max violation {}", rep.max_violation);
        assert!(rep.r_ip >= rep.r_ep - 1e-6);
    }

    #[test]
    fn witness_tags_reject_mixture_measures() {
        let witnesses = compact_qubit_witnesses().unwrap();
        let set = InstrumentSet::singleton(luders_z());
        let err = robustness(&set, &FreeSetSpec::ib_witness(witnesses.clone()));
        assert!(matches!(err, Err(QirtError::UnsupportedTag(_))));
        let err = weight(&set, &FreeSetSpec::wib_witness(witnesses));
        assert!(matches!(err, Err(QirtError::UnsupportedTag(_))));
    }

    #[test]
    fn extended_measure_vanishes_on_free_input() {
        let set = InstrumentSet::singleton(luders_z());
        let res = extended_measure(&set, &FreeSetSpec::eb_ppt(), 2).unwrap();
        assert!(res.value <= 1e-6, "got {}", res.value);
        let _ = re(0.0);
    }

    #[test]
    fn tag_names_round_trip() {
        for tag in [
            FreeTag::Tp,
            FreeTag::EbPpt,
            FreeTag::WebPpt,
            FreeTag::Tc,
            FreeTag::Pc,
            FreeTag::IbWitness,
            FreeTag::WibWitness,
        ] {
            assert_eq!(FreeTag::from_name(tag.name()).unwrap(), tag);
        }
        assert!(FreeTag::from_name("nope").is_err());
    }
}
