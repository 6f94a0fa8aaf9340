//! Measurements, channels, and instruments.
//!
//! The canonical representation of a CP map is its unnormalized Choi matrix
//! with the input factor first: J(Φ) = (I⊗Φ)(|Ω⟩⟨Ω|), |Ω⟩ = Σ_i |ii⟩.
//! Every construction here (composition, duals, flag channels, Heisenberg
//! measurements) is linear in the Choi matrix, which is what lets the rest of
//! the crate phrase all optimizations as semidefinite programs.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::linalg::{ops, re, ComplexMatrix, C64};
use crate::{QirtError, Result};

/// Validation tolerance for object invariants (PSD defect, TP defect).
pub const OBJECT_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// POVMs
// ---------------------------------------------------------------------------

/// Positive operator-valued measure: PSD elements summing to the identity.
#[derive(Debug, Clone)]
pub struct Povm {
    pub dim: usize,
    pub elements: Vec<ComplexMatrix>,
    pub labels: Vec<String>,
}

impl Povm {
    pub fn new(elements: Vec<ComplexMatrix>, labels: Option<Vec<String>>) -> Result<Self> {
        Self::with_tol(elements, labels, OBJECT_TOL)
    }

    pub fn with_tol(
        elements: Vec<ComplexMatrix>,
        labels: Option<Vec<String>>,
        tol: f64,
    ) -> Result<Self> {
        let dim = elements
            .first()
            .ok_or_else(|| QirtError::InvalidObject("empty POVM".into()))?
            .rows;
        let mut sum = ComplexMatrix::zeros(dim, dim);
        for e in &elements {
            if e.rows != dim || e.cols != dim {
                return Err(QirtError::DimensionMismatch("POVM element dims".into()));
            }
            if !e.is_hermitian(tol.max(1e-9)) || !e.is_psd(tol) {
                return Err(QirtError::InvalidObject("POVM element not PSD".into()));
            }
            sum = sum.add(e);
        }
        if sum.max_abs_diff(&ComplexMatrix::identity(dim)) > tol {
            return Err(QirtError::InvalidObject("POVM elements do not sum to identity".into()));
        }
        let labels = labels.unwrap_or_else(|| (0..elements.len()).map(|i| i.to_string()).collect());
        if labels.len() != elements.len() {
            return Err(QirtError::InvalidArgument("label count mismatch".into()));
        }
        Ok(Self { dim, elements, labels })
    }

    pub fn n_outcomes(&self) -> usize {
        self.elements.len()
    }

    /// Trivial measurement {𝟙}.
    pub fn trivial(dim: usize) -> Self {
        Self {
            dim,
            elements: vec![ComplexMatrix::identity(dim)],
            labels: vec!["0".into()],
        }
    }

    /// Sharp two-outcome PVM from the ±1 eigenspaces of a qubit Pauli-like
    /// observable given by its two orthonormal eigenprojectors.
    pub fn sharp_z() -> Self {
        Self::new(
            vec![
                ComplexMatrix::proj(&ComplexMatrix::ket(2, 0)),
                ComplexMatrix::proj(&ComplexMatrix::ket(2, 1)),
            ],
            Some(vec!["1".into(), "2".into()]),
        )
        .expect("valid PVM")
    }

    pub fn sharp_x() -> Self {
        Self::new(
            vec![
                ComplexMatrix::proj(&ops::plus_ket()),
                ComplexMatrix::proj(&ops::minus_ket()),
            ],
            Some(vec!["1".into(), "2".into()]),
        )
        .expect("valid PVM")
    }

    pub fn sharp_y() -> Self {
        let sy = ops::sigma_y();
        let (_, v) = sy.hermitian_eigs().expect("hermitian");
        let mut cols = Vec::new();
        for j in 0..2 {
            let mut c = ComplexMatrix::zeros(2, 1);
            for i in 0..2 {
                c[(i, 0)] = v[(i, j)];
            }
            cols.push(ComplexMatrix::proj(&c));
        }
        Self::new(cols, Some(vec!["1".into(), "2".into()])).expect("valid PVM")
    }

    /// Classically post-process by a stochastic table p(b|a) (rows a, cols b).
    pub fn post_process(&self, table: &[Vec<f64>]) -> Result<Self> {
        if table.len() != self.n_outcomes() {
            return Err(QirtError::DimensionMismatch("post-processing table rows".into()));
        }
        let nb = table[0].len();
        let mut elements = vec![ComplexMatrix::zeros(self.dim, self.dim); nb];
        for (a, row) in table.iter().enumerate() {
            if row.len() != nb {
                return Err(QirtError::DimensionMismatch("ragged table".into()));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-10 || row.iter().any(|&p| p < -1e-12) {
                return Err(QirtError::InvalidArgument("table rows must be stochastic".into()));
            }
            for (b, &p) in row.iter().enumerate() {
                elements[b] = elements[b].add(&self.elements[a].scale_re(p));
            }
        }
        Povm::with_tol(elements, None, 1e-8)
    }
}

// ---------------------------------------------------------------------------
// CP maps
// ---------------------------------------------------------------------------

/// Completely positive, trace-non-increasing map in Choi form.
#[derive(Debug, Clone)]
pub struct CpMap {
    pub dim_in: usize,
    pub dim_out: usize,
    pub choi: ComplexMatrix,
    kraus: Option<Vec<ComplexMatrix>>,
}

impl CpMap {
    /// Validated constructor: Choi PSD and trace-non-increasing within `tol`.
    pub fn from_choi_tol(
        dim_in: usize,
        dim_out: usize,
        choi: ComplexMatrix,
        tol: f64,
    ) -> Result<Self> {
        if choi.rows != dim_in * dim_out || choi.cols != dim_in * dim_out {
            return Err(QirtError::DimensionMismatch("Choi matrix size".into()));
        }
        if !choi.is_hermitian(tol.max(1e-9)) {
            return Err(QirtError::NotHermitian(choi.herm_defect()));
        }
        let choi = choi.herm_part();
        if !choi.is_psd(tol) {
            return Err(QirtError::InvalidObject(format!(
                "Choi not PSD (min eig {:.3e})",
                choi.min_eig().unwrap_or(f64::NAN)
            )));
        }
        let tr_in = choi.partial_trace(&[dim_in, dim_out], &[0])?;
        // trace non-increasing: I - Tr_out J ⪰ 0
        let slack = ComplexMatrix::identity(dim_in).sub(&tr_in);
        if !slack.is_psd(tol) {
            return Err(QirtError::InvalidObject("map increases trace".into()));
        }
        Ok(Self { dim_in, dim_out, choi, kraus: None })
    }

    pub fn from_choi(dim_in: usize, dim_out: usize, choi: ComplexMatrix) -> Result<Self> {
        Self::from_choi_tol(dim_in, dim_out, choi, OBJECT_TOL)
    }

    /// Unchecked constructor for internal use on already-validated data
    /// (e.g. SDP optimizers with harmless numerical noise).
    pub fn from_choi_unchecked(dim_in: usize, dim_out: usize, choi: ComplexMatrix) -> Self {
        Self { dim_in, dim_out, choi: choi.herm_part(), kraus: None }
    }

    pub fn from_kraus(kraus: Vec<ComplexMatrix>) -> Result<Self> {
        let first = kraus
            .first()
            .ok_or_else(|| QirtError::InvalidArgument("empty Kraus list".into()))?;
        let (dout, din) = (first.rows, first.cols);
        let mut choi = ComplexMatrix::zeros(din * dout, din * dout);
        for k in &kraus {
            if k.rows != dout || k.cols != din {
                return Err(QirtError::DimensionMismatch("Kraus operator dims".into()));
            }
            // (I⊗K)|Ω⟩ = Σ_i |i⟩ ⊗ K|i⟩, i.e. vec with entries v[(i,o)] = K[o,i]
            let mut v = ComplexMatrix::zeros(din * dout, 1);
            for i in 0..din {
                for o in 0..dout {
                    v[(i * dout + o, 0)] = k[(o, i)];
                }
            }
            choi = choi.add(&ComplexMatrix::proj(&v));
        }
        let mut m = Self::from_choi_tol(din, dout, choi, 1e-8)?;
        m.kraus = Some(kraus);
        Ok(m)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_kraus(vec![ComplexMatrix::identity(d)]).expect("identity channel")
    }

    /// Depolarizing channel ρ ↦ tρ + (1−t)Tr[ρ]·I/d; valid for
    /// −1/(d²−1) ≤ t ≤ 1.
    pub fn depolarizing(d: usize, t: f64) -> Result<Self> {
        let lo = -1.0 / ((d * d - 1) as f64);
        if !(lo - 1e-12..=1.0 + 1e-12).contains(&t) {
            return Err(QirtError::InvalidArgument(format!(
                "depolarizing parameter {t} outside [{lo}, 1]"
            )));
        }
        let choi = ops::omega(d)
            .scale_re(t)
            .add(&ComplexMatrix::identity(d * d).scale_re((1.0 - t) / d as f64));
        Self::from_choi_tol(d, d, choi, 1e-9)
    }

    /// Trash-and-prepare channel ρ ↦ Tr[ρ]·σ.
    pub fn trash_prepare(dim_in: usize, sigma: &ComplexMatrix) -> Result<Self> {
        let choi = ComplexMatrix::identity(dim_in).tensor(sigma);
        Self::from_choi_tol(dim_in, sigma.rows, choi, 1e-8)
    }

    /// Partial-trace channel Tr_B on H_A ⊗ H_B → H_A (da may be 1: full trace).
    pub fn trace_out_second(da: usize, db: usize) -> Self {
        // Kraus operators K_j = I_A ⊗ ⟨j|_B
        let mut kraus = Vec::new();
        for j in 0..db {
            let bra = ComplexMatrix::ket(db, j).adjoint();
            kraus.push(ComplexMatrix::identity(da).tensor(&bra));
        }
        Self::from_kraus(kraus).expect("partial trace channel")
    }

    pub fn is_trace_preserving(&self, tol: f64) -> bool {
        let tr_in = self
            .choi
            .partial_trace(&[self.dim_in, self.dim_out], &[0])
            .expect("dims");
        tr_in.max_abs_diff(&ComplexMatrix::identity(self.dim_in)) <= tol
    }

    /// Superoperator (transfer-matrix) form: vec(Φ(ρ)) = S·vec(ρ), row-major
    /// vec. S is a reshuffle of the Choi matrix.
    pub fn superop(&self) -> ComplexMatrix {
        let (din, dout) = (self.dim_in, self.dim_out);
        let mut s = ComplexMatrix::zeros(dout * dout, din * din);
        for i in 0..din {
            for j in 0..din {
                for k in 0..dout {
                    for l in 0..dout {
                        s[(k * dout + l, i * din + j)] = self.choi[(i * dout + k, j * dout + l)];
                    }
                }
            }
        }
        s
    }

    fn from_superop(din: usize, dout: usize, s: &ComplexMatrix) -> ComplexMatrix {
        let mut choi = ComplexMatrix::zeros(din * dout, din * dout);
        for i in 0..din {
            for j in 0..din {
                for k in 0..dout {
                    for l in 0..dout {
                        choi[(i * dout + k, j * dout + l)] = s[(k * dout + l, i * din + j)];
                    }
                }
            }
        }
        choi
    }

    /// Schrödinger action Φ(ρ) = Tr_in[(ρ^T ⊗ I)·J].
    pub fn apply(&self, rho: &ComplexMatrix) -> Result<ComplexMatrix> {
        if rho.rows != self.dim_in || rho.cols != self.dim_in {
            return Err(QirtError::DimensionMismatch("apply: state dimension".into()));
        }
        let lifted = rho.transpose().tensor(&ComplexMatrix::identity(self.dim_out));
        lifted
            .matmul(&self.choi)
            .partial_trace(&[self.dim_in, self.dim_out], &[1])
    }

    /// Heisenberg action Φ†(B), the Hilbert–Schmidt adjoint.
    pub fn dual_apply(&self, b: &ComplexMatrix) -> Result<ComplexMatrix> {
        if b.rows != self.dim_out || b.cols != self.dim_out {
            return Err(QirtError::DimensionMismatch("dual_apply: operator dimension".into()));
        }
        let s = self.superop().adjoint();
        let vec_b = ComplexMatrix::from_vec(
            self.dim_out * self.dim_out,
            1,
            b.data().to_vec(),
        );
        let out = s.matmul(&vec_b);
        Ok(ComplexMatrix::from_vec(self.dim_in, self.dim_in, out.data().to_vec()))
    }

    /// Composition `second ∘ first`.
    pub fn compose(second: &CpMap, first: &CpMap) -> Result<CpMap> {
        if first.dim_out != second.dim_in {
            return Err(QirtError::DimensionMismatch("compose: inner dimension".into()));
        }
        let s = second.superop().matmul(&first.superop());
        let choi = Self::from_superop(first.dim_in, second.dim_out, &s);
        Ok(Self::from_choi_unchecked(first.dim_in, second.dim_out, choi))
    }

    /// Tensor product Φ ⊗ Ψ.
    pub fn tensor(a: &CpMap, b: &CpMap) -> CpMap {
        // J_a ⊗ J_b lives on (in_a, out_a, in_b, out_b); reorder to
        // (in_a, in_b, out_a, out_b).
        let big = a.choi.tensor(&b.choi);
        let choi = big
            .permute_subsystems(
                &[a.dim_in, a.dim_out, b.dim_in, b.dim_out],
                &[0, 2, 1, 3],
            )
            .expect("tensor reorder");
        Self::from_choi_unchecked(a.dim_in * b.dim_in, a.dim_out * b.dim_out, choi)
    }

    /// Kraus operators from the Choi eigendecomposition (rank cut 1e-10).
    pub fn kraus_ops(&self) -> Vec<ComplexMatrix> {
        if let Some(k) = &self.kraus {
            return k.clone();
        }
        let (vals, vecs) = self.choi.hermitian_eigs().expect("Choi hermitian");
        let mut out = Vec::new();
        for (j, &v) in vals.iter().enumerate() {
            if v <= 1e-10 {
                continue;
            }
            let s = v.sqrt();
            let mut k = ComplexMatrix::zeros(self.dim_out, self.dim_in);
            for i in 0..self.dim_in {
                for o in 0..self.dim_out {
                    k[(o, i)] = vecs[(i * self.dim_out + o, j)] * re(s);
                }
            }
            out.push(k);
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Instruments
// ---------------------------------------------------------------------------

/// Quantum instrument: CP branches summing to a trace-preserving channel.
#[derive(Debug, Clone)]
pub struct Instrument {
    pub dim_in: usize,
    pub dim_out: usize,
    pub branches: Vec<CpMap>,
    pub labels: Vec<String>,
}

impl Instrument {
    pub fn new(branches: Vec<CpMap>, labels: Option<Vec<String>>) -> Result<Self> {
        Self::with_tol(branches, labels, OBJECT_TOL)
    }

    pub fn with_tol(branches: Vec<CpMap>, labels: Option<Vec<String>>, tol: f64) -> Result<Self> {
        let first = branches
            .first()
            .ok_or_else(|| QirtError::InvalidObject("empty instrument".into()))?;
        let (din, dout) = (first.dim_in, first.dim_out);
        if branches.iter().any(|b| b.dim_in != din || b.dim_out != dout) {
            return Err(QirtError::DimensionMismatch("instrument branch dims".into()));
        }
        let sum = Self::sum_choi_of(&branches);
        let tr_in = sum.partial_trace(&[din, dout], &[0])?;
        if tr_in.max_abs_diff(&ComplexMatrix::identity(din)) > tol {
            return Err(QirtError::InvalidObject(
                "instrument branches do not sum to a trace-preserving channel".into(),
            ));
        }
        let labels = labels.unwrap_or_else(|| (0..branches.len()).map(|i| i.to_string()).collect());
        if labels.len() != branches.len() {
            return Err(QirtError::InvalidArgument("label count mismatch".into()));
        }
        Ok(Self { dim_in: din, dim_out: dout, branches, labels })
    }

    fn sum_choi_of(branches: &[CpMap]) -> ComplexMatrix {
        let mut sum = ComplexMatrix::zeros(branches[0].choi.rows, branches[0].choi.cols);
        for b in branches {
            sum = sum.add(&b.choi);
        }
        sum
    }

    pub fn n_outcomes(&self) -> usize {
        self.branches.len()
    }

    /// The induced (outcome-ignored) channel Φ = Σ_a Φ_a.
    pub fn induced_channel(&self) -> CpMap {
        CpMap::from_choi_unchecked(self.dim_in, self.dim_out, Self::sum_choi_of(&self.branches))
    }

    /// Wrap a channel as a one-outcome instrument.
    pub fn from_channel(ch: CpMap) -> Self {
        let (din, dout) = (ch.dim_in, ch.dim_out);
        Self {
            dim_in: din,
            dim_out: dout,
            branches: vec![ch],
            labels: vec!["0".into()],
        }
    }

    /// Lüders instrument of a POVM: Φ_a(ρ) = √M_a ρ √M_a.
    pub fn luders(povm: &Povm) -> Result<Self> {
        let mut branches = Vec::new();
        for e in &povm.elements {
            let s = e.psd_sqrt()?;
            branches.push(CpMap::from_kraus(vec![s])?);
        }
        Self::with_tol(branches, Some(povm.labels.clone()), 1e-8)
    }

    /// Induced POVM A(a) = Φ_a†(𝟙).
    pub fn induced_povm(&self) -> Povm {
        let id = ComplexMatrix::identity(self.dim_out);
        let elements: Vec<ComplexMatrix> = self
            .branches
            .iter()
            .map(|b| b.dual_apply(&id).expect("dims").herm_part())
            .collect();
        Povm::with_tol(elements, Some(self.labels.clone()), 1e-7).expect("induced POVM valid")
    }

    /// Flag channel Γ_I(ρ) = Σ_a Φ_a(ρ) ⊗ |a⟩⟨a| on H → K ⊗ H_Ω (flag last).
    ///
    /// With the input-first Choi convention its Choi matrix is simply
    /// Σ_a J_a ⊗ |a⟩⟨a|.
    pub fn flag_channel(&self) -> CpMap {
        let n = self.n_outcomes();
        let big = self.dim_in * self.dim_out * n;
        let mut choi = ComplexMatrix::zeros(big, big);
        for (a, b) in self.branches.iter().enumerate() {
            let flag = ComplexMatrix::proj(&ComplexMatrix::ket(n, a));
            choi = choi.add(&b.choi.tensor(&flag));
        }
        CpMap::from_choi_unchecked(self.dim_in, self.dim_out * n, choi)
    }

    /// Heisenberg measurement I†[B] = {Φ_a†(B(b))} with outcomes Ω_I × Ω_B.
    pub fn heisenberg_measurement(&self, b: &Povm) -> Result<Povm> {
        if b.dim != self.dim_out {
            return Err(QirtError::DimensionMismatch("heisenberg_measurement: POVM dim".into()));
        }
        let mut elements = Vec::new();
        let mut labels = Vec::new();
        for (ai, branch) in self.branches.iter().enumerate() {
            for (bi, e) in b.elements.iter().enumerate() {
                elements.push(branch.dual_apply(e)?.herm_part());
                labels.push(format!("({},{})", self.labels[ai], b.labels[bi]));
            }
        }
        Povm::with_tol(elements, Some(labels), 1e-8)
    }

    /// Post-processing Φ̃_b = Σ_a P^a_b ∘ Φ_a by outcome-indexed processor
    /// instruments.
    pub fn post_process(&self, processors: &[Instrument]) -> Result<Instrument> {
        if processors.len() != self.n_outcomes() {
            return Err(QirtError::DimensionMismatch("one processor per outcome required".into()));
        }
        let nb = processors[0].n_outcomes();
        let dout = processors[0].dim_out;
        for p in processors {
            if p.dim_in != self.dim_out {
                return Err(QirtError::DimensionMismatch("processor input dim".into()));
            }
            if p.n_outcomes() != nb || p.dim_out != dout {
                return Err(QirtError::DimensionMismatch(
                    "processors must share outcome count and output dim".into(),
                ));
            }
        }
        let mut branches = Vec::new();
        for bidx in 0..nb {
            let mut choi = ComplexMatrix::zeros(self.dim_in * dout, self.dim_in * dout);
            for (a, branch) in self.branches.iter().enumerate() {
                let comp = CpMap::compose(&processors[a].branches[bidx], branch)?;
                choi = choi.add(&comp.choi);
            }
            branches.push(CpMap::from_choi_unchecked(self.dim_in, dout, choi));
        }
        Instrument::with_tol(branches, Some(processors[0].labels.clone()), 1e-7)
    }

    /// Classical post-processing by a stochastic table p(b|a).
    pub fn classical_post_process(&self, table: &[Vec<f64>]) -> Result<Instrument> {
        if table.len() != self.n_outcomes() {
            return Err(QirtError::DimensionMismatch("table rows".into()));
        }
        let nb = table[0].len();
        let d = self.dim_in * self.dim_out;
        let mut chois = vec![ComplexMatrix::zeros(d, d); nb];
        for (a, row) in table.iter().enumerate() {
            let s: f64 = row.iter().sum();
            if row.len() != nb || (s - 1.0).abs() > 1e-10 || row.iter().any(|&p| p < -1e-12) {
                return Err(QirtError::InvalidArgument("table rows must be stochastic".into()));
            }
            for (b, &p) in row.iter().enumerate() {
                chois[b] = chois[b].add(&self.branches[a].choi.scale_re(p));
            }
        }
        let branches = chois
            .into_iter()
            .map(|c| CpMap::from_choi_unchecked(self.dim_in, self.dim_out, c))
            .collect();
        Instrument::with_tol(branches, None, 1e-7)
    }

    /// Trivially enlarged instrument Φ̂_a = Φ_a ⊗ Tr_{H_B} on H_A⊗H_B → K.
    pub fn enlarge(&self, dim_b: usize) -> Instrument {
        if dim_b == 1 {
            return self.clone();
        }
        let trace_b = CpMap::trace_out_second(1, dim_b);
        let branches: Vec<CpMap> = self
            .branches
            .iter()
            .map(|br| CpMap::tensor(br, &trace_b))
            .collect();
        Instrument {
            dim_in: self.dim_in * dim_b,
            dim_out: self.dim_out,
            branches,
            labels: self.labels.clone(),
        }
    }
}

/// Measure-and-prepare channel Γ_M(ρ) = Σ_a Tr[ρ M(a)]·|a⟩⟨a|.
pub fn measure_prepare_channel(m: &Povm) -> CpMap {
    let n = m.n_outcomes();
    let mut choi = ComplexMatrix::zeros(m.dim * n, m.dim * n);
    for (a, e) in m.elements.iter().enumerate() {
        let flag = ComplexMatrix::proj(&ComplexMatrix::ket(n, a));
        choi = choi.add(&e.transpose().tensor(&flag));
    }
    CpMap::from_choi_unchecked(m.dim, n, choi)
}

// ---------------------------------------------------------------------------
// Instrument sets
// ---------------------------------------------------------------------------

/// Indexed list of instruments with common dims; the unit of comparison for
/// set distances and measures.
#[derive(Debug, Clone)]
pub struct InstrumentSet {
    pub instruments: Vec<Instrument>,
}

impl InstrumentSet {
    pub fn new(instruments: Vec<Instrument>) -> Result<Self> {
        let first = instruments
            .first()
            .ok_or_else(|| QirtError::InvalidObject("empty instrument set".into()))?;
        let (din, dout) = (first.dim_in, first.dim_out);
        if instruments.iter().any(|i| i.dim_in != din || i.dim_out != dout) {
            return Err(QirtError::DimensionMismatch("instrument set dims".into()));
        }
        Ok(Self { instruments })
    }

    pub fn singleton(inst: Instrument) -> Self {
        Self { instruments: vec![inst] }
    }

    pub fn dim_in(&self) -> usize {
        self.instruments[0].dim_in
    }

    pub fn dim_out(&self) -> usize {
        self.instruments[0].dim_out
    }

    pub fn len(&self) -> usize {
        self.instruments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instruments.is_empty()
    }

    /// Check index alignment with another set (same length, dims, and
    /// per-index outcome counts).
    pub fn aligned_with(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self.dim_in() == other.dim_in()
            && self.dim_out() == other.dim_out()
            && self
                .instruments
                .iter()
                .zip(&other.instruments)
                .all(|(a, b)| a.n_outcomes() == b.n_outcomes())
    }

    pub fn enlarge(&self, dim_b: usize) -> Self {
        Self {
            instruments: self.instruments.iter().map(|i| i.enlarge(dim_b)).collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Example instruments from the literature
// ---------------------------------------------------------------------------

/// The four-outcome qubit instrument Φ₁ = ½ρ, Φ₂ = ⅙σxρσx, Φ₃ = ⅙σyρσy,
/// Φ₄ = ⅙σzρσz. Its induced channel is depolarizing(2, 1/3).
pub fn pauli_example_instrument() -> Instrument {
    let half = re((0.5_f64).sqrt());
    let sixth = re((1.0 / 6.0_f64).sqrt());
    let branches = vec![
        CpMap::from_kraus(vec![ComplexMatrix::identity(2).scale(half)]).unwrap(),
        CpMap::from_kraus(vec![ops::sigma_x().scale(sixth)]).unwrap(),
        CpMap::from_kraus(vec![ops::sigma_y().scale(sixth)]).unwrap(),
        CpMap::from_kraus(vec![ops::sigma_z().scale(sixth)]).unwrap(),
    ];
    Instrument::new(branches, Some(vec!["1".into(), "2".into(), "3".into(), "4".into()]))
        .expect("valid instrument")
}

// ---------------------------------------------------------------------------
// Random generation (seeded)
// ---------------------------------------------------------------------------

pub mod random {
    //! Seeded random quantum objects via Ginibre ensembles.

    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    pub fn ginibre(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> ComplexMatrix {
        let mut m = ComplexMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                // Box-Muller pairs for complex standard normals.
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let r = (-2.0 * u1.ln()).sqrt();
                m[(i, j)] = Complex64::new(r * u2.cos(), r * u2.sin());
            }
        }
        m
    }

    /// Haar-random pure state of dimension d as a normalized ket.
    pub fn haar_ket(rng: &mut ChaCha8Rng, d: usize) -> ComplexMatrix {
        let g = ginibre(rng, d, 1);
        let norm = g.fro_norm();
        g.scale_re(1.0 / norm)
    }

    /// Random density matrix (Ginibre-induced measure).
    pub fn density(rng: &mut ChaCha8Rng, d: usize) -> ComplexMatrix {
        let g = ginibre(rng, d, d);
        let m = g.matmul(&g.adjoint());
        let t = m.trace().re;
        m.scale_re(1.0 / t)
    }

    /// Random channel via a Stinespring isometry with environment dim `env`.
    pub fn channel(rng: &mut ChaCha8Rng, din: usize, dout: usize, env: usize) -> CpMap {
        // QR of a (dout·env)×din Ginibre gives a random isometry; its row
        // blocks are Kraus operators.
        let g = ginibre(rng, dout * env, din);
        let q = thin_q(&g);
        let kraus: Vec<ComplexMatrix> = (0..env)
            .map(|e| {
                let mut k = ComplexMatrix::zeros(dout, din);
                for o in 0..dout {
                    for i in 0..din {
                        k[(o, i)] = q[(e * dout + o, i)];
                    }
                }
                k
            })
            .collect();
        CpMap::from_kraus(kraus).expect("random channel")
    }

    /// Thin QR factor with positive diagonal (deterministic given input).
    fn thin_q(m: &ComplexMatrix) -> ComplexMatrix {
        // Modified Gram-Schmidt.
        let (rows, cols) = (m.rows, m.cols);
        let mut q = m.clone();
        for j in 0..cols {
            for prev in 0..j {
                let mut dot = Complex64::new(0.0, 0.0);
                for i in 0..rows {
                    dot += q[(i, prev)].conj() * q[(i, j)];
                }
                for i in 0..rows {
                    let sub = dot * q[(i, prev)];
                    q[(i, j)] -= sub;
                }
            }
            let norm = (0..rows).map(|i| q[(i, j)].norm_sqr()).sum::<f64>().sqrt();
            for i in 0..rows {
                q[(i, j)] = q[(i, j)] / re(norm);
            }
        }
        q
    }

    /// Random instrument: random PSD branch Chois normalized so the sum is a
    /// channel.
    pub fn instrument(rng: &mut ChaCha8Rng, din: usize, dout: usize, n: usize) -> Instrument {
        let d = din * dout;
        let raw: Vec<ComplexMatrix> = (0..n)
            .map(|_| {
                let g = ginibre(rng, d, d);
                g.matmul(&g.adjoint())
            })
            .collect();
        let mut total_in = ComplexMatrix::zeros(din, din);
        for r in &raw {
            total_in = total_in.add(&r.partial_trace(&[din, dout], &[0]).expect("dims"));
        }
        let w = total_in.psd_inv_sqrt().expect("full rank");
        let lift = w.tensor(&ComplexMatrix::identity(dout));
        let branches: Vec<CpMap> = raw
            .into_iter()
            .map(|r| {
                let j = lift.matmul(&r).matmul(&lift.adjoint());
                CpMap::from_choi_unchecked(din, dout, j)
            })
            .collect();
        Instrument::with_tol(branches, None, 1e-7).expect("normalized instrument")
    }

    /// Random POVM by the same normalization trick.
    pub fn povm(rng: &mut ChaCha8Rng, dim: usize, n: usize) -> Povm {
        let raw: Vec<ComplexMatrix> = (0..n)
            .map(|_| {
                let g = ginibre(rng, dim, dim);
                g.matmul(&g.adjoint())
            })
            .collect();
        let mut total = ComplexMatrix::zeros(dim, dim);
        for r in &raw {
            total = total.add(r);
        }
        let w = total.psd_inv_sqrt().expect("full rank");
        let elements = raw
            .into_iter()
            .map(|r| w.matmul(&r).matmul(&w.adjoint()).herm_part())
            .collect();
        Povm::with_tol(elements, None, 1e-8).expect("normalized POVM")
    }

    /// Random set of `k` weakly compatible instruments (they share a total
    /// channel) obtained by classically fine-graining one random instrument.
    pub fn weakly_compatible_set(
        rng: &mut ChaCha8Rng,
        din: usize,
        dout: usize,
        n_outcomes: usize,
        k: usize,
    ) -> InstrumentSet {
        let base = instrument(rng, din, dout, n_outcomes * 2);
        let instruments = (0..k)
            .map(|_| {
                // random stochastic coarse-graining table
                let table: Vec<Vec<f64>> = (0..base.n_outcomes())
                    .map(|_| {
                        let mut row: Vec<f64> =
                            (0..n_outcomes).map(|_| rng.gen_range(0.01..1.0)).collect();
                        let s: f64 = row.iter().sum();
                        row.iter_mut().for_each(|x| *x /= s);
                        row
                    })
                    .collect();
                base.classical_post_process(&table).expect("valid coarse-graining")
            })
            .collect();
        InstrumentSet::new(instruments).expect("aligned set")
    }
}

// ---------------------------------------------------------------------------
// JSON serialization (instrument.v1 / povm.v1)
// ---------------------------------------------------------------------------

type JsonMatrix = Vec<Vec<[f64; 2]>>;

fn matrix_to_json(m: &ComplexMatrix) -> JsonMatrix {
    (0..m.rows)
        .map(|i| (0..m.cols).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn matrix_from_json(j: &JsonMatrix) -> Result<ComplexMatrix> {
    let rows = j.len();
    let cols = j.first().map_or(0, |r| r.len());
    if j.iter().any(|r| r.len() != cols) {
        return Err(QirtError::InvalidArgument("ragged matrix in JSON".into()));
    }
    let data = j
        .iter()
        .flat_map(|r| r.iter().map(|&[re_, im]| C64::new(re_, im)))
        .collect();
    Ok(ComplexMatrix::from_vec(rows, cols, data))
}

#[derive(Serialize, Deserialize)]
pub struct InstrumentJson {
    pub schema: String,
    pub dim_in: usize,
    pub dim_out: usize,
    pub labels: Vec<String>,
    pub branches: Vec<JsonMatrix>,
}

#[derive(Serialize, Deserialize)]
pub struct PovmJson {
    pub schema: String,
    pub dim: usize,
    pub labels: Vec<String>,
    pub elements: Vec<JsonMatrix>,
}

impl Instrument {
    pub fn to_json(&self) -> InstrumentJson {
        InstrumentJson {
            schema: "instrument.v1".into(),
            dim_in: self.dim_in,
            dim_out: self.dim_out,
            labels: self.labels.clone(),
            branches: self.branches.iter().map(|b| matrix_to_json(&b.choi)).collect(),
        }
    }

    pub fn from_json(j: &InstrumentJson) -> Result<Self> {
        if j.schema != "instrument.v1" {
            return Err(QirtError::InvalidArgument(format!("unknown schema {}", j.schema)));
        }
        let branches = j
            .branches
            .iter()
            .map(|m| {
                let choi = matrix_from_json(m)?;
                CpMap::from_choi_tol(j.dim_in, j.dim_out, choi, 1e-7)
            })
            .collect::<Result<Vec<_>>>()?;
        Instrument::with_tol(branches, Some(j.labels.clone()), 1e-7)
    }
}

impl Povm {
    pub fn to_json(&self) -> PovmJson {
        PovmJson {
            schema: "povm.v1".into(),
            dim: self.dim,
            labels: self.labels.clone(),
            elements: self.elements.iter().map(matrix_to_json).collect(),
        }
    }

    pub fn from_json(j: &PovmJson) -> Result<Self> {
        if j.schema != "povm.v1" {
            return Err(QirtError::InvalidArgument(format!("unknown schema {}", j.schema)));
        }
        let elements = j.elements.iter().map(matrix_from_json).collect::<Result<Vec<_>>>()?;
        Povm::with_tol(elements, Some(j.labels.clone()), 1e-7)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn depolarizing_endpoints() {
        let id = CpMap::depolarizing(2, 1.0).unwrap();
        assert!(id.choi.max_abs_diff(&ops::omega(2)) < 1e-12);
        let dep0 = CpMap::depolarizing(2, 0.0).unwrap();
        assert!(dep0.choi.max_abs_diff(&ComplexMatrix::identity(4).scale_re(0.5)) < 1e-12);
        assert!(CpMap::depolarizing(2, 1.5).is_err());
        assert!(CpMap::depolarizing(2, -0.5).is_err());
    }

    #[test]
    fn depolarizing_ppt_at_one_third() {
        let dep = CpMap::depolarizing(2, 1.0 / 3.0).unwrap();
        let pt = dep.choi.partial_transpose(&[2, 2], 0).unwrap();
        let min = pt.min_eig().unwrap();
        assert!(min.abs() < 1e-10, "t=1/3 Choi sits exactly on the PPT boundary");
    }

    #[test]
    fn apply_identity_and_depolarizing() {
        let mut r = rng(1);
        let rho = random::density(&mut r, 2);
        let id = CpMap::identity(2);
        assert!(id.apply(&rho).unwrap().max_abs_diff(&rho) < 1e-12);
        let dep0 = CpMap::depolarizing(2, 0.0).unwrap();
        let out = dep0.apply(&ComplexMatrix::proj(&ComplexMatrix::ket(2, 0))).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::identity(2).scale_re(0.5)) < 1e-12);
    }

    #[test]
    fn kraus_vs_choi_application_agreement() {
        let mut r = rng(2);
        for _ in 0..5 {
            let ch = random::channel(&mut r, 2, 3, 2);
            let rho = random::density(&mut r, 2);
            let via_choi = ch.apply(&rho).unwrap();
            let mut via_kraus = ComplexMatrix::zeros(3, 3);
            for k in ch.kraus_ops() {
                via_kraus = via_kraus.add(&k.matmul(&rho).matmul(&k.adjoint()));
            }
            assert!(via_choi.max_abs_diff(&via_kraus) < 1e-9);
        }
    }

    #[test]
    fn dual_apply_adjointness() {
        let mut r = rng(3);
        let ch = random::channel(&mut r, 3, 2, 3);
        // unitality of the dual
        let i2 = ComplexMatrix::identity(2);
        assert!(ch.dual_apply(&i2).unwrap().max_abs_diff(&ComplexMatrix::identity(3)) < 1e-9);
        // trace pairing
        for _ in 0..5 {
            let a = random::ginibre(&mut r, 3, 3).herm_part();
            let b = random::ginibre(&mut r, 2, 2).herm_part();
            let lhs = ch.apply(&a).unwrap().hs_inner(&b);
            let rhs = a.hs_inner(&ch.dual_apply(&b).unwrap());
            assert!((lhs - rhs).norm() < 1e-9);
        }
        // unital self-duality of depolarizing
        let dep = CpMap::depolarizing(2, 0.4).unwrap();
        let dz = dep.dual_apply(&ops::sigma_z()).unwrap();
        assert!(dz.max_abs_diff(&ops::sigma_z().scale_re(0.4)) < 1e-10);
    }

    #[test]
    fn compose_agrees_with_application() {
        let mut r = rng(4);
        let f = random::channel(&mut r, 2, 3, 2);
        let g = random::channel(&mut r, 3, 2, 3);
        let gf = CpMap::compose(&g, &f).unwrap();
        let rho = random::density(&mut r, 2);
        let lhs = gf.apply(&rho).unwrap();
        let rhs = g.apply(&f.apply(&rho).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
        // Id ∘ f = f
        let idf = CpMap::compose(&CpMap::identity(3), &f).unwrap();
        assert!(idf.choi.max_abs_diff(&f.choi) < 1e-10);
    }

    #[test]
    fn compose_depolarizing_multiplies_parameters() {
        let a = CpMap::depolarizing(2, 0.7).unwrap();
        let b = CpMap::depolarizing(2, 0.4).unwrap();
        let ab = CpMap::compose(&a, &b).unwrap();
        let expect = CpMap::depolarizing(2, 0.28).unwrap();
        assert!(ab.choi.max_abs_diff(&expect.choi) < 1e-12);
    }

    #[test]
    fn tensor_of_maps_on_product_inputs() {
        let mut r = rng(5);
        let f = random::channel(&mut r, 2, 2, 2);
        let g = random::channel(&mut r, 3, 2, 2);
        let fg = CpMap::tensor(&f, &g);
        let rho = random::density(&mut r, 2);
        let sig = random::density(&mut r, 3);
        let lhs = fg.apply(&rho.tensor(&sig)).unwrap();
        let rhs = f.apply(&rho).unwrap().tensor(&g.apply(&sig).unwrap());
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn pauli_example_induced_objects() {
        let inst = pauli_example_instrument();
        // induced POVM {I/2, I/6, I/6, I/6}
        let povm = inst.induced_povm();
        let i2 = ComplexMatrix::identity(2);
        assert!(povm.elements[0].max_abs_diff(&i2.scale_re(0.5)) < 1e-12);
        for k in 1..4 {
            assert!(povm.elements[k].max_abs_diff(&i2.scale_re(1.0 / 6.0)) < 1e-12);
        }
        // induced channel = depolarizing(2, 1/3)
        let ch = inst.induced_channel();
        let dep = CpMap::depolarizing(2, 1.0 / 3.0).unwrap();
        assert!(ch.choi.max_abs_diff(&dep.choi) < 1e-12);
    }

    #[test]
    fn flag_channel_partial_traces() {
        let mut r = rng(6);
        for _ in 0..10 {
            let inst = random::instrument(&mut r, 2, 2, 3);
            let flag = inst.flag_channel();
            assert!(flag.is_trace_preserving(1e-9));
            let n = inst.n_outcomes();
            // tracing the flag recovers the induced channel
            let traced = flag
                .choi
                .partial_trace(&[2, 2, n], &[0, 1])
                .unwrap();
            assert!(traced.max_abs_diff(&inst.induced_channel().choi) < 1e-9);
            // tracing K recovers the measure-prepare channel of the induced POVM
            let traced_k = flag.choi.partial_trace(&[2, 2, n], &[0, 2]).unwrap();
            let mp = measure_prepare_channel(&inst.induced_povm());
            assert!(traced_k.max_abs_diff(&mp.choi) < 1e-9);
        }
    }

    #[test]
    fn measure_prepare_diagonal_output() {
        let mp = measure_prepare_channel(&Povm::sharp_z());
        let plus = ComplexMatrix::proj(&ops::plus_ket());
        let out = mp.apply(&plus).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::identity(2).scale_re(0.5)) < 1e-12);
        // trivial measurement prepares |0⟩⟨0|
        let mp0 = measure_prepare_channel(&Povm::trivial(3));
        let mut r = rng(7);
        let rho = random::density(&mut r, 3);
        let out = mp0.apply(&rho).unwrap();
        assert!(out.max_abs_diff(&ComplexMatrix::identity(1)) < 1e-12);
    }

    #[test]
    fn heisenberg_measurement_example_values() {
        let inst = pauli_example_instrument();
        let a = Povm::sharp_z();
        let ia = inst.heisenberg_measurement(&a).unwrap();
        // I†[A](1,1) = ½|0⟩⟨0|
        let p0 = ComplexMatrix::proj(&ComplexMatrix::ket(2, 0));
        assert!(ia.elements[0].max_abs_diff(&p0.scale_re(0.5)) < 1e-12);
        assert_eq!(ia.labels[0], "(1,1)");
        let b = Povm::sharp_x();
        let ib = inst.heisenberg_measurement(&b).unwrap();
        // I†[B](3,2) = ⅙|+⟩⟨+|  (σy maps |−⟩⟨−| to |+⟩⟨+|)
        let pp = ComplexMatrix::proj(&ops::plus_ket());
        assert!(ib.elements[5].max_abs_diff(&pp.scale_re(1.0 / 6.0)) < 1e-12);
        assert_eq!(ib.labels[5], "(3,2)");
        // trivial input reduces to the induced POVM
        let triv = inst.heisenberg_measurement(&Povm::trivial(2)).unwrap();
        let induced = inst.induced_povm();
        for (x, y) in triv.elements.iter().zip(&induced.elements) {
            assert!(x.max_abs_diff(y) < 1e-12);
        }
    }

    #[test]
    fn post_process_pauli_example_to_identity() {
        let inst = pauli_example_instrument();
        // conditional correction: branch a gets undone by the matching Pauli
        let paulis = [
            ComplexMatrix::identity(2),
            ops::sigma_x(),
            ops::sigma_y(),
            ops::sigma_z(),
        ];
        let processors: Vec<Instrument> = paulis
            .iter()
            .map(|u| {
                Instrument::from_channel(CpMap::from_kraus(vec![u.clone()]).unwrap())
            })
            .collect();
        let merged = inst.post_process(&processors).unwrap();
        assert_eq!(merged.n_outcomes(), 1);
        // Σ_a U_a Φ_a(ρ) U_a† = (1/2 + 3·1/6)ρ = ρ
        assert!(merged.branches[0].choi.max_abs_diff(&CpMap::identity(2).choi) < 1e-10);
    }

    #[test]
    fn post_process_random_valid() {
        let mut r = rng(8);
        let inst = random::instrument(&mut r, 2, 2, 3);
        let procs: Vec<Instrument> = (0..3).map(|_| random::instrument(&mut r, 2, 2, 2)).collect();
        // processors must share outcome sets; regenerate with same structure
        let out = inst.post_process(&procs).unwrap();
        assert_eq!(out.n_outcomes(), 2);
        assert!(out.induced_channel().is_trace_preserving(1e-8));
    }

    #[test]
    fn enlarge_acts_trivially_on_product() {
        let mut r = rng(9);
        let inst = random::instrument(&mut r, 2, 2, 2);
        let big = inst.enlarge(3);
        assert_eq!(big.dim_in, 6);
        let rho = random::density(&mut r, 2);
        let sig = random::density(&mut r, 3);
        for (a, b) in big.branches.iter().zip(&inst.branches) {
            let lhs = a.apply(&rho.tensor(&sig)).unwrap();
            let rhs = b.apply(&rho).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-10);
            assert!(a.choi.is_psd(1e-9));
        }
        // dim_b = 1 is the identity enlargement
        let same = inst.enlarge(1);
        assert!(same.branches[0].choi.max_abs_diff(&inst.branches[0].choi) < 1e-15);
    }

    #[test]
    fn luders_of_pvm_reproduces_pvm() {
        let lud = Instrument::luders(&Povm::sharp_z()).unwrap();
        let back = lud.induced_povm();
        for (x, y) in back.elements.iter().zip(&Povm::sharp_z().elements) {
            assert!(x.max_abs_diff(y) < 1e-10);
        }
    }

    #[test]
    fn induced_povm_after_post_processing_composes_duals() {
        let mut r = rng(10);
        let inst = random::instrument(&mut r, 2, 3, 2);
        let procs: Vec<Instrument> = (0..2).map(|_| random::instrument(&mut r, 3, 2, 2)).collect();
        let post = inst.post_process(&procs).unwrap();
        let direct = post.induced_povm();
        // expected: element b = Σ_a Φ_a†(P^a-induced element b)
        for b in 0..2 {
            let mut expect = ComplexMatrix::zeros(2, 2);
            for (a, branch) in inst.branches.iter().enumerate() {
                let pb = procs[a].branches[b]
                    .dual_apply(&ComplexMatrix::identity(2))
                    .unwrap();
                expect = expect.add(&branch.dual_apply(&pb).unwrap());
            }
            assert!(direct.elements[b].max_abs_diff(&expect.herm_part()) < 1e-9);
        }
    }

    #[test]
    fn random_objects_valid() {
        let mut r = rng(11);
        for _ in 0..5 {
            let p = random::povm(&mut r, 3, 4);
            assert_eq!(p.n_outcomes(), 4);
            let i = random::instrument(&mut r, 2, 3, 3);
            assert!(i.induced_channel().is_trace_preserving(1e-8));
            let set = random::weakly_compatible_set(&mut r, 2, 2, 2, 3);
            let totals: Vec<ComplexMatrix> =
                set.instruments.iter().map(|i| i.induced_channel().choi).collect();
            for t in &totals[1..] {
                assert!(t.max_abs_diff(&totals[0]) < 1e-8);
            }
        }
    }

    #[test]
    fn json_roundtrip() {
        let inst = pauli_example_instrument();
        let j = serde_json::to_string(&inst.to_json()).unwrap();
        let parsed: InstrumentJson = serde_json::from_str(&j).unwrap();
        let back = Instrument::from_json(&parsed).unwrap();
        for (a, b) in back.branches.iter().zip(&inst.branches) {
            assert!(a.choi.max_abs_diff(&b.choi) < 1e-12);
        }
        // byte-exact round trip of the serialized form
        let j2 = serde_json::to_string(&back.to_json()).unwrap();
        assert_eq!(j, j2);

        let p = Povm::sharp_x();
        let pj = serde_json::to_string(&p.to_json()).unwrap();
        let parsed: PovmJson = serde_json::from_str(&pj).unwrap();
        let back = Povm::from_json(&parsed).unwrap();
        assert!(back.elements[0].max_abs_diff(&p.elements[0]) < 1e-12);
    }

    #[test]
    fn trash_prepare_is_constant() {
        let mut r = rng(12);
        let sigma = random::density(&mut r, 3);
        let tp = CpMap::trash_prepare(2, &sigma).unwrap();
        let rho = random::density(&mut r, 2);
        assert!(tp.apply(&rho).unwrap().max_abs_diff(&sigma) < 1e-10);
        assert!(tp.is_trace_preserving(1e-9));
    }
}
