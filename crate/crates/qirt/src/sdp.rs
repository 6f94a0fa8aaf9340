//! Small dense semidefinite-program solver.
//!
//! Two layers:
//!
//! 1. A standard-form core over real symmetric PSD blocks,
//!    `min c·x  s.t.  A x {=,≤} b,  x ∈ PSD blocks ⊕ free scalars`,
//!    solved by an infeasible-start primal–dual path-following method with the
//!    HKM direction and a Mehrotra predictor–corrector; the Schur complement is
//!    factored densely. Feasibility questions run through an explicit phase-1
//!    ("min t with the cone shifted by t·I") whose dual improving ray doubles
//!    as an infeasibility certificate, verified before being reported.
//!
//! 2. A builder for programs whose natural variables are complex Hermitian
//!    matrices. Complex PSD constraints embed as real symmetric blocks of
//!    doubled size via [[X, −Y], [Y, X]]; all trace pairings come out doubled,
//!    so objective values are halved on the way back out. The embedding is an
//!    internal detail with a dedicated unit test.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{re, ComplexMatrix, C64};
use crate::{QirtError, Result};

// ---------------------------------------------------------------------------
// Standard form
// ---------------------------------------------------------------------------

/// Sparse linear functional over the concatenated svec coordinates of all
/// blocks, followed by free scalar coordinates.
pub type SparseRow = Vec<(usize, f64)>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    Eq,
    Le,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub row: SparseRow,
    pub rhs: f64,
    pub relation: Relation,
}

/// Standard-form SDP. Coordinates 0..svec_len are the scaled svec entries of
/// the PSD blocks (off-diagonals scaled by √2 so that dot products equal
/// Frobenius pairings); the last `n_free` coordinates are free scalars.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SdpProblem {
    pub blocks: Vec<usize>,
    pub objective: SparseRow,
    pub constraints: Vec<Constraint>,
    pub n_free: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    /// Primal PSD blocks (original problem's blocks) followed by nothing.
    pub primal_blocks: Vec<DMatrix<f64>>,
    /// Free scalar values.
    pub free_values: Vec<f64>,
    /// Dual multipliers, one per original constraint.
    pub dual: Vec<f64>,
    /// For status Infeasible: a verified dual improving ray.
    pub certificate: Option<Vec<f64>>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct SdpOptions {
    pub max_iter: usize,
    /// Relative duality-gap tolerance.
    pub tol_gap: f64,
    /// Primal/dual residual tolerance.
    pub tol_feas: f64,
}

impl Default for SdpOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol_gap: 1e-8, tol_feas: 1e-8 }
    }
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Scaled svec of a symmetric matrix (column-by-column upper triangle).
fn svec_into(m: &DMatrix<f64>, out: &mut [f64]) {
    let n = m.nrows();
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            out[k] = if i == j { m[(i, j)] } else { SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)]) };
            k += 1;
        }
    }
}

fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[k];
            } else {
                let val = v[k] / SQRT2;
                m[(i, j)] = val;
                m[(j, i)] = val;
            }
            k += 1;
        }
    }
    m
}

impl SdpProblem {
    pub fn svec_total(&self) -> usize {
        self.blocks.iter().map(|&n| svec_len(n)).sum()
    }

    pub fn total_dim(&self) -> usize {
        self.svec_total() + self.n_free
    }

    /// Serialize to the `sdp.v1` debug dump format.
    pub fn dump_json(&self) -> serde_json::Value {
        serde_json::json!({
            "schema": "sdp.v1",
            "blocks": self.blocks,
            "n_free": self.n_free,
            "objective": self.objective,
            "constraints": self.constraints,
        })
    }
}

// ---------------------------------------------------------------------------
// Canonical pure-equality form (internal)
// ---------------------------------------------------------------------------

/// Pure equality form over PSD blocks only: ≤ rows get 1×1 slack blocks, free
/// scalars split into differences of two 1×1 blocks.
struct Canonical {
    blocks: Vec<usize>,
    offsets: Vec<usize>,
    c: Vec<f64>,
    rows: Vec<SparseRow>,
    b: Vec<f64>,
    /// Per original constraint, index into `rows` (after dedup some rows are
    /// dropped; dropped rows map to None).
    row_of_constraint: Vec<Option<usize>>,
    free_pos: Vec<(usize, usize)>, // (plus, minus) svec coords of each free scalar
    n_orig_blocks: usize,
}

fn canonicalize(p: &SdpProblem) -> Canonical {
    let orig_svec = p.svec_total();
    let mut blocks = p.blocks.clone();
    let n_orig_blocks = blocks.len();
    let mut next_coord = orig_svec;
    let mut free_pos = Vec::new();
    for _ in 0..p.n_free {
        blocks.push(1);
        blocks.push(1);
        free_pos.push((next_coord, next_coord + 1));
        next_coord += 2;
    }
    let map_coord = |idx: usize, row: &mut SparseRow, val: f64| {
        if idx < orig_svec {
            row.push((idx, val));
        } else {
            let (pl, mi) = free_pos[idx - orig_svec];
            row.push((pl, val));
            row.push((mi, -val));
        }
    };
    let mut c = vec![0.0; next_coord];
    {
        let mut tmp = Vec::new();
        for &(idx, val) in &p.objective {
            map_coord(idx, &mut tmp, val);
        }
        for (idx, val) in tmp {
            c[idx] += val;
        }
    }
    let mut rows = Vec::new();
    let mut b = Vec::new();
    let mut row_of_constraint = Vec::new();
    let mut slack_coord = next_coord;
    let mut extra_blocks = Vec::new();
    for con in &p.constraints {
        let mut row = Vec::new();
        for &(idx, val) in &con.row {
            map_coord(idx, &mut row, val);
        }
        if con.relation == Relation::Le {
            extra_blocks.push(1);
            row.push((slack_coord, 1.0));
            slack_coord += 1;
        }
        row_of_constraint.push(Some(rows.len()));
        rows.push(row);
        b.push(con.rhs);
    }
    blocks.extend(extra_blocks);
    let total: usize = blocks.iter().map(|&n| svec_len(n)).sum();
    c.resize(total, 0.0);
    let mut offsets = Vec::with_capacity(blocks.len());
    let mut off = 0;
    for &n in &blocks {
        offsets.push(off);
        off += svec_len(n);
    }
    Canonical {
        blocks,
        offsets,
        c,
        rows,
        b,
        row_of_constraint,
        free_pos,
        n_orig_blocks,
    }
}

/// Drop linearly dependent equality rows (detected by modified Gram-Schmidt on
/// dense copies). Returns Err(y) with an inconsistency combination when a
/// dependent row has an inconsistent right-hand side.
fn drop_dependent_rows(can: &mut Canonical) -> std::result::Result<(), Vec<f64>> {
    let n = can.c.len();
    let m = can.rows.len();
    let mut basis: Vec<Vec<f64>> = Vec::new(); // orthonormalized kept rows
    let mut kept: Vec<usize> = Vec::new();
    // coeffs[k] expresses orthonormal basis vector k over original kept rows
    let mut keep_flags = vec![false; m];
    let mut combos: Vec<Vec<f64>> = Vec::new(); // basis vector = Σ combo_j · row_kept_j (before normalization bookkeeping)
    for r in 0..m {
        let mut v = vec![0.0; n];
        for &(idx, val) in &can.rows[r] {
            v[idx] += val;
        }
        let scale = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        let mut combo = vec![0.0; kept.len() + 1];
        combo[kept.len()] = 1.0;
        for (k, bvec) in basis.iter().enumerate() {
            let dot: f64 = bvec.iter().zip(&v).map(|(a, b)| a * b).sum();
            for i in 0..n {
                v[i] -= dot * bvec[i];
            }
            for (j, cj) in combos[k].iter().enumerate() {
                combo[j] -= dot * cj;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-10 * scale.max(1.0) {
            for x in v.iter_mut() {
                *x /= norm;
            }
            for cj in combo.iter_mut() {
                *cj /= norm;
            }
            basis.push(v);
            combos.push(combo);
            kept.push(r);
            keep_flags[r] = true;
        } else {
            // dependent row: check consistency of rhs. The row equals
            // Σ_k (proj coeffs) of kept rows; recompute the implied rhs.
            let mut w = vec![0.0; kept.len()];
            // Solve least squares: row_r ≈ Σ w_j row_{kept_j}. Using the
            // orthonormal basis: row_r = Σ_k dot_k basis_k, basis_k = Σ combos.
            let mut vfull = vec![0.0; n];
            for &(idx, val) in &can.rows[r] {
                vfull[idx] += val;
            }
            for (k, bvec) in basis.iter().enumerate() {
                let dot: f64 = bvec.iter().zip(&vfull).map(|(a, b)| a * b).sum();
                for (j, cj) in combos[k].iter().enumerate() {
                    w[j] += dot * cj;
                }
            }
            let implied: f64 = w.iter().zip(&kept).map(|(wj, &kr)| wj * can.b[kr]).sum();
            if (implied - can.b[r]).abs() > 1e-7 * (1.0 + can.b[r].abs()) {
                // inconsistent equalities: build Farkas combination
                // y with y_r = 1, y_kept = -w proves A^T y = 0, b^T y ≠ 0.
                let mut y = vec![0.0; m];
                y[r] = 1.0;
                for (wj, &kr) in w.iter().zip(&kept) {
                    y[kr] = -wj;
                }
                let scale = can.b[r] - implied;
                for yi in y.iter_mut() {
                    *yi /= scale; // so that b·y = 1 > 0 with A^T y ≈ 0
                }
                return Err(y);
            }
        }
    }
    let mut new_rows = Vec::new();
    let mut new_b = Vec::new();
    let mut remap = vec![None; m];
    for r in 0..m {
        if keep_flags[r] {
            remap[r] = Some(new_rows.len());
            new_rows.push(std::mem::take(&mut can.rows[r]));
            new_b.push(can.b[r]);
        }
    }
    can.rows = new_rows;
    can.b = new_b;
    for slot in can.row_of_constraint.iter_mut() {
        *slot = slot.and_then(|r| remap[r]);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Interior-point core
// ---------------------------------------------------------------------------

struct BlockVec {
    mats: Vec<DMatrix<f64>>,
}

impl BlockVec {
    fn identity(blocks: &[usize], scale: f64) -> Self {
        Self {
            mats: blocks.iter().map(|&n| DMatrix::identity(n, n) * scale).collect(),
        }
    }

    fn zeros(blocks: &[usize]) -> Self {
        Self { mats: blocks.iter().map(|&n| DMatrix::zeros(n, n)).collect() }
    }

    fn from_svec(v: &[f64], blocks: &[usize], offsets: &[usize]) -> Self {
        Self {
            mats: blocks
                .iter()
                .zip(offsets)
                .map(|(&n, &off)| smat(&v[off..off + svec_len(n)], n))
                .collect(),
        }
    }

    fn to_svec(&self, total: usize, offsets: &[usize]) -> Vec<f64> {
        let mut out = vec![0.0; total];
        for (m, &off) in self.mats.iter().zip(offsets) {
            svec_into(m, &mut out[off..off + svec_len(m.nrows())]);
        }
        out
    }

    fn inner(&self, other: &Self) -> f64 {
        self.mats
            .iter()
            .zip(&other.mats)
            .map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| x * y).sum::<f64>())
            .sum()
    }

    fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.mats.iter_mut().zip(&other.mats) {
            *a += b * alpha;
        }
    }

    fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }
}

fn sparse_dot(row: &SparseRow, v: &[f64]) -> f64 {
    row.iter().map(|&(i, x)| x * v[i]).sum()
}

/// Maximum step α ∈ (0, 1] with M + α·dM ⪰ 0, given the Cholesky factor L of M.
fn max_step(chol_l: &DMatrix<f64>, dm: &DMatrix<f64>) -> f64 {
    let n = dm.nrows();
    if n == 0 {
        return 1.0;
    }
    // W = L^{-1} dM L^{-T}; max step = 1/max(0, -λ_min(W)).
    let l = chol_l;
    let mut w = dm.clone();
    // solve L * Z = dM  (forward substitution on columns)
    for col in 0..n {
        for i in 0..n {
            let mut acc = w[(i, col)];
            for k in 0..i {
                acc -= l[(i, k)] * w[(k, col)];
            }
            w[(i, col)] = acc / l[(i, i)];
        }
    }
    // solve Z L^T = W2  => operate on rows
    for row in 0..n {
        for j in 0..n {
            let mut acc = w[(row, j)];
            for k in 0..j {
                acc -= w[(row, k)] * l[(j, k)];
            }
            w[(row, j)] = acc / l[(j, j)];
        }
    }
    let sym = (w.clone() + w.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min >= -1e-14 {
        1.0
    } else {
        (1.0 / -min).min(1.0)
    }
}

struct Iterate {
    x: BlockVec,
    s: BlockVec,
    y: Vec<f64>,
}

fn solve_canonical(can: &Canonical, opts: &SdpOptions) -> (SdpStatus, Iterate, f64, f64, f64, usize) {
    let blocks = &can.blocks;
    let offsets = &can.offsets;
    let total: usize = blocks.iter().map(|&n| svec_len(n)).sum();
    let m = can.rows.len();
    let nu: f64 = blocks.iter().map(|&n| n as f64).sum::<f64>().max(1.0);
    let cmat = BlockVec::from_svec(&can.c, blocks, offsets);
    let bnorm = 1.0 + can.b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let cnorm = 1.0 + cmat.norm();

    let scale0 = {
        let arow_max = can
            .rows
            .iter()
            .flat_map(|r| r.iter().map(|&(_, v)| v.abs()))
            .fold(1.0, f64::max);
        (bnorm.max(cnorm) / arow_max).sqrt().max(1.0) * 10.0
    };
    let mut it = Iterate {
        x: BlockVec::identity(blocks, scale0),
        s: BlockVec::identity(blocks, scale0.max(cnorm)),
        y: vec![0.0; m],
    };

    let mut status = SdpStatus::MaxIter;
    let mut iters = 0;
    let (mut pobj, mut dobj, mut gap) = (f64::NAN, f64::NAN, f64::NAN);
    // best iterate so far by combined merit, restored on non-converged exit
    let mut best_merit = f64::INFINITY;
    // dual-side merit tracked separately: the dual iterate keeps converging
    // after the primal residual hits its numerical floor, and the dual
    // objective is then the accurate value
    let mut best_dual_merit = f64::INFINITY;
    let mut best_rp_rel = f64::INFINITY;
    let mut best_dual: Option<(Vec<f64>, Vec<DMatrix<f64>>, f64)> = None;
    let mut stall = 0usize;
    let mut best: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, Vec<f64>, f64, f64, f64)> = None;

    for iter in 0..opts.max_iter {
        iters = iter + 1;
        let xs = it.x.to_svec(total, offsets);
        // residuals
        let rp: Vec<f64> = (0..m)
            .map(|r| can.b[r] - sparse_dot(&can.rows[r], &xs))
            .collect();
        // Rd = C - S - A^T y
        let mut aty = vec![0.0; total];
        for (r, row) in can.rows.iter().enumerate() {
            let yr = it.y[r];
            if yr != 0.0 {
                for &(i, v) in row {
                    aty[i] += v * yr;
                }
            }
        }
        let aty_b = BlockVec::from_svec(&aty, blocks, offsets);
        let mut rd = BlockVec::zeros(blocks);
        for i in 0..blocks.len() {
            rd.mats[i] = &cmat.mats[i] - &it.s.mats[i] - &aty_b.mats[i];
        }
        pobj = can.c.iter().zip(&xs).map(|(a, b)| a * b).sum();
        dobj = can.b.iter().zip(&it.y).map(|(a, b)| a * b).sum();
        let mu = it.x.inner(&it.s) / nu;
        gap = it.x.inner(&it.s);
        let rp_norm = rp.iter().map(|v| v * v).sum::<f64>().sqrt();
        let rd_norm = rd.norm();
        let relgap = gap / (1.0 + pobj.abs() + dobj.abs());
        if std::env::var("QIRT_SDP_TRACE").is_ok() {
            eprintln!(
                "iter {iter}: rp {:.3e} rd {:.3e} relgap {:.3e} pobj {:.6e} dobj {:.6e}",
                rp_norm, rd_norm, relgap, pobj, dobj
            );
        }
        let merit = (rp_norm / bnorm)
            .max(rd_norm / cnorm)
            .max(relgap);
        let dual_merit = (rd_norm / cnorm).max(relgap);
        let mut improved = false;
        if merit < best_merit {
            best_merit = merit;
            improved = true;
            best = Some((
                it.x.mats.clone(),
                it.s.mats.clone(),
                it.y.clone(),
                pobj,
                dobj,
                gap,
            ));
        }
        if dual_merit < best_dual_merit {
            best_dual_merit = dual_merit;
            improved = true;
            best_dual = Some((it.y.clone(), it.s.mats.clone(), dobj));
        }
        best_rp_rel = best_rp_rel.min(rp_norm / bnorm);
        if improved {
            stall = 0;
        } else {
            stall += 1;
            if stall >= 8 {
                break; // no progress; fall through to best-iterate handling
            }
        }
        if rp_norm / bnorm < opts.tol_feas && rd_norm / cnorm < opts.tol_feas && relgap < opts.tol_gap
        {
            status = SdpStatus::Optimal;
            break;
        }
        if pobj < -1e12 && rp_norm / bnorm < 1e-6 {
            status = SdpStatus::Unbounded;
            break;
        }

        // Cholesky factors of X and S
        let mut lx = Vec::new();
        let mut ls = Vec::new();
        let mut sinv = Vec::new();
        let mut ok = true;
        for bi in 0..blocks.len() {
            match (it.x.mats[bi].clone().cholesky(), it.s.mats[bi].clone().cholesky()) {
                (Some(cx), Some(cs)) => {
                    sinv.push(cs.inverse());
                    lx.push(cx.l());
                    ls.push(cs.l());
                }
                _ => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            break; // lost interiority; report best effort
        }

        // Schur complement M_ij = <A_i, sym(X A_j S^{-1})>
        let mut schur = DMatrix::zeros(m, m);
        let mut tvecs: Vec<Vec<f64>> = Vec::with_capacity(m);
        for j in 0..m {
            let aj = BlockVec::from_svec(
                &{
                    let mut v = vec![0.0; total];
                    for &(i, val) in &can.rows[j] {
                        v[i] += val;
                    }
                    v
                },
                blocks,
                offsets,
            );
            let mut tj = BlockVec::zeros(blocks);
            for bi in 0..blocks.len() {
                let t = &it.x.mats[bi] * &aj.mats[bi] * &sinv[bi];
                tj.mats[bi] = (&t + t.transpose()) * 0.5;
            }
            tvecs.push(tj.to_svec(total, offsets));
        }
        for i in 0..m {
            for j in 0..m {
                schur[(i, j)] = sparse_dot(&can.rows[i], &tvecs[j]);
            }
        }
        let schur = (schur.clone() + schur.transpose()) * 0.5;
        let mut ridge = 0.0;
        let factor = loop {
            let mut trym = schur.clone();
            if ridge > 0.0 {
                for i in 0..m {
                    trym[(i, i)] += ridge;
                }
            }
            match trym.cholesky() {
                Some(f) => break Some(f),
                None => {
                    ridge = if ridge == 0.0 {
                        1e-12 * (1.0 + schur.trace() / m.max(1) as f64)
                    } else {
                        ridge * 100.0
                    };
                    if ridge > 1e-2 * (1.0 + schur.trace() / m.max(1) as f64) {
                        break None;
                    }
                }
            }
        };
        let factor = match factor {
            Some(f) => f,
            None => break,
        };

        // helper: given centering target Rc (block form), solve for direction
        let solve_dir = |rc: &BlockVec| -> (BlockVec, BlockVec, Vec<f64>) {
            // rhs_i = rp_i - <A_i, Rc - sym(X Rd S^{-1})>
            let mut base = BlockVec::zeros(blocks);
            for bi in 0..blocks.len() {
                let t = &it.x.mats[bi] * &rd.mats[bi] * &sinv[bi];
                base.mats[bi] = &rc.mats[bi] - (&t + t.transpose()) * 0.5;
            }
            let base_v = base.to_svec(total, offsets);
            let rhs = nalgebra::DVector::from_iterator(
                m,
                (0..m).map(|i| rp[i] - sparse_dot(&can.rows[i], &base_v)),
            );
            let mut dy = factor.solve(&rhs);
            // iterative refinement against the unperturbed Schur matrix
            for _ in 0..2 {
                let resid = &rhs - &schur * &dy;
                dy += factor.solve(&resid);
            }
            // dS = Rd - A^T dy
            let mut atdy = vec![0.0; total];
            for (r, row) in can.rows.iter().enumerate() {
                let v = dy[r];
                if v != 0.0 {
                    for &(i, val) in row {
                        atdy[i] += val * v;
                    }
                }
            }
            let atdy_b = BlockVec::from_svec(&atdy, blocks, offsets);
            let mut ds = BlockVec::zeros(blocks);
            for bi in 0..blocks.len() {
                ds.mats[bi] = &rd.mats[bi] - &atdy_b.mats[bi];
            }
            // dX = Rc - sym(X dS S^{-1})
            let mut dx = BlockVec::zeros(blocks);
            for bi in 0..blocks.len() {
                let t = &it.x.mats[bi] * &ds.mats[bi] * &sinv[bi];
                dx.mats[bi] = &rc.mats[bi] - (&t + t.transpose()) * 0.5;
            }
            (dx, ds, dy.iter().cloned().collect())
        };

        // predictor (affine) direction: Rc = -X
        let mut rc_aff = BlockVec::zeros(blocks);
        for bi in 0..blocks.len() {
            rc_aff.mats[bi] = -&it.x.mats[bi];
        }
        let (dx_aff, ds_aff, _) = solve_dir(&rc_aff);
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for bi in 0..blocks.len() {
            ap = ap.min(max_step(&lx[bi], &dx_aff.mats[bi]));
            ad = ad.min(max_step(&ls[bi], &ds_aff.mats[bi]));
        }
        let mut xa = BlockVec::zeros(blocks);
        let mut sa = BlockVec::zeros(blocks);
        for bi in 0..blocks.len() {
            xa.mats[bi] = &it.x.mats[bi] + &dx_aff.mats[bi] * ap;
            sa.mats[bi] = &it.s.mats[bi] + &ds_aff.mats[bi] * ad;
        }
        let mu_aff = xa.inner(&sa) / nu;
        let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 0.999);

        // corrector: Rc = σμ S^{-1} - X - sym(dX_aff dS_aff S^{-1})
        let mut rc = BlockVec::zeros(blocks);
        for bi in 0..blocks.len() {
            let t = &dx_aff.mats[bi] * &ds_aff.mats[bi] * &sinv[bi];
            rc.mats[bi] =
                &sinv[bi] * (sigma * mu) - &it.x.mats[bi] - (&t + t.transpose()) * 0.5;
        }
        let (dx, ds, dy) = solve_dir(&rc);
        let mut ap = f64::INFINITY;
        let mut ad = f64::INFINITY;
        for bi in 0..blocks.len() {
            ap = ap.min(max_step(&lx[bi], &dx.mats[bi]));
            ad = ad.min(max_step(&ls[bi], &ds.mats[bi]));
        }
        let tau = 0.98;
        let ap = (tau * ap).min(1.0);
        let ad = (tau * ad).min(1.0);
        it.x.axpy(ap, &dx);
        it.s.axpy(ad, &ds);
        for r in 0..m {
            it.y[r] += ad * dy[r];
        }
    }
    if status != SdpStatus::Optimal && status != SdpStatus::Unbounded {
        // the endgame degrades the primal residual after the gap has closed;
        // restore the best primal iterate for the returned matrices and accept
        // optimality when either the combined merit is small or the dual side
        // converged tightly with an acceptable primal floor
        if let Some((xm, sm, y, p, d, g)) = best {
            it.x.mats = xm;
            it.s.mats = sm;
            it.y = y;
            pobj = p;
            dobj = d;
            gap = g;
            let relaxed = 1e-6_f64.max(100.0 * opts.tol_gap.max(opts.tol_feas));
            if best_merit < relaxed || (best_dual_merit < 1e-8 && best_rp_rel < 3e-5) {
                status = SdpStatus::Optimal;
            }
        }
    }
    // the dual objective from the best dual iterate is the accurate value;
    // also expose its multipliers, which certify the value
    if status == SdpStatus::Optimal || status == SdpStatus::MaxIter {
        if let Some((y, sm, d)) = best_dual {
            it.y = y;
            it.s.mats = sm;
            dobj = d;
        }
    }
    (status, it, pobj, dobj, gap, iters)
}

/// Solve a standard-form problem (minimization).
pub fn solve(p: &SdpProblem) -> Result<SdpSolution> {
    solve_with(p, &SdpOptions::default())
}

pub fn solve_with(p: &SdpProblem, opts: &SdpOptions) -> Result<SdpSolution> {
    let mut can = canonicalize(p);
    if let Err(y_can) = drop_dependent_rows(&mut can) {
        // linear inconsistency among equalities: certificate over original rows
        return Ok(SdpSolution {
            status: SdpStatus::Infeasible,
            primal_value: f64::NAN,
            dual_value: f64::NAN,
            gap: f64::NAN,
            primal_blocks: Vec::new(),
            free_values: Vec::new(),
            dual: Vec::new(),
            certificate: Some(y_can),
            iterations: 0,
        });
    }
    let (status, it, pobj, dobj, gap, iters) = solve_canonical(&can, opts);
    let total: usize = can.blocks.iter().map(|&n| svec_len(n)).sum();
    let xs = it.x.to_svec(total, &can.offsets);
    let primal_blocks = it.x.mats[..can.n_orig_blocks].to_vec();
    let free_values = can
        .free_pos
        .iter()
        .map(|&(pl, mi)| xs[pl] - xs[mi])
        .collect();
    let mut dual = vec![0.0; p.constraints.len()];
    for (ci, slot) in can.row_of_constraint.iter().enumerate() {
        if let Some(r) = slot {
            dual[ci] = it.y[*r];
        }
    }
    Ok(SdpSolution {
        status,
        primal_value: pobj,
        dual_value: dobj,
        gap,
        primal_blocks,
        free_values,
        dual,
        certificate: None,
        iterations: iters,
    })
}

/// Feasibility with certification via phase-1: minimize t subject to the
/// original constraints with every PSD block shifted to X + t·I ⪰ 0.
///
/// Returns Optimal with a strictly feasible point when min t < −margin,
/// Infeasible with a verified dual improving ray when min t > margin, and
/// MaxIter (borderline) otherwise.
pub fn feasibility(p: &SdpProblem) -> Result<SdpSolution> {
    feasibility_with(p, &SdpOptions::default(), 1e-8)
}

pub fn feasibility_with(p: &SdpProblem, opts: &SdpOptions, margin: f64) -> Result<SdpSolution> {
    // Build the phase-1 problem: same blocks, one extra free scalar t.
    // Every constraint row keeps its matrix coordinates; each row also picks up
    // the coefficient of t given by pairing the row with the all-blocks
    // identity (since X_orig = X' − t·I).
    let svec_total = p.svec_total();
    let t_coord = svec_total + p.n_free;
    let mut id_svec = vec![0.0; svec_total];
    {
        let mut off = 0;
        for &n in &p.blocks {
            let ident = DMatrix::<f64>::identity(n, n);
            svec_into(&ident, &mut id_svec[off..off + svec_len(n)]);
            off += svec_len(n);
        }
    }
    let mut constraints: Vec<Constraint> = p
        .constraints
        .iter()
        .map(|c| {
            let tcoef: f64 = -c.row.iter().filter(|&&(i, _)| i < svec_total).map(|&(i, v)| v * id_svec[i]).sum::<f64>();
            let mut row = c.row.clone();
            if tcoef.abs() > 0.0 {
                row.push((t_coord, tcoef));
            }
            Constraint { row, rhs: c.rhs, relation: c.relation }
        })
        .collect();
    // keep t bounded below: t ≥ -1 ⇔ -t ≤ 1
    constraints.push(Constraint { row: vec![(t_coord, -1.0)], rhs: 1.0, relation: Relation::Le });
    let phase1 = SdpProblem {
        blocks: p.blocks.clone(),
        objective: vec![(t_coord, 1.0)],
        constraints,
        n_free: p.n_free + 1,
    };
    let sol = solve_with(&phase1, opts)?;
    if sol.status == SdpStatus::Infeasible {
        return Ok(sol); // inconsistent equalities, certificate attached
    }
    let tstar = sol.primal_value;
    let m = p.constraints.len();
    if tstar < -margin {
        // strictly feasible: X' = X + t·I solved the shifted cone, so the
        // feasible point of the original problem is X = X' − t·I (t < 0).
        let mut blocks = sol.primal_blocks.clone();
        for b in blocks.iter_mut() {
            let n = b.nrows();
            for i in 0..n {
                b[(i, i)] -= tstar;
            }
        }
        return Ok(SdpSolution {
            status: SdpStatus::Optimal,
            primal_value: tstar,
            dual_value: sol.dual_value,
            gap: sol.gap,
            primal_blocks: blocks,
            free_values: sol.free_values[..p.n_free].to_vec(),
            dual: sol.dual[..m].to_vec(),
            certificate: None,
            iterations: sol.iterations,
        });
    }
    if tstar > margin && sol.status == SdpStatus::Optimal {
        // dual improving ray: y from phase-1 duals on the original constraints.
        let y: Vec<f64> = sol.dual[..m].to_vec();
        if verify_infeasibility_certificate(p, &y, 1e-6) {
            return Ok(SdpSolution {
                status: SdpStatus::Infeasible,
                primal_value: tstar,
                dual_value: sol.dual_value,
                gap: sol.gap,
                primal_blocks: Vec::new(),
                free_values: Vec::new(),
                dual: y.clone(),
                certificate: Some(y),
                iterations: sol.iterations,
            });
        }
    }
    // borderline or unconverged
    Ok(SdpSolution {
        status: SdpStatus::MaxIter,
        primal_value: tstar,
        dual_value: sol.dual_value,
        gap: sol.gap,
        primal_blocks: sol.primal_blocks,
        free_values: sol.free_values[..p.n_free].to_vec(),
        dual: sol.dual[..m].to_vec(),
        certificate: None,
        iterations: sol.iterations,
    })
}

/// Check a Farkas-type infeasibility certificate: with Z = Σ_i y_i A_i, the
/// ray must satisfy Z ⪯ tol on every block, y_i ≤ tol on ≤-rows, zero free
/// coordinates, and b·y ≥ some positive margin.
pub fn verify_infeasibility_certificate(p: &SdpProblem, y: &[f64], tol: f64) -> bool {
    if y.len() != p.constraints.len() {
        return false;
    }
    let svec_total = p.svec_total();
    let mut acc = vec![0.0; svec_total + p.n_free];
    let mut by = 0.0;
    for (c, &yi) in p.constraints.iter().zip(y) {
        if c.relation == Relation::Le && yi > tol {
            return false;
        }
        by += c.rhs * yi;
        for &(i, v) in &c.row {
            acc[i] += v * yi;
        }
    }
    // free coordinates must vanish
    for i in svec_total..svec_total + p.n_free {
        if acc[i].abs() > tol {
            return false;
        }
    }
    // blocks of A^T y must be ⪯ tol·I  (so that <A^T y, X> ≤ ~0 for X ⪰ 0)
    let mut off = 0;
    let mut scale = 1.0_f64;
    for &n in &p.blocks {
        let m = smat(&acc[off..off + svec_len(n)], n);
        scale = scale.max(m.amax());
        let eig = m.symmetric_eigen();
        let max = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max > tol * (1.0 + scale) {
            return false;
        }
        off += svec_len(n);
    }
    // improving: b·y must be positive (ray direction +y with sign convention
    // min c·x, A x = b: y feasible ray has A^T y ⪯ 0 and b·y > 0)
    by > tol
}

// ---------------------------------------------------------------------------
// Hermitian builder
// ---------------------------------------------------------------------------

/// Linear structural operations on complex matrices with explicit adjoints.
#[derive(Debug, Clone)]
pub enum LinStep {
    /// X ↦ Σ_k K_k X K_k†. Adjoint: Y ↦ Σ_k K_k† Y K_k.
    Kraus(Vec<ComplexMatrix>),
    /// Partial transpose on one factor (self-adjoint).
    PartialTranspose(Vec<usize>, usize),
    /// Real scaling.
    Scale(f64),
}

/// A composition of structural steps applied left to right.
#[derive(Debug, Clone, Default)]
pub struct LinMap {
    pub steps: Vec<LinStep>,
}

impl LinMap {
    pub fn identity() -> Self {
        Self { steps: Vec::new() }
    }

    pub fn scale(s: f64) -> Self {
        Self { steps: vec![LinStep::Scale(s)] }
    }

    pub fn then(mut self, step: LinStep) -> Self {
        self.steps.push(step);
        self
    }

    pub fn then_map(mut self, other: &LinMap) -> Self {
        self.steps.extend(other.steps.iter().cloned());
        self
    }

    /// Tr over the second factor of dims (da, db): X ↦ Tr_B X.
    pub fn trace_second(da: usize, db: usize) -> Self {
        let kraus = (0..db)
            .map(|j| ComplexMatrix::identity(da).tensor(&ComplexMatrix::ket(db, j).adjoint()))
            .collect();
        Self { steps: vec![LinStep::Kraus(kraus)] }
    }

    /// Tr over the first factor of dims (da, db): X ↦ Tr_A X.
    pub fn trace_first(da: usize, db: usize) -> Self {
        let kraus = (0..da)
            .map(|j| ComplexMatrix::ket(da, j).adjoint().tensor(&ComplexMatrix::identity(db)))
            .collect();
        Self { steps: vec![LinStep::Kraus(kraus)] }
    }

    /// τ ↦ I_d ⊗ τ.
    pub fn tensor_id_left(d: usize, dim_tau: usize) -> Self {
        let kraus = (0..d)
            .map(|i| ComplexMatrix::ket(d, i).tensor(&ComplexMatrix::identity(dim_tau)))
            .collect();
        Self { steps: vec![LinStep::Kraus(kraus)] }
    }

    /// X ↦ X ⊗ |a⟩⟨a| with an n-dimensional flag appended.
    pub fn tensor_flag(dim_x: usize, n: usize, a: usize) -> Self {
        let k = ComplexMatrix::identity(dim_x).tensor(&ComplexMatrix::ket(n, a));
        Self { steps: vec![LinStep::Kraus(vec![k])] }
    }

    /// Permutation of tensor factors.
    pub fn permute(dims: Vec<usize>, perm: Vec<usize>) -> Self {
        let total: usize = dims.iter().product();
        let mut p = ComplexMatrix::zeros(total, total);
        // Column j of the permutation matrix is e_{map(j)}: P X P† permutes.
        let id = ComplexMatrix::identity(total);
        let permuted = id.permute_subsystems(&dims, &perm).expect("perm");
        let _ = permuted;
        // Build P directly: basis vector with multi-index (i_0..i_{n-1}) maps
        // to position of (i_{perm[0]}, ..).
        let n = dims.len();
        let in_strides: Vec<usize> = (0..n).map(|i| dims[i + 1..].iter().product()).collect();
        let out_dims: Vec<usize> = perm.iter().map(|&q| dims[q]).collect();
        let out_strides: Vec<usize> = (0..n).map(|i| out_dims[i + 1..].iter().product()).collect();
        for idx in 0..total {
            let target: usize = (0..n)
                .map(|i| ((idx / in_strides[perm[i]]) % dims[perm[i]]) * out_strides[i])
                .sum();
            p[(target, idx)] = re(1.0);
        }
        Self { steps: vec![LinStep::Kraus(vec![p])] }
    }

    pub fn partial_transpose(dims: Vec<usize>, sys: usize) -> Self {
        Self { steps: vec![LinStep::PartialTranspose(dims, sys)] }
    }

    pub fn apply(&self, x: &ComplexMatrix) -> ComplexMatrix {
        let mut cur = x.clone();
        for step in &self.steps {
            cur = match step {
                LinStep::Kraus(ks) => {
                    let mut acc: Option<ComplexMatrix> = None;
                    for k in ks {
                        let term = k.matmul(&cur).matmul(&k.adjoint());
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a.add(&term),
                        });
                    }
                    acc.expect("nonempty Kraus list")
                }
                LinStep::PartialTranspose(dims, sys) => {
                    cur.partial_transpose(dims, *sys).expect("pt dims")
                }
                LinStep::Scale(s) => cur.scale_re(*s),
            };
        }
        cur
    }

    pub fn adjoint_apply(&self, y: &ComplexMatrix) -> ComplexMatrix {
        let mut cur = y.clone();
        for step in self.steps.iter().rev() {
            cur = match step {
                LinStep::Kraus(ks) => {
                    let mut acc: Option<ComplexMatrix> = None;
                    for k in ks {
                        let term = k.adjoint().matmul(&cur).matmul(k);
                        acc = Some(match acc {
                            None => term,
                            Some(a) => a.add(&term),
                        });
                    }
                    acc.expect("nonempty Kraus list")
                }
                LinStep::PartialTranspose(dims, sys) => {
                    cur.partial_transpose(dims, *sys).expect("pt dims")
                }
                LinStep::Scale(s) => cur.scale_re(*s),
            };
        }
        cur
    }
}

/// Real-symmetric embedding of a complex Hermitian matrix:
/// H = X + iY ↦ [[X, −Y], [Y, X]].
pub fn embed_hermitian(h: &ComplexMatrix) -> DMatrix<f64> {
    let d = h.rows;
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let v = h[(i, j)];
            m[(i, j)] = v.re;
            m[(d + i, d + j)] = v.re;
            m[(i, d + j)] = -v.im;
            m[(d + i, j)] = v.im;
        }
    }
    m
}

/// Inverse of [`embed_hermitian`] with complexification averaging (projects a
/// general real symmetric 2d×2d matrix onto the embedded subspace).
pub fn unembed_hermitian(m: &DMatrix<f64>) -> ComplexMatrix {
    let d = m.nrows() / 2;
    let mut h = ComplexMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let x = 0.5 * (m[(i, j)] + m[(d + i, d + j)]);
            let y = 0.5 * (m[(d + i, j)] - m[(i, d + j)]);
            h[(i, j)] = C64::new(x, y);
        }
    }
    h.herm_part()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ScalarId(pub usize);

/// One term of a Hermitian matrix expression: L(X_v) scaled.
#[derive(Debug, Clone)]
pub struct MatTerm {
    pub var: VarId,
    pub map: LinMap,
}

/// Hermitian-matrix-valued affine expression over builder variables.
#[derive(Debug, Clone)]
pub struct MatExpr {
    pub dim: usize,
    pub terms: Vec<MatTerm>,
    /// scalar · fixed Hermitian matrix terms
    pub scalar_terms: Vec<(ScalarId, ComplexMatrix)>,
    pub constant: ComplexMatrix,
}

impl MatExpr {
    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
            scalar_terms: Vec::new(),
            constant: ComplexMatrix::zeros(dim, dim),
        }
    }

    pub fn var(dim: usize, v: VarId) -> Self {
        let mut e = Self::zero(dim);
        e.terms.push(MatTerm { var: v, map: LinMap::identity() });
        e
    }

    pub fn push(mut self, v: VarId, map: LinMap) -> Self {
        self.terms.push(MatTerm { var: v, map });
        self
    }

    pub fn push_scalar(mut self, s: ScalarId, m: ComplexMatrix) -> Self {
        self.scalar_terms.push((s, m));
        self
    }

    pub fn add_const(mut self, m: &ComplexMatrix) -> Self {
        self.constant = self.constant.add(m);
        self
    }

    pub fn sub_const(mut self, m: &ComplexMatrix) -> Self {
        self.constant = self.constant.sub(m);
        self
    }
}

enum BuilderVar {
    Herm { dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarKind {
    Free,
    Nonneg,
}

/// Index bookkeeping for one Hermitian equality constraint group.
#[derive(Debug, Clone)]
pub struct EqGroup {
    pub first_row: usize,
    pub dim: usize,
}

/// One not-yet-materialized pairing constraint. Rows are only assembled in
/// `build()`, once the variable layout is final: coordinates of scalar
/// variables depend on the total size of the Hermitian blocks, so a row built
/// eagerly would go stale when further matrix variables are added.
struct PendingPairing {
    mats: Vec<(VarId, ComplexMatrix)>,
    scalars: Vec<(ScalarId, f64)>,
    relation: Relation,
    rhs: f64,
}

/// Builder for SDPs over complex Hermitian PSD variables and real scalars.
pub struct SdpBuilder {
    vars: Vec<BuilderVar>,
    scalars: Vec<ScalarKind>,
    objective_mats: Vec<(VarId, ComplexMatrix)>,
    objective_scalars: Vec<(ScalarId, f64)>,
    pending: Vec<PendingPairing>,
    groups: Vec<EqGroup>,
}

impl Default for SdpBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl SdpBuilder {
    pub fn new() -> Self {
        Self {
            vars: Vec::new(),
            scalars: Vec::new(),
            objective_mats: Vec::new(),
            objective_scalars: Vec::new(),
            pending: Vec::new(),
            groups: Vec::new(),
        }
    }

    /// New complex Hermitian PSD variable of complex dimension `dim`.
    pub fn herm_psd_var(&mut self, dim: usize) -> VarId {
        self.vars.push(BuilderVar::Herm { dim });
        VarId(self.vars.len() - 1)
    }

    pub fn var_dim(&self, v: VarId) -> usize {
        match self.vars[v.0] {
            BuilderVar::Herm { dim } => dim,
        }
    }

    pub fn free_scalar(&mut self) -> ScalarId {
        self.scalars.push(ScalarKind::Free);
        ScalarId(self.scalars.len() - 1)
    }

    pub fn nonneg_scalar(&mut self) -> ScalarId {
        self.scalars.push(ScalarKind::Nonneg);
        ScalarId(self.scalars.len() - 1)
    }

    /// Minimize Σ Re⟨C_v, X_v⟩ + Σ w_k s_k.
    pub fn minimize(
        &mut self,
        mats: Vec<(VarId, ComplexMatrix)>,
        scalars: Vec<(ScalarId, f64)>,
    ) {
        self.objective_mats = mats;
        self.objective_scalars = scalars;
    }

    fn var_offsets(&self) -> (Vec<usize>, usize) {
        let mut offs = Vec::with_capacity(self.vars.len());
        let mut off = 0;
        for v in &self.vars {
            offs.push(off);
            let BuilderVar::Herm { dim } = v;
            off += svec_len(2 * dim);
        }
        (offs, off)
    }

    fn nonneg_coord(&self, base: usize, idx: usize) -> usize {
        // nonneg scalars become extra 1×1 blocks appended after herm blocks
        base + idx
    }

    /// Emit the pairing row  Σ_v ⟨C_v, X_v⟩ + Σ_k α_k s_k  {=,≤}  r  using
    /// complex Hermitian coefficient matrices (pairing = Re Tr[C† X]).
    pub fn add_pairing(
        &mut self,
        mats: Vec<(VarId, ComplexMatrix)>,
        scalars: Vec<(ScalarId, f64)>,
        relation: Relation,
        rhs: f64,
    ) {
        self.pending.push(PendingPairing { mats, scalars, relation, rhs });
    }

    fn pairing_row(
        &self,
        mats: &[(VarId, ComplexMatrix)],
        scalars: &[(ScalarId, f64)],
    ) -> SparseRow {
        let (offs, herm_total) = self.var_offsets();
        let n_nonneg = self.scalars.iter().filter(|&&k| k == ScalarKind::Nonneg).count();
        let _ = n_nonneg;
        let mut dense: Vec<(usize, f64)> = Vec::new();
        for (v, c) in mats {
            let emb = embed_hermitian(c);
            let n = emb.nrows();
            let mut sv = vec![0.0; svec_len(n)];
            svec_into(&emb, &mut sv);
            let off = offs[v.0];
            for (k, &val) in sv.iter().enumerate() {
                if val.abs() > 1e-300 {
                    dense.push((off + k, val));
                }
            }
        }
        // scalar coordinates: nonneg ones are 1×1 blocks right after herm
        // blocks; free ones live in the free segment at the very end.
        let nonneg_ids: Vec<usize> = self
            .scalars
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == ScalarKind::Nonneg)
            .map(|(i, _)| i)
            .collect();
        let free_ids: Vec<usize> = self
            .scalars
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == ScalarKind::Free)
            .map(|(i, _)| i)
            .collect();
        let free_base = herm_total + nonneg_ids.len();
        for (s, alpha) in scalars {
            // scalar pairings also pick up the embedding doubling
            let val = 2.0 * alpha;
            if let Some(pos) = nonneg_ids.iter().position(|&i| i == s.0) {
                dense.push((self.nonneg_coord(herm_total, pos), val));
            } else {
                let pos = free_ids.iter().position(|&i| i == s.0).expect("scalar id");
                dense.push((free_base + pos, val));
            }
        }
        dense
    }

    /// Add the Hermitian matrix equality  expr == 0  entrywise. Returns the
    /// constraint-group handle for dual extraction.
    pub fn add_matrix_eq(&mut self, expr: &MatExpr) -> EqGroup {
        let d = expr.dim;
        let first_row = self.pending.len();
        let mut basis = Vec::new();
        for p in 0..d {
            for q in p..d {
                // real part pairing
                let mut h = ComplexMatrix::zeros(d, d);
                if p == q {
                    h[(p, p)] = re(1.0);
                } else {
                    h[(p, q)] = re(0.5);
                    h[(q, p)] = re(0.5);
                }
                basis.push(h);
                if p != q {
                    let mut h = ComplexMatrix::zeros(d, d);
                    h[(p, q)] = C64::new(0.0, 0.5);
                    h[(q, p)] = C64::new(0.0, -0.5);
                    basis.push(h);
                }
            }
        }
        for h in basis {
            let mats: Vec<(VarId, ComplexMatrix)> = expr
                .terms
                .iter()
                .map(|t| (t.var, t.map.adjoint_apply(&h)))
                .collect();
            let scalars: Vec<(ScalarId, f64)> = expr
                .scalar_terms
                .iter()
                .map(|(s, m)| (*s, h.hs_inner(m).re))
                .collect();
            let rhs = -h.hs_inner(&expr.constant).re;
            self.add_pairing(mats, scalars, Relation::Eq, rhs);
        }
        let g = EqGroup { first_row, dim: d };
        self.groups.push(g.clone());
        g
    }

    /// Constrain expr ⪯ 0 by introducing a slack PSD variable S with
    /// expr + S == 0. Returns the slack variable.
    pub fn add_psd_le_zero(&mut self, expr: &MatExpr) -> (VarId, EqGroup) {
        let slack = self.herm_psd_var(expr.dim);
        let mut e = expr.clone();
        e.terms.push(MatTerm { var: slack, map: LinMap::identity() });
        let g = self.add_matrix_eq(&e);
        (slack, g)
    }

    /// Constrain expr ⪰ 0.
    pub fn add_psd_ge_zero(&mut self, expr: &MatExpr) -> (VarId, EqGroup) {
        let neg = self.negate(expr);
        self.add_psd_le_zero(&neg)
    }

    pub fn negate(&self, expr: &MatExpr) -> MatExpr {
        MatExpr {
            dim: expr.dim,
            terms: expr
                .terms
                .iter()
                .map(|t| MatTerm {
                    var: t.var,
                    map: t.map.clone().then(LinStep::Scale(-1.0)),
                })
                .collect(),
            scalar_terms: expr
                .scalar_terms
                .iter()
                .map(|(s, m)| (*s, m.scale_re(-1.0)))
                .collect(),
            constant: expr.constant.scale_re(-1.0),
        }
    }

    /// Assemble the standard-form problem.
    pub fn build(&self) -> SdpProblem {
        let (_, herm_total) = self.var_offsets();
        let n_nonneg = self.scalars.iter().filter(|&&k| k == ScalarKind::Nonneg).count();
        let n_free = self.scalars.len() - n_nonneg;
        let mut blocks: Vec<usize> = self
            .vars
            .iter()
            .map(|v| {
                let BuilderVar::Herm { dim } = v;
                2 * dim
            })
            .collect();
        blocks.extend(std::iter::repeat(1).take(n_nonneg));
        let objective = self.pairing_row(&self.objective_mats, &self.objective_scalars);
        let _ = herm_total;
        SdpProblem {
            blocks,
            objective,
            constraints: self
                .pending
                .iter()
                .map(|p| Constraint {
                    row: self.pairing_row(&p.mats, &p.scalars),
                    rhs: 2.0 * p.rhs,
                    relation: p.relation,
                })
                .collect(),
            n_free,
        }
    }

    /// Solve and lift the solution back to complex Hermitian matrices.
    pub fn solve(&self, opts: &SdpOptions) -> Result<BuilderSolution> {
        let p = self.build();
        let raw = solve_with(&p, opts)?;
        self.lift(&p, raw)
    }

    pub fn lift(&self, _p: &SdpProblem, raw: SdpSolution) -> Result<BuilderSolution> {
        let nvars = self.vars.len();
        let mut var_values = Vec::with_capacity(nvars);
        for (i, _v) in self.vars.iter().enumerate() {
            if i < raw.primal_blocks.len() {
                var_values.push(unembed_hermitian(&raw.primal_blocks[i]));
            } else {
                var_values.push(ComplexMatrix::zeros(0, 0));
            }
        }
        let n_nonneg_list: Vec<usize> = self
            .scalars
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == ScalarKind::Nonneg)
            .map(|(i, _)| i)
            .collect();
        let free_list: Vec<usize> = self
            .scalars
            .iter()
            .enumerate()
            .filter(|(_, &k)| k == ScalarKind::Free)
            .map(|(i, _)| i)
            .collect();
        let mut scalar_values = vec![0.0; self.scalars.len()];
        for (pos, &sid) in n_nonneg_list.iter().enumerate() {
            let bi = nvars + pos;
            if bi < raw.primal_blocks.len() {
                scalar_values[sid] = raw.primal_blocks[bi][(0, 0)];
            }
        }
        for (pos, &sid) in free_list.iter().enumerate() {
            if pos < raw.free_values.len() {
                scalar_values[sid] = raw.free_values[pos];
            }
        }
        // group duals as Hermitian matrices
        let mut group_duals = Vec::new();
        for g in &self.groups {
            let d = g.dim;
            let mut acc = ComplexMatrix::zeros(d, d);
            let mut row = g.first_row;
            for p_ in 0..d {
                for q in p_..d {
                    let y = raw.dual.get(row).copied().unwrap_or(0.0);
                    if p_ == q {
                        acc[(p_, p_)] += re(y);
                    } else {
                        acc[(p_, q)] += re(0.5 * y);
                        acc[(q, p_)] += re(0.5 * y);
                    }
                    row += 1;
                    if p_ != q {
                        let y = raw.dual.get(row).copied().unwrap_or(0.0);
                        acc[(p_, q)] += C64::new(0.0, 0.5 * y);
                        acc[(q, p_)] += C64::new(0.0, -0.5 * y);
                        row += 1;
                    }
                }
            }
            group_duals.push(acc);
        }
        Ok(BuilderSolution {
            status: raw.status,
            // the dual objective is the numerically reliable value (the dual
            // iterate converges past the primal residual floor)
            objective: raw.dual_value / 2.0,
            primal_objective: raw.primal_value / 2.0,
            gap: raw.gap / 2.0,
            var_values,
            scalar_values,
            group_duals,
            iterations: raw.iterations,
            raw_dual: raw.dual,
            certificate: raw.certificate,
        })
    }
}

#[derive(Debug, Clone)]
pub struct BuilderSolution {
    pub status: SdpStatus,
    /// Optimal value (from the dual side, which converges most tightly).
    pub objective: f64,
    /// Value of the returned primal matrices; agrees with `objective` up to
    /// the solver gap.
    pub primal_objective: f64,
    pub gap: f64,
    pub var_values: Vec<ComplexMatrix>,
    pub scalar_values: Vec<f64>,
    /// Hermitian dual multiplier per matrix-equality group, in call order.
    pub group_duals: Vec<ComplexMatrix>,
    pub iterations: usize,
    pub raw_dual: Vec<f64>,
    pub certificate: Option<Vec<f64>>,
}

impl BuilderSolution {
    pub fn value_of(&self, v: VarId) -> &ComplexMatrix {
        &self.var_values[v.0]
    }

    pub fn scalar(&self, s: ScalarId) -> f64 {
        self.scalar_values[s.0]
    }

    pub fn ok(&self) -> Result<()> {
        match self.status {
            SdpStatus::Optimal => Ok(()),
            other => Err(QirtError::Solver(format!(
                "solver returned {:?} (gap {:.3e}, {} iterations)",
                other, self.gap, self.iterations
            ))),
        }
    }
}
