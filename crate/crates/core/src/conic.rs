//! Lowering of the relaxations onto a real block-diagonal conic program.
//!
//! Standard form: minimize `sum_b C_b . Z_b` subject to per-row equalities
//! `sum_b A_{i,b} . Z_b = rhs_i` with every `Z_b` either a dense PSD block or
//! a nonnegative scalar, where `.` is the Frobenius inner product of
//! symmetric matrices. Inequalities enter as equalities with nonnegative
//! scalar slack blocks.
//!
//! The lifted matrix variable is the bordered Hermitian `B = [[1, x^H],[x, X]]`:
//! `B >= 0` is the Schur-complement form of `X >= x x^H`. A complex Hermitian
//! `H` of order `m` embeds as the real symmetric `T(H) = [[Re H, -Im H],
//! [Im H, Re H]]` of order `2m`; the embedding's internal symmetry (equal
//! diagonal copies, skew off-diagonal copies) is enforced by explicit
//! equality rows, so the solver stays generic.
//!
//! Per-coordinate constraint gadgets for the enhanced relaxation:
//!
//! * modulus variable `r_i` lives in the corner of a 3x3 arrow block
//!   `[[r, Re x, Im x],[Re x, r, 0],[Im x, 0, r]] >= 0`, which is exactly the
//!   disk `|x_i| <= r_i` (when the argument set is a singleton the disk
//!   would be forcibly singular, so `r_i` moves to a plain scalar block and
//!   the equality cuts carry the coupling);
//! * `X_ii >= r_i^2` is the 2x2 block `[[X_ii, r_i],[r_i, 1]] >= 0`;
//! * the secant relation `X_ii - (lo+hi) r_i + lo hi <= 0`, the bound rows
//!   `lo <= r_i <= hi`, and every halfspace cut are equality rows with
//!   nonnegative slacks (equality cuts carry no slack).
//!
//! Coordinates whose value is fully forced (singleton argument set and fixed
//! modulus) are substituted into the objective before lowering and
//! reinstated on extraction; keeping them would pin a diagonal entry of
//! `B - [[1],[x]] [[1],[x]]^H` at zero and strip the program of any strictly
//! feasible interior point. For the same reason a pair of opposite
//! zero-`gamma` cuts (an antipodal two-angle set) is folded into a single
//! equality row instead of two slack rows.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::envelope::{self, CutSense};
use crate::model::{ArgumentSet, CMatrix, CVector, HermitianMatrix, ModulusBounds, ProblemCQP};
use crate::sdpsolver::{ConicSolution, SolveStatus, SolverConfig};

/// One cone block of the standard form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    /// Dense symmetric positive semidefinite block of the given order.
    Psd(usize),
    /// Nonnegative scalar (order-1) block.
    NonNeg,
}

impl BlockKind {
    pub fn order(&self) -> usize {
        match self {
            BlockKind::Psd(k) => *k,
            BlockKind::NonNeg => 1,
        }
    }
}

/// A single coefficient on one distinct matrix entry: contributes
/// `value * Z[block][(row, col)]` to its row (with `row <= col`; the
/// symmetric mirror entry is implied, not double counted).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntryCoeff {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub value: f64,
}

/// One equality row `sum(terms) = rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub terms: Vec<EntryCoeff>,
    pub rhs: f64,
}

impl LinearConstraint {
    /// Evaluates the row's left-hand side on block values `z`.
    pub fn eval(&self, z: &[DMatrix<f64>]) -> f64 {
        self.terms.iter().map(|t| t.value * z[t.block][(t.row, t.col)]).sum()
    }
}

/// Block-diagonal standard-form conic program.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicProgram {
    pub blocks: Vec<BlockKind>,
    /// Symmetric objective matrix per block (1x1 for scalar blocks).
    pub objective: Vec<DMatrix<f64>>,
    pub constraints: Vec<LinearConstraint>,
    /// Constant added to the (primal and dual) objective value.
    pub offset: f64,
}

impl ConicProgram {
    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Objective value `sum C_b . Z_b + offset` at block values `z`.
    pub fn objective_value(&self, z: &[DMatrix<f64>]) -> f64 {
        let linear: f64 = self
            .objective
            .iter()
            .zip(z)
            .map(|(c, zb)| c.iter().zip(zb.iter()).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        linear + self.offset
    }

    /// Largest absolute equality violation at block values `z`.
    pub fn max_violation(&self, z: &[DMatrix<f64>]) -> f64 {
        self.constraints.iter().map(|c| (c.eval(z) - c.rhs).abs()).fold(0.0, f64::max)
    }

    /// Structural sanity check used by tests and debug assertions.
    pub fn validate(&self) -> Result<(), String> {
        if self.constraints.is_empty() {
            return Err("program has no equality constraints".into());
        }
        if self.objective.len() != self.blocks.len() {
            return Err("objective/block count mismatch".into());
        }
        for (b, (kind, c)) in self.blocks.iter().zip(&self.objective).enumerate() {
            let k = kind.order();
            if c.nrows() != k || c.ncols() != k {
                return Err(format!("objective for block {b} has wrong shape"));
            }
            for i in 0..k {
                for j in 0..k {
                    if (c[(i, j)] - c[(j, i)]).abs() > 1e-12 {
                        return Err(format!("objective for block {b} is not symmetric"));
                    }
                }
            }
        }
        for (i, row) in self.constraints.iter().enumerate() {
            if row.terms.is_empty() {
                return Err(format!("constraint {i} has no terms"));
            }
            for t in &row.terms {
                let k = self.blocks.get(t.block).map(BlockKind::order).unwrap_or(0);
                if t.block >= self.blocks.len() || t.row > t.col || t.col >= k {
                    return Err(format!("constraint {i} references an invalid entry"));
                }
                if !t.value.is_finite() {
                    return Err(format!("constraint {i} has a non-finite coefficient"));
                }
            }
        }
        Ok(())
    }
}

/// Real symmetric embedding `T(H) = [[Re H, -Im H],[Im H, Re H]]` of a
/// Hermitian matrix. `T` doubles eigenvalue multiplicities and satisfies
/// `[Re x; Im x]^T T(H) [Re x; Im x] = x^H H x`.
pub fn embed_hermitian(h: &HermitianMatrix) -> DMatrix<f64> {
    let m = h.dim();
    let a = h.as_matrix();
    DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let (bi, p) = (i / m, i % m);
        let (bj, q) = (j / m, j % m);
        match (bi, bj) {
            (0, 0) | (1, 1) => a[(p, q)].re,
            (0, 1) => -a[(p, q)].im,
            _ => a[(p, q)].im,
        }
    })
}

/// Per-node feasible region in polar coordinates: one argument set and one
/// modulus interval per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub args: Vec<ArgumentSet>,
    pub bounds: Vec<ModulusBounds>,
}

impl SearchBox {
    /// The root box: the problem's own constraint sets.
    pub fn root(p: &ProblemCQP) -> Self {
        SearchBox { args: p.args().to_vec(), bounds: p.bounds().to_vec() }
    }

    pub fn n(&self) -> usize {
        self.args.len()
    }
}

/// Which relaxation a program encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxKind {
    /// Conventional relaxation: lifted PSD block plus `lo^2 <= X_ii <= hi^2`;
    /// argument constraints dropped, no modulus variables.
    Csdr,
    /// Enhanced relaxation: adds per-coordinate modulus variables with the
    /// argument-cone and squared-modulus envelopes.
    Ecsdr,
}

/// Where a coordinate's modulus variable lives.
#[derive(Debug, Clone, Copy, PartialEq)]
enum RHome {
    /// Corner of that coordinate's 3x3 disk block.
    DiskCorner(usize),
    /// Plain scalar block (singleton argument sets, which have no disk).
    Scalar(usize),
    /// No modulus variable (conventional relaxation): synthesized as
    /// `sqrt(X_ii)` on extraction.
    None,
}

#[derive(Debug, Clone)]
struct CoordPlan {
    r_home: RHome,
}

/// Mapping from problem coordinates to program blocks and entries.
#[derive(Debug, Clone)]
struct VariableMap {
    n: usize,
    /// Fully forced coordinate values (singleton argument and fixed modulus),
    /// substituted out of the program.
    pinned: Vec<Option<Complex64>>,
    /// Indices of the remaining free coordinates, in order.
    free: Vec<usize>,
    /// Block index of the bordered PSD block of order `2 (free.len() + 1)`.
    big: usize,
    coords: Vec<CoordPlan>,
    kind: RelaxKind,
}

/// A lowered relaxation: the standard-form program plus the coordinate map
/// needed to pull `(x, X, r)` back out of a solver solution.
#[derive(Debug, Clone)]
pub struct RelaxationProgram {
    pub program: ConicProgram,
    map: VariableMap,
}

impl RelaxationProgram {
    pub fn kind(&self) -> RelaxKind {
        self.map.kind
    }
}

/// Relaxation solution mapped back to problem coordinates.
#[derive(Debug, Clone)]
pub struct RelaxationSolution {
    pub x: CVector,
    /// The lifted matrix modeling `x x^H`.
    pub gram: HermitianMatrix,
    pub r: Vec<f64>,
    pub value: f64,
    pub status: RelaxStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelaxStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Tightness certificate: every modulus reaches its variable and every
/// lifted diagonal collapses to the square, so the relaxation solution is
/// (up to `tol`) a rank-one feasible point.
pub fn check_tightness(s: &RelaxationSolution, tol: f64) -> bool {
    let n = s.x.len();
    (0..n).all(|i| {
        s.r[i] - s.x[i].norm() <= tol && s.gram.as_matrix()[(i, i)].re - s.r[i] * s.r[i] <= tol
    })
}

struct Builder {
    blocks: Vec<BlockKind>,
    objective: Vec<DMatrix<f64>>,
    constraints: Vec<LinearConstraint>,
    offset: f64,
}

impl Builder {
    fn new() -> Self {
        Builder { blocks: Vec::new(), objective: Vec::new(), constraints: Vec::new(), offset: 0.0 }
    }

    fn add_block(&mut self, kind: BlockKind) -> usize {
        let k = kind.order();
        self.blocks.push(kind);
        self.objective.push(DMatrix::zeros(k, k));
        self.blocks.len() - 1
    }

    /// Adds `sum value*entry = rhs`; entries are given as (block, row, col).
    fn row(&mut self, terms: &[(usize, usize, usize, f64)], rhs: f64) {
        let terms = terms
            .iter()
            .map(|&(block, row, col, value)| EntryCoeff {
                block,
                row: row.min(col),
                col: row.max(col),
                value,
            })
            .collect();
        self.constraints.push(LinearConstraint { terms, rhs });
    }

    fn finish(self) -> ConicProgram {
        ConicProgram {
            blocks: self.blocks,
            objective: self.objective,
            constraints: self.constraints,
            offset: self.offset,
        }
    }
}

/// Emits the bordered block `[[1, x^H],[x, X]]` for `nf` free coordinates:
/// the PSD block itself, the embedding-symmetry rows, and the corner pin.
/// Returns the block index. Entry geography (with `m = nf + 1`):
/// `Re x_i -> (0, i+1)`, `Im x_i -> (0, m+i+1)`, `Re X_ij -> (i+1, j+1)`.
fn emit_big_block(b: &mut Builder, nf: usize) -> usize {
    let m = nf + 1;
    let big = b.add_block(BlockKind::Psd(2 * m));
    // Upper-left copy equals lower-right copy.
    for p in 0..m {
        for q in p..m {
            b.row(&[(big, p, q, 1.0), (big, m + p, m + q, -1.0)], 0.0);
        }
    }
    // Off-diagonal copies are mutually skew; their diagonal vanishes.
    for p in 0..m {
        b.row(&[(big, p, m + p, 1.0)], 0.0);
        for q in (p + 1)..m {
            b.row(&[(big, p, m + q, 1.0), (big, q, m + p, 1.0)], 0.0);
        }
    }
    // Corner of the bordered matrix is one.
    b.row(&[(big, 0, 0, 1.0)], 1.0);
    big
}

/// Builds the objective matrices on the big block: `1/2 Q . X + Re(c^H x)`
/// expressed as `M . B` with `M = [[0, (c/2)^H],[c/2, Q/2]]`, then embedded
/// (with the factor 1/2 compensating the embedding's trace doubling).
fn emit_objective(b: &mut Builder, big: usize, q: &CMatrix, c: &CVector) {
    let nf = c.len();
    let mut h = CMatrix::zeros(nf + 1, nf + 1);
    for i in 0..nf {
        h[(0, i + 1)] = 0.5 * c[i].conj();
        h[(i + 1, 0)] = 0.5 * c[i];
        for j in 0..nf {
            h[(i + 1, j + 1)] = 0.5 * q[(i, j)];
        }
    }
    let embedded = embed_hermitian(&HermitianMatrix::hermitize(&h));
    b.objective[big] = embedded * 0.5;
}

/// Splits the objective data across pinned and free coordinates: returns
/// `(Q_FF, c_F + Q_FP x_P, constant)` so that for any completion of the free
/// part, the full objective equals the reduced objective plus the constant.
fn reduce_objective(
    p: &ProblemCQP,
    pinned: &[Option<Complex64>],
    free: &[usize],
) -> (CMatrix, CVector, f64) {
    let q = p.q().as_matrix();
    let c = p.c();
    let nf = free.len();
    let q_ff = CMatrix::from_fn(nf, nf, |i, j| q[(free[i], free[j])]);
    let mut c_eff = CVector::from_fn(nf, |i, _| c[free[i]]);
    let mut offset = 0.0;
    for (k, pin) in pinned.iter().enumerate() {
        let Some(v) = pin else { continue };
        offset += (c[k].conj() * v).re;
        for i in 0..nf {
            c_eff[i] += q[(free[i], k)] * v;
        }
        for (l, pin2) in pinned.iter().enumerate() {
            if let Some(w) = pin2 {
                offset += 0.5 * (v.conj() * q[(k, l)] * w).re;
            }
        }
    }
    (q_ff, c_eff, offset)
}

/// Lowers the conventional relaxation: bordered PSD block, corner and
/// symmetry rows, and `lo^2 <= X_ii <= hi^2` (a pin row when `lo = hi`).
pub fn build_csdr(p: &ProblemCQP) -> RelaxationProgram {
    let n = p.n();
    let mut b = Builder::new();
    let big = emit_big_block(&mut b, n);
    emit_objective(&mut b, big, p.q().as_matrix(), p.c());
    for i in 0..n {
        let ModulusBounds { lo, hi } = p.bounds()[i];
        if lo == hi {
            b.row(&[(big, i + 1, i + 1, 1.0)], lo * lo);
        } else {
            let s_lo = b.add_block(BlockKind::NonNeg);
            let s_hi = b.add_block(BlockKind::NonNeg);
            b.row(&[(big, i + 1, i + 1, 1.0), (s_lo, 0, 0, -1.0)], lo * lo);
            b.row(&[(big, i + 1, i + 1, 1.0), (s_hi, 0, 0, 1.0)], hi * hi);
        }
    }
    let map = VariableMap {
        n,
        pinned: vec![None; n],
        free: (0..n).collect(),
        big,
        coords: vec![CoordPlan { r_home: RHome::None }; n],
        kind: RelaxKind::Csdr,
    };
    RelaxationProgram { program: b.finish(), map }
}

/// Lowers the enhanced relaxation over the given search box.
pub fn build_ecsdr(p: &ProblemCQP, d: &SearchBox) -> RelaxationProgram {
    assert_eq!(d.n(), p.n(), "search box dimension mismatch");
    let n = p.n();

    // Fully forced coordinates get substituted into the objective.
    let pinned: Vec<Option<Complex64>> = (0..n)
        .map(|i| {
            (d.args[i].is_singleton() && d.bounds[i].is_fixed())
                .then(|| Complex64::from_polar(d.bounds[i].lo, d.args[i].min_angle()))
        })
        .collect();
    let free: Vec<usize> = (0..n).filter(|&i| pinned[i].is_none()).collect();
    let nf = free.len();
    let (q_ff, c_eff, offset) = reduce_objective(p, &pinned, &free);

    let mut b = Builder::new();
    let big = emit_big_block(&mut b, nf);
    emit_objective(&mut b, big, &q_ff, &c_eff);
    b.offset = offset;

    let m = nf + 1;
    let mut coords = Vec::with_capacity(nf);
    for (slot, &i) in free.iter().enumerate() {
        let (re_x, im_x) = ((0, slot + 1), (0, m + slot + 1));
        let x_ii = (slot + 1, slot + 1);
        let ModulusBounds { lo, hi } = d.bounds[i];
        let env = envelope::build_argument_envelope(&d.args[i]);

        // Home for r_i: disk corner normally, scalar when there is no disk.
        let r_home = if env.include_disk {
            let disk = b.add_block(BlockKind::Psd(3));
            b.row(&[(disk, 1, 1, 1.0), (disk, 0, 0, -1.0)], 0.0);
            b.row(&[(disk, 2, 2, 1.0), (disk, 0, 0, -1.0)], 0.0);
            b.row(&[(disk, 1, 2, 1.0)], 0.0);
            b.row(&[(disk, 0, 1, 1.0), (big, re_x.0, re_x.1, -1.0)], 0.0);
            b.row(&[(disk, 0, 2, 1.0), (big, im_x.0, im_x.1, -1.0)], 0.0);
            RHome::DiskCorner(disk)
        } else {
            RHome::Scalar(b.add_block(BlockKind::NonNeg))
        };
        let r_entry = match r_home {
            RHome::DiskCorner(d) => (d, 0, 0),
            RHome::Scalar(s) => (s, 0, 0),
            RHome::None => unreachable!(),
        };

        if lo == hi {
            // Fixed modulus: pin r_i and X_ii; the envelope relations
            // X_ii >= r^2 and the secant are then exact and omitted.
            b.row(&[(r_entry.0, r_entry.1, r_entry.2, 1.0)], lo);
            b.row(&[(big, x_ii.0, x_ii.1, 1.0)], lo * lo);
        } else {
            let s_lo = b.add_block(BlockKind::NonNeg);
            let s_hi = b.add_block(BlockKind::NonNeg);
            b.row(&[(r_entry.0, r_entry.1, r_entry.2, 1.0), (s_lo, 0, 0, -1.0)], lo);
            b.row(&[(r_entry.0, r_entry.1, r_entry.2, 1.0), (s_hi, 0, 0, 1.0)], hi);
            // X_ii >= r^2 via [[X_ii, r],[r, 1]] >= 0.
            let g = b.add_block(BlockKind::Psd(2));
            b.row(&[(g, 0, 0, 1.0), (big, x_ii.0, x_ii.1, -1.0)], 0.0);
            b.row(&[(g, 0, 1, 1.0), (r_entry.0, r_entry.1, r_entry.2, -1.0)], 0.0);
            b.row(&[(g, 1, 1, 1.0)], 1.0);
            // Secant: X_ii - (lo+hi) r + lo*hi <= 0.
            let t = b.add_block(BlockKind::NonNeg);
            b.row(
                &[
                    (big, x_ii.0, x_ii.1, 1.0),
                    (r_entry.0, r_entry.1, r_entry.2, -(lo + hi)),
                    (t, 0, 0, 1.0),
                ],
                -lo * hi,
            );
        }

        // Halfspace cuts, with antipodal pairs folded into one equality.
        for cut in fold_antipodal(&env.cuts) {
            let base = vec![
                (big, re_x.0, re_x.1, cut.alpha),
                (big, im_x.0, im_x.1, cut.beta),
                (r_entry.0, r_entry.1, r_entry.2, -cut.gamma),
            ];
            match cut.sense {
                CutSense::Eq => b.row(&base, 0.0),
                CutSense::Ge => {
                    let s = b.add_block(BlockKind::NonNeg);
                    let mut terms = base;
                    terms.push((s, 0, 0, -1.0));
                    b.row(&terms, 0.0);
                }
                CutSense::Le => {
                    let s = b.add_block(BlockKind::NonNeg);
                    let mut terms = base;
                    terms.push((s, 0, 0, 1.0));
                    b.row(&terms, 0.0);
                }
            }
        }
        coords.push(CoordPlan { r_home });
    }

    let map = VariableMap { n, pinned, free, big, coords, kind: RelaxKind::Ecsdr };
    RelaxationProgram { program: b.finish(), map }
}

/// Replaces any pair of opposite `<=` cuts with zero radial coefficient
/// (an antipodal two-angle set: `u.x <= 0` and `-u.x <= 0`) by the single
/// equality `u.x = 0`, which preserves the feasible set but keeps the
/// program strictly feasible for the interior-point solver.
fn fold_antipodal(cuts: &[envelope::HalfspaceCut]) -> Vec<envelope::HalfspaceCut> {
    let mut out: Vec<envelope::HalfspaceCut> = Vec::with_capacity(cuts.len());
    let mut used = vec![false; cuts.len()];
    for i in 0..cuts.len() {
        if used[i] {
            continue;
        }
        let a = cuts[i];
        if a.sense == CutSense::Le && a.gamma.abs() <= 1e-9 {
            if let Some(j) = (i + 1..cuts.len()).find(|&j| {
                let b = cuts[j];
                !used[j]
                    && b.sense == CutSense::Le
                    && b.gamma.abs() <= 1e-9
                    && (a.alpha + b.alpha).abs() <= 1e-9
                    && (a.beta + b.beta).abs() <= 1e-9
            }) {
                used[i] = true;
                used[j] = true;
                out.push(envelope::HalfspaceCut {
                    alpha: a.alpha,
                    beta: a.beta,
                    gamma: 0.0,
                    sense: CutSense::Eq,
                });
                continue;
            }
        }
        used[i] = true;
        out.push(a);
    }
    out
}

/// How far a solver answer may drift from the embedding's internal symmetry
/// before extraction refuses to interpret it.
const EMBED_SYMMETRY_TOL: f64 = 1e-5;
const CORNER_TOL: f64 = 1e-6;

/// Maps a solver solution back to `(x, X, r)` in problem coordinates.
///
/// The Hermitian lift is recovered by averaging the two embedding copies;
/// if the copies disagree beyond `1e-5`, or the corner strays from 1 beyond
/// `1e-6`, the answer is reported as a numerical failure rather than
/// silently reinterpreted.
pub fn extract_solution(rp: &RelaxationProgram, raw: &ConicSolution) -> RelaxationSolution {
    let map = &rp.map;
    let n = map.n;
    let nf = map.free.len();
    let m = nf + 1;
    let zb = &raw.z[map.big];

    let fail = |value: f64| RelaxationSolution {
        x: CVector::zeros(n),
        gram: HermitianMatrix::zeros(n),
        r: vec![0.0; n],
        value,
        status: RelaxStatus::NumericalFailure,
    };

    // Symmetry residual between the two copies of the embedding.
    let mut sym_res: f64 = 0.0;
    for p in 0..m {
        for q in 0..m {
            sym_res = sym_res.max((zb[(p, q)] - zb[(m + p, m + q)]).abs());
            sym_res = sym_res.max((zb[(p, m + q)] + zb[(q, m + p)]).abs());
        }
    }
    if sym_res > EMBED_SYMMETRY_TOL {
        return fail(raw.primal_value);
    }
    let corner = 0.5 * (zb[(0, 0)] + zb[(m, m)]);
    if (corner - 1.0).abs() > CORNER_TOL {
        return fail(raw.primal_value);
    }

    // Recover the bordered Hermitian matrix from the averaged copies.
    let bordered = CMatrix::from_fn(m, m, |p, q| {
        let re = 0.5 * (zb[(p, q)] + zb[(m + p, m + q)]);
        let im = 0.5 * (zb[(m + p, q)] - zb[(p, m + q)]);
        Complex64::new(re, im)
    });

    let mut x = CVector::zeros(n);
    let mut gram = CMatrix::zeros(n, n);
    for (slot, &i) in map.free.iter().enumerate() {
        x[i] = bordered[(slot + 1, 0)];
        for (slot2, &j) in map.free.iter().enumerate() {
            gram[(i, j)] = bordered[(slot + 1, slot2 + 1)];
        }
    }
    for (i, pin) in map.pinned.iter().enumerate() {
        if let Some(v) = pin {
            x[i] = *v;
        }
    }
    // Rows and columns of forced coordinates follow from rank-one structure.
    for (i, pin) in map.pinned.iter().enumerate() {
        let Some(v) = pin else { continue };
        for j in 0..n {
            if map.pinned[j].is_some() || i != j {
                gram[(i, j)] = v * x[j].conj();
                gram[(j, i)] = x[j] * v.conj();
            }
        }
        gram[(i, i)] = Complex64::new(v.norm_sqr(), 0.0);
    }

    let mut r = vec![0.0; n];
    for (slot, &i) in map.free.iter().enumerate() {
        r[i] = match map.coords[slot].r_home {
            RHome::DiskCorner(blk) | RHome::Scalar(blk) => raw.z[blk][(0, 0)],
            RHome::None => gram[(i, i)].re.max(0.0).sqrt(),
        };
    }
    for (i, pin) in map.pinned.iter().enumerate() {
        if let Some(v) = pin {
            r[i] = v.norm();
        }
    }

    RelaxationSolution {
        x,
        gram: HermitianMatrix::hermitize(&gram),
        r,
        value: raw.primal_value,
        status: RelaxStatus::Optimal,
    }
}

/// Fills block values from a lifted point `(x, X, r)` restricted to the
/// program's coordinates; slack blocks are solved from their defining rows.
/// Used to check relaxation soundness: a feasible problem point must satisfy
/// every program row.
pub fn inject_point(
    rp: &RelaxationProgram,
    x: &CVector,
    gram: &HermitianMatrix,
    r: &[f64],
) -> Vec<DMatrix<f64>> {
    let map = &rp.map;
    let prog = &rp.program;
    let nf = map.free.len();
    let m = nf + 1;
    let mut z: Vec<DMatrix<f64>> =
        prog.blocks.iter().map(|k| DMatrix::zeros(k.order(), k.order())).collect();
    let mut set = vec![false; prog.blocks.len()];

    // Bordered block.
    let mut bordered = CMatrix::zeros(m, m);
    bordered[(0, 0)] = Complex64::new(1.0, 0.0);
    for (slot, &i) in map.free.iter().enumerate() {
        bordered[(slot + 1, 0)] = x[i];
        bordered[(0, slot + 1)] = x[i].conj();
        for (slot2, &j) in map.free.iter().enumerate() {
            bordered[(slot + 1, slot2 + 1)] = gram.as_matrix()[(i, j)];
        }
    }
    z[map.big] = embed_hermitian(&HermitianMatrix::hermitize(&bordered));
    set[map.big] = true;

    for (slot, &i) in map.free.iter().enumerate() {
        match map.coords[slot].r_home {
            RHome::DiskCorner(blk) => {
                z[blk] = DMatrix::from_row_slice(
                    3,
                    3,
                    &[r[i], x[i].re, x[i].im, x[i].re, r[i], 0.0, x[i].im, 0.0, r[i]],
                );
                set[blk] = true;
            }
            RHome::Scalar(blk) => {
                z[blk][(0, 0)] = r[i];
                set[blk] = true;
            }
            RHome::None => {}
        }
    }
    // 2x2 gadgets [[X_ii, r],[r, 1]] have each entry defined by a row whose
    // other terms are already set; fill those, then solve the scalar slacks
    // from their defining rows (each slack appears in exactly one row).
    for row in &prog.constraints {
        for t in &row.terms {
            if matches!(prog.blocks[t.block], BlockKind::Psd(2)) && !set[t.block] {
                let rest: f64 = row
                    .terms
                    .iter()
                    .filter(|o| o.block != t.block)
                    .map(|o| o.value * z[o.block][(o.row, o.col)])
                    .sum();
                let v = (row.rhs - rest) / t.value;
                z[t.block][(t.row, t.col)] = v;
                z[t.block][(t.col, t.row)] = v;
            }
        }
    }
    for (b, kind) in prog.blocks.iter().enumerate() {
        if matches!(kind, BlockKind::Psd(2)) && !set[b] {
            set[b] = true;
        }
    }
    for row in &prog.constraints {
        let unset_scalars: Vec<&EntryCoeff> = row
            .terms
            .iter()
            .filter(|t| matches!(prog.blocks[t.block], BlockKind::NonNeg) && !set[t.block])
            .collect();
        if unset_scalars.len() == 1 {
            let t = unset_scalars[0];
            let rest: f64 = row
                .terms
                .iter()
                .filter(|o| o.block != t.block)
                .map(|o| o.value * z[o.block][(o.row, o.col)])
                .sum();
            z[t.block][(0, 0)] = (row.rhs - rest) / t.value;
            set[t.block] = true;
        }
    }
    z
}

/// Solves a lowered relaxation and maps the result back.
///
/// Solver statuses fold into the relaxation statuses: infeasible or
/// unbounded programs (possible only through numerical degeneracy, every
/// search box being nonempty) report `Infeasible` with an infinite value so
/// branch-and-bound prunes them; iteration-limit and numerical failures
/// report `NumericalFailure` so the caller can retry at looser tolerances.
pub fn solve_relaxation(rp: &RelaxationProgram, cfg: &SolverConfig) -> RelaxationSolution {
    let mut audit = SolveAudit::new();
    solve_relaxation_audited(rp, cfg, &mut audit)
}

/// Same as [`solve_relaxation`], additionally folding the raw solver quality
/// metrics into `audit` so long runs can report worst-case residuals. Only
/// optimal solves are absorbed: their solutions are the ones consumed
/// downstream, while failed attempts are discarded (and typically retried).
pub fn solve_relaxation_audited(
    rp: &RelaxationProgram,
    cfg: &SolverConfig,
    audit: &mut SolveAudit,
) -> RelaxationSolution {
    let raw = crate::sdpsolver::solve(&rp.program, cfg);
    if raw.status == SolveStatus::Optimal {
        audit.absorb(&raw);
    }
    match raw.status {
        SolveStatus::Optimal => extract_solution(rp, &raw),
        SolveStatus::Infeasible | SolveStatus::Unbounded => RelaxationSolution {
            x: CVector::zeros(rp.map.n),
            gram: HermitianMatrix::zeros(rp.map.n),
            r: vec![0.0; rp.map.n],
            value: f64::INFINITY,
            status: RelaxStatus::Infeasible,
        },
        SolveStatus::IterationLimit | SolveStatus::NumericalFailure => RelaxationSolution {
            x: CVector::zeros(rp.map.n),
            gram: HermitianMatrix::zeros(rp.map.n),
            r: vec![0.0; rp.map.n],
            value: f64::NEG_INFINITY,
            status: RelaxStatus::NumericalFailure,
        },
    }
}

/// Worst-case solver quality metrics observed across a set of solves;
/// aggregated by branch-and-bound for certification reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveAudit {
    pub max_primal_residual: f64,
    pub max_dual_residual: f64,
    pub max_gap: f64,
    pub min_eigenvalue_floor: f64,
    pub solves: usize,
}

impl SolveAudit {
    pub fn new() -> Self {
        SolveAudit {
            max_primal_residual: 0.0,
            max_dual_residual: 0.0,
            max_gap: 0.0,
            min_eigenvalue_floor: 0.0,
            solves: 0,
        }
    }

    pub fn absorb(&mut self, raw: &ConicSolution) {
        self.max_primal_residual = self.max_primal_residual.max(raw.residuals.primal);
        self.max_dual_residual = self.max_dual_residual.max(raw.residuals.dual);
        self.max_gap = self.max_gap.max(raw.residuals.gap);
        self.min_eigenvalue_floor =
            self.min_eigenvalue_floor.min(raw.residuals.min_eig_z).min(raw.residuals.min_eig_s);
        self.solves += 1;
    }

    pub fn merge(&mut self, other: &SolveAudit) {
        self.max_primal_residual = self.max_primal_residual.max(other.max_primal_residual);
        self.max_dual_residual = self.max_dual_residual.max(other.max_dual_residual);
        self.max_gap = self.max_gap.max(other.max_gap);
        self.min_eigenvalue_floor = self.min_eigenvalue_floor.min(other.min_eigenvalue_floor);
        self.solves += other.solves;
    }
}

impl Default for SolveAudit {
    fn default() -> Self {
        Self::new()
    }
}
