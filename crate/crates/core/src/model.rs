//! Problem data for the complex quadratic program.
//!
//! An instance minimizes `F(x) = 1/2 x^H Q x + Re(c^H x)` over `x` in C^n
//! where each coordinate is confined to an annular sector: the modulus
//! `|x_i|` lies in `[lo_i, hi_i]` and the argument `arg(x_i)` lies in a
//! closed interval of angles or a finite set of angles. `Q` is Hermitian, so
//! `F` is real-valued.
//!
//! Angles are normalized to `[0, 2*pi)` on construction. An interval is
//! stored as `lo` in `[0, 2*pi)` together with `hi = lo + width`, so `hi` may
//! exceed `2*pi` when the interval wraps through zero.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

use crate::{circular_distance, normalize_angle, TAU};

/// Complex column vector.
pub type CVector = DVector<Complex64>;
/// Dense complex matrix.
pub type CMatrix = DMatrix<Complex64>;

/// Angles closer than this after normalization count as the same angle.
const ANGLE_DEDUP_TOL: f64 = 1e-12;

/// Relative entry change allowed when validating that a matrix was already
/// Hermitian before symmetrization.
const HERMITIAN_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not Hermitian: entry ({row},{col}) moves by {deviation:.3e} under symmetrization")]
    NotHermitian { row: usize, col: usize, deviation: f64 },
    #[error("dimension mismatch: Q is {q}x{q}, c has {c}, bounds {bounds}, arguments {args}")]
    DimensionMismatch { q: usize, c: usize, bounds: usize, args: usize },
    #[error("modulus bounds must satisfy 0 <= lo <= hi, got [{lo}, {hi}]")]
    InvalidModulusBounds { lo: f64, hi: f64 },
    #[error("argument interval must have width in [0, 2*pi], got {width}")]
    InvalidIntervalWidth { width: f64 },
    #[error("discrete argument set must be nonempty")]
    EmptyArgumentSet,
    #[error("discrete argument set has duplicate angle {angle} after normalization")]
    DuplicateAngle { angle: f64 },
    #[error("non-finite value in problem data")]
    NonFinite,
}

/// Hermitian matrix with the symmetry enforced exactly.
///
/// Constructors symmetrize via `(M + M^H)/2`; [`HermitianMatrix::new`]
/// additionally rejects inputs whose entries move by more than `1e-9`
/// relative under that symmetrization, so accidental transposes or garbage
/// data fail loudly while floating-point noise passes.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix {
    mat: CMatrix,
}

impl HermitianMatrix {
    /// Validating constructor: symmetrizes and rejects clearly non-Hermitian input.
    pub fn new(mat: CMatrix) -> Result<Self, ModelError> {
        if mat.nrows() != mat.ncols() {
            return Err(ModelError::NotSquare { rows: mat.nrows(), cols: mat.ncols() });
        }
        let h = Self::hermitize(&mat);
        for i in 0..mat.nrows() {
            for j in 0..mat.ncols() {
                let dev = (h.mat[(i, j)] - mat[(i, j)]).norm();
                if dev > HERMITIAN_REL_TOL * (1.0 + mat[(i, j)].norm()) {
                    return Err(ModelError::NotHermitian { row: i, col: j, deviation: dev });
                }
            }
        }
        Ok(h)
    }

    /// Projects any square matrix onto the Hermitian matrices: `(M + M^H)/2`.
    pub fn hermitize(mat: &CMatrix) -> Self {
        assert_eq!(mat.nrows(), mat.ncols(), "hermitize requires a square matrix");
        let mut h = mat.clone();
        for i in 0..mat.nrows() {
            for j in i..mat.ncols() {
                let v = (mat[(i, j)] + mat[(j, i)].conj()) * 0.5;
                h[(i, j)] = v;
                h[(j, i)] = v.conj();
            }
            h[(i, i)] = Complex64::new(h[(i, i)].re, 0.0);
        }
        HermitianMatrix { mat: h }
    }

    /// Hermitian matrix of zeros.
    pub fn zeros(n: usize) -> Self {
        HermitianMatrix { mat: CMatrix::zeros(n, n) }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.mat
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.mat.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }
}

/// Closed set of admissible arguments for one coordinate.
#[derive(Debug, Clone, PartialEq)]
pub enum ArgumentSet {
    /// Closed angular interval `[lo, hi]` with `lo` in `[0, 2*pi)`,
    /// `lo <= hi <= lo + 2*pi`.
    Interval { lo: f64, hi: f64 },
    /// Finite set of angles, strictly increasing, each in `[0, 2*pi)`.
    Discrete(Vec<f64>),
}

impl ArgumentSet {
    /// Closed interval `[lo, hi]`; the endpoints may be given outside
    /// `[0, 2*pi)` (e.g. `[-d, d]`) and are shifted together on construction.
    pub fn interval(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(ModelError::NonFinite);
        }
        let width = hi - lo;
        if !(0.0..=TAU + 1e-12).contains(&width) {
            return Err(ModelError::InvalidIntervalWidth { width });
        }
        let lo_n = normalize_angle(lo);
        Ok(ArgumentSet::Interval { lo: lo_n, hi: lo_n + width.min(TAU) })
    }

    /// The full circle `[0, 2*pi]`, the unconstrained-argument case.
    pub fn full_circle() -> Self {
        ArgumentSet::Interval { lo: 0.0, hi: TAU }
    }

    /// A single admissible angle.
    pub fn singleton(theta: f64) -> Self {
        let t = normalize_angle(theta);
        ArgumentSet::Interval { lo: t, hi: t }
    }

    /// Finite angle set; input angles are normalized and sorted.
    pub fn discrete(angles: &[f64]) -> Result<Self, ModelError> {
        if angles.is_empty() {
            return Err(ModelError::EmptyArgumentSet);
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(ModelError::NonFinite);
        }
        let mut normalized: Vec<f64> = angles.iter().map(|&a| normalize_angle(a)).collect();
        normalized.sort_by(|a, b| a.partial_cmp(b).expect("angles are finite"));
        for w in normalized.windows(2) {
            if w[1] - w[0] <= ANGLE_DEDUP_TOL {
                return Err(ModelError::DuplicateAngle { angle: w[0] });
            }
        }
        // First and last can also collide across the wrap, e.g. 0 and 2*pi - 1e-15.
        if normalized.len() > 1 {
            let (first, last) = (normalized[0], *normalized.last().unwrap());
            if circular_distance(first, last) <= ANGLE_DEDUP_TOL {
                return Err(ModelError::DuplicateAngle { angle: first });
            }
        }
        Ok(ArgumentSet::Discrete(normalized))
    }

    /// The `m` phase-shift-keying angles `{2*pi*k/m : k = 0..m-1}`.
    pub fn psk(m: usize) -> Result<Self, ModelError> {
        if m == 0 {
            return Err(ModelError::EmptyArgumentSet);
        }
        let angles: Vec<f64> = (0..m).map(|k| TAU * k as f64 / m as f64).collect();
        Self::discrete(&angles)
    }

    /// Smallest admissible angle (in the stored normalization).
    pub fn min_angle(&self) -> f64 {
        match self {
            ArgumentSet::Interval { lo, .. } => *lo,
            ArgumentSet::Discrete(a) => a[0],
        }
    }

    /// Largest admissible angle (may exceed `2*pi` for a wrapped interval).
    pub fn max_angle(&self) -> f64 {
        match self {
            ArgumentSet::Interval { hi, .. } => *hi,
            ArgumentSet::Discrete(a) => *a.last().unwrap(),
        }
    }

    /// Angular width `max - min`; zero for a singleton, `2*pi` for the circle.
    pub fn width(&self) -> f64 {
        self.max_angle() - self.min_angle()
    }

    pub fn is_singleton(&self) -> bool {
        match self {
            ArgumentSet::Interval { lo, hi } => hi - lo == 0.0,
            ArgumentSet::Discrete(a) => a.len() == 1,
        }
    }

    pub fn is_full_circle(&self) -> bool {
        matches!(self, ArgumentSet::Interval { lo, hi } if hi - lo >= TAU - 1e-12)
    }

    /// Whether `theta` belongs to the set, up to circular tolerance `tol`.
    pub fn contains(&self, theta: f64, tol: f64) -> bool {
        let t = normalize_angle(theta);
        match self {
            ArgumentSet::Interval { lo, hi } => {
                if hi - lo >= TAU - 1e-15 {
                    return true;
                }
                // Shift t by whole turns into [lo, lo + 2*pi) and compare.
                let shifted = lo + (t - lo).rem_euclid(TAU);
                shifted <= hi + tol || (shifted - TAU) >= lo - tol
            }
            ArgumentSet::Discrete(a) => a.iter().any(|&x| circular_distance(x, t) <= tol),
        }
    }

    /// Circularly nearest admissible angle to `theta`; on a tie the smaller
    /// normalized angle wins. Returns an angle normalized to `[0, 2*pi)`.
    pub fn project(&self, theta: f64) -> f64 {
        let t = normalize_angle(theta);
        match self {
            ArgumentSet::Interval { lo, hi } => {
                if hi - lo >= TAU - 1e-15 {
                    return t;
                }
                let shifted = lo + (t - lo).rem_euclid(TAU);
                if shifted <= *hi {
                    return normalize_angle(shifted);
                }
                // Outside: the nearer of the two endpoints, circularly.
                let (lo_n, hi_n) = (normalize_angle(*lo), normalize_angle(*hi));
                let (d_lo, d_hi) = (circular_distance(t, lo_n), circular_distance(t, hi_n));
                if d_lo < d_hi || (d_lo == d_hi && lo_n <= hi_n) {
                    lo_n
                } else {
                    hi_n
                }
            }
            ArgumentSet::Discrete(angles) => {
                let mut best = angles[0];
                let mut best_d = circular_distance(t, angles[0]);
                for &a in &angles[1..] {
                    let d = circular_distance(t, a);
                    if d < best_d - 0.0 || (d == best_d && a < best) {
                        best = a;
                        best_d = d;
                    }
                }
                best
            }
        }
    }

    /// Midpoint of the angular span, used as the rounding target for a zero
    /// coordinate. For a discrete set this snaps to the member nearest the
    /// span midpoint (smaller angle on ties) so the result is admissible.
    pub fn span_midpoint(&self) -> f64 {
        let mid = 0.5 * (self.min_angle() + self.max_angle());
        match self {
            ArgumentSet::Interval { .. } => normalize_angle(mid),
            ArgumentSet::Discrete(_) => self.project(mid),
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match self {
            ArgumentSet::Interval { lo, hi } => {
                if !lo.is_finite() || !hi.is_finite() {
                    return Err(ModelError::NonFinite);
                }
                if !(0.0..TAU).contains(lo) || !(0.0..=TAU + 1e-12).contains(&(hi - lo)) {
                    return Err(ModelError::InvalidIntervalWidth { width: hi - lo });
                }
                Ok(())
            }
            ArgumentSet::Discrete(angles) => {
                // Re-run the constructor checks on the stored data.
                ArgumentSet::discrete(angles).map(|_| ())
            }
        }
    }
}

/// Per-coordinate modulus interval `[lo, hi]` with `0 <= lo <= hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ModulusBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self, ModelError> {
        if !lo.is_finite() || !hi.is_finite() || lo < 0.0 || lo > hi {
            return Err(ModelError::InvalidModulusBounds { lo, hi });
        }
        Ok(ModulusBounds { lo, hi })
    }

    /// Fixed modulus `|x_i| = v`, the constant-modulus case.
    pub fn fixed(v: f64) -> Result<Self, ModelError> {
        Self::new(v, v)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_fixed(&self) -> bool {
        self.lo == self.hi
    }

    pub fn contains(&self, r: f64, tol: f64) -> bool {
        r >= self.lo - tol && r <= self.hi + tol
    }
}

/// A complex quadratic program instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemCQP {
    q: HermitianMatrix,
    c: CVector,
    bounds: Vec<ModulusBounds>,
    args: Vec<ArgumentSet>,
}

impl ProblemCQP {
    pub fn new(
        q: HermitianMatrix,
        c: CVector,
        bounds: Vec<ModulusBounds>,
        args: Vec<ArgumentSet>,
    ) -> Result<Self, ModelError> {
        let n = q.dim();
        if c.len() != n || bounds.len() != n || args.len() != n {
            return Err(ModelError::DimensionMismatch {
                q: n,
                c: c.len(),
                bounds: bounds.len(),
                args: args.len(),
            });
        }
        let p = ProblemCQP { q, c, bounds, args };
        p.validate().map_err(|mut v| v.remove(0))?;
        Ok(p)
    }

    pub fn n(&self) -> usize {
        self.q.dim()
    }

    pub fn q(&self) -> &HermitianMatrix {
        &self.q
    }

    pub fn c(&self) -> &CVector {
        &self.c
    }

    pub fn bounds(&self) -> &[ModulusBounds] {
        &self.bounds
    }

    pub fn args(&self) -> &[ArgumentSet] {
        &self.args
    }

    /// Checks every structural invariant, collecting all violations.
    pub fn validate(&self) -> Result<(), Vec<ModelError>> {
        let mut issues = Vec::new();
        if self.q.as_matrix().iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
            || self.c.iter().any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            issues.push(ModelError::NonFinite);
        }
        for b in &self.bounds {
            if ModulusBounds::new(b.lo, b.hi).is_err() {
                issues.push(ModelError::InvalidModulusBounds { lo: b.lo, hi: b.hi });
            }
        }
        for a in &self.args {
            if let Err(e) = a.validate() {
                issues.push(e);
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Objective value `F(x) = 1/2 x^H Q x + Re(c^H x)`.
    ///
    /// The quadratic form of a Hermitian matrix is real; the imaginary
    /// rounding residue is discarded by taking the real part explicitly.
    pub fn objective(&self, x: &CVector) -> f64 {
        assert_eq!(x.len(), self.n(), "point dimension mismatch");
        let qx = self.q.as_matrix() * x;
        0.5 * x.dotc(&qx).re + self.c.dotc(x).re
    }

    /// Whether `x` satisfies every modulus and argument constraint within `tol`.
    pub fn is_feasible(&self, x: &CVector, tol: f64) -> bool {
        (0..self.n()).all(|i| {
            let r = x[i].norm();
            if !self.bounds[i].contains(r, tol) {
                return false;
            }
            // A coordinate of zero modulus has no meaningful argument.
            r <= tol || self.args[i].contains(x[i].arg(), tol.max(1e-12) / r.max(tol))
        })
    }

    /// Largest upper modulus bound over the coordinates.
    pub fn u_max(&self) -> f64 {
        self.bounds.iter().map(|b| b.hi).fold(0.0, f64::max)
    }
}

/// Constants of the termination analysis: a Lipschitz-type bound `m_f` for
/// the objective over the feasible box, the two branching-score weights
/// `m1`, `m2`, and the induced angular/modulus resolutions `kappa1`,
/// `kappa2` at accuracy `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityConstants {
    pub m_f: f64,
    pub m1: f64,
    pub m2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub u_max: f64,
}

impl ComplexityConstants {
    /// Evaluates the constants for accuracy `eps > 0`.
    ///
    /// `m_f = |Q|_F sqrt(n) u_max + |c|_2`,
    /// `m1 = sqrt(n) m_f + n^(3/2) u_max |Q|_F`,
    /// `m2 = n^(3/2) |Q|_F / 2`,
    /// `kappa1 = sqrt(8 eps / (u_max (m1 + m2)))`,
    /// `kappa2 = sqrt(4 eps / (m1 + m2))`,
    /// with `kappa1`, `kappa2` defined as infinity when their denominator
    /// vanishes (the objective is then constant and any box is exact).
    pub fn compute(p: &ProblemCQP, eps: f64) -> Self {
        assert!(eps > 0.0, "accuracy must be positive");
        let n = p.n() as f64;
        let u_max = p.u_max();
        let norm_q = p.q().frobenius_norm();
        let norm_c = p.c().iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let m_f = norm_q * n.sqrt() * u_max + norm_c;
        let m1 = n.sqrt() * m_f + n.powf(1.5) * u_max * norm_q;
        let m2 = 0.5 * n.powf(1.5) * norm_q;
        let kappa1 =
            if u_max * (m1 + m2) > 0.0 { (8.0 * eps / (u_max * (m1 + m2))).sqrt() } else { f64::INFINITY };
        let kappa2 = if m1 + m2 > 0.0 { (4.0 * eps / (m1 + m2)).sqrt() } else { f64::INFINITY };
        ComplexityConstants { m_f, m1, m2, kappa1, kappa2, u_max }
    }
}
