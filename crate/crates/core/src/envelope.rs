//! Convex envelopes of the polar-coordinate constraint sets.
//!
//! For a coordinate with argument set `A` and modulus interval `[lo, hi]`,
//! the nonconvex set `{(x, r) : |x| = r, arg(x) in A}` is outer-approximated
//! by its convex envelope: a disk `|x| <= r` plus halfspace cuts
//! `alpha Re(x) + beta Im(x) {>=,<=,=} gamma r` whose coefficients are
//! cosine/sine pairs of bisector angles. The squared-modulus relation
//! `X = r^2` over `r in [lo, hi]` relaxes to the region between the parabola
//! `X >= r^2` and its secant `X <= (lo + hi) r - lo hi`.
//!
//! Cut construction per argument-set shape:
//!
//! * interval of width `w <= pi`: one `>=`-cut through the two boundary rays
//!   (`gamma = cos(w/2)`), plus the disk;
//! * interval of width `w > pi`: disk only (the supporting-cut form needs
//!   `w <= pi`; the disk alone is still a valid relaxation and branching
//!   halves the width below `pi` quickly);
//! * discrete set: one `<=`-cut per consecutive pair of angles, including
//!   the wrap-around pair, skipping any pair with gap `> pi`; plus the disk;
//! * singleton `{theta}`: two `=`-cuts pinning `x = r e^{i theta}` (radial
//!   component equals `r`, tangential component zero). The disk is implied
//!   with equality, so it is not emitted; downstream conic code would only
//!   gain a forcibly singular block from it.

use num_complex::Complex64;

use crate::model::{ArgumentSet, ModulusBounds};
use crate::TAU;

/// Default absolute membership tolerance, matching the conic solver's
/// feasibility tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-8;

/// Relation sense of a halfspace cut.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutSense {
    Ge,
    Le,
    Eq,
}

/// One linear cut `alpha Re(x) + beta Im(x) {sense} gamma r` with
/// `alpha^2 + beta^2 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfspaceCut {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub sense: CutSense,
}

impl HalfspaceCut {
    /// Signed slack of the cut at `(x, r)`: `lhs - gamma r`.
    fn margin(&self, x: Complex64, r: f64) -> f64 {
        self.alpha * x.re + self.beta * x.im - self.gamma * r
    }

    /// Whether `(x, r)` satisfies the cut within `tol`.
    pub fn satisfied(&self, x: Complex64, r: f64, tol: f64) -> bool {
        let m = self.margin(x, r);
        match self.sense {
            CutSense::Ge => m >= -tol,
            CutSense::Le => m <= tol,
            CutSense::Eq => m.abs() <= tol,
        }
    }
}

/// Convex envelope of an argument-constrained ray set.
#[derive(Debug, Clone, PartialEq)]
pub struct ArgumentEnvelope {
    pub cuts: Vec<HalfspaceCut>,
    /// Whether the second-order disk constraint `|x| <= r` is part of the
    /// envelope (false only for singletons, where the cuts already pin `x`).
    pub include_disk: bool,
}

/// Builds the argument-cone envelope for `a`.
pub fn build_argument_envelope(a: &ArgumentSet) -> ArgumentEnvelope {
    if a.is_singleton() {
        let theta = a.min_angle();
        let (sin, cos) = theta.sin_cos();
        return ArgumentEnvelope {
            cuts: vec![
                // Radial component equals r and tangential component is zero:
                // together these force x = r e^{i theta}.
                HalfspaceCut { alpha: cos, beta: sin, gamma: 1.0, sense: CutSense::Eq },
                HalfspaceCut { alpha: -sin, beta: cos, gamma: 0.0, sense: CutSense::Eq },
            ],
            include_disk: false,
        };
    }
    match a {
        ArgumentSet::Interval { lo, hi } => {
            let width = hi - lo;
            if width > std::f64::consts::PI {
                return ArgumentEnvelope { cuts: Vec::new(), include_disk: true };
            }
            let mid = 0.5 * (lo + hi);
            let (sin, cos) = mid.sin_cos();
            ArgumentEnvelope {
                cuts: vec![HalfspaceCut {
                    alpha: cos,
                    beta: sin,
                    gamma: (0.5 * width).cos(),
                    sense: CutSense::Ge,
                }],
                include_disk: true,
            }
        }
        ArgumentSet::Discrete(angles) => {
            let m = angles.len();
            let mut cuts = Vec::with_capacity(m);
            for j in 0..m {
                let a0 = angles[j];
                let a1 = if j + 1 < m { angles[j + 1] } else { angles[0] + TAU };
                let gap = a1 - a0;
                if gap > std::f64::consts::PI {
                    continue;
                }
                let mid = 0.5 * (a0 + a1);
                let (sin, cos) = mid.sin_cos();
                cuts.push(HalfspaceCut {
                    alpha: cos,
                    beta: sin,
                    gamma: (0.5 * gap).cos(),
                    sense: CutSense::Le,
                });
            }
            ArgumentEnvelope { cuts, include_disk: true }
        }
    }
}

/// Whether `(x, r)` lies in the argument envelope within `tol`.
pub fn argument_membership(e: &ArgumentEnvelope, x: Complex64, r: f64, tol: f64) -> bool {
    debug_assert!(r >= 0.0 && tol >= 0.0);
    if e.include_disk && x.norm() > r + tol {
        return false;
    }
    e.cuts.iter().all(|c| c.satisfied(x, r, tol))
}

/// Relaxation of `X = r^2` over the modulus interval: the region between the
/// parabola and its secant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulusEnvelope {
    pub lo: f64,
    pub hi: f64,
}

/// Builds the squared-modulus envelope for `b`. Degenerate `lo = hi` is
/// served by the same formulas; they force `X = lo^2`, `r = lo`.
pub fn build_modulus_envelope(b: &ModulusBounds) -> ModulusEnvelope {
    ModulusEnvelope { lo: b.lo, hi: b.hi }
}

/// Whether `(X, r)` satisfies `X >= r^2` and `X - (lo+hi) r + lo hi <= 0`
/// within `tol` (the modulus interval itself is implied by the two).
pub fn modulus_membership(e: &ModulusEnvelope, x_ii: f64, r: f64, tol: f64) -> bool {
    x_ii >= r * r - tol && x_ii - (e.lo + e.hi) * r + e.lo * e.hi <= tol
}

/// A-priori tightness estimates for one coordinate's envelopes:
/// every member satisfies `|x| >= r * modulus_ratio` (meaningful for
/// argument width <= pi, else the ratio is 0) and `0 <= X - r^2 <= square_gap`.
pub fn tightness_bounds(a: &ArgumentSet, b: &ModulusBounds) -> (f64, f64) {
    let w = a.width();
    let ratio = if w <= std::f64::consts::PI { (0.5 * w).cos() } else { 0.0 };
    let square_gap = b.width() * b.width() / 4.0;
    (ratio, square_gap)
}
