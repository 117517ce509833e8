//! Global optimization of nonconvex complex quadratic programs.
//!
//! The problem class: minimize `F(x) = 1/2 x^H Q x + Re(c^H x)` over `x` in
//! C^n subject to per-coordinate modulus bounds `l_i <= |x_i| <= u_i` and
//! argument constraints `arg(x_i)` in a closed interval or a finite set of
//! angles. This covers constant-modulus and discrete-phase designs from
//! communications and radar (PSK detection, unimodular code design,
//! beamforming with per-antenna power limits).
//!
//! The pipeline:
//!
//! * [`model`] holds problem data and the Lipschitz-type constants used by
//!   the complexity bounds.
//! * [`envelope`] builds convex envelopes of the polar-coordinate constraint
//!   sets: halfspace cuts plus a disk for the argument set, a secant pair for
//!   the squared-modulus interval.
//! * [`conic`] lowers the lifted problem (with matrix variable `X ~ x x^H`)
//!   and the envelopes onto a real block-diagonal semidefinite program.
//! * [`sdpsolver`] is a self-contained primal-dual interior-point method for
//!   such programs, with a homogeneous self-dual embedding for infeasibility
//!   detection and independently recomputed optimality certificates.
//! * [`bb`] runs the best-first branch-and-bound loop whose nodes are
//!   per-coordinate search boxes; it rounds relaxation solutions to feasible
//!   points, branches on the largest envelope violation, and terminates with
//!   a certified epsilon-optimal solution.
//! * [`apps`] generates application instances (MIMO detection, radar code
//!   design, virtual beamforming) and provides a brute-force oracle for
//!   fully discrete instances.
//!
//! With the default `parallel` feature the brute-force oracle and the two
//! child relaxations of a branch run on rayon; without it every code path is
//! sequential with identical results.

pub mod apps;
pub mod bb;
pub mod conic;
pub mod envelope;
pub mod model;
pub mod sdpsolver;

pub use model::{ArgumentSet, ComplexityConstants, ModulusBounds, ProblemCQP};

/// Two pi, the full circle, used throughout for angle normalization.
pub(crate) const TAU: f64 = std::f64::consts::TAU;

/// Normalizes an angle to `[0, 2*pi)`.
pub(crate) fn normalize_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid can return TAU itself when theta is a tiny negative number.
    if t >= TAU {
        t - TAU
    } else {
        t
    }
}

/// Circular distance between two angles, in `[0, pi]`.
pub(crate) fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_angle_maps_into_half_open_circle() {
        assert_eq!(normalize_angle(0.0), 0.0);
        assert!((normalize_angle(-0.1) - (TAU - 0.1)).abs() < 1e-15);
        assert!((normalize_angle(TAU + 0.25) - 0.25).abs() < 1e-15);
        assert!(normalize_angle(-1e-18) < TAU);
    }

    #[test]
    fn circular_distance_wraps() {
        assert!((circular_distance(0.1, TAU - 0.1) - 0.2).abs() < 1e-12);
        assert!((circular_distance(3.0, 1.0) - 2.0).abs() < 1e-12);
        assert_eq!(circular_distance(1.5, 1.5), 0.0);
    }
}
