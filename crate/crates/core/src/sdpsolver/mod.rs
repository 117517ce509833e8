//! Embedded interior-point solver for the block-diagonal semidefinite
//! programs produced by the conic module.
//!
//! Solves `min sum_b C_b . Z_b + offset` subject to the equality rows of a
//! [`ConicProgram`] and `Z_b` in the PSD cone (scalar blocks in the
//! nonnegative ray), together with the dual
//! `max b^T y + offset, S_b = C_b - sum_i y_i A_{i,b} >= 0`. Weak duality
//! holds with primal >= dual; `Optimal` status means the returned pair
//! closes the gap within the configured tolerances, re-verified by
//! [`certify`] from the returned `(Z, y, S)` rather than trusted from the
//! iteration loop.
//!
//! The pipeline is presolve (forced-scalar substitution, dependent-row
//! removal, contradiction detection), then a homogeneous self-dual
//! interior-point loop, then solution recovery back onto the original rows
//! and blocks.

mod ipm;
mod preprocess;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::conic::ConicProgram;

use preprocess::Presolved;

/// Tolerances and limits for [`solve`].
#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Primal and dual feasibility tolerance (infinity-norm, relative).
    pub feas_tol: f64,
    /// Relative duality-gap tolerance.
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Fraction of the step to the cone boundary taken each iteration.
    pub step_fraction: f64,
    /// `tau/kappa` collapse ratio below which the homogeneous embedding is
    /// examined for an infeasibility or unboundedness certificate.
    pub infeas_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 100,
            step_fraction: 0.98,
            infeas_threshold: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

/// Solution quality, recomputed from the returned triple by [`certify`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    /// `max_i |A_i . Z - b_i| / (1 + max_i |b_i|)`.
    pub primal: f64,
    /// `max_b |C_b - sum y_i A_{i,b} - S_b| / (1 + max |C|)`, entrywise.
    pub dual: f64,
    /// `|primal value - dual value| / (1 + |primal| + |dual|)`.
    pub gap: f64,
    /// Smallest eigenvalue over the primal blocks.
    pub min_eig_z: f64,
    /// Smallest eigenvalue over the dual slack blocks.
    pub min_eig_s: f64,
}

impl Residuals {
    fn within(&self, cfg: &SolverConfig) -> bool {
        self.primal <= cfg.feas_tol
            && self.dual <= cfg.feas_tol
            && self.gap <= cfg.gap_tol
            && self.min_eig_z >= -1e-8
            && self.min_eig_s >= -1e-8
    }

    fn infinite() -> Self {
        Residuals {
            primal: f64::INFINITY,
            dual: f64::INFINITY,
            gap: f64::INFINITY,
            min_eig_z: 0.0,
            min_eig_s: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    /// Primal block values.
    pub z: Vec<DMatrix<f64>>,
    /// One multiplier per equality row of the input program.
    pub y: DVector<f64>,
    /// Dual slack blocks.
    pub s: Vec<DMatrix<f64>>,
    /// `sum C_b . Z_b + offset`.
    pub primal_value: f64,
    /// `b^T y + offset`.
    pub dual_value: f64,
    pub residuals: Residuals,
    pub status: SolveStatus,
    pub iterations: usize,
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(sym(m)).eigenvalues.min()
}

fn empty_solution(prog: &ConicProgram, status: SolveStatus, value: f64, iterations: usize) -> ConicSolution {
    ConicSolution {
        z: prog.blocks.iter().map(|k| DMatrix::zeros(k.order(), k.order())).collect(),
        y: DVector::zeros(prog.n_constraints()),
        s: prog.blocks.iter().map(|k| DMatrix::zeros(k.order(), k.order())).collect(),
        primal_value: value,
        dual_value: value,
        residuals: Residuals::infinite(),
        status,
        iterations,
    }
}

/// Recomputes all solution-quality measures of `(z, y, s)` against the
/// program, independently of how they were produced.
pub fn certify(
    prog: &ConicProgram,
    z: &[DMatrix<f64>],
    y: &DVector<f64>,
    s: &[DMatrix<f64>],
) -> Residuals {
    let b_norm = prog.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
    let c_norm =
        prog.objective.iter().flat_map(|c| c.iter()).map(|v| v.abs()).fold(0.0, f64::max);

    let primal = prog
        .constraints
        .iter()
        .map(|c| (c.eval(z) - c.rhs).abs())
        .fold(0.0, f64::max)
        / (1.0 + b_norm);

    let mut dual: f64 = 0.0;
    let mut defect: Vec<DMatrix<f64>> =
        prog.objective.iter().zip(s).map(|(c, sb)| c - sb).collect();
    for (i, row) in prog.constraints.iter().enumerate() {
        for t in &row.terms {
            let half = if t.row == t.col { t.value } else { 0.5 * t.value };
            defect[t.block][(t.row, t.col)] -= y[i] * half;
            if t.row != t.col {
                defect[t.block][(t.col, t.row)] -= y[i] * half;
            }
        }
    }
    for d in &defect {
        dual = dual.max(d.iter().map(|v| v.abs()).fold(0.0, f64::max));
    }
    dual /= 1.0 + c_norm;

    let pobj = prog.objective_value(z);
    let dobj = prog.constraints.iter().zip(y.iter()).map(|(c, yi)| c.rhs * yi).sum::<f64>()
        + prog.offset;
    let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

    let min_eig_z = z.iter().map(min_eig).fold(f64::INFINITY, f64::min);
    let min_eig_s = s.iter().map(min_eig).fold(f64::INFINITY, f64::min);
    Residuals { primal, dual, gap, min_eig_z, min_eig_s }
}

/// Solves the program: presolve, interior-point loop, recovery,
/// certification. See the module docs for status semantics.
pub fn solve(prog: &ConicProgram, cfg: &SolverConfig) -> ConicSolution {
    debug_assert!(prog.validate().is_ok(), "invalid conic program: {:?}", prog.validate());
    let red = match preprocess::presolve(prog) {
        Presolved::Infeasible => {
            return empty_solution(prog, SolveStatus::Infeasible, f64::INFINITY, 0)
        }
        Presolved::Reduced(r) => r,
    };

    let (status, iterations, z_red, y_red, s_red) = if red.reduced.constraints.is_empty() {
        // Everything was eliminated: the remaining problem is unconstrained
        // over the cone, so Z = 0 is optimal unless some objective block has
        // a negative eigenvalue direction.
        let unbounded = red.reduced.objective.iter().any(|c| min_eig(c) < -1e-12);
        let z: Vec<DMatrix<f64>> = red
            .reduced
            .blocks
            .iter()
            .map(|k| DMatrix::zeros(k.order(), k.order()))
            .collect();
        let s: Vec<DMatrix<f64>> = red.reduced.objective.iter().map(sym).collect();
        let status = if unbounded { SolveStatus::Unbounded } else { SolveStatus::Optimal };
        (status, 0, z, DVector::zeros(0), s)
    } else {
        let out = ipm::run(&red.reduced, cfg);
        (out.status, out.iterations, out.z, out.y, out.s)
    };

    match status {
        SolveStatus::Infeasible => {
            empty_solution(prog, status, f64::INFINITY, iterations)
        }
        SolveStatus::Unbounded => {
            empty_solution(prog, status, f64::NEG_INFINITY, iterations)
        }
        _ => {
            let (z, y, s) = preprocess::recover(prog, &red, &z_red, &y_red, &s_red);
            let residuals = certify(prog, &z, &y, &s);
            let primal_value = prog.objective_value(&z);
            let dual_value = prog
                .constraints
                .iter()
                .zip(y.iter())
                .map(|(c, yi)| c.rhs * yi)
                .sum::<f64>()
                + prog.offset;
            let status = match status {
                SolveStatus::Optimal if residuals.within(cfg) => SolveStatus::Optimal,
                SolveStatus::Optimal => SolveStatus::NumericalFailure,
                other => other,
            };
            ConicSolution { z, y, s, primal_value, dual_value, residuals, status, iterations }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::{BlockKind, EntryCoeff, LinearConstraint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn term(block: usize, row: usize, col: usize, value: f64) -> EntryCoeff {
        EntryCoeff { block, row, col, value }
    }

    fn row(terms: Vec<EntryCoeff>, rhs: f64) -> LinearConstraint {
        LinearConstraint { terms, rhs }
    }

    /// min Z11 over 2x2 PSD with trace 1.
    fn trace_program() -> ConicProgram {
        ConicProgram {
            blocks: vec![BlockKind::Psd(2)],
            objective: vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])],
            constraints: vec![row(vec![term(0, 0, 0, 1.0), term(0, 1, 1, 1.0)], 1.0)],
            offset: 0.0,
        }
    }

    /// min -(Z12 + Z21) over 2x2 PSD with unit diagonal.
    fn correlation_program() -> ConicProgram {
        ConicProgram {
            blocks: vec![BlockKind::Psd(2)],
            objective: vec![DMatrix::from_row_slice(2, 2, &[0.0, -1.0, -1.0, 0.0])],
            constraints: vec![
                row(vec![term(0, 0, 0, 1.0)], 1.0),
                row(vec![term(0, 1, 1, 1.0)], 1.0),
            ],
            offset: 0.0,
        }
    }

    #[test]
    fn trace_program_pushes_mass_off_the_penalized_entry() {
        let sol = solve(&trace_program(), &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!(sol.primal_value.abs() < 1e-6, "value {}", sol.primal_value);
        assert!(sol.z[0][(0, 0)].abs() < 1e-6);
        assert!((sol.z[0][(1, 1)] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn correlation_program_reaches_the_all_ones_matrix() {
        let sol = solve(&correlation_program(), &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_value + 2.0).abs() < 1e-6, "value {}", sol.primal_value);
        assert!((sol.z[0][(0, 1)] - 1.0).abs() < 1e-5);
        assert!(sol.residuals.primal <= 1e-8 && sol.residuals.dual <= 1e-8);
    }

    #[test]
    fn negative_diagonal_pin_is_infeasible() {
        let prog = ConicProgram {
            blocks: vec![BlockKind::Psd(2)],
            objective: vec![DMatrix::zeros(2, 2)],
            constraints: vec![row(vec![term(0, 0, 0, 1.0)], -1.0)],
            offset: 0.0,
        };
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert_eq!(sol.primal_value, f64::INFINITY);
    }

    #[test]
    fn growing_free_entry_is_unbounded() {
        // min -Z11 with only Z22 pinned: Z11 can grow without bound.
        let prog = ConicProgram {
            blocks: vec![BlockKind::Psd(2)],
            objective: vec![DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 0.0])],
            constraints: vec![row(vec![term(0, 1, 1, 1.0)], 1.0)],
            offset: 0.0,
        };
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn duplicate_row_is_dropped_without_changing_the_optimum() {
        let mut prog = correlation_program();
        prog.constraints.push(prog.constraints[0].clone());
        match preprocess::presolve(&prog) {
            Presolved::Reduced(red) => assert_eq!(red.kept_rows, vec![0, 1]),
            Presolved::Infeasible => panic!("unexpectedly infeasible"),
        }
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.primal_value + 2.0).abs() < 1e-6);
        assert_eq!(sol.y.len(), 3);
    }

    #[test]
    fn contradictory_rows_are_detected_without_iterating() {
        let mut prog = trace_program();
        prog.constraints.push(row(vec![term(0, 0, 0, 1.0), term(0, 1, 1, 1.0)], 2.0));
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Infeasible);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn forced_scalar_is_substituted_and_recovered() {
        // Scalar s pinned to 2 by its own row, coupled into Z11 = s - 1.
        let prog = ConicProgram {
            blocks: vec![BlockKind::Psd(2), BlockKind::NonNeg],
            objective: vec![
                DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
                DMatrix::from_element(1, 1, 3.0),
            ],
            constraints: vec![
                row(vec![term(1, 0, 0, 1.0)], 2.0),
                row(vec![term(0, 0, 0, 1.0), term(1, 0, 0, -1.0)], -1.0),
                row(vec![term(0, 1, 1, 1.0)], 1.0),
            ],
            offset: 0.0,
        };
        match preprocess::presolve(&prog) {
            Presolved::Reduced(red) => {
                assert_eq!(red.eliminated.len(), 1);
                assert_eq!(red.eliminated[0].block, 1);
                assert!((red.eliminated[0].value - 2.0).abs() < 1e-12);
            }
            Presolved::Infeasible => panic!("unexpectedly infeasible"),
        }
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        // Z11 forced to 1, objective 1*1 + 3*2 = 7.
        assert!((sol.primal_value - 7.0).abs() < 1e-6, "value {}", sol.primal_value);
        assert!((sol.z[1][(0, 0)] - 2.0).abs() < 1e-9);
        assert!(sol.residuals.dual <= 1e-8, "dual residual {}", sol.residuals.dual);
    }

    #[test]
    fn fully_eliminated_program_is_solved_analytically() {
        let prog = ConicProgram {
            blocks: vec![BlockKind::NonNeg],
            objective: vec![DMatrix::from_element(1, 1, 3.0)],
            constraints: vec![row(vec![term(0, 0, 0, 1.0)], 2.0)],
            offset: 0.0,
        };
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_eq!(sol.iterations, 0);
        assert!((sol.primal_value - 6.0).abs() < 1e-12);
        assert!((sol.dual_value - 6.0).abs() < 1e-12);
    }

    #[test]
    fn floating_negative_cost_scalar_is_unbounded() {
        let prog = ConicProgram {
            blocks: vec![BlockKind::NonNeg, BlockKind::NonNeg],
            objective: vec![
                DMatrix::from_element(1, 1, -1.0),
                DMatrix::from_element(1, 1, 0.0),
            ],
            constraints: vec![row(vec![term(1, 0, 0, 1.0)], 1.0)],
            offset: 0.0,
        };
        let sol = solve(&prog, &SolverConfig::default());
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn iteration_cap_reports_iteration_limit() {
        let cfg = SolverConfig { max_iter: 1, ..SolverConfig::default() };
        let sol = solve(&correlation_program(), &cfg);
        assert_eq!(sol.status, SolveStatus::IterationLimit);
    }

    #[test]
    fn identical_inputs_give_bit_identical_runs() {
        let a = solve(&correlation_program(), &SolverConfig::default());
        let b = solve(&correlation_program(), &SolverConfig::default());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.primal_value.to_bits(), b.primal_value.to_bits());
        assert_eq!(a.dual_value.to_bits(), b.dual_value.to_bits());
    }

    #[test]
    fn weak_duality_holds_on_returned_solutions() {
        for prog in [trace_program(), correlation_program()] {
            let sol = solve(&prog, &SolverConfig::default());
            assert_eq!(sol.status, SolveStatus::Optimal);
            assert!(
                sol.primal_value >= sol.dual_value - 1e-6,
                "primal {} dual {}",
                sol.primal_value,
                sol.dual_value
            );
        }
    }

    fn random_sym(rng: &mut ChaCha8Rng, k: usize) -> DMatrix<f64> {
        let m = DMatrix::from_fn(k, k, |_, _| rng.random_range(-1.0..1.0));
        sym(&m)
    }

    /// Independent estimate of the optimum via a refined grid over the dual
    /// plane: maximize b^T y subject to C - y1 A1 - y2 A2 >= 0.
    fn dual_grid_value(
        c: &DMatrix<f64>,
        a1: &DMatrix<f64>,
        a2: &DMatrix<f64>,
        b1: f64,
        b2: f64,
    ) -> f64 {
        let feasible = |y1: f64, y2: f64| min_eig(&(c - a1 * y1 - a2 * y2)) >= 0.0;
        let mut center = (0.0, 0.0);
        let mut half = 20.0;
        let mut best = f64::NEG_INFINITY;
        let steps = 60i64;
        for _ in 0..8 {
            let mut best_pt = center;
            for p in -steps..=steps {
                for q in -steps..=steps {
                    let y1 = center.0 + half * p as f64 / steps as f64;
                    let y2 = center.1 + half * q as f64 / steps as f64;
                    let val = b1 * y1 + b2 * y2;
                    if val > best && feasible(y1, y2) {
                        best = val;
                        best_pt = (y1, y2);
                    }
                }
            }
            center = best_pt;
            // Shrink by 5x while keeping 12 cells of the previous spacing in
            // view, so a best point a few cells off the true apex cannot
            // push the optimum outside the next window.
            half *= 0.2;
        }
        assert!(best.is_finite(), "grid oracle found no feasible dual point");
        assert!(center.0.abs() < 19.0 && center.1.abs() < 19.0, "optimum escaped the grid");
        best
    }

    #[test]
    fn random_programs_match_the_dual_grid_oracle() {
        for seed in [11u64, 29, 47] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = random_sym(&mut rng, 3);
            let a1 = DMatrix::identity(3, 3);
            let a2 = random_sym(&mut rng, 3);
            // Right-hand side from a strictly interior point.
            let z0 = DMatrix::identity(3, 3) + random_sym(&mut rng, 3) * 0.1;
            let b1 = z0.trace();
            let b2 = (&a2 * &z0).trace();
            let mut terms1 = Vec::new();
            let mut terms2 = Vec::new();
            for r in 0..3 {
                for col in r..3 {
                    let scale = if r == col { 1.0 } else { 2.0 };
                    terms1.push(term(0, r, col, if r == col { 1.0 } else { 0.0 }));
                    terms2.push(term(0, r, col, scale * a2[(r, col)]));
                }
            }
            terms1.retain(|t| t.value != 0.0);
            terms2.retain(|t| t.value != 0.0);
            let prog = ConicProgram {
                blocks: vec![BlockKind::Psd(3)],
                objective: vec![c.clone()],
                constraints: vec![row(terms1, b1), row(terms2, b2)],
                offset: 0.0,
            };
            let sol = solve(&prog, &SolverConfig::default());
            assert_eq!(sol.status, SolveStatus::Optimal, "seed {seed}");
            let oracle = dual_grid_value(&c, &a1, &a2, b1, b2);
            assert!(
                (sol.primal_value - oracle).abs() <= 1e-4,
                "seed {seed}: solver {} vs oracle {}",
                sol.primal_value,
                oracle
            );
        }
    }
}
