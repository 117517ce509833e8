//! Best-first branch-and-bound on polar search boxes.
//!
//! Every node carries a search box (per-coordinate argument set and modulus
//! interval), the enhanced relaxation solved over that box, a feasible point
//! obtained by scaling the relaxation solution onto the box, and the
//! relaxation value as the node's lower bound. The loop repeatedly selects
//! the node with the smallest lower bound, stops when the incumbent is within
//! `epsilon` of it, and otherwise splits the coordinate set whose relaxation
//! discrepancy is largest: the argument set when the rounding error
//! `max_i |scaled_i - x_i|` dominates, the modulus interval when the
//! squared-modulus slack `max_i (X_ii - r_i^2)` does.
//!
//! Children inherit the parent's lower bound as a floor. A child's region is
//! contained in the parent's, so the parent's relaxation value also bounds
//! the child subproblem; flooring keeps the selected bounds monotone even
//! when a discrete split rebuilds the argument envelope with fewer facets.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use nalgebra::Complex;
use ordered_float::OrderedFloat;

use crate::conic::{
    build_csdr, build_ecsdr, solve_relaxation_audited, RelaxStatus, RelaxationSolution, SearchBox,
    SolveAudit,
};
use crate::model::{ArgumentSet, CVector, ComplexityConstants, ModulusBounds, ProblemCQP};
use crate::sdpsolver::SolverConfig;

/// One branch-and-bound node.
#[derive(Debug, Clone)]
pub struct BBNode {
    /// Feasible region of this subproblem in polar coordinates.
    pub region: SearchBox,
    /// Enhanced relaxation solved over `region`.
    pub relax: RelaxationSolution,
    /// Feasible point for the original problem obtained by [`scale`].
    pub scaled: CVector,
    /// Lower bound for the subproblem (relaxation value, floored by the
    /// parent's bound).
    pub lower: f64,
}

/// Largest per-coordinate relaxation discrepancies, driving the branch rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchScore {
    /// Coordinate with the largest rounding error `|scaled_i - x_i|`.
    pub i1: usize,
    pub s1: f64,
    /// Coordinate with the largest squared-modulus slack `X_ii - r_i^2`.
    pub i2: usize,
    pub s2: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BBError {
    /// The branch rule selected a set that cannot be split (singleton
    /// argument set or zero-width modulus interval). The loop must have
    /// terminated before reaching such a node.
    #[error("degenerate branch: coordinate {index} cannot be split")]
    DegenerateBranch { index: usize },
}

/// Run limits and instrumentation switches.
#[derive(Debug, Clone, Default)]
pub struct BBLimits {
    /// Maximum number of node selections; `None` means unlimited.
    pub max_iterations: Option<u64>,
    /// Wall-clock budget; `None` means unlimited.
    pub time_limit: Option<Duration>,
    /// Record per-iteration verification checks in the report.
    pub verify: bool,
}

/// Why the run stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    /// Certified: `objective - final_lower <= epsilon`.
    EpsilonOptimal,
    IterationLimit,
    TimeLimit,
}

/// One recorded runtime check (only populated when `BBLimits::verify` is on).
#[derive(Debug, Clone)]
pub struct VerificationCheck {
    pub iteration: u64,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Snapshot passed to the progress callback after each node selection.
#[derive(Debug, Clone, Copy)]
pub struct Progress {
    pub iteration: u64,
    pub lower: f64,
    pub upper: f64,
    pub active_nodes: usize,
}

/// Full result of a branch-and-bound run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub status: RunStatus,
    /// Best feasible objective value found (the incumbent's value).
    pub objective: f64,
    /// Incumbent point.
    pub solution: CVector,
    /// Best certified lower bound at exit.
    pub final_lower: f64,
    /// Root enhanced-relaxation value.
    pub lbde: f64,
    /// Root conventional-relaxation value.
    pub lbdc: f64,
    /// Percentage of the conventional-relaxation gap closed by the enhanced
    /// relaxation, clamped to `[0, 100]`; NaN when either bound is missing.
    pub closed_gap: f64,
    /// Number of node selections performed.
    pub iterations: u64,
    /// Number of nodes created (root plus both children of every branch).
    pub nodes_created: u64,
    pub time_total: Duration,
    /// Time of the root enhanced-relaxation solve.
    pub time_ecsdr: Duration,
    /// Time of the root conventional-relaxation solve.
    pub time_csdr: Duration,
    /// A-priori worst-case iteration count for the requested accuracy.
    pub theoretical_k: f64,
    pub epsilon: f64,
    pub checks: Vec<VerificationCheck>,
    /// Worst-case conic solver quality over all solves of the run.
    pub audit: SolveAudit,
}

impl RunReport {
    pub fn checks_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Rounds a relaxation point onto the admissible polar sets: coordinate `i`
/// becomes `r[i] * exp(j*theta_i)` with `theta_i` the admissible angle
/// circularly nearest to `arg(x_i)` (ties to the smaller normalized angle,
/// zero coordinates aim at the midpoint of their span).
pub fn scale(x: &CVector, r: &[f64], args: &[ArgumentSet]) -> CVector {
    CVector::from_fn(x.len(), |i, _| {
        let theta = if x[i].norm() == 0.0 {
            args[i].span_midpoint()
        } else {
            args[i].project(x[i].arg())
        };
        Complex::from_polar(r[i], theta)
    })
}

/// Largest per-coordinate discrepancies of a node's relaxation; index ties
/// go to the smallest index.
pub fn branch_score(node: &BBNode) -> BranchScore {
    let n = node.region.n();
    let gram = node.relax.gram.as_matrix();
    let (mut i1, mut s1) = (0, f64::NEG_INFINITY);
    let (mut i2, mut s2) = (0, f64::NEG_INFINITY);
    for i in 0..n {
        let d1 = (node.scaled[i] - node.relax.x[i]).norm();
        if d1 > s1 {
            (i1, s1) = (i, d1);
        }
        let d2 = gram[(i, i)].re - node.relax.r[i] * node.relax.r[i];
        if d2 > s2 {
            (i2, s2) = (i, d2);
        }
    }
    BranchScore { i1, s1, i2, s2 }
}

/// Splits the coordinate set selected by `score`: the argument set of `i1`
/// when `s1 >= s2` (ties branch the argument set), the modulus interval of
/// `i2` otherwise. Intervals split at their midpoint into two closed halves;
/// discrete sets split at the midpoint of their span.
pub fn branch(region: &SearchBox, score: &BranchScore) -> Result<(SearchBox, SearchBox), BBError> {
    if score.s1 >= score.s2 {
        split_argument(region, score.i1)
    } else {
        split_modulus(region, score.i2)
    }
}

fn split_argument(region: &SearchBox, i: usize) -> Result<(SearchBox, SearchBox), BBError> {
    let (left, right) = match &region.args[i] {
        ArgumentSet::Interval { lo, hi } => {
            if hi - lo <= 0.0 {
                return Err(BBError::DegenerateBranch { index: i });
            }
            let mid = 0.5 * (lo + hi);
            (
                ArgumentSet::interval(*lo, mid).expect("half interval is valid"),
                ArgumentSet::interval(mid, *hi).expect("half interval is valid"),
            )
        }
        ArgumentSet::Discrete(angles) => {
            if angles.len() < 2 {
                return Err(BBError::DegenerateBranch { index: i });
            }
            let mid = 0.5 * (angles[0] + angles[angles.len() - 1]);
            let at = angles.partition_point(|&a| a <= mid);
            (
                ArgumentSet::discrete(&angles[..at]).expect("nonempty lower half"),
                ArgumentSet::discrete(&angles[at..]).expect("nonempty upper half"),
            )
        }
    };
    let mut a = region.clone();
    let mut b = region.clone();
    a.args[i] = left;
    b.args[i] = right;
    Ok((a, b))
}

fn split_modulus(region: &SearchBox, i: usize) -> Result<(SearchBox, SearchBox), BBError> {
    let ModulusBounds { lo, hi } = region.bounds[i];
    if hi - lo <= 0.0 {
        return Err(BBError::DegenerateBranch { index: i });
    }
    let mid = 0.5 * (lo + hi);
    let mut a = region.clone();
    let mut b = region.clone();
    a.bounds[i] = ModulusBounds::new(lo, mid).expect("half interval is valid");
    b.bounds[i] = ModulusBounds::new(mid, hi).expect("half interval is valid");
    Ok((a, b))
}

/// Runs branch-and-bound to an `epsilon`-optimal solution or a limit.
pub fn run(p: &ProblemCQP, epsilon: f64, limits: &BBLimits) -> RunReport {
    run_with_progress(p, epsilon, limits, |_| {})
}

/// Same as [`run`], invoking `progress` after every node selection.
pub fn run_with_progress(
    p: &ProblemCQP,
    epsilon: f64,
    limits: &BBLimits,
    progress: impl FnMut(Progress),
) -> RunReport {
    assert!(epsilon > 0.0, "epsilon must be positive");
    Engine::new(p, epsilon, limits).run(progress)
}

/// Heap entry ordered by (lower bound, insertion sequence); wrapped in
/// `Reverse` so the binary heap pops the smallest bound first.
struct HeapEntry {
    key: (OrderedFloat<f64>, u64),
    node: BBNode,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

/// Nodes whose bound comes this close to the incumbent are dropped: the
/// remaining gap is far below any meaningful `epsilon`.
const PURGE_MARGIN: f64 = 1e-12;

struct Engine<'a> {
    p: &'a ProblemCQP,
    epsilon: f64,
    limits: &'a BBLimits,
    config: SolverConfig,
    constants: ComplexityConstants,
    k_bound: f64,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    seq: u64,
    upper: f64,
    incumbent: CVector,
    iterations: u64,
    nodes_created: u64,
    audit: SolveAudit,
    checks: Vec<VerificationCheck>,
    started: Instant,
}

impl<'a> Engine<'a> {
    fn new(p: &'a ProblemCQP, epsilon: f64, limits: &'a BBLimits) -> Self {
        Engine {
            p,
            epsilon,
            limits,
            config: SolverConfig::default(),
            constants: ComplexityConstants::compute(p, epsilon),
            k_bound: theoretical_k(p, epsilon),
            heap: BinaryHeap::new(),
            seq: 0,
            upper: f64::INFINITY,
            incumbent: CVector::zeros(p.n()),
            iterations: 0,
            nodes_created: 0,
            audit: SolveAudit::new(),
            checks: Vec::new(),
            started: Instant::now(),
        }
    }

    /// Solves the enhanced relaxation over a box, retrying once at 10x looser
    /// tolerances on numerical failure. Infeasible reports are treated the
    /// same way: every box produced here is nonempty, so they can only be
    /// numerical artifacts and pruning on them would be unsound.
    fn solve_box(&self, region: &SearchBox) -> (RelaxationSolution, SolveAudit) {
        let mut audit = SolveAudit::new();
        let rp = build_ecsdr(self.p, region);
        let sol = solve_relaxation_audited(&rp, &self.config, &mut audit);
        if sol.status == RelaxStatus::Optimal {
            return (sol, audit);
        }
        let mut loose = self.config.clone();
        loose.feas_tol *= 10.0;
        loose.gap_tol *= 10.0;
        (solve_relaxation_audited(&rp, &loose, &mut audit), audit)
    }

    /// Builds a node from a solved relaxation: clamps the moduli into the
    /// box, scales onto the admissible sets, and floors the bound.
    fn make_node(
        &mut self,
        region: SearchBox,
        relax: RelaxationSolution,
        floor: f64,
    ) -> BBNode {
        let mut relax = relax;
        for i in 0..region.n() {
            relax.r[i] = relax.r[i].clamp(region.bounds[i].lo, region.bounds[i].hi);
        }
        let scaled = scale(&relax.x, &relax.r, &region.args);
        let lower = relax.value.max(floor);
        let value = self.p.objective(&scaled);
        if value < self.upper {
            self.upper = value;
            self.incumbent = scaled.clone();
        }
        self.nodes_created += 1;
        BBNode { region, relax, scaled, lower }
    }

    fn push(&mut self, node: BBNode) {
        if node.lower < self.upper {
            self.seq += 1;
            self.heap.push(Reverse(HeapEntry { key: (OrderedFloat(node.lower), self.seq), node }));
        }
    }

    fn purge(&mut self) {
        let cutoff = self.upper - PURGE_MARGIN;
        self.heap.retain(|e| e.0.node.lower < cutoff);
    }

    fn out_of_time(&self) -> bool {
        self.limits.time_limit.is_some_and(|t| self.started.elapsed() >= t)
    }

    fn run(mut self, mut progress: impl FnMut(Progress)) -> RunReport {
        let root_box = SearchBox::root(self.p);

        let t_csdr = Instant::now();
        let mut csdr_audit = SolveAudit::new();
        let csdr = solve_relaxation_audited(
            &build_csdr(self.p),
            &self.config,
            &mut csdr_audit,
        );
        let time_csdr = t_csdr.elapsed();
        self.audit.merge(&csdr_audit);
        let lbdc =
            if csdr.status == RelaxStatus::Optimal { csdr.value } else { f64::NEG_INFINITY };

        let t_ecsdr = Instant::now();
        let (root_sol, root_audit) = self.solve_box(&root_box);
        let time_ecsdr = t_ecsdr.elapsed();
        self.audit.merge(&root_audit);
        let lbde = if root_sol.status == RelaxStatus::Optimal {
            root_sol.value
        } else {
            f64::NEG_INFINITY
        };

        // The root enters the list unconditionally (the bound-vs-incumbent
        // guard applies to children only) so a tight root is still selected
        // and counted as iteration 1.
        let root = self.make_node(root_box, root_sol, f64::NEG_INFINITY);
        self.seq += 1;
        self.heap.push(Reverse(HeapEntry {
            key: (OrderedFloat(root.lower), self.seq),
            node: root,
        }));

        let (status, final_lower) = self.main_loop(&mut progress);
        let objective = self.upper;

        let closed_gap = if !(lbdc.is_finite() && lbde.is_finite()) {
            f64::NAN
        } else if objective <= lbdc + 1e-12 {
            100.0
        } else {
            ((lbde - lbdc) / (objective - lbdc) * 100.0).clamp(0.0, 100.0)
        };

        RunReport {
            status,
            objective,
            solution: self.incumbent,
            final_lower,
            lbde,
            lbdc,
            closed_gap,
            iterations: self.iterations,
            nodes_created: self.nodes_created,
            time_total: self.started.elapsed(),
            time_ecsdr,
            time_csdr,
            theoretical_k: self.k_bound,
            epsilon: self.epsilon,
            checks: self.checks,
            audit: self.audit,
        }
    }

    /// Best-first loop; returns the exit status and the certified lower
    /// bound at exit.
    fn main_loop(&mut self, progress: &mut impl FnMut(Progress)) -> (RunStatus, f64) {
        loop {
            let Some(Reverse(entry)) = self.heap.pop() else {
                // Every remaining region is within the purge margin of the
                // incumbent, which certifies it.
                return (RunStatus::EpsilonOptimal, self.upper);
            };
            let node = entry.node;
            if self
                .limits
                .max_iterations
                .is_some_and(|m| self.iterations >= m)
            {
                return (RunStatus::IterationLimit, node.lower);
            }
            if self.out_of_time() {
                return (RunStatus::TimeLimit, node.lower);
            }
            self.iterations += 1;

            let score = branch_score(&node);
            if self.limits.verify {
                self.verify_iteration(&node, &score);
            }
            progress(Progress {
                iteration: self.iterations,
                lower: node.lower,
                upper: self.upper,
                active_nodes: self.heap.len(),
            });
            if self.upper - node.lower <= self.epsilon {
                return (RunStatus::EpsilonOptimal, node.lower);
            }

            let Some((left, right)) = self.choose_branch(&node.region, &score) else {
                // Fully pinned box: its only point has already been tested
                // against the incumbent, so the region is exhausted.
                continue;
            };
            let (left_sol, right_sol) = self.solve_children(&left, &right);
            self.integrate(&node, left, left_sol);
            self.integrate(&node, right, right_sol);
            self.purge();
        }
    }

    /// Solves both child relaxations; they are independent programs, so the
    /// parallel build runs them on two workers.
    #[cfg(feature = "parallel")]
    fn solve_children(
        &self,
        left: &SearchBox,
        right: &SearchBox,
    ) -> ((RelaxationSolution, SolveAudit), (RelaxationSolution, SolveAudit)) {
        rayon::join(|| self.solve_box(left), || self.solve_box(right))
    }

    #[cfg(not(feature = "parallel"))]
    fn solve_children(
        &self,
        left: &SearchBox,
        right: &SearchBox,
    ) -> ((RelaxationSolution, SolveAudit), (RelaxationSolution, SolveAudit)) {
        (self.solve_box(left), self.solve_box(right))
    }

    fn integrate(
        &mut self,
        parent: &BBNode,
        region: SearchBox,
        solved: (RelaxationSolution, SolveAudit),
    ) {
        let (sol, audit) = solved;
        self.audit.merge(&audit);
        let node = if sol.status == RelaxStatus::Optimal {
            self.make_node(region, sol, parent.lower)
        } else {
            // Both retries failed: inherit the parent's relaxation data and
            // bound, both valid for the smaller region.
            let mut surrogate = parent.relax.clone();
            surrogate.value = parent.lower;
            surrogate.status = RelaxStatus::Optimal;
            self.make_node(region, surrogate, parent.lower)
        };
        self.push(node);
    }

    /// The branch rule with fallbacks for numerically stuck nodes: primary
    /// selection first, then the other score's coordinate, then any
    /// splittable coordinate. `None` means the box is a single point.
    fn choose_branch(
        &self,
        region: &SearchBox,
        score: &BranchScore,
    ) -> Option<(SearchBox, SearchBox)> {
        if let Ok(pair) = branch(region, score) {
            return Some(pair);
        }
        let secondary = if score.s1 >= score.s2 {
            split_modulus(region, score.i2)
        } else {
            split_argument(region, score.i1)
        };
        if let Ok(pair) = secondary {
            return Some(pair);
        }
        for i in 0..region.n() {
            if let Ok(pair) = split_argument(region, i) {
                return Some(pair);
            }
            if let Ok(pair) = split_modulus(region, i) {
                return Some(pair);
            }
        }
        None
    }

    /// Per-iteration runtime checks, recorded but never fatal:
    /// (a) the rounding gap of the selected node is within the Lipschitz
    ///     bound `m1*s1 + m2*s2`;
    /// (b) when a coordinate set is too small to be worth splitting (the
    ///     dominant argument interval is narrower than `min(kappa1, pi)` or a
    ///     singleton; the dominant modulus interval is narrower than
    ///     `kappa2`), the termination test fires this same iteration;
    /// (c) the number of selections stays within the a-priori bound.
    fn verify_iteration(&mut self, node: &BBNode, score: &BranchScore) {
        let k = self.iterations;
        let gap = self.p.objective(&node.scaled) - node.lower;
        let bound = self.constants.m1 * score.s1.max(0.0) + self.constants.m2 * score.s2.max(0.0);
        self.checks.push(VerificationCheck {
            iteration: k,
            name: "rounding-gap-bound",
            passed: gap <= bound + 1e-6,
            detail: format!("gap {gap:.3e} bound {bound:.3e}"),
        });

        let small = if score.s1 >= score.s2 {
            match &node.region.args[score.i1] {
                ArgumentSet::Interval { lo, hi } => {
                    hi - lo <= self.constants.kappa1.min(std::f64::consts::PI)
                }
                ArgumentSet::Discrete(a) => a.len() == 1,
            }
        } else {
            node.region.bounds[score.i2].width() <= self.constants.kappa2
        };
        if small {
            self.checks.push(VerificationCheck {
                iteration: k,
                name: "small-box-terminates",
                passed: self.upper - node.lower <= self.epsilon,
                detail: format!(
                    "gap {:.3e} epsilon {:.3e}",
                    self.upper - node.lower,
                    self.epsilon
                ),
            });
        }

        self.checks.push(VerificationCheck {
            iteration: k,
            name: "iteration-bound",
            passed: (k as f64) <= self.k_bound,
            detail: format!("iteration {k} bound {:.3e}", self.k_bound),
        });

        let feasible = self.p.is_feasible(&node.scaled, 1e-9);
        self.checks.push(VerificationCheck {
            iteration: k,
            name: "scaled-point-feasible",
            passed: feasible,
            detail: String::new(),
        });

        let worst_active = self
            .heap
            .iter()
            .map(|e| e.0.node.lower)
            .fold(f64::NEG_INFINITY, f64::max);
        self.checks.push(VerificationCheck {
            iteration: k,
            name: "node-list-purity",
            passed: worst_active < self.upper - PURGE_MARGIN || self.heap.is_empty(),
            detail: format!("worst active {worst_active:.6e} incumbent {:.6e}", self.upper),
        });
    }
}

/// A-priori worst-case number of node selections for accuracy `eps`: the
/// product over coordinates of how many pieces each argument set and modulus
/// interval can be split into before every piece is small enough that the
/// rounding gap falls below `eps`.
pub fn theoretical_k(p: &ProblemCQP, eps: f64) -> f64 {
    let constants = ComplexityConstants::compute(p, eps);
    let mut k = 1.0f64;
    for i in 0..p.n() {
        let mu = match &p.args()[i] {
            ArgumentSet::Interval { lo, hi } => {
                let denom = constants.kappa1.min(std::f64::consts::PI);
                (2.0 * (hi - lo) / denom).ceil().max(1.0)
            }
            ArgumentSet::Discrete(a) => a.len() as f64,
        };
        let width = p.bounds()[i].width();
        let pieces = if constants.kappa2.is_infinite() {
            1.0
        } else {
            (2.0 * width / constants.kappa2).ceil().max(1.0)
        };
        k *= mu * pieces;
    }
    k
}
