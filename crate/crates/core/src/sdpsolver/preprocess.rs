//! Presolve for the standard-form program: substitutes scalar blocks whose
//! value is forced by a single row, drops numerically dependent rows, and
//! detects inconsistent equalities without entering the iteration loop.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::conic::{BlockKind, ConicProgram, EntryCoeff, LinearConstraint};

/// Relative pivot threshold below which a reduced row counts as dependent.
const PIVOT_TOL: f64 = 1e-10;
/// Residual right-hand side above which a dependent row is a contradiction.
const CONSISTENCY_TOL: f64 = 1e-8;

/// One substituted scalar block, in elimination order.
#[derive(Debug, Clone)]
pub(crate) struct Elimination {
    /// Block index in the original program.
    pub block: usize,
    /// Forced value of the scalar.
    pub value: f64,
    /// Index of the forcing row in the original program.
    pub row: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Reduction {
    pub reduced: ConicProgram,
    /// Original block index -> reduced block index (None when substituted).
    pub block_map: Vec<Option<usize>>,
    /// Reduced row index -> original row index.
    pub kept_rows: Vec<usize>,
    pub eliminated: Vec<Elimination>,
}

#[derive(Debug, Clone)]
pub(crate) enum Presolved {
    /// A row (possibly after substitution / elimination) is unsatisfiable.
    Infeasible,
    Reduced(Box<Reduction>),
}

/// Runs both presolve passes. Deterministic: rows are scanned in order.
pub(crate) fn presolve(prog: &ConicProgram) -> Presolved {
    // Working copy: rows as merged term lists; None marks a removed row.
    let mut rows: Vec<Option<(Vec<EntryCoeff>, f64)>> = prog
        .constraints
        .iter()
        .map(|c| Some((merge_terms(&c.terms), c.rhs)))
        .collect();
    let mut alive = vec![true; prog.blocks.len()];
    let mut offset = prog.offset;
    let mut eliminated: Vec<Elimination> = Vec::new();

    // Pass 1: repeatedly substitute scalars forced by singleton rows.
    loop {
        let mut changed = false;
        for ri in 0..rows.len() {
            let Some((terms, rhs)) = rows[ri].clone() else { continue };
            if terms.is_empty() {
                if rhs.abs() > CONSISTENCY_TOL * (1.0 + prog.constraints[ri].rhs.abs()) {
                    return Presolved::Infeasible;
                }
                rows[ri] = None;
                continue;
            }
            if terms.len() != 1 {
                continue;
            }
            let t = terms[0];
            if !matches!(prog.blocks[t.block], BlockKind::NonNeg) || t.value.abs() < 1e-300 {
                continue;
            }
            let v = rhs / t.value;
            if v < -1e-9 * (1.0 + rhs.abs()) {
                return Presolved::Infeasible;
            }
            let v = v.max(0.0);
            offset += prog.objective[t.block][(0, 0)] * v;
            alive[t.block] = false;
            eliminated.push(Elimination { block: t.block, value: v, row: ri });
            rows[ri] = None;
            for other in rows.iter_mut().flatten() {
                let mut delta = 0.0;
                other.0.retain(|o| {
                    if o.block == t.block {
                        delta += o.value * v;
                        false
                    } else {
                        true
                    }
                });
                other.1 -= delta;
            }
            changed = true;
        }
        if !changed {
            break;
        }
    }

    // Pass 2: sparse row echelon over the remaining rows. A new row is
    // reduced (coefficients and right-hand side together) against the kept
    // rows in order; it either contributes its largest surviving entry as a
    // pivot or is dependent, in which case a surviving right-hand side is a
    // contradiction.
    struct Echelon {
        entries: BTreeMap<(usize, usize, usize), f64>,
        rhs: f64,
        pivot: (usize, usize, usize),
        pivot_value: f64,
    }
    let mut kept: Vec<Echelon> = Vec::new();
    let mut kept_rows: Vec<usize> = Vec::new();

    for ri in 0..rows.len() {
        let Some((terms, rhs)) = &rows[ri] else { continue };
        let mut v: BTreeMap<(usize, usize, usize), f64> =
            terms.iter().map(|t| ((t.block, t.row, t.col), t.value)).collect();
        let mut vr = *rhs;
        let orig_norm = terms.iter().map(|t| t.value.abs()).fold(0.0, f64::max);
        for k in &kept {
            let Some(&coef) = v.get(&k.pivot) else { continue };
            let factor = coef / k.pivot_value;
            for (key, val) in &k.entries {
                *v.entry(*key).or_insert(0.0) -= factor * val;
            }
            vr -= factor * k.rhs;
            v.remove(&k.pivot);
        }
        let max_left = v.values().map(|x| x.abs()).fold(0.0, f64::max);
        if max_left <= PIVOT_TOL * orig_norm.max(1.0) {
            if vr.abs() > CONSISTENCY_TOL * (1.0 + rhs.abs()) {
                return Presolved::Infeasible;
            }
            rows[ri] = None;
            continue;
        }
        let (&pivot, &pivot_value) =
            v.iter().max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap()).unwrap();
        kept.push(Echelon { entries: v, rhs: vr, pivot, pivot_value });
        kept_rows.push(ri);
    }

    // Assemble the reduced program over surviving blocks and rows. Kept rows
    // keep their substituted (not echelon-reduced) coefficients: the echelon
    // only decides which rows stay.
    let mut block_map: Vec<Option<usize>> = Vec::with_capacity(prog.blocks.len());
    let mut blocks = Vec::new();
    let mut objective = Vec::new();
    for (b, kind) in prog.blocks.iter().enumerate() {
        if alive[b] {
            block_map.push(Some(blocks.len()));
            blocks.push(*kind);
            objective.push(prog.objective[b].clone());
        } else {
            block_map.push(None);
        }
    }
    let constraints: Vec<LinearConstraint> = kept_rows
        .iter()
        .map(|&ri| {
            let (terms, rhs) = rows[ri].as_ref().unwrap();
            LinearConstraint {
                terms: terms
                    .iter()
                    .map(|t| EntryCoeff {
                        block: block_map[t.block].unwrap(),
                        row: t.row,
                        col: t.col,
                        value: t.value,
                    })
                    .collect(),
                rhs: *rhs,
            }
        })
        .collect();

    Presolved::Reduced(Box::new(Reduction {
        reduced: ConicProgram { blocks, objective, constraints, offset },
        block_map,
        kept_rows,
        eliminated,
    }))
}

fn merge_terms(terms: &[EntryCoeff]) -> Vec<EntryCoeff> {
    let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    for t in terms {
        *acc.entry((t.block, t.row, t.col)).or_insert(0.0) += t.value;
    }
    acc.into_iter()
        .filter(|(_, v)| *v != 0.0)
        .map(|((block, row, col), value)| EntryCoeff { block, row, col, value })
        .collect()
}

/// Maps a reduced-program solution back onto the original program's blocks
/// and rows. Substituted blocks come back at their forced value with a zero
/// dual slack; the forcing row's multiplier is recovered (in reverse
/// elimination order) so the original dual constraint of each substituted
/// block holds exactly. Dropped dependent rows get a zero multiplier.
pub(crate) fn recover(
    prog: &ConicProgram,
    red: &Reduction,
    z_red: &[DMatrix<f64>],
    y_red: &DVector<f64>,
    s_red: &[DMatrix<f64>],
) -> (Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>) {
    let mut z: Vec<DMatrix<f64>> =
        prog.blocks.iter().map(|k| DMatrix::zeros(k.order(), k.order())).collect();
    let mut s = z.clone();
    for (orig, mapped) in red.block_map.iter().enumerate() {
        if let Some(r) = mapped {
            z[orig] = z_red[*r].clone();
            s[orig] = s_red[*r].clone();
        }
    }
    for e in &red.eliminated {
        z[e.block][(0, 0)] = e.value;
    }
    let mut y = DVector::zeros(prog.n_constraints());
    for (r, orig) in red.kept_rows.iter().enumerate() {
        y[*orig] = y_red[r];
    }
    // Net coefficient of each row on a given scalar block.
    let row_coef = |row: usize, block: usize| -> f64 {
        prog.constraints[row].terms.iter().filter(|t| t.block == block).map(|t| t.value).sum()
    };
    for e in red.eliminated.iter().rev() {
        let c_b = prog.objective[e.block][(0, 0)];
        let mut other = 0.0;
        for (ri, row) in prog.constraints.iter().enumerate() {
            if ri == e.row || !row.terms.iter().any(|t| t.block == e.block) {
                continue;
            }
            other += y[ri] * row_coef(ri, e.block);
        }
        let pivot = row_coef(e.row, e.block);
        y[e.row] = (c_b - other) / pivot;
        s[e.block][(0, 0)] = 0.0;
    }
    (z, y, s)
}
