//! Homogeneous self-dual interior-point loop: Nesterov-Todd scaling,
//! Mehrotra predictor-corrector steps, dense Schur-complement solves.
//!
//! The embedding tracks `(Z, y, S, tau, kappa)` with residuals
//!
//! ```text
//!   rp = tau b - A(Z)        rd = tau C - A^T y - S        rg = kappa + C.Z - b^T y
//! ```
//!
//! which all vanish proportionally along the central path; `tau -> tau* > 0`
//! yields an optimal pair `(Z, y, S)/tau`, while `tau -> 0` with
//! `kappa > 0` yields an infeasibility or unboundedness certificate.
//!
//! Each Newton system is reduced to the Schur complement `M = A W (.) W A^T`
//! (one dense symmetric positive definite m x m matrix): with
//! `u_i = A_i . (W C W)`, the solve needs `M g_h = h` and `M g_ub = u + b`,
//! after which
//!
//! ```text
//!   dtau = (g - (b-u)^T g_h) / ((b-u)^T g_ub + C.(WCW) + kappa/tau)
//! ```
//!
//! whose denominator equals `b^T M^-1 b + (C.(WCW) - u^T M^-1 u) + kappa/tau`
//! and is strictly positive (the middle term is a projection defect), so the
//! reduction never divides by a vanishing quantity.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::conic::{BlockKind, ConicProgram};

use super::{SolveStatus, SolverConfig};

/// Entries of one constraint matrix on one block, as a symmetric matrix in
/// coordinate form: `(row, col, value)` with `row <= col`, where `value` is
/// the matrix entry itself (off-diagonal coefficients already halved).
type SparseSym = Vec<(usize, usize, f64)>;

pub(crate) struct IpmResult {
    pub status: SolveStatus,
    pub iterations: usize,
    /// `tau`-normalized solution in the program's own units.
    pub z: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
    pub s: Vec<DMatrix<f64>>,
}

struct Data {
    orders: Vec<usize>,
    /// Objective blocks divided by `c_scale`.
    c: Vec<DMatrix<f64>>,
    /// Right-hand side divided by `b_scale`.
    b: DVector<f64>,
    /// Per block: the constraints touching it.
    cons: Vec<Vec<(usize, SparseSym)>>,
    nu: f64,
    c_scale: f64,
    b_scale: f64,
    c_norm: f64,
    b_norm: f64,
    offset: f64,
}

impl Data {
    fn build(prog: &ConicProgram) -> Data {
        let orders: Vec<usize> = prog.blocks.iter().map(BlockKind::order).collect();
        let c_norm = prog
            .objective
            .iter()
            .flat_map(|c| c.iter())
            .map(|v| v.abs())
            .fold(0.0, f64::max);
        let b_norm = prog.constraints.iter().map(|c| c.rhs.abs()).fold(0.0, f64::max);
        let c_scale = c_norm.max(1.0);
        let b_scale = b_norm.max(1.0);
        let c: Vec<DMatrix<f64>> = prog.objective.iter().map(|m| m / c_scale).collect();
        let b = DVector::from_iterator(
            prog.n_constraints(),
            prog.constraints.iter().map(|c| c.rhs / b_scale),
        );
        let mut cons: Vec<Vec<(usize, SparseSym)>> = vec![Vec::new(); prog.blocks.len()];
        for (i, row) in prog.constraints.iter().enumerate() {
            let mut per_block: Vec<(usize, SparseSym)> = Vec::new();
            for t in &row.terms {
                let entry = if t.row == t.col {
                    (t.row, t.col, t.value)
                } else {
                    (t.row, t.col, 0.5 * t.value)
                };
                match per_block.iter_mut().find(|(b, _)| *b == t.block) {
                    Some((_, list)) => match list.iter_mut().find(|e| e.0 == entry.0 && e.1 == entry.1) {
                        Some(e) => e.2 += entry.2,
                        None => list.push(entry),
                    },
                    None => per_block.push((t.block, vec![entry])),
                }
            }
            for (b, list) in per_block {
                cons[b].push((i, list));
            }
        }
        let nu: f64 = orders.iter().map(|&k| k as f64).sum();
        Data { orders, c, b, cons, nu, c_scale, b_scale, c_norm, b_norm, offset: prog.offset }
    }

    /// `sum_i value_i * Z[r_i, c_i]` as a symmetric inner product.
    fn inner(a: &SparseSym, z: &DMatrix<f64>) -> f64 {
        a.iter()
            .map(|&(r, c, v)| if r == c { v * z[(r, c)] } else { 2.0 * v * z[(r, c)] })
            .sum()
    }

    /// `W A W` for a sparse symmetric A: sum of `v (w_r w_c^T + w_c w_r^T)`.
    fn sandwich(a: &SparseSym, w: &DMatrix<f64>) -> DMatrix<f64> {
        let k = w.nrows();
        let mut out = DMatrix::zeros(k, k);
        for &(r, c, v) in a {
            let wr = w.column(r);
            let wc = w.column(c);
            if r == c {
                for p in 0..k {
                    for q in 0..k {
                        out[(p, q)] += v * wr[p] * wc[q];
                    }
                }
            } else {
                for p in 0..k {
                    for q in 0..k {
                        out[(p, q)] += v * (wr[p] * wc[q] + wc[p] * wr[q]);
                    }
                }
            }
        }
        out
    }

    /// Applies the constraint operator: `out_i = sum_b A_{i,b} . Z_b`.
    fn apply_a(&self, z: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.b.len());
        for (b, list) in self.cons.iter().enumerate() {
            for (i, a) in list {
                out[*i] += Self::inner(a, &z[b]);
            }
        }
        out
    }

    /// Adjoint on one block: `sum_i y_i A_{i,b}` as a dense symmetric matrix.
    fn apply_at(&self, y: &DVector<f64>, b: usize) -> DMatrix<f64> {
        let k = self.orders[b];
        let mut out = DMatrix::zeros(k, k);
        for (i, a) in &self.cons[b] {
            let yi = y[*i];
            if yi == 0.0 {
                continue;
            }
            for &(r, c, v) in a {
                out[(r, c)] += yi * v;
                if r != c {
                    out[(c, r)] += yi * v;
                }
            }
        }
        out
    }
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Nesterov-Todd scaling of one block: `W S W = Z` with
/// `W = L M^{-1/2} L^T`, `M = L^T S L`, `Z = L L^T`, plus the pieces reused
/// by the step: `W^{1/2}`, `W^{-1/2}`, the scaled variable
/// `lambda = W^{1/2} S W^{1/2}` (eigendecomposed for the Lyapunov solve),
/// and Cholesky factors of `Z` and `S` for ratio tests.
struct Scaling {
    w: DMatrix<f64>,
    w_half: DMatrix<f64>,
    w_ihalf: DMatrix<f64>,
    lam_q: DMatrix<f64>,
    lam_d: DVector<f64>,
    lz: DMatrix<f64>,
    ls: DMatrix<f64>,
}

fn nt_scaling(z: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<Scaling> {
    let lz = Cholesky::new(z.clone())?.l();
    let ls = Cholesky::new(s.clone())?.l();
    let m = sym(&(lz.transpose() * s * &lz));
    let em = SymmetricEigen::new(m);
    if em.eigenvalues.min() <= 0.0 {
        return None;
    }
    let t = &lz * &em.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&em.eigenvalues.map(|v| v.powf(-0.5)));
    let w = sym(&(&t * inv_sqrt * t.transpose()));
    let ew = SymmetricEigen::new(w.clone());
    if ew.eigenvalues.min() <= 0.0 {
        return None;
    }
    let q = &ew.eigenvectors;
    let w_half = q * DMatrix::from_diagonal(&ew.eigenvalues.map(f64::sqrt)) * q.transpose();
    let w_ihalf =
        q * DMatrix::from_diagonal(&ew.eigenvalues.map(|v| 1.0 / v.sqrt())) * q.transpose();
    let lam = sym(&(&w_half * s * &w_half));
    let el = SymmetricEigen::new(lam);
    if el.eigenvalues.min() <= 0.0 {
        return None;
    }
    Some(Scaling {
        w,
        w_half,
        w_ihalf,
        lam_q: el.eigenvectors,
        lam_d: el.eigenvalues,
        lz,
        ls,
    })
}

/// Largest step to the boundary of the PSD cone from `Z` (factored `L`)
/// along `D`: `1 / max(0, -lambda_min(L^-1 D L^-T))`.
fn psd_ratio(l: &DMatrix<f64>, d: &DMatrix<f64>) -> f64 {
    let t1 = l.solve_lower_triangular(d).expect("triangular solve");
    let t2 = l.solve_lower_triangular(&t1.transpose()).expect("triangular solve");
    let g = sym(&t2);
    let min = SymmetricEigen::new(g).eigenvalues.min();
    if min >= -1e-14 {
        f64::INFINITY
    } else {
        -1.0 / min
    }
}

struct State {
    z: Vec<DMatrix<f64>>,
    y: DVector<f64>,
    s: Vec<DMatrix<f64>>,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dz: Vec<DMatrix<f64>>,
    dy: DVector<f64>,
    ds: Vec<DMatrix<f64>>,
    dtau: f64,
    dkappa: f64,
}

pub(crate) fn run(prog: &ConicProgram, cfg: &SolverConfig) -> IpmResult {
    let data = Data::build(prog);
    let nb = data.orders.len();
    let m = data.b.len();

    let mut st = State {
        z: data.orders.iter().map(|&k| DMatrix::identity(k, k)).collect(),
        y: DVector::zeros(m),
        s: data.orders.iter().map(|&k| DMatrix::identity(k, k)).collect(),
        tau: 1.0,
        kappa: 1.0,
    };
    let mu0 = 1.0;

    let normalize = |st: &State| -> (Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>) {
        let f = 1.0 / st.tau;
        (
            st.z.iter().map(|z| z * (data.b_scale * f)).collect(),
            &st.y * (data.c_scale * f),
            st.s.iter().map(|s| s * (data.c_scale * f)).collect(),
        )
    };

    let mut best_merit = f64::INFINITY;
    let mut best: (Vec<DMatrix<f64>>, DVector<f64>, Vec<DMatrix<f64>>, f64, f64) = (
        st.z.clone(),
        st.y.clone(),
        st.s.clone(),
        st.tau,
        st.kappa,
    );
    let mut iterations = 0usize;
    let mut status = SolveStatus::IterationLimit;

    for _ in 0..cfg.max_iter {
        // Residuals of the homogeneous embedding.
        let az = data.apply_a(&st.z);
        let rp = &data.b * st.tau - &az;
        let rd: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| &data.c[b] * st.tau - data.apply_at(&st.y, b) - &st.s[b])
            .collect();
        let cz: f64 = (0..nb).map(|b| frob(&data.c[b], &st.z[b])).sum();
        let by = data.b.dot(&st.y);
        let rg = st.kappa + cz - by;
        let zs: f64 = (0..nb).map(|b| frob(&st.z[b], &st.s[b])).sum();
        let mu = (zs + st.tau * st.kappa) / (data.nu + 1.0);

        // Convergence in the program's own units for the tau-normalized point.
        let pres =
            data.b_scale * rp.amax() / (st.tau * (1.0 + data.b_norm));
        let dres = data.c_scale * rd.iter().map(max_abs).fold(0.0, f64::max)
            / (st.tau * (1.0 + data.c_norm));
        let pobj = data.c_scale * data.b_scale * cz / st.tau + data.offset;
        let dobj = data.c_scale * data.b_scale * by / st.tau + data.offset;
        let gap = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());

        let merit = pres.max(dres).max(gap);
        if merit < best_merit {
            best_merit = merit;
            best = (st.z.clone(), st.y.clone(), st.s.clone(), st.tau, st.kappa);
        }
        if pres <= cfg.feas_tol && dres <= cfg.feas_tol && gap <= cfg.gap_tol {
            status = SolveStatus::Optimal;
            break;
        }

        // Certificate exam once tau has collapsed relative to kappa.
        if st.tau <= cfg.infeas_threshold * st.kappa.max(1.0)
            || (mu <= 1e-14 * mu0 && st.tau <= 1e-6)
        {
            let aty_s_norm = (0..nb)
                .map(|b| max_abs(&(data.apply_at(&st.y, b) + &st.s[b])))
                .fold(0.0, f64::max);
            if by > 1e-12 && aty_s_norm / by <= 1e-6 {
                status = SolveStatus::Infeasible;
            } else if cz < -1e-12 && az.amax() / (-cz) <= 1e-6 {
                status = SolveStatus::Unbounded;
            } else {
                status = SolveStatus::NumericalFailure;
            }
            break;
        }

        // Nesterov-Todd scalings.
        let scalings: Option<Vec<Scaling>> =
            (0..nb).map(|b| nt_scaling(&st.z[b], &st.s[b])).collect();
        let Some(scalings) = scalings else {
            status = SolveStatus::NumericalFailure;
            break;
        };

        // Schur complement, u = A(WCW), cWc = C.(WCW).
        let mut schur: DMatrix<f64> = DMatrix::zeros(m, m);
        let mut u = DVector::zeros(m);
        let mut cwc = 0.0;
        let mut wrdw: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
        for b in 0..nb {
            let w = &scalings[b].w;
            let wcw = sym(&(w * &data.c[b] * w));
            cwc += frob(&data.c[b], &wcw);
            wrdw.push(sym(&(w * &rd[b] * w)));
            let list = &data.cons[b];
            let waw: Vec<DMatrix<f64>> =
                list.iter().map(|(_, a)| Data::sandwich(a, w)).collect();
            for (p, (i, ai)) in list.iter().enumerate() {
                u[*i] += Data::inner(ai, &wcw);
                for (q, (j, _)) in list.iter().enumerate().skip(p) {
                    let v = Data::inner(ai, &waw[q]);
                    schur[(*i, *j)] += v;
                    if i != j {
                        schur[(*j, *i)] += v;
                    }
                }
            }
        }

        // Factor with escalating ridge regularization.
        let diag_mean = (schur.trace() / m as f64).abs().max(1e-300);
        let mut chol = None;
        for reg in [0.0, 1e-13, 1e-11, 1e-9, 1e-7] {
            let mut cand = schur.clone();
            for d in 0..m {
                cand[(d, d)] += reg * diag_mean;
            }
            if let Some(f) = Cholesky::new(cand) {
                chol = Some(f);
                break;
            }
        }
        let Some(chol) = chol else {
            status = SolveStatus::NumericalFailure;
            break;
        };
        let msolve = |rhs: &DVector<f64>| -> DVector<f64> {
            let mut x = chol.solve(rhs);
            let resid = rhs - &schur * &x;
            x += chol.solve(&resid);
            x
        };
        let gub = msolve(&(&u + &data.b));

        // One Newton solve for given centering/corrector data.
        let direction = |eta: f64,
                         sigma: f64,
                         corr: Option<(&[DMatrix<f64>], f64)>|
         -> Direction {
            // Lyapunov right-hand side per block, in the scaled space.
            let mut r_blocks: Vec<DMatrix<f64>> = Vec::with_capacity(nb);
            for b in 0..nb {
                let sc = &scalings[b];
                let k = data.orders[b];
                let mut f = DMatrix::from_diagonal(&sc.lam_d.map(|d| sigma * mu - d * d));
                // F is expressed directly in lambda's eigenbasis.
                if let Some((corrs, _)) = corr {
                    let cb = sc.lam_q.transpose() * &corrs[b] * &sc.lam_q;
                    f -= cb;
                }
                let mut uprime = DMatrix::zeros(k, k);
                for p in 0..k {
                    for q in 0..k {
                        uprime[(p, q)] = 2.0 * f[(p, q)] / (sc.lam_d[p] + sc.lam_d[q]);
                    }
                }
                let umat = &sc.lam_q * uprime * sc.lam_q.transpose();
                r_blocks.push(sym(&(&sc.w_half * umat * &sc.w_half)));
            }
            let rc = match corr {
                None => -st.tau * st.kappa,
                Some((_, rc)) => rc,
            };

            let mut h = &rp * eta;
            let mut g = rc / st.tau + eta * rg;
            for b in 0..nb {
                for (i, a) in &data.cons[b] {
                    h[*i] += -Data::inner(a, &r_blocks[b]) + eta * Data::inner(a, &wrdw[b]);
                }
                g += frob(&data.c[b], &r_blocks[b]) - eta * frob(&data.c[b], &wrdw[b]);
            }
            let gh = msolve(&h);
            let bu = &data.b - &u;
            let denom = bu.dot(&gub) + cwc + st.kappa / st.tau;
            let dtau = (g - bu.dot(&gh)) / denom;
            let dy = &gh + &gub * dtau;
            let mut ds = Vec::with_capacity(nb);
            let mut dz = Vec::with_capacity(nb);
            for b in 0..nb {
                let dsb = &rd[b] * eta - data.apply_at(&dy, b) + &data.c[b] * dtau;
                let w = &scalings[b].w;
                let dzb = &r_blocks[b] - sym(&(w * &dsb * w));
                ds.push(dsb);
                dz.push(dzb);
            }
            let dkappa = (rc - st.kappa * dtau) / st.tau;
            Direction { dz, dy, ds, dtau, dkappa }
        };

        let max_step = |d: &Direction| -> f64 {
            let mut alpha = f64::INFINITY;
            for b in 0..nb {
                alpha = alpha.min(psd_ratio(&scalings[b].lz, &d.dz[b]));
                alpha = alpha.min(psd_ratio(&scalings[b].ls, &d.ds[b]));
            }
            if d.dtau < 0.0 {
                alpha = alpha.min(-st.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                alpha = alpha.min(-st.kappa / d.dkappa);
            }
            alpha
        };

        // Predictor.
        let aff = direction(1.0, 0.0, None);
        let alpha_aff = max_step(&aff).min(1.0);
        let mut zs_aff = 0.0;
        for b in 0..nb {
            zs_aff += frob(&(&st.z[b] + &aff.dz[b] * alpha_aff), &(&st.s[b] + &aff.ds[b] * alpha_aff));
        }
        let tau_aff = st.tau + alpha_aff * aff.dtau;
        let kappa_aff = st.kappa + alpha_aff * aff.dkappa;
        let mu_aff = (zs_aff + tau_aff * kappa_aff) / (data.nu + 1.0);
        let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 0.99999);

        // Corrector.
        let corrs: Vec<DMatrix<f64>> = (0..nb)
            .map(|b| {
                let sc = &scalings[b];
                let dlz = sym(&(&sc.w_ihalf * &aff.dz[b] * &sc.w_ihalf));
                let dls = sym(&(&sc.w_half * &aff.ds[b] * &sc.w_half));
                sym(&(&dlz * &dls))
            })
            .collect();
        let rc = sigma * mu - st.tau * st.kappa - aff.dtau * aff.dkappa;
        let dir = direction(1.0 - sigma, sigma, Some((&corrs, rc)));

        let alpha = (cfg.step_fraction * max_step(&dir)).min(1.0);
        if alpha < 1e-7 {
            status = SolveStatus::IterationLimit;
            break;
        }

        for b in 0..nb {
            st.z[b] = sym(&(&st.z[b] + &dir.dz[b] * alpha));
            st.s[b] = sym(&(&st.s[b] + &dir.ds[b] * alpha));
        }
        st.y += &dir.dy * alpha;
        st.tau += alpha * dir.dtau;
        st.kappa += alpha * dir.dkappa;
        iterations += 1;
    }

    match status {
        SolveStatus::Optimal => {
            let (z, y, s) = normalize(&st);
            IpmResult { status, iterations, z, y, s }
        }
        SolveStatus::Infeasible | SolveStatus::Unbounded => IpmResult {
            status,
            iterations,
            z: data.orders.iter().map(|&k| DMatrix::zeros(k, k)).collect(),
            y: DVector::zeros(m),
            s: data.orders.iter().map(|&k| DMatrix::zeros(k, k)).collect(),
        },
        _ => {
            let snap = State {
                z: best.0,
                y: best.1,
                s: best.2,
                tau: best.3,
                kappa: best.4,
            };
            let (z, y, s) = normalize(&snap);
            IpmResult { status, iterations, z, y, s }
        }
    }
}
