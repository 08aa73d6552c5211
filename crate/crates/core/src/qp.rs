//! Dense convex quadratic programming.
//!
//! Problems have the form
//!
//! ```text
//! minimize    ½ xᵀ G x
//! subject to  Eᵀ x = b
//!             cᵢᵀ x ≥ 0    for every column cᵢ of C
//! ```
//!
//! with `G` symmetric positive definite. Equality-only problems are solved
//! through the bordered KKT system; inequalities go through a dual
//! active-set method that starts from the equality-constrained optimum and
//! adds violated constraints one at a time, so no feasible starting point
//! is needed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative backward error above which a KKT solve is rejected.
const KKT_RESIDUAL_TOL: f64 = 1e-9;
/// Smallest admissible ratio of LU pivots on the equilibrated system.
const PIVOT_RATIO_TOL: f64 = 1e-14;

/// Solution of a bordered system `[[G, A], [Aᵀ, 0]] [x; v] = [f; g]`.
#[derive(Debug, Clone)]
pub struct KktSolution {
    pub x: DVector<f64>,
    /// Multipliers in the sign convention `G x + A v = f`.
    pub v: DVector<f64>,
    pub residual: f64,
}

/// Solve the bordered system with equilibration, LU and one refinement step.
pub fn solve_kkt(g: &DMatrix<f64>, a: &DMatrix<f64>, f: &DVector<f64>, rhs: &DVector<f64>) -> Result<KktSolution> {
    let n = g.nrows();
    let m = a.ncols();
    let gs = g.diagonal().amax();
    if !(gs > 0.0) || !gs.is_finite() {
        return Err(Error::SingularKkt);
    }
    let col_scale: Vec<f64> = a
        .column_iter()
        .map(|c| {
            let s = c.norm();
            if s > 0.0 {
                1.0 / s
            } else {
                0.0
            }
        })
        .collect();
    if col_scale.iter().any(|&s| s == 0.0) {
        return Err(Error::SingularKkt);
    }
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&(g / gs));
    for j in 0..m {
        for i in 0..n {
            let v = a[(i, j)] * col_scale[j];
            k[(i, n + j)] = v;
            k[(n + j, i)] = v;
        }
    }
    let mut r = DVector::zeros(n + m);
    r.rows_mut(0, n).copy_from(&(f / gs));
    for j in 0..m {
        r[n + j] = rhs[j] * col_scale[j];
    }

    let lu = k.clone().lu();
    let u = lu.u();
    let diag = u.diagonal().map(f64::abs);
    let (dmax, dmin) = (diag.max(), diag.min());
    if !(dmin > PIVOT_RATIO_TOL * (n + m) as f64 * dmax) {
        return Err(Error::SingularKkt);
    }
    let mut sol = lu.solve(&r).ok_or(Error::SingularKkt)?;
    let res = &r - &k * &sol;
    if let Some(corr) = lu.solve(&res) {
        sol += corr;
    }
    let res = &r - &k * &sol;
    let backward = res.norm() / (k.norm() * sol.norm() + r.norm()).max(f64::MIN_POSITIVE);
    if !backward.is_finite() || backward > KKT_RESIDUAL_TOL {
        return Err(Error::SingularKkt);
    }
    let x = sol.rows(0, n).into_owned();
    let v = DVector::from_fn(m, |j, _| sol[n + j] * col_scale[j] * gs);
    Ok(KktSolution { x, v, residual: backward })
}

/// Output of [`solve_dual_active_set`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equalities (`G x = E λ + C μ`).
    pub lambda: DVector<f64>,
    /// Multipliers of the inequalities; zero off the active set.
    pub mu: DVector<f64>,
    /// Indices of active inequality columns, in order of activation.
    pub active: Vec<usize>,
    pub iterations: usize,
    /// Largest violation among stationarity, feasibility and complementarity.
    pub kkt_residual: f64,
}

/// Equality-constrained minimizer of `½ xᵀ G x` with `Eᵀ x = b`.
pub fn solve_equality(g: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>) -> Result<QpSolution> {
    let n = g.nrows();
    let kkt = solve_kkt(g, e, &DVector::zeros(n), b)?;
    let lambda = -kkt.v;
    let mut out = QpSolution {
        x: kkt.x,
        lambda,
        mu: DVector::zeros(0),
        active: Vec::new(),
        iterations: 0,
        kkt_residual: 0.0,
    };
    out.kkt_residual = kkt_residual(g, e, b, &DMatrix::zeros(n, 0), &out);
    Ok(out)
}

fn stack_active(e: &DMatrix<f64>, c: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let n = e.nrows();
    let mut n_a = DMatrix::zeros(n, e.ncols() + active.len());
    n_a.columns_mut(0, e.ncols()).copy_from(e);
    for (k, &j) in active.iter().enumerate() {
        n_a.column_mut(e.ncols() + k).copy_from(&c.column(j));
    }
    n_a
}

/// Stationarity, primal feasibility, dual feasibility and complementarity,
/// each relative to the natural scale of its terms.
pub fn kkt_residual(g: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>, c: &DMatrix<f64>, s: &QpSolution) -> f64 {
    let gx = g * &s.x;
    let mut grad_l = gx.clone() - e * &s.lambda;
    if c.ncols() > 0 {
        grad_l -= c * &s.mu;
    }
    let scale = 1.0 + gx.amax();
    let stat = grad_l.amax() / scale;
    let eq = (e.tr_mul(&s.x) - b).amax() / (1.0 + b.amax());
    let xs = 1.0 + s.x.amax();
    let mut ineq: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    if c.ncols() > 0 {
        let cx = c.tr_mul(&s.x);
        let mu_scale = 1.0 + s.mu.amax();
        for j in 0..c.ncols() {
            ineq = ineq.max((-cx[j]).max(0.0) / xs);
            dual = dual.max((-s.mu[j]).max(0.0) / mu_scale);
            comp = comp.max((s.mu[j] * cx[j]).abs() / (mu_scale * xs));
        }
    }
    stat.max(eq).max(ineq).max(dual).max(comp)
}

/// Dual active-set method for `½ xᵀ G x` subject to `Eᵀ x = b`, `Cᵀ x ≥ 0`.
///
/// `max_iter` bounds the number of primal/dual steps. On exhaustion the
/// best iterate (smallest constraint violation) is returned inside
/// [`Error::MaxIterations`].
pub fn solve_dual_active_set(
    g: &DMatrix<f64>,
    e: &DMatrix<f64>,
    b: &DVector<f64>,
    c: &DMatrix<f64>,
    max_iter: usize,
) -> Result<QpSolution> {
    let n = g.nrows();
    let m_eq = e.ncols();
    let m_in = c.ncols();
    let start = solve_equality(g, e, b)?;
    let mut x = start.x;
    let mut active: Vec<usize> = Vec::new();
    // Multipliers of the active inequalities, aligned with `active`.
    let mut u: Vec<f64> = Vec::new();
    let c_norms: Vec<f64> = c.column_iter().map(|col| col.norm().max(f64::MIN_POSITIVE)).collect();

    let mut iterations = 0;
    let mut best = (f64::INFINITY, x.clone());

    loop {
        // Most violated inequality, measured in normalized units.
        let cx = c.tr_mul(&x);
        let feas_tol = 1e-13 * (1.0 + x.amax());
        let mut p = None;
        let mut worst = 0.0;
        for j in 0..m_in {
            if active.contains(&j) {
                continue;
            }
            let viol = -cx[j] / c_norms[j];
            if viol > feas_tol && viol > worst {
                worst = viol;
                p = Some(j);
            }
        }
        if worst < best.0 {
            best = (worst, x.clone());
        }
        let Some(p) = p else { break };
        let n_p = c.column(p).into_owned();
        let mut u_p = 0.0;

        // Inner loop: take steps until constraint p becomes active.
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::MaxIterations {
                    iterations: max_iter,
                    residual: best.0,
                    best: best.1.iter().copied().collect(),
                });
            }
            let n_a = stack_active(e, c, &active);
            let rhs = DVector::zeros(n_a.ncols());
            let step = solve_kkt(g, &n_a, &n_p, &rhs)?;
            let z = step.x;
            // `G z + N r = n_p`: the dual direction is r restricted to inequalities.
            let r = step.v;

            let mut t1 = f64::INFINITY;
            let mut drop_at = None;
            for (k, &uk) in u.iter().enumerate() {
                let rk = r[m_eq + k];
                if rk > 0.0 {
                    let ratio = uk / rk;
                    if ratio < t1 {
                        t1 = ratio;
                        drop_at = Some(k);
                    }
                }
            }
            let zn = z.dot(&n_p);
            let z_small = z.amax() <= 1e-14 * (1.0 + x.amax()) || zn <= 0.0;
            let t2 = if z_small { f64::INFINITY } else { -(n_p.dot(&x)) / zn };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::InfeasibleConstraints(
                    "inequality constraints cannot be met together with the equalities".into(),
                ));
            }
            if t2.is_finite() {
                x += &z * t;
            }
            for (k, uk) in u.iter_mut().enumerate() {
                *uk -= t * r[m_eq + k];
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                break;
            }
            let k = drop_at.expect("t1 finite implies a blocking constraint");
            active.remove(k);
            u.remove(k);
        }
    }

    // Polish on the final active set.
    let n_a = stack_active(e, c, &active);
    let mut rhs = DVector::zeros(n_a.ncols());
    rhs.rows_mut(0, m_eq).copy_from(b);
    let kkt = solve_kkt(g, &n_a, &DVector::zeros(n), &rhs)?;
    let mult = -kkt.v;
    let mut mu = DVector::zeros(m_in);
    for (k, &j) in active.iter().enumerate() {
        mu[j] = mult[m_eq + k];
    }
    let mut out = QpSolution {
        x: kkt.x,
        lambda: mult.rows(0, m_eq).into_owned(),
        mu,
        active,
        iterations,
        kkt_residual: 0.0,
    };
    out.kkt_residual = kkt_residual(g, e, b, c, &out);
    Ok(out)
}
