//! Random instance generators and brute-force oracles shared by the
//! integration tests. Every oracle here is written from the defining
//! formulas with explicit loops or explicit inverses, without calling the
//! library routine it is used to check.

#![allow(dead_code)]

use aggshock::panel::{AggregateData, BalancedPanel, ExposureVector};
use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn normal_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| gauss(rng))
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| gauss(rng))
}

pub struct Instance {
    pub panel: BalancedPanel,
    pub agg: AggregateData,
    pub d: ExposureVector,
}

/// Gaussian outcome and treatment panels, Gaussian `Z`, exposures around one.
pub fn instance(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Instance {
    let y = normal_mat(rng, n, t);
    let w = normal_mat(rng, n, t);
    let z = normal_vec(rng, t);
    let d = DVector::from_fn(n, |_, _| 1.0 + 0.5 * gauss(rng));
    Instance {
        panel: BalancedPanel::from_matrices(y, w).unwrap(),
        agg: AggregateData::constant_mean(z).unwrap(),
        d: ExposureVector::new(d).unwrap(),
    }
}

/// Instance with a structural first stage and a confounder, so estimates are informative.
pub fn structural_instance(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Instance {
    let z = normal_vec(rng, t);
    let h = DVector::from_fn(t, |s, _| 0.5 * z[s] + gauss(rng));
    let pi = DVector::from_fn(n, |_, _| 1.0 + 0.3 * gauss(rng));
    let th = normal_vec(rng, n);
    let w = DMatrix::from_fn(n, t, |i, s| pi[i] * z[s] + th[i] * h[s] + 0.3 * gauss(rng));
    let y = DMatrix::from_fn(n, t, |i, s| 1.5 * w[(i, s)] + 0.5 * th[i] * h[s] + 0.3 * gauss(rng));
    let d = DVector::from_fn(n, |i, _| pi[i] + 0.1 * gauss(rng));
    Instance {
        panel: BalancedPanel::from_matrices(y, w).unwrap(),
        agg: AggregateData::constant_mean(z).unwrap(),
        d: ExposureVector::new(d).unwrap(),
    }
}

pub fn rel_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Two-way demeaning by explicit loops.
pub fn demean_loops(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, t) = m.shape();
    let mut out = m.clone();
    let mut grand = 0.0;
    for i in 0..n {
        for s in 0..t {
            grand += m[(i, s)];
        }
    }
    grand /= (n * t) as f64;
    for i in 0..n {
        let mut ri = 0.0;
        for s in 0..t {
            ri += m[(i, s)];
        }
        ri /= t as f64;
        for s in 0..t {
            let mut cs = 0.0;
            for j in 0..n {
                cs += m[(j, s)];
            }
            cs /= n as f64;
            out[(i, s)] = m[(i, s)] - ri - cs + grand;
        }
    }
    out
}

/// `(1/(nT)) Σ (demeaned entries)²`.
pub fn sigma2_loops(m: &DMatrix<f64>) -> f64 {
    let d = demean_loops(m);
    let mut acc = 0.0;
    for v in d.iter() {
        acc += v * v;
    }
    acc / (m.nrows() * m.ncols()) as f64
}

/// `I − X (XᵀX)⁻¹ Xᵀ` by explicit inverse.
pub fn annihilator(x: &DMatrix<f64>) -> DMatrix<f64> {
    let inv = (x.transpose() * x).try_inverse().expect("full-rank design");
    DMatrix::identity(x.nrows(), x.nrows()) - x * inv * x.transpose()
}

/// Residuals of `y` on `x` through the normal equations.
pub fn ols_resid(y: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    let inv = (x.transpose() * x).try_inverse().expect("full-rank design");
    y - x * (inv * x.transpose() * y)
}

/// Pre-period design `(ψ_t, Z_t)` for `t < t0`.
pub fn pre_design(agg: &AggregateData, t0: usize) -> DMatrix<f64> {
    let p = agg.p();
    DMatrix::from_fn(t0, p + 1, |s, c| if c < p { agg.psi()[(s, c)] } else { agg.z()[s] })
}

/// The weight criterion as a quadratic form `wᵀ G w`, assembled term by term.
pub fn weight_quadratic(inst: &Instance, t0: usize, zeta: f64) -> DMatrix<f64> {
    let n = inst.panel.n();
    let y0 = inst.panel.y().columns(0, t0).into_owned();
    let w0 = inst.panel.w().columns(0, t0).into_owned();
    let m = annihilator(&pre_design(&inst.agg, t0));
    let (sy, sw) = (sigma2_loops(&y0), sigma2_loops(&w0));
    let nn = (n * n) as f64;
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for a in 0..t0 {
                for b in 0..t0 {
                    acc += m[(a, b)] * (y0[(i, a)] * y0[(j, b)] / sy + w0[(i, a)] * w0[(j, b)] / sw);
                }
            }
            g[(i, j)] = acc / nn;
        }
        g[(i, i)] += zeta * zeta * t0 as f64 / nn;
    }
    g
}

/// Constraint columns `(1, D)` and right-hand side `(0, n)`.
pub fn weight_equalities(d: &ExposureVector) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.len();
    let e = DMatrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { d.values()[i] });
    (e, DVector::from_vec(vec![0.0, n as f64]))
}

/// Accelerated projected gradient on `{w : Eᵀw = b}` until the projected
/// gradient is below `tol` relative to the gradient.
pub fn projected_gradient(g: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>, tol: f64) -> (DVector<f64>, f64) {
    let ete_inv = (e.transpose() * e).try_inverse().unwrap();
    let project = |w: &DVector<f64>| -> DVector<f64> { w - e * (&ete_inv * (e.tr_mul(w) - b)) };
    let tangent = |v: &DVector<f64>| -> DVector<f64> { v - e * (&ete_inv * e.tr_mul(v)) };
    let lip = g.clone().symmetric_eigenvalues().max();
    let mut w = project(&DVector::zeros(g.nrows()));
    let mut v = w.clone();
    let mut tk: f64 = 1.0;
    let mut stat = f64::INFINITY;
    for it in 0..2_000_000 {
        let next = project(&(&v - (g * &v) / lip));
        let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
        v = &next + (&next - &w) * ((tk - 1.0) / tn);
        w = next;
        tk = tn;
        // Restart the momentum periodically; keeps the iteration monotone near the optimum.
        if it % 500 == 499 {
            v = w.clone();
            tk = 1.0;
        }
        let grad = g * &w;
        stat = tangent(&grad).amax() / grad.amax().max(1e-300);
        if stat < tol {
            break;
        }
    }
    (w, stat)
}

/// Solve `min wᵀGw` s.t. `Eᵀw = b` by an explicit inverse of the bordered matrix.
pub fn bordered_solve(g: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let n = g.nrows();
    let m = e.ncols();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(&(g * 2.0));
    k.view_mut((0, n), (n, m)).copy_from(e);
    k.view_mut((n, 0), (m, n)).copy_from(&e.transpose());
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(n, m).copy_from(b);
    let sol = k.try_inverse()? * rhs;
    Some(sol.rows(0, n).into_owned())
}

/// Minimize `wᵀGw` over the equalities plus `s_i w_i ≥ 0` by trying every
/// subset of units pinned to zero and keeping the best feasible candidate.
pub fn enumerate_sign_patterns(g: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>, signs: &[f64]) -> DVector<f64> {
    let n = g.nrows();
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << n) {
        let pinned: Vec<usize> = (0..n).filter(|&i| mask & (1 << i) != 0).collect();
        let mut cols = e.clone();
        let mut rhs = b.clone();
        for &i in &pinned {
            let k = cols.ncols();
            cols = cols.insert_column(k, 0.0);
            cols[(i, k)] = 1.0;
            rhs = rhs.push(0.0);
        }
        if cols.ncols() > n {
            continue;
        }
        let Some(w) = bordered_solve(g, &cols, &rhs) else { continue };
        if (cols.tr_mul(&w) - &rhs).amax() > 1e-8 * (n as f64) {
            continue;
        }
        if (0..n).any(|i| signs[i] * w[i] < -1e-10) {
            continue;
        }
        let obj = w.dot(&(g * &w));
        if best.as_ref().map_or(true, |(o, _)| obj < *o) {
            best = Some((obj, w));
        }
    }
    best.expect("some sign pattern is feasible").1
}

/// `Σ_{s ≤ min(a,b)} ρ^{(a−s)+(b−s)}` for 0-based periods `a, b`.
pub fn ar_kernel(rho: f64, a: usize, b: usize) -> f64 {
    let mut acc = 0.0;
    for s in 0..=a.min(b) {
        acc += rho.powi((a - s) as i32) * rho.powi((b - s) as i32);
    }
    acc
}

/// Variance matrix from post-period residuals through the dense kernel.
pub fn sigma_brute_force(ey: &DVector<f64>, ew: &DVector<f64>, ez: &DVector<f64>, rho: f64, t0: usize) -> Matrix2<f64> {
    let t1 = ey.len();
    let mut s = Matrix2::zeros();
    for a in 0..t1 {
        for b in 0..t1 {
            let k = ar_kernel(rho, t0 + a, t0 + b);
            s[(0, 0)] += ey[a] * k * ey[b];
            s[(0, 1)] += ey[a] * k * ew[b];
            s[(1, 1)] += ew[a] * k * ew[b];
        }
    }
    s[(1, 0)] = s[(0, 1)];
    let mut ez2 = 0.0;
    for v in ez.iter() {
        ez2 += v * v;
    }
    s / (ez2 * ez2)
}

/// Closed-form acceptance region `{τ : (δ − τπ)² ≤ z² (1, −τ) Σ (1, −τ)ᵀ}`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadraticSet {
    Empty,
    Interval(f64, f64),
    /// `(−∞, lo] ∪ [hi, ∞)`.
    TwoRays(f64, f64),
    Line,
}

pub fn quadratic_set(delta: f64, pi: f64, sigma: &Matrix2<f64>, z: f64) -> QuadraticSet {
    let z2 = z * z;
    let a = pi * pi - z2 * sigma[(1, 1)];
    let b = -2.0 * (delta * pi - z2 * sigma[(0, 1)]);
    let c = delta * delta - z2 * sigma[(0, 0)];
    let disc = b * b - 4.0 * a * c;
    if a > 0.0 {
        if disc < 0.0 {
            return QuadraticSet::Empty;
        }
        let r = disc.sqrt();
        QuadraticSet::Interval((-b - r) / (2.0 * a), (-b + r) / (2.0 * a))
    } else if disc <= 0.0 {
        QuadraticSet::Line
    } else {
        let r = disc.sqrt();
        let (x1, x2) = ((-b - r) / (2.0 * a), (-b + r) / (2.0 * a));
        QuadraticSet::TwoRays(x1.min(x2), x1.max(x2))
    }
}

/// Standard normal quantile by bisection on the error-function CDF.
pub fn normal_quantile_bisect(p: f64) -> f64 {
    let cdf = |x: f64| 0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2);
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
