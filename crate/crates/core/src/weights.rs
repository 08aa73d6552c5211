//! Pre-period balancing weights.
//!
//! The weights minimize a ridge penalty plus the scaled squared residuals
//! of the weighted pre-period outcome and treatment aggregates, after
//! projecting those aggregates on `(Ψ, Z)`. Profiling out the projection
//! coefficients turns the problem into a quadratic in `w` alone:
//!
//! ```text
//! n² Q = ζ² T0 I + Y⁰ M Y⁰ᵀ / σ²_Y + W⁰ M W⁰ᵀ / σ²_W,    M = I − P_(Ψ,Z)
//! ```
//!
//! minimized subject to `Σ w_i = 0` and `Σ w_i D_i = n`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hstack, singular_values_desc, DesignError, OlsDesign};
use crate::panel::{
    demean_two_way, scaling_factors_block, AggregateData, BalancedPanel, ExposureVector, PeriodBlock,
};
use crate::qp::{self, QpSolution};

/// Factor applied to ζ on the single retry after a singular KKT system.
pub const ZETA_RETRY_FACTOR: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig {
    pub zeta: f64,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub sign_constraint: bool,
    /// `n x q` matrix `X`; adds the equalities `Xᵀ w = 0`.
    pub covariate_constraints: Option<DMatrix<f64>>,
}

impl WeightConfig {
    pub fn new(zeta: f64, t0: usize) -> Self {
        Self { zeta, t0, sign_constraint: false, covariate_constraints: None }
    }

    pub fn with_sign_constraint(mut self) -> Self {
        self.sign_constraint = true;
        self
    }

    pub fn with_covariates(mut self, x: DMatrix<f64>) -> Self {
        self.covariate_constraints = Some(x);
        self
    }

    fn is_constrained(&self) -> bool {
        self.sign_constraint || self.covariate_constraints.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSolution {
    pub omega: DVector<f64>,
    /// Coefficients on the columns of `Ψ` followed by the coefficient on `Z`.
    pub eta_y: DVector<f64>,
    pub eta_w: DVector<f64>,
    pub objective: f64,
    pub balance_y: DVector<f64>,
    pub balance_w: DVector<f64>,
    /// ζ actually used; differs from the request after a singular retry.
    pub zeta: f64,
    pub zeta_inflated: bool,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub sigma2_y: f64,
    pub sigma2_w: f64,
    /// Balance residuals of the `(D - D̄)/V̂[D]` weights (the ζ = ∞ limit).
    pub benchmark_balance_y: DVector<f64>,
    pub benchmark_balance_w: DVector<f64>,
    /// Units whose sign constraint binds.
    pub active_set: Vec<usize>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl WeightSolution {
    pub fn n(&self) -> usize {
        self.omega.len()
    }
}

/// `min(σ_k(Ỹ), σ_k(W̃)) / sqrt(n + T)` with `k = floor(T/2)` on the
/// two-way demeaned full-sample matrices.
pub fn default_zeta(panel: &BalancedPanel) -> Result<f64> {
    let (n, t) = (panel.n(), panel.t());
    let k = t / 2;
    if k == 0 {
        return Err(Error::DegenerateScale("need at least two periods".into()));
    }
    let kth = |m: &DMatrix<f64>, what: &str| -> Result<f64> {
        let s = singular_values_desc(&demean_two_way(m));
        let top = s.first().copied().unwrap_or(0.0);
        let sk = s.get(k - 1).copied().unwrap_or(0.0);
        if !(sk > 1e-12 * top) {
            return Err(Error::DegenerateScale(format!(
                "singular value {k} of the demeaned {what} matrix is zero"
            )));
        }
        Ok(sk)
    };
    let sy = kth(panel.y(), "outcome")?;
    let sw = kth(panel.w(), "treatment")?;
    Ok(sy.min(sw) / ((n + t) as f64).sqrt())
}

/// Pre-period quantities shared by every weight solve on the same data.
#[derive(Debug, Clone)]
pub struct WeightProblem {
    y0: DMatrix<f64>,
    w0: DMatrix<f64>,
    design: OlsDesign,
    /// Rows of `Y⁰` and `W⁰` with `(Ψ, Z)` projected out.
    ry: DMatrix<f64>,
    rw: DMatrix<f64>,
    sigma2_y: f64,
    sigma2_w: f64,
    d: ExposureVector,
}

impl WeightProblem {
    /// Set up the problem on the first `t0` periods.
    pub fn new(panel: &BalancedPanel, agg: &AggregateData, d: &ExposureVector, t0: usize) -> Result<Self> {
        if agg.t() != panel.t() || d.len() != panel.n() {
            return Err(Error::InvalidInput("panel, aggregates and exposures disagree in size".into()));
        }
        if t0 == 0 || t0 > panel.t() {
            return Err(Error::InvalidInput(format!("T0 = {t0} is outside 1..={}", panel.t())));
        }
        Self::from_block(&PeriodBlock::cut(panel, agg, 0..t0), d)
    }

    pub fn from_block(pre: &PeriodBlock, d: &ExposureVector) -> Result<Self> {
        let (sigma2_y, sigma2_w) = scaling_factors_block(&pre.y, &pre.w)?;
        let z = DMatrix::from_column_slice(pre.len(), 1, pre.z.as_slice());
        let x = hstack(&[&pre.psi, &z]);
        let design = match OlsDesign::new(x) {
            Ok(design) => design,
            Err(DesignError::Underdetermined { rows, cols }) => {
                return Err(Error::InvalidInput(format!(
                    "{rows} pre-periods cannot identify {cols} balance coefficients"
                )))
            }
            Err(DesignError::RankDeficient { .. }) => {
                return Err(match OlsDesign::new(pre.psi.clone()) {
                    Ok(_) => Error::ColinearInstrumentPre,
                    Err(e) => Error::RankDeficientPsi(format!("pre-period: {e:?}")),
                })
            }
        };
        if pre.len() <= design.ncols() {
            return Err(Error::InvalidInput(format!(
                "{} pre-periods leave no residual variation after {} regressors",
                pre.len(),
                design.ncols()
            )));
        }
        let m = design.annihilator();
        Ok(Self {
            ry: &pre.y * &m,
            rw: &pre.w * &m,
            y0: pre.y.clone(),
            w0: pre.w.clone(),
            design,
            sigma2_y,
            sigma2_w,
            d: d.clone(),
        })
    }

    pub fn n(&self) -> usize {
        self.y0.nrows()
    }

    pub fn t0(&self) -> usize {
        self.y0.ncols()
    }

    pub fn sigma2(&self) -> (f64, f64) {
        (self.sigma2_y, self.sigma2_w)
    }

    /// `n² Q` for the given ζ.
    pub fn scaled_q(&self, zeta: f64) -> DMatrix<f64> {
        let n = self.n();
        let mut q = &self.ry * self.ry.transpose() / self.sigma2_y + &self.rw * self.rw.transpose() / self.sigma2_w;
        let ridge = zeta * zeta * self.t0() as f64;
        for i in 0..n {
            q[(i, i)] += ridge;
        }
        // Exact symmetry keeps the KKT matrix symmetric.
        (&q + q.transpose()) * 0.5
    }

    /// Columns `1`, `D`, then covariates, with right-hand side `(0, n, 0, ...)`.
    fn equalities(&self, covariates: Option<&DMatrix<f64>>) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.n();
        if self.d.is_degenerate() {
            return Err(Error::InfeasibleConstraints(
                "exposures are constant, so Σ w_i = 0 and Σ w_i D_i = n cannot both hold".into(),
            ));
        }
        let ones = DMatrix::from_element(n, 1, 1.0);
        let dcol = DMatrix::from_column_slice(n, 1, self.d.values().as_slice());
        let e = match covariates {
            None => hstack(&[&ones, &dcol]),
            Some(x) => {
                if x.nrows() != n {
                    return Err(Error::InvalidInput(format!(
                        "covariate matrix has {} rows, expected {n}",
                        x.nrows()
                    )));
                }
                if x.ncols() + 2 >= n {
                    return Err(Error::InvalidInput(format!(
                        "{} covariate constraints leave no freedom for {n} units",
                        x.ncols()
                    )));
                }
                hstack(&[&ones, &dcol, x])
            }
        };
        let mut b = DVector::zeros(e.ncols());
        b[1] = n as f64;
        if e.ncols() > 2 && OlsDesign::new(e.clone()).is_err() {
            // A dependent system is consistent only if the right-hand side is in its range.
            let ls = e.transpose().svd(true, true);
            let w = ls.solve(&b, 1e-12 * ls.singular_values.max()).map_err(|m| Error::InvalidInput(m.into()))?;
            let gap = (e.tr_mul(&w) - &b).amax();
            return Err(if gap > 1e-8 * n as f64 {
                Error::InfeasibleConstraints("covariate constraints contradict Σ w_i D_i = n".into())
            } else {
                Error::InvalidInput("covariate constraints are linearly dependent on (1, D)".into())
            });
        }
        Ok((e, b))
    }

    /// Sign constraints `s_i w_i ≥ 0`, `s_i = sign(D_i − D̄)`, as columns.
    fn sign_columns(&self) -> (DMatrix<f64>, Vec<usize>) {
        let n = self.n();
        let mean = self.d.mean();
        let units: Vec<usize> = (0..n).filter(|&i| self.d.values()[i] != mean).collect();
        let mut c = DMatrix::zeros(n, units.len());
        for (k, &i) in units.iter().enumerate() {
            c[(i, k)] = (self.d.values()[i] - mean).signum();
        }
        (c, units)
    }

    /// Aggregate `(1/n) Σ w_i M_it` over the pre-period and its balance fit.
    fn balance(&self, m: &DMatrix<f64>, w: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let agg = m.tr_mul(w) / self.n() as f64;
        let fit = self.design.fit(&agg);
        (fit.coef, fit.resid)
    }

    /// Criterion evaluated at `w` with its profiled coefficients.
    pub fn objective(&self, zeta: f64, w: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        let (_, by) = self.balance(&self.y0, w);
        let (_, bw) = self.balance(&self.w0, w);
        zeta * zeta * self.t0() as f64 / (n * n) * w.norm_squared()
            + by.norm_squared() / self.sigma2_y
            + bw.norm_squared() / self.sigma2_w
    }

    /// Criterion at arbitrary `(w, η_y, η_w)`, without profiling.
    pub fn joint_objective(&self, zeta: f64, w: &DVector<f64>, eta_y: &DVector<f64>, eta_w: &DVector<f64>) -> f64 {
        let n = self.n() as f64;
        let x = self.design.matrix();
        let ry = self.y0.tr_mul(w) / n - x * eta_y;
        let rw = self.w0.tr_mul(w) / n - x * eta_w;
        zeta * zeta * self.t0() as f64 / (n * n) * w.norm_squared()
            + ry.norm_squared() / self.sigma2_y
            + rw.norm_squared() / self.sigma2_w
    }

    fn package(&self, zeta: f64, inflated: bool, sol: QpSolution, signed_units: &[usize]) -> WeightSolution {
        let mut omega = sol.x;
        let active: Vec<usize> = sol.active.iter().map(|&k| signed_units[k]).collect();
        for &i in &active {
            omega[i] = 0.0;
        }
        let (eta_y, balance_y) = self.balance(&self.y0, &omega);
        let (eta_w, balance_w) = self.balance(&self.w0, &omega);
        let bench = self.d.tsls_weights();
        let (_, benchmark_balance_y) = self.balance(&self.y0, &bench);
        let (_, benchmark_balance_w) = self.balance(&self.w0, &bench);
        let objective = self.objective(zeta, &omega);
        WeightSolution {
            omega,
            eta_y,
            eta_w,
            objective,
            balance_y,
            balance_w,
            zeta,
            zeta_inflated: inflated,
            t0: self.t0(),
            sigma2_y: self.sigma2_y,
            sigma2_w: self.sigma2_w,
            benchmark_balance_y,
            benchmark_balance_w,
            active_set: active,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
        }
    }

    fn solve_once(&self, config: &WeightConfig, zeta: f64, inflated: bool) -> Result<WeightSolution> {
        let (e, b) = self.equalities(config.covariate_constraints.as_ref())?;
        let q = self.scaled_q(zeta);
        if !config.sign_constraint {
            let sol = qp::solve_equality(&q, &e, &b)?;
            return Ok(self.package(zeta, inflated, sol, &[]));
        }
        let (c, units) = self.sign_columns();
        let sol = qp::solve_dual_active_set(&q, &e, &b, &c, 10 * self.n())?;
        if sol.kkt_residual > 1e-8 {
            return Err(Error::MaxIterations {
                iterations: sol.iterations,
                residual: sol.kkt_residual,
                best: sol.x.iter().copied().collect(),
            });
        }
        Ok(self.package(zeta, inflated, sol, &units))
    }

    pub fn solve(&self, config: &WeightConfig) -> Result<WeightSolution> {
        if !(config.zeta > 0.0) || !config.zeta.is_finite() {
            return Err(Error::InvalidInput(format!("zeta must be positive and finite, got {}", config.zeta)));
        }
        match self.solve_once(config, config.zeta, false) {
            Err(Error::SingularKkt) => self.solve_once(config, config.zeta * ZETA_RETRY_FACTOR, true),
            other => other,
        }
    }
}

fn check_t0(config: &WeightConfig, panel: &BalancedPanel) -> Result<()> {
    if config.t0 == 0 || config.t0 >= panel.t() {
        return Err(Error::InvalidInput(format!("T0 = {} must lie in 1..{}", config.t0, panel.t())));
    }
    Ok(())
}

/// Equality-constrained weights on periods `t < config.t0`.
///
/// Inequality and covariate settings in `config` are ignored here; use
/// [`solve_weights_constrained`] for those.
pub fn solve_weights(
    panel: &BalancedPanel,
    agg: &AggregateData,
    d: &ExposureVector,
    config: &WeightConfig,
) -> Result<WeightSolution> {
    check_t0(config, panel)?;
    let plain = WeightConfig::new(config.zeta, config.t0);
    WeightProblem::new(panel, agg, d, config.t0)?.solve(&plain)
}

/// Weights with the sign constraint `ω_i (D_i − D̄) ≥ 0` and/or covariate
/// equalities `Xᵀ ω = 0`.
pub fn solve_weights_constrained(
    panel: &BalancedPanel,
    agg: &AggregateData,
    d: &ExposureVector,
    config: &WeightConfig,
) -> Result<WeightSolution> {
    check_t0(config, panel)?;
    WeightProblem::new(panel, agg, d, config.t0)?.solve(config)
}

/// Dispatch on whether `config` carries any extra constraint.
pub fn solve_weights_auto(
    panel: &BalancedPanel,
    agg: &AggregateData,
    d: &ExposureVector,
    config: &WeightConfig,
) -> Result<WeightSolution> {
    if config.is_constrained() {
        solve_weights_constrained(panel, agg, d, config)
    } else {
        solve_weights(panel, agg, d, config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub residual_y: DVector<f64>,
    pub residual_w: DVector<f64>,
    pub rms_y: f64,
    pub rms_w: f64,
    pub benchmark_rms_y: f64,
    pub benchmark_rms_w: f64,
    /// `rms / benchmark_rms`; NaN when the benchmark balances exactly.
    pub ratio_y: f64,
    pub ratio_w: f64,
}

fn rms(v: &DVector<f64>) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        (v.norm_squared() / v.len() as f64).sqrt()
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::NAN
    }
}

pub fn balance_diagnostics(solution: &WeightSolution) -> BalanceReport {
    let rms_y = rms(&solution.balance_y);
    let rms_w = rms(&solution.balance_w);
    let benchmark_rms_y = rms(&solution.benchmark_balance_y);
    let benchmark_rms_w = rms(&solution.benchmark_balance_w);
    BalanceReport {
        residual_y: solution.balance_y.clone(),
        residual_w: solution.balance_w.clone(),
        rms_y,
        rms_w,
        benchmark_rms_y,
        benchmark_rms_w,
        ratio_y: ratio(rms_y, benchmark_rms_y),
        ratio_w: ratio(rms_w, benchmark_rms_w),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn instance(seed: u64, n: usize, t: usize) -> (BalancedPanel, AggregateData, ExposureVector) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let y = DMatrix::from_fn(n, t, |_, _| g());
        let w = DMatrix::from_fn(n, t, |_, _| g());
        let z = DVector::from_fn(t, |_, _| g());
        let d = DVector::from_fn(n, |_, _| 1.0 + 0.5 * g());
        (
            BalancedPanel::from_matrices(y, w).unwrap(),
            AggregateData::constant_mean(z).unwrap(),
            ExposureVector::new(d).unwrap(),
        )
    }

    /// Accelerated projected gradient on the affine set `Eᵀ w = b`.
    fn projected_gradient(q: &DMatrix<f64>, e: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let ete_inv = (e.transpose() * e).try_inverse().unwrap();
        let project = |w: &DVector<f64>| -> DVector<f64> { w - e * (&ete_inv * (e.tr_mul(w) - b)) };
        let lip = q.clone().symmetric_eigenvalues().max();
        let mut w = project(&DVector::zeros(q.nrows()));
        let mut v = w.clone();
        let mut tk: f64 = 1.0;
        for _ in 0..200_000 {
            let next = project(&(&v - (q * &v) / lip));
            let tn = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            v = &next + (&next - &w) * ((tk - 1.0) / tn);
            w = next;
            tk = tn;
            let grad = q * &w;
            let stat = &grad - e * (&ete_inv * e.tr_mul(&grad));
            if stat.amax() < 1e-10 * (1.0 + grad.amax()) {
                break;
            }
        }
        w
    }

    #[test]
    fn matches_projected_gradient_oracle() {
        let (panel, agg, d) = instance(3, 4, 9);
        let zeta = 0.4;
        let sol = solve_weights(&panel, &agg, &d, &WeightConfig::new(zeta, 6)).unwrap();
        let prob = WeightProblem::new(&panel, &agg, &d, 6).unwrap();
        let (e, b) = prob.equalities(None).unwrap();
        let oracle = projected_gradient(&prob.scaled_q(zeta), &e, &b);
        assert!((&sol.omega - oracle).amax() < 1e-6, "{}", sol.omega);
    }

    #[test]
    fn equalities_hold() {
        for seed in 0..10 {
            let (panel, agg, d) = instance(seed, 15, 12);
            let zeta = default_zeta(&panel).unwrap();
            let sol = solve_weights(&panel, &agg, &d, &WeightConfig::new(zeta, 4)).unwrap();
            let n = 15.0;
            assert!(sol.omega.sum().abs() / n < 1e-10);
            assert!((sol.omega.dot(d.values()) / n - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn huge_zeta_gives_tsls_weights() {
        let (panel, agg, d) = instance(5, 20, 15);
        let zeta = 1e8 * default_zeta(&panel).unwrap();
        let sol = solve_weights(&panel, &agg, &d, &WeightConfig::new(zeta, 5)).unwrap();
        let bench = d.tsls_weights();
        assert!((&sol.omega - &bench).norm() <= 1e-6 * bench.norm());
        let rep = balance_diagnostics(&sol);
        assert!((rep.ratio_y - 1.0).abs() < 1e-6);
    }

    #[test]
    fn objective_matches_profiled_quadratic() {
        let (panel, agg, d) = instance(7, 8, 10);
        let sol = solve_weights(&panel, &agg, &d, &WeightConfig::new(0.3, 5)).unwrap();
        let prob = WeightProblem::new(&panel, &agg, &d, 5).unwrap();
        let q = prob.scaled_q(0.3) / 64.0;
        let quad = sol.omega.dot(&(&q * &sol.omega));
        assert!((quad - sol.objective).abs() < 1e-9 * sol.objective);
        let joint = prob.joint_objective(0.3, &sol.omega, &sol.eta_y, &sol.eta_w);
        assert!((joint - sol.objective).abs() < 1e-9 * sol.objective);
    }

    #[test]
    fn constant_exposure_is_infeasible() {
        let (panel, agg, _) = instance(1, 6, 9);
        let d = ExposureVector::new(DVector::from_element(6, 2.0)).unwrap();
        let r = solve_weights(&panel, &agg, &d, &WeightConfig::new(1.0, 4));
        assert!(matches!(r, Err(Error::InfeasibleConstraints(_))));
    }

    #[test]
    fn covariate_equal_to_exposure_is_infeasible() {
        let (panel, agg, d) = instance(2, 8, 9);
        let x = DMatrix::from_column_slice(8, 1, d.values().as_slice());
        let cfg = WeightConfig::new(1.0, 4).with_covariates(x);
        let r = solve_weights_constrained(&panel, &agg, &d, &cfg);
        assert!(matches!(r, Err(Error::InfeasibleConstraints(_))), "{r:?}");
    }

    #[test]
    fn covariate_constraints_are_met() {
        let (panel, agg, d) = instance(4, 12, 12);
        let x = DMatrix::from_fn(12, 2, |i, k| ((i * (k + 2)) % 5) as f64);
        let cfg = WeightConfig::new(0.5, 5).with_covariates(x.clone());
        let sol = solve_weights_constrained(&panel, &agg, &d, &cfg).unwrap();
        assert!(x.tr_mul(&sol.omega).amax() < 1e-9);
    }

    #[test]
    fn slack_sign_constraint_changes_nothing() {
        let (panel, agg, d) = instance(9, 10, 12);
        let zeta = 1e3 * default_zeta(&panel).unwrap();
        let cfg = WeightConfig::new(zeta, 4).with_sign_constraint();
        let plain = solve_weights(&panel, &agg, &d, &cfg).unwrap();
        let signed = solve_weights_constrained(&panel, &agg, &d, &cfg).unwrap();
        assert!(signed.active_set.is_empty());
        assert!((plain.omega - signed.omega).amax() < 1e-8);
    }

    #[test]
    fn sign_constraint_holds() {
        for seed in 0..10 {
            let (panel, agg, d) = instance(100 + seed, 10, 12);
            let cfg = WeightConfig::new(0.05, 6).with_sign_constraint();
            let sol = solve_weights_constrained(&panel, &agg, &d, &cfg).unwrap();
            let mean = d.mean();
            for i in 0..10 {
                assert!(sol.omega[i] * (d.values()[i] - mean) >= -1e-10);
            }
            assert!(sol.kkt_residual <= 1e-8);
        }
    }

    #[test]
    fn zeta_rule_is_homogeneous_and_positive() {
        let (panel, _, _) = instance(11, 40, 40);
        let z1 = default_zeta(&panel).unwrap();
        assert!(z1 > 0.0);
        let scaled = panel.map_matrices(|m, _| m * 3.0).unwrap();
        assert!((default_zeta(&scaled).unwrap() - 3.0 * z1).abs() < 1e-10 * z1);
    }

    #[test]
    fn rank_one_data_has_degenerate_zeta() {
        let a = DVector::from_fn(6, |i, _| i as f64 - 2.0);
        let b = DVector::from_fn(8, |t, _| (t as f64).cos());
        let m = &a * b.transpose();
        let panel = BalancedPanel::from_matrices(m.clone(), m).unwrap();
        assert!(matches!(default_zeta(&panel), Err(Error::DegenerateScale(_))));
    }

    #[test]
    fn instrument_spanned_by_psi_pre_period() {
        let (panel, _, d) = instance(12, 6, 12);
        let z = DVector::from_fn(12, |t, _| if t < 5 { 1.0 } else { t as f64 });
        let agg = AggregateData::constant_mean(z).unwrap();
        let r = solve_weights(&panel, &agg, &d, &WeightConfig::new(1.0, 5));
        assert!(matches!(r, Err(Error::ColinearInstrumentPre)), "{r:?}");
    }
}
