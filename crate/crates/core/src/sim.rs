//! Monte Carlo engine.
//!
//! Panels are drawn from
//!
//! ```text
//! W_it = β_i^w + μ_t^w + L_it^w + π_i Z_t + θ_i^w H_t + ε_it^w
//! Y_it = β_i^y + μ_t^y + L_it^y + τ W_it + θ_i^y H_t + ε_it^y
//! ```
//!
//! with `Z` a Gaussian moving average, `H = a Z + b Z̃` for an independent
//! copy `Z̃`, and bivariate normal noise. Designs switch the low-rank terms
//! `L` and the confounder `H` on or off; every random stream is drawn
//! regardless of the design so that designs sharing a seed differ only in
//! the switched terms.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{estimate, EstimateConfig};
use crate::error::{Error, Result};
use crate::exposures::construct_exposures;
use crate::inference::ar_test;
use crate::linalg::{compensated_sum, OlsDesign};
use crate::panel::{default_t0, AggregateData, BalancedPanel};
use crate::tsls::{tsls_estimate, tsls_weights};
use crate::tsmodel::LambdaScale;

/// Treatment effect used by the synthetic designs.
pub const TAU: f64 = 1.43;
/// Default rank of the low-rank nuisance component.
pub const DEFAULT_RANK: usize = 11;
const MA_COEFS: [f64; 2] = [1.14, 0.52];
const MA_INNOVATION_VAR: f64 = 0.43;
const H_MIX: (f64, f64) = (0.5, 0.25);
const NOISE_VAR: (f64, f64) = (0.001, 0.003);
const PI_MEAN: f64 = 1.0;
const PI_SD: f64 = 0.25;
const THETA_W_LOAD: f64 = 0.2;
const THETA_Y_LOAD: f64 = 0.45;
const THETA_Y_SCALE: f64 = 1.5;
const THETA_Y_CORR: f64 = 0.3;
/// Admissible range of `‖θ^w H‖_F / ‖π Z‖_F` for synthetic specs.
const SIZE_RATIO_BOUNDS: (f64, f64) = (0.5, 2.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignFlags {
    pub use_l: bool,
    pub use_h: bool,
}

/// The four designs: no extras, low-rank terms, confounder, both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Design {
    One,
    Two,
    Three,
    Four,
}

impl Design {
    pub const ALL: [Design; 4] = [Design::One, Design::Two, Design::Three, Design::Four];

    pub fn flags(self) -> DesignFlags {
        match self {
            Design::One => DesignFlags { use_l: false, use_h: false },
            Design::Two => DesignFlags { use_l: true, use_h: false },
            Design::Three => DesignFlags { use_l: false, use_h: true },
            Design::Four => DesignFlags { use_l: true, use_h: true },
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Design::One => 1,
            Design::Two => 2,
            Design::Three => 3,
            Design::Four => 4,
        }
    }

    pub fn from_number(k: u8) -> Option<Self> {
        Self::ALL.get(usize::from(k).wrapping_sub(1)).copied()
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

impl FromStr for Design {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        s.trim()
            .parse::<u8>()
            .ok()
            .and_then(Design::from_number)
            .ok_or_else(|| format!("design must be one of 1, 2, 3, 4; got `{s}`"))
    }
}

/// Moving-average model `Z_t = ν_t + Σ_k c_k ν_{t-k}`, `ν ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaModel {
    pub coefs: Vec<f64>,
    pub innovation_var: f64,
}

impl MaModel {
    /// Autocovariance at `lag`.
    pub fn autocov(&self, lag: usize) -> f64 {
        let mut psi = vec![1.0];
        psi.extend_from_slice(&self.coefs);
        if lag >= psi.len() {
            return 0.0;
        }
        self.innovation_var * (0..psi.len() - lag).map(|k| psi[k] * psi[k + lag]).sum::<f64>()
    }

    pub fn order(&self) -> usize {
        self.coefs.len()
    }

    /// Series of length `t` from `t + q` innovations (the first `q` are presample).
    pub fn filter(&self, innovations: &[f64]) -> DVector<f64> {
        let q = self.order();
        let t = innovations.len() - q;
        DVector::from_fn(t, |s, _| {
            let at = s + q;
            innovations[at] + self.coefs.iter().enumerate().map(|(k, c)| c * innovations[at - k - 1]).sum::<f64>()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub tau: f64,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub pi: DVector<f64>,
    pub l_y: DMatrix<f64>,
    pub l_w: DMatrix<f64>,
    pub beta_y: DVector<f64>,
    pub beta_w: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub mu_w: DVector<f64>,
    pub theta_y: DVector<f64>,
    pub theta_w: DVector<f64>,
    pub noise_cov: Matrix2<f64>,
    pub z_model: MaModel,
    pub h_mix: (f64, f64),
    pub design: DesignFlags,
}

impl DgpSpec {
    pub fn with_design(mut self, design: Design) -> Self {
        self.design = design.flags();
        self
    }

    /// Multiply the noise covariance by `factor`.
    pub fn with_noise_scale(mut self, factor: f64) -> Self {
        self.noise_cov *= factor;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (n, t) = (self.n, self.t);
        let ok = self.pi.len() == n
            && self.beta_y.len() == n
            && self.beta_w.len() == n
            && self.theta_y.len() == n
            && self.theta_w.len() == n
            && self.mu_y.len() == t
            && self.mu_w.len() == t
            && self.l_y.shape() == (n, t)
            && self.l_w.shape() == (n, t);
        if !ok {
            return Err(Error::InvalidInput("DGP components have inconsistent dimensions".into()));
        }
        let s = &self.noise_cov;
        let psd = s[(0, 1)] == s[(1, 0)]
            && s[(0, 0)] >= 0.0
            && s[(1, 1)] >= 0.0
            && s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(0, 1)] >= -1e-15 * (s[(0, 0)] * s[(1, 1)]).max(1e-300);
        if !psd {
            return Err(Error::InvalidInput("noise covariance must be symmetric PSD".into()));
        }
        if !(self.z_model.innovation_var >= 0.0) {
            return Err(Error::InvalidInput("instrument innovation variance must be non-negative".into()));
        }
        Ok(())
    }

    /// Ratio `‖θ^w H‖_F / ‖π Z‖_F` in population.
    pub fn confounder_size_ratio(&self) -> f64 {
        let (a, b) = self.h_mix;
        (a * a + b * b).sqrt() * self.theta_w.norm() / self.pi.norm()
    }
}

/// Cholesky factor of a 2x2 PSD matrix; zero pivots yield zero columns.
fn chol2(s: &Matrix2<f64>) -> Matrix2<f64> {
    let l11 = s[(0, 0)].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { s[(1, 0)] / l11 } else { 0.0 };
    let l22 = (s[(1, 1)] - l21 * l21).max(0.0).sqrt();
    Matrix2::new(l11, 0.0, l21, l22)
}

fn normal_vec<R: Rng>(rng: &mut R, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample(StandardNormal))
}

fn theta_from_pi<R: Rng>(pi: &DVector<f64>, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
    let xi_w = normal_vec(rng, pi.len());
    let xi_y = normal_vec(rng, pi.len());
    let w = pi * THETA_W_LOAD + xi_w * (1.0 - THETA_W_LOAD * THETA_W_LOAD).sqrt();
    let y = pi * THETA_Y_LOAD + xi_y * (THETA_Y_SCALE * (1.0 - THETA_Y_CORR * THETA_Y_CORR).sqrt());
    (y, w)
}

/// Random rank-`rank` matrix with prescribed Frobenius norm.
fn low_rank<R: Rng>(rng: &mut R, n: usize, t: usize, rank: usize, frob: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let b = DMatrix::from_fn(t, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = a * b.transpose();
    let norm = m.norm();
    if norm > 0.0 {
        m * (frob / norm)
    } else {
        m
    }
}

/// Stand-in calibration with documented constants.
///
/// The low-rank terms have rank `min(11, n, T)` and Frobenius norm
/// `T · sqrt(Σ_kk)`; confounder loadings are redrawn until the size ratio
/// of `θ^w H` to `π Z` lies in `[0.5, 2]`.
pub fn synthetic_spec(n: usize, t: usize, seed: u64) -> DgpSpec {
    assert!(n >= 10 && t >= 10, "synthetic designs need n, T >= 10");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi_dist = Normal::new(PI_MEAN, PI_SD).expect("valid normal");
    let pi = DVector::from_fn(n, |_, _| rng.sample(pi_dist));
    let beta_y = normal_vec(&mut rng, n);
    let beta_w = normal_vec(&mut rng, n);
    let mu_y = normal_vec(&mut rng, t);
    let mu_w = normal_vec(&mut rng, t);
    let rank = DEFAULT_RANK.min(n).min(t);
    let l_y = low_rank(&mut rng, n, t, rank, t as f64 * NOISE_VAR.0.sqrt());
    let l_w = low_rank(&mut rng, n, t, rank, t as f64 * NOISE_VAR.1.sqrt());
    let mut spec = DgpSpec {
        tau: TAU,
        n,
        t,
        pi: pi.clone(),
        l_y,
        l_w,
        beta_y,
        beta_w,
        mu_y,
        mu_w,
        theta_y: DVector::zeros(n),
        theta_w: DVector::zeros(n),
        noise_cov: Matrix2::new(NOISE_VAR.0, 0.0, 0.0, NOISE_VAR.1),
        z_model: MaModel { coefs: MA_COEFS.to_vec(), innovation_var: MA_INNOVATION_VAR },
        h_mix: H_MIX,
        design: Design::Four.flags(),
    };
    for attempt in 0..100 {
        let (ty, tw) = theta_from_pi(&pi, &mut rng);
        spec.theta_y = ty;
        spec.theta_w = tw;
        let r = spec.confounder_size_ratio();
        if (SIZE_RATIO_BOUNDS.0..=SIZE_RATIO_BOUNDS.1).contains(&r) {
            break;
        }
        assert!(attempt < 99, "could not draw confounder loadings of comparable size");
    }
    spec
}

/// Fit `(c1, c2, σ²)` of an MA(2) to lag-0..2 autocovariances by damped Newton.
pub fn fit_ma2(gamma: [f64; 3]) -> MaModel {
    let resid = |p: &Vector3<f64>| -> Vector3<f64> {
        let (a, b, s) = (p[0], p[1], p[2]);
        Vector3::new(s * (1.0 + a * a + b * b) - gamma[0], s * (a + a * b) - gamma[1], s * b - gamma[2])
    };
    let mut p = Vector3::new(0.0, 0.0, gamma[0].max(f64::MIN_POSITIVE));
    let mut f = resid(&p);
    for _ in 0..200 {
        if f.norm() <= 1e-14 * gamma[0].abs().max(1e-300) {
            break;
        }
        let (a, b, s) = (p[0], p[1], p[2]);
        let jac = Matrix3::new(
            2.0 * s * a,
            2.0 * s * b,
            1.0 + a * a + b * b,
            s * (1.0 + b),
            s * a,
            a + a * b,
            0.0,
            s,
            b,
        );
        let Some(step) = jac.lu().solve(&(-f)) else { break };
        let mut lambda = 1.0;
        let mut improved = false;
        for _ in 0..40 {
            let cand = p + step * lambda;
            if cand[2] > 0.0 {
                let fc = resid(&cand);
                if fc.norm() < f.norm() {
                    p = cand;
                    f = fc;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    MaModel { coefs: vec![p[0], p[1]], innovation_var: p[2] }
}

fn sample_autocov(z: &DVector<f64>, lag: usize) -> f64 {
    let m = z.mean();
    let t = z.len();
    (lag..t).map(|s| (z[s] - m) * (z[s - lag] - m)).sum::<f64>() / t as f64
}

/// Best rank-`rank` approximation by truncated SVD.
pub fn truncate_rank(m: &DMatrix<f64>, rank: usize) -> DMatrix<f64> {
    if rank == 0 {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let vt = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for &k in order.iter().take(rank) {
        out += u.column(k) * vt.row(k) * svd.singular_values[k];
    }
    out
}

/// Calibrate the design to an observed panel.
///
/// Both matrices are demeaned across units period by period, then each
/// unit is regressed on `(1, Z)` over the full sample. The treatment slopes
/// become `π`, the residuals are split into a rank-`rank` part `L` and
/// noise with covariance `Σ`, and `Z` is summarized by an MA(2). Confounder
/// loadings are drawn from `seed`.
pub fn calibrate_from_panel(panel: &BalancedPanel, z: &DVector<f64>, rank: usize, seed: u64) -> Result<DgpSpec> {
    let (n, t) = (panel.n(), panel.t());
    if z.len() != t {
        return Err(Error::InvalidInput(format!("instrument has {} periods, panel has {t}", z.len())));
    }
    let max = n.min(t);
    if rank >= max {
        return Err(Error::RankTooLarge { rank, max });
    }
    let x = DMatrix::from_fn(t, 2, |s, c| if c == 0 { 1.0 } else { z[s] });
    let design = OlsDesign::new(x).map_err(|e| Error::CollinearDesign(format!("calibration design: {e:?}")))?;

    let clean = |m: &DMatrix<f64>| -> (DVector<f64>, DVector<f64>, DVector<f64>, DMatrix<f64>) {
        let mu = DVector::from_fn(t, |s, _| m.column(s).mean());
        let mut alpha = DVector::zeros(n);
        let mut slope = DVector::zeros(n);
        let mut e = DMatrix::zeros(n, t);
        for i in 0..n {
            let row = DVector::from_fn(t, |s, _| m[(i, s)] - mu[s]);
            let fit = design.fit(&row);
            alpha[i] = fit.coef[0];
            slope[i] = fit.coef[1];
            e.row_mut(i).copy_from(&fit.resid.transpose());
        }
        (mu, alpha, slope, e)
    };
    let (mu_y, alpha_y, _, e_y) = clean(panel.y());
    let (mu_w, alpha_w, pi, e_w) = clean(panel.w());
    let l_y = truncate_rank(&e_y, rank);
    let l_w = truncate_rank(&e_w, rank);
    let ry = &e_y - &l_y;
    let rw = &e_w - &l_w;
    let nt = (n * t) as f64;
    let s11 = compensated_sum(ry.iter().map(|v| v * v)) / nt;
    let s22 = compensated_sum(rw.iter().map(|v| v * v)) / nt;
    let s12 = compensated_sum(ry.iter().zip(rw.iter()).map(|(a, b)| a * b)) / nt;
    let gamma = [sample_autocov(z, 0), sample_autocov(z, 1), sample_autocov(z, 2)];
    let z_model = fit_ma2(gamma);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (theta_y, theta_w) = theta_from_pi(&pi, &mut rng);
    let spec = DgpSpec {
        tau: TAU,
        n,
        t,
        pi,
        l_y,
        l_w,
        beta_y: alpha_y,
        beta_w: alpha_w,
        mu_y,
        mu_w,
        theta_y,
        theta_w,
        noise_cov: Matrix2::new(s11, s12, s12, s22),
        z_model,
        h_mix: H_MIX,
        design: Design::Four.flags(),
    };
    spec.validate()?;
    Ok(spec)
}

/// One simulated panel with the instrument and confounder series.
#[derive(Debug, Clone)]
pub struct SimDraw {
    pub panel: BalancedPanel,
    pub z: DVector<f64>,
    pub h: DVector<f64>,
}

/// Draw a panel using `rng`. Streams are consumed in a fixed order:
/// instrument innovations, the independent copy, then noise pairs by unit
/// and period.
pub fn simulate_with_rng<R: Rng>(spec: &DgpSpec, rng: &mut R) -> SimDraw {
    let (n, t) = (spec.n, spec.t);
    let q = spec.z_model.order();
    let sd = spec.z_model.innovation_var.sqrt();
    let nu: Vec<f64> = (0..t + q).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let nu_tilde: Vec<f64> = (0..t + q).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let z = spec.z_model.filter(&nu);
    let z_tilde = spec.z_model.filter(&nu_tilde);
    let h = &z * spec.h_mix.0 + &z_tilde * spec.h_mix.1;
    let chol = chol2(&spec.noise_cov);

    let use_l = f64::from(u8::from(spec.design.use_l));
    let use_h = f64::from(u8::from(spec.design.use_h));
    let mut y = DMatrix::zeros(n, t);
    let mut w = DMatrix::zeros(n, t);
    for i in 0..n {
        for s in 0..t {
            let u1: f64 = rng.sample(StandardNormal);
            let u2: f64 = rng.sample(StandardNormal);
            let eps_y = chol[(0, 0)] * u1;
            let eps_w = chol[(1, 0)] * u1 + chol[(1, 1)] * u2;
            let wv = spec.beta_w[i]
                + spec.mu_w[s]
                + use_l * spec.l_w[(i, s)]
                + spec.pi[i] * z[s]
                + use_h * spec.theta_w[i] * h[s]
                + eps_w;
            w[(i, s)] = wv;
            y[(i, s)] = spec.beta_y[i]
                + spec.mu_y[s]
                + use_l * spec.l_y[(i, s)]
                + spec.tau * wv
                + use_h * spec.theta_y[i] * h[s]
                + eps_y;
        }
    }
    let panel = BalancedPanel::from_matrices(y, w).expect("simulated panel is finite");
    SimDraw { panel, z, h }
}

pub fn simulate_once(spec: &DgpSpec, seed: u64) -> SimDraw {
    simulate_with_rng(spec, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Generator for replication `rep` of a run seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub reps: usize,
    pub seed: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
    /// Null value for the ratio test; enables the variance step.
    pub tau0: Option<f64>,
    pub alpha: f64,
    pub lambda_scale: LambdaScale,
    /// Keep per-replication errors in the report.
    pub keep_errors: bool,
}

impl McConfig {
    pub fn new(reps: usize, seed: u64) -> Self {
        Self {
            reps,
            seed,
            threads: None,
            tau0: None,
            alpha: 0.05,
            lambda_scale: LambdaScale::default(),
            keep_errors: false,
        }
    }

    pub fn with_test(mut self, tau0: f64, alpha: f64) -> Self {
        self.tau0 = Some(tau0);
        self.alpha = alpha;
        self
    }

    pub fn with_threads(mut self, threads: usize) -> Self {
        self.threads = Some(threads);
        self
    }
}

/// Estimation errors of one replication, in the order `(π, δ, τ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicationErrors {
    pub rep: usize,
    pub ours: [f64; 3],
    pub tsls: [f64; 3],
    pub reject: Option<bool>,
}

/// Run both estimators on one simulated panel.
///
/// Exposures are slopes on `Z` over the first `floor(T/3)` periods. The
/// π-target of an estimator using unit weights `a` is `(1/n) Σ a_i π_i`
/// (for the benchmark, `a_i = (D_i − D̄)/V̂[D]`); the δ-target is `τ`
/// times that, and the τ-target is `τ`.
pub fn run_replication(spec: &DgpSpec, seed: u64, rep: usize, cfg: &McConfig) -> Result<ReplicationErrors> {
    let draw = simulate_with_rng(spec, &mut replication_rng(seed, rep as u64));
    let agg = AggregateData::constant_mean(draw.z.clone())?;
    let exposure = construct_exposures(&draw.panel, &agg, default_t0(spec.t))?.d;
    let est_cfg = EstimateConfig {
        skip_variance: cfg.tau0.is_none(),
        lambda_scale: cfg.lambda_scale,
        ..EstimateConfig::default()
    };
    let ours = estimate(&draw.panel, &agg, &exposure, &est_cfg)?;
    let tsls = tsls_estimate(&draw.panel, &exposure, &draw.z)?;
    if !ours.tau.is_finite() || !tsls.tau.is_finite() {
        return Err(Error::InvalidInput("non-finite ratio estimate".into()));
    }
    let n = spec.n as f64;
    let pi_ours = ours.weight_solution.omega.dot(&spec.pi) / n;
    let pi_tsls = tsls_weights(&exposure)?.dot(&spec.pi) / n;
    let reject = match cfg.tau0 {
        None => None,
        Some(tau0) => {
            let sigma = ours.sigma_hat.ok_or(Error::DegenerateInstrument)?;
            Some(ar_test(ours.delta, ours.pi, &sigma, tau0, cfg.alpha)?.reject)
        }
    };
    Ok(ReplicationErrors {
        rep,
        ours: [ours.pi - pi_ours, ours.delta - spec.tau * pi_ours, ours.tau - spec.tau],
        tsls: [tsls.pi_fe - pi_tsls, tsls.delta_fe - spec.tau * pi_tsls, tsls.tau - spec.tau],
        reject,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub rmse: f64,
    pub bias: f64,
    pub variance: f64,
}

impl Moments {
    pub fn from_errors(errors: &[f64]) -> Self {
        let m = errors.len() as f64;
        let bias = compensated_sum(errors.iter().copied()) / m;
        let variance = compensated_sum(errors.iter().map(|e| (e - bias) * (e - bias))) / m;
        Self { rmse: (bias * bias + variance).sqrt(), bias, variance }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorStats {
    pub pi: Moments,
    pub delta: Moments,
    pub tau: Moments,
}

impl EstimatorStats {
    fn from_rows(rows: &[[f64; 3]]) -> Self {
        let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<_>>();
        Self {
            pi: Moments::from_errors(&col(0)),
            delta: Moments::from_errors(&col(1)),
            tau: Moments::from_errors(&col(2)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub design: u8,
    pub reps: usize,
    pub seed: u64,
    pub successes: usize,
    pub failures: usize,
    /// Error kinds of failed replications, in replication order.
    pub failure_kinds: Vec<String>,
    pub ours: EstimatorStats,
    pub tsls: EstimatorStats,
    pub rejection_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub errors: Option<Vec<ReplicationErrors>>,
}

fn run_all(spec: &DgpSpec, cfg: &McConfig) -> Result<Vec<Result<ReplicationErrors>>> {
    let job = || -> Vec<Result<ReplicationErrors>> {
        (0..cfg.reps).into_par_iter().map(|rep| run_replication(spec, cfg.seed, rep, cfg)).collect()
    };
    match cfg.threads {
        None => Ok(job()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Replications are independent and collected in order, so the report
/// does not depend on the number of threads.
pub fn run_monte_carlo(spec: &DgpSpec, design: Design, cfg: &McConfig) -> Result<McReport> {
    if cfg.reps == 0 {
        return Err(Error::InvalidInput("reps must be at least 1".into()));
    }
    let spec = spec.clone().with_design(design);
    spec.validate()?;
    let outcomes = run_all(&spec, cfg)?;
    let mut ok = Vec::with_capacity(outcomes.len());
    let mut failure_kinds = Vec::new();
    for out in outcomes {
        match out {
            Ok(r) => ok.push(r),
            Err(e) => failure_kinds.push(e.kind().to_string()),
        }
    }
    let failures = failure_kinds.len();
    if ok.is_empty() || failures * 100 >= cfg.reps {
        return Err(Error::MonteCarloUnstable { failures, reps: cfg.reps });
    }
    let ours_rows: Vec<[f64; 3]> = ok.iter().map(|r| r.ours).collect();
    let tsls_rows: Vec<[f64; 3]> = ok.iter().map(|r| r.tsls).collect();
    let rejection_rate = cfg.tau0.map(|_| {
        let hits = ok.iter().filter(|r| r.reject == Some(true)).count();
        hits as f64 / ok.len() as f64
    });
    Ok(McReport {
        design: design.number(),
        reps: cfg.reps,
        seed: cfg.seed,
        successes: ok.len(),
        failures,
        failure_kinds,
        ours: EstimatorStats::from_rows(&ours_rows),
        tsls: EstimatorStats::from_rows(&tsls_rows),
        rejection_rate,
        errors: cfg.keep_errors.then_some(ok),
    })
}

/// Fraction of replications in which the ratio test rejects `τ = tau0`.
pub fn rejection_rates(spec: &DgpSpec, design: Design, reps: usize, tau0: f64, alpha: f64, seed: u64) -> Result<f64> {
    let cfg = McConfig::new(reps, seed).with_test(tau0, alpha);
    let report = run_monte_carlo(spec, design, &cfg)?;
    Ok(report.rejection_rate.expect("test requested"))
}

/// Per-replication errors of every report as CSV, one row per replication.
pub fn write_error_dump<W: Write>(writer: W, reports: &[McReport]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "design", "rep", "ours_pi", "ours_delta", "ours_tau", "tsls_pi", "tsls_delta", "tsls_tau", "reject",
    ])?;
    for report in reports {
        for e in report.errors.iter().flatten() {
            let mut rec = vec![report.design.to_string(), e.rep.to_string()];
            rec.extend(e.ours.iter().chain(e.tsls.iter()).map(|v| v.to_string()));
            rec.push(e.reject.map_or(String::new(), |r| r.to_string()));
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_spec_is_deterministic() {
        let a = synthetic_spec(51, 39, 7);
        let b = synthetic_spec(51, 39, 7);
        assert_eq!(a, b);
        assert_eq!((a.pi.len(), a.l_w.shape(), a.mu_y.len()), (51, (51, 39), 39));
        assert_eq!(a.tau, 1.43);
        let r = a.confounder_size_ratio();
        assert!((0.5..=2.0).contains(&r));
    }

    #[test]
    fn ma_autocovariances() {
        let m = MaModel { coefs: vec![1.14, 0.52], innovation_var: 0.43 };
        assert!((m.autocov(0) - 0.43 * (1.0 + 1.14 * 1.14 + 0.52 * 0.52)).abs() < 1e-15);
        assert!((m.autocov(1) - 0.43 * (1.14 + 1.14 * 0.52)).abs() < 1e-15);
        assert!((m.autocov(2) - 0.43 * 0.52).abs() < 1e-15);
        assert_eq!(m.autocov(3), 0.0);
    }

    #[test]
    fn ma2_fit_inverts_autocovariances() {
        let m = MaModel { coefs: vec![0.6, 0.3], innovation_var: 0.8 };
        let fit = fit_ma2([m.autocov(0), m.autocov(1), m.autocov(2)]);
        for lag in 0..3 {
            assert!((fit.autocov(lag) - m.autocov(lag)).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_design_one_is_exact() {
        let spec = synthetic_spec(12, 15, 3).with_design(Design::One).with_noise_scale(0.0);
        let d = simulate_once(&spec, 5);
        let y = d.panel.y();
        let w = d.panel.w();
        for i in 0..12 {
            for s in 0..15 {
                let fe = spec.beta_y[i] + spec.mu_y[s];
                assert!((y[(i, s)] - spec.tau * w[(i, s)] - fe).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn designs_differ_only_by_switched_terms() {
        let spec = synthetic_spec(10, 12, 1);
        let one = simulate_once(&spec.clone().with_design(Design::One), 9);
        let three = simulate_once(&spec.clone().with_design(Design::Three), 9);
        assert_eq!(one.z, three.z);
        let dw = three.panel.w() - one.panel.w();
        for i in 0..10 {
            for s in 0..12 {
                assert!((dw[(i, s)] - spec.theta_w[i] * three.h[s]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn truncation_rank_zero_and_exact() {
        let a = DMatrix::from_fn(6, 3, |i, k| ((i + 1) * (k + 2)) as f64 % 5.0 - 2.0);
        let b = DMatrix::from_fn(8, 3, |s, k| ((s * 3 + k) as f64).sin());
        let e = &a * b.transpose();
        assert_eq!(truncate_rank(&e, 0), DMatrix::zeros(6, 8));
        assert!((truncate_rank(&e, 3) - &e).amax() < 1e-12);
    }

    #[test]
    fn design_parsing() {
        assert_eq!("3".parse::<Design>().unwrap(), Design::Three);
        assert!("5".parse::<Design>().is_err());
        assert!("0".parse::<Design>().is_err());
    }

    #[test]
    fn moments_decompose() {
        let m = Moments::from_errors(&[0.1, -0.3, 0.25, 0.05]);
        assert!((m.rmse.powi(2) - m.bias.powi(2) - m.variance).abs() < 1e-15);
    }
}
