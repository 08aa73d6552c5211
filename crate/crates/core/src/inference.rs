//! Variance of the aggregated coefficients, the ratio test for `τ = τ0`, and
//! confidence sets obtained by inverting it over a grid.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::aggregate::{aggregate_panel, stage_design};
use crate::error::{Error, Result};
use crate::panel::{AggregateData, BalancedPanel, SampleSplit};
use crate::tsmodel::{z_residuals, LambdaModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub sigma: Matrix2<f64>,
    pub rho_hat: f64,
    pub lambda: LambdaModel,
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Σ̂ from post-period residual vectors and the moving-average rows.
pub fn sigma_from_residuals(ey: &DVector<f64>, ew: &DVector<f64>, ez: &DVector<f64>, lambda: &DMatrix<f64>) -> Result<Matrix2<f64>> {
    let ez2 = ez.norm_squared();
    if !(ez2 > 0.0) {
        return Err(Error::DegenerateInstrument);
    }
    let denom = ez2 * ez2;
    let ly = lambda.tr_mul(ey);
    let lw = lambda.tr_mul(ew);
    let s11 = ly.norm_squared() / denom;
    let s12 = ly.dot(&lw) / denom;
    let s22 = lw.norm_squared() / denom;
    Ok(Matrix2::new(s11, s12, s12, s22))
}

/// Residuals of both stage regressions and of `Z` on `Ψ` over the
/// post-period, combined with the scaled moving-average rows of `lambda`.
pub fn estimate_variance(
    panel: &BalancedPanel,
    omega: &DVector<f64>,
    agg: &AggregateData,
    lambda: &LambdaModel,
    split: &SampleSplit,
) -> Result<VarianceEstimate> {
    if lambda.t != split.t() || lambda.t0 != split.t0() {
        return Err(Error::InvalidInput("Λ dimensions do not match the sample split".into()));
    }
    let ez = z_residuals(agg.z(), agg.psi(), split.post())?;
    let scale = agg.z().rows(split.t0(), split.t1()).amax();
    if !(ez.amax() > 1e-12 * scale) {
        return Err(Error::DegenerateInstrument);
    }
    let (ya, wa) = aggregate_panel(panel, omega, split.post());
    let design = stage_design(agg, split.post())?;
    let ey = design.fit(&ya).resid;
    let ew = design.fit(&wa).resid;
    let sigma = sigma_from_residuals(&ey, &ew, &ez, &lambda.effective())?;
    Ok(VarianceEstimate { sigma, rho_hat: lambda.rho_hat, lambda: lambda.clone() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub tau0: f64,
    pub statistic: f64,
    pub critical: f64,
    pub reject: bool,
    pub alpha: f64,
    /// Statistic and critical value both vanish; reported as non-rejection.
    pub zero_variance: bool,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `(1, -τ0) Σ (1, -τ0)ᵀ`, floored at zero.
fn combo_variance(sigma: &Matrix2<f64>, tau0: f64) -> f64 {
    (sigma[(0, 0)] - 2.0 * tau0 * sigma[(0, 1)] + tau0 * tau0 * sigma[(1, 1)]).max(0.0)
}

fn decide(delta: f64, pi: f64, sigma: &Matrix2<f64>, tau0: f64, z: f64) -> (f64, f64, bool, bool) {
    let statistic = (delta - tau0 * pi).abs();
    let critical = combo_variance(sigma, tau0).sqrt() * z;
    let zero = statistic == 0.0 && critical == 0.0;
    (statistic, critical, !zero && statistic >= critical, zero)
}

/// Reject `τ = τ0` when `|δ − τ0 π| ≥ sqrt((1, −τ0) Σ (1, −τ0)ᵀ) z_{1−α/2}`.
pub fn ar_test(delta: f64, pi: f64, sigma: &Matrix2<f64>, tau0: f64, alpha: f64) -> Result<TestResult> {
    check_alpha(alpha)?;
    let z = normal_quantile(1.0 - alpha / 2.0);
    let (statistic, critical, reject, zero_variance) = decide(delta, pi, sigma, tau0, z);
    Ok(TestResult { tau0, statistic, critical, reject, alpha, zero_variance })
}

/// Evenly spaced grid of `points` values on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridSpec {
    pub const DEFAULT_POINTS: usize = 2001;
    pub const DEFAULT_HALF_WIDTH_SE: f64 = 20.0;

    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() || points < 2 {
            return Err(Error::InvalidInput(format!("bad grid {lo}:{hi}:{points}")));
        }
        Ok(Self { lo, hi, points })
    }

    /// `τ̂ ± 20 se(τ̂)` with the delta-method standard error; falls back to
    /// a window proportional to `max(1, |τ̂|)` when that scale is unusable.
    pub fn around_estimate(delta: f64, pi: f64, sigma: &Matrix2<f64>) -> Self {
        let tau = delta / pi;
        let se = (combo_variance(sigma, tau) / (pi * pi)).sqrt();
        let (center, half) = if tau.is_finite() && se.is_finite() && se > 0.0 {
            (tau, Self::DEFAULT_HALF_WIDTH_SE * se)
        } else {
            let c = if tau.is_finite() { tau } else { 0.0 };
            (c, Self::DEFAULT_HALF_WIDTH_SE * c.abs().max(1.0))
        };
        Self { lo: center - half, hi: center + half, points: Self::DEFAULT_POINTS }
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.points - 1) as f64
    }

    pub fn value(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.hi
        } else {
            self.lo + self.step() * k as f64
        }
    }
}

impl std::str::FromStr for GridSpec {
    type Err = String;

    /// `lo:hi:n`.
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("expected lo:hi:n, got `{s}`"));
        }
        let lo = parts[0].trim().parse::<f64>().map_err(|e| e.to_string())?;
        let hi = parts[1].trim().parse::<f64>().map_err(|e| e.to_string())?;
        let n = parts[2].trim().parse::<usize>().map_err(|e| e.to_string())?;
        GridSpec::new(lo, hi, n).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSet {
    pub alpha: f64,
    /// Disjoint, sorted `[lo, hi]` runs of non-rejected grid points.
    pub intervals: Vec<[f64; 2]>,
    pub grid: GridSpec,
    /// The set reaches the lowest / highest grid point (possibly a ray).
    pub unbounded_below: bool,
    pub unbounded_above: bool,
    /// At least one grid point hit the zero-variance convention.
    pub zero_variance: bool,
}

impl ConfidenceSet {
    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, tau: f64) -> bool {
        self.intervals.iter().any(|&[lo, hi]| lo <= tau && tau <= hi)
    }
}

/// Non-rejected grid points merged into maximal runs.
pub fn confidence_set(
    delta: f64,
    pi: f64,
    sigma: &Matrix2<f64>,
    alpha: f64,
    grid: Option<GridSpec>,
) -> Result<ConfidenceSet> {
    check_alpha(alpha)?;
    let grid = grid.unwrap_or_else(|| GridSpec::around_estimate(delta, pi, sigma));
    let z = normal_quantile(1.0 - alpha / 2.0);
    let mut intervals = Vec::new();
    let mut run: Option<(f64, f64)> = None;
    let mut zero_variance = false;
    let mut first_in = false;
    let mut last_in = false;
    for k in 0..grid.points {
        let tau0 = grid.value(k);
        let (_, _, reject, zero) = decide(delta, pi, sigma, tau0, z);
        zero_variance |= zero;
        if k == 0 {
            first_in = !reject;
        }
        if k + 1 == grid.points {
            last_in = !reject;
        }
        run = match (run, reject) {
            (None, false) => Some((tau0, tau0)),
            (Some((lo, _)), false) => Some((lo, tau0)),
            (Some((lo, hi)), true) => {
                intervals.push([lo, hi]);
                None
            }
            (None, true) => None,
        };
    }
    if let Some((lo, hi)) = run {
        intervals.push([lo, hi]);
    }
    Ok(ConfidenceSet {
        alpha,
        intervals,
        grid,
        unbounded_below: first_in,
        unbounded_above: last_in,
        zero_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tsmodel::build_lambda_post;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn quantiles_are_accurate() {
        let cases = [
            (0.975, 1.959963984540054),
            (0.95, 1.6448536269514722),
            (0.995, 2.5758293035489004),
            (1e-10, -6.361340902404056),
            (0.999999, 4.753424308817087),
            (0.3, -0.5244005127080409),
        ];
        for (p, q) in cases {
            assert!((normal_quantile(p) - q).abs() < 1e-10, "p = {p}");
        }
        assert_eq!(normal_quantile(0.5), 0.0);
    }

    #[test]
    fn identity_sigma_example() {
        let r = ar_test(3.0, 0.0, &Matrix2::identity(), 0.0, 0.05).unwrap();
        assert!((r.critical - 1.959964).abs() < 1e-6);
        assert!(r.reject);
        let r = ar_test(3.0, 1.0, &Matrix2::identity(), 2.0, 0.05).unwrap();
        assert!((r.critical - 1.959963984540054 * 5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn exact_null_is_never_rejected() {
        let r = ar_test(2.86, 2.0, &Matrix2::new(1.0, 0.2, 0.2, 0.5), 1.43, 0.2).unwrap();
        assert!(!r.reject && r.statistic < 1e-15);
        let r = ar_test(0.0, 0.0, &Matrix2::zeros(), 1.0, 0.05).unwrap();
        assert!(!r.reject && r.zero_variance);
    }

    #[test]
    fn zero_residuals_give_zero_sigma() {
        let lambda = build_lambda_post(0.4, 10, 4);
        let ez = DVector::from_fn(6, |t, _| t as f64 - 2.5);
        let s = sigma_from_residuals(&DVector::zeros(6), &DVector::zeros(6), &ez, &lambda.lambda_post).unwrap();
        assert_eq!(s, Matrix2::zeros());
    }

    #[test]
    fn selector_lambda_reduces_to_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lambda = build_lambda_post(0.0, 9, 3);
        let mut g = || rng.sample::<f64, _>(StandardNormal);
        let ey = DVector::from_fn(6, |_, _| g());
        let ew = DVector::from_fn(6, |_, _| g());
        let ez = DVector::from_fn(6, |_, _| g());
        let s = sigma_from_residuals(&ey, &ew, &ez, &lambda.lambda_post).unwrap();
        let d = ez.norm_squared().powi(2);
        assert!((s[(0, 0)] - ey.norm_squared() / d).abs() < 1e-12 * s[(0, 0)]);
        assert!((s[(0, 1)] - ey.dot(&ew) / d).abs() < 1e-12);
        assert!(matches!(
            sigma_from_residuals(&ey, &ew, &DVector::zeros(6), &lambda.lambda_post),
            Err(Error::DegenerateInstrument)
        ));
    }

    #[test]
    fn strong_instrument_gives_one_interval_around_estimate() {
        let sigma = Matrix2::identity() * 0.01;
        let cs = confidence_set(2.0, 1.5, &sigma, 0.05, None).unwrap();
        assert_eq!(cs.intervals.len(), 1);
        assert!(cs.contains(2.0 / 1.5));
        assert!(!cs.unbounded_below && !cs.unbounded_above);
    }

    #[test]
    fn null_first_stage_gives_whole_line() {
        let cs = confidence_set(0.0, 0.0, &Matrix2::identity(), 0.05, None).unwrap();
        assert_eq!(cs.intervals.len(), 1);
        assert!(cs.unbounded_below && cs.unbounded_above);
        assert_eq!(cs.intervals[0], [cs.grid.lo, cs.grid.hi]);
    }

    #[test]
    fn grid_parses() {
        let g: GridSpec = "-1:3:5".parse().unwrap();
        assert_eq!((g.lo, g.hi, g.points), (-1.0, 3.0, 5));
        assert_eq!(g.value(2), 1.0);
        assert!("1:0:5".parse::<GridSpec>().is_err());
    }
}
