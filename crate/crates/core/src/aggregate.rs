//! Post-period aggregation and the reduced-form / first-stage regressions.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::estimate_variance;
use crate::linalg::OlsDesign;
use crate::panel::{default_t0, AggregateData, BalancedPanel, ExposureVector, SampleSplit};
use crate::tsmodel::{fit_lambda, LambdaScale};
use crate::weights::{default_zeta, solve_weights_auto, WeightConfig, WeightSolution};

/// Threshold on `|π̂|` below which the first stage is flagged as weak.
pub const WEAK_FIRST_STAGE: f64 = 1e-10;

/// `(1/n) Σ_i ω_i M_it` for every column of `m`.
pub fn aggregate_series(m: &DMatrix<f64>, omega: &DVector<f64>) -> DVector<f64> {
    m.tr_mul(omega) / m.nrows() as f64
}

/// Both aggregated series over the periods in `range`.
pub fn aggregate_panel(panel: &BalancedPanel, omega: &DVector<f64>, range: Range<usize>) -> (DVector<f64>, DVector<f64>) {
    let len = range.len();
    let y = panel.y().columns(range.start, len).into_owned();
    let w = panel.w().columns(range.start, len).into_owned();
    (aggregate_series(&y, omega), aggregate_series(&w, omega))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFit {
    pub beta: f64,
    /// Coefficients on the non-constant columns of `Ψ`.
    pub eta_psi: DVector<f64>,
    pub coef_z: f64,
    pub residuals: DVector<f64>,
}

/// Design `(1, ψ_2..ψ_p, Z)` over `range`.
pub fn stage_design(agg: &AggregateData, range: Range<usize>) -> Result<OlsDesign> {
    let len = range.len();
    let p = agg.p();
    let psi = agg.psi();
    let z = agg.z();
    let x = DMatrix::from_fn(len, p + 1, |r, c| {
        let s = range.start + r;
        if c < p {
            psi[(s, c)]
        } else {
            z[s]
        }
    });
    OlsDesign::new(x).map_err(|e| Error::CollinearDesign(format!("post-period design: {e:?}")))
}

fn stage_from_design(design: &OlsDesign, series: &DVector<f64>) -> StageFit {
    let fit = design.fit(series);
    let k = fit.coef.len();
    StageFit {
        beta: fit.coef[0],
        eta_psi: fit.coef.rows(1, k - 2).into_owned(),
        coef_z: fit.coef[k - 1],
        residuals: fit.resid,
    }
}

/// OLS of `series` on `(1, ψ, Z)` over `range`.
pub fn estimate_stage(series: &DVector<f64>, agg: &AggregateData, range: Range<usize>) -> Result<StageFit> {
    if series.len() != range.len() {
        return Err(Error::InvalidInput(format!(
            "series has {} periods, range has {}",
            series.len(),
            range.len()
        )));
    }
    let design = stage_design(agg, range)?;
    if design.nobs() <= design.ncols() {
        return Err(Error::CollinearDesign(format!(
            "{} periods for {} regressors",
            design.nobs(),
            design.ncols()
        )));
    }
    Ok(stage_from_design(&design, series))
}

/// Automatic or user-fixed tuning value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tuning<T> {
    Auto,
    Fixed(T),
}

impl<T> Default for Tuning<T> {
    fn default() -> Self {
        Tuning::Auto
    }
}

impl<T: fmt::Display> fmt::Display for Tuning<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tuning::Auto => f.write_str("auto"),
            Tuning::Fixed(v) => write!(f, "{v}"),
        }
    }
}

impl<T: FromStr> FromStr for Tuning<T> {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            Ok(Tuning::Auto)
        } else {
            s.parse().map(Tuning::Fixed).map_err(|_| format!("expected `auto` or a number, got `{s}`"))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateConfig {
    pub t0: Tuning<usize>,
    pub zeta: Tuning<f64>,
    pub sign_constraint: bool,
    pub covariate_constraints: Option<DMatrix<f64>>,
    pub lambda_scale: LambdaScale,
    /// Skip the variance estimate (useful inside simulations that only need point estimates).
    pub skip_variance: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimateFlags {
    pub weak_first_stage: bool,
    pub zeta_inflated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFits {
    pub outcome: StageFit,
    pub treatment: StageFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub delta: f64,
    pub pi: f64,
    /// `delta / pi`; not finite when `pi` is zero.
    pub tau: f64,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub zeta: f64,
    pub weight_solution: WeightSolution,
    pub fits: StageFits,
    /// Post-period aggregates `(Y_t, W_t)`.
    pub aggregates_y: DVector<f64>,
    pub aggregates_w: DVector<f64>,
    pub sigma_hat: Option<Matrix2<f64>>,
    pub rho_hat: Option<f64>,
    pub flags: EstimateFlags,
    /// Reasons a diagnostic could not be produced.
    pub warnings: Vec<String>,
}

/// Resolve `T0` and check both halves are long enough.
pub fn resolve_split(t: usize, p: usize, choice: Tuning<usize>) -> Result<SampleSplit> {
    let t0 = match choice {
        Tuning::Auto => default_t0(t),
        Tuning::Fixed(v) => v,
    };
    SampleSplit::new(t0, t, p)
}

pub fn resolve_zeta(panel: &BalancedPanel, choice: Tuning<f64>) -> Result<f64> {
    match choice {
        Tuning::Auto => default_zeta(panel),
        Tuning::Fixed(v) if v > 0.0 && v.is_finite() => Ok(v),
        Tuning::Fixed(v) => Err(Error::InvalidInput(format!("zeta must be positive, got {v}"))),
    }
}

/// Weights on the pre-period, aggregation and the two stage regressions on
/// the post-period, and (unless skipped) the variance matrix.
pub fn estimate(
    panel: &BalancedPanel,
    agg: &AggregateData,
    d: &ExposureVector,
    config: &EstimateConfig,
) -> Result<EstimateResult> {
    if agg.t() != panel.t() || d.len() != panel.n() {
        return Err(Error::InvalidInput("panel, aggregates and exposures disagree in size".into()));
    }
    let split = resolve_split(panel.t(), agg.p(), config.t0)?;
    let zeta = resolve_zeta(panel, config.zeta)?;
    let wcfg = WeightConfig {
        zeta,
        t0: split.t0(),
        sign_constraint: config.sign_constraint,
        covariate_constraints: config.covariate_constraints.clone(),
    };
    let sol = solve_weights_auto(panel, agg, d, &wcfg)?;

    let (ya, wa) = aggregate_panel(panel, &sol.omega, split.post());
    let design = stage_design(agg, split.post())?;
    let outcome = stage_from_design(&design, &ya);
    let treatment = stage_from_design(&design, &wa);
    let delta = outcome.coef_z;
    let pi = treatment.coef_z;
    let weak = !(pi.abs() >= WEAK_FIRST_STAGE);

    let mut warnings = Vec::new();
    let (sigma_hat, rho_hat) = if config.skip_variance {
        (None, None)
    } else {
        match fit_lambda(agg.z(), agg.psi(), &split, config.lambda_scale)
            .and_then(|lambda| estimate_variance(panel, &sol.omega, agg, &lambda, &split))
        {
            Ok(v) => (Some(v.sigma), Some(v.rho_hat)),
            Err(e) => {
                warnings.push(format!("variance not available: {e}"));
                (None, None)
            }
        }
    };
    if weak {
        warnings.push(format!("weak first stage: |pi| = {:e}", pi.abs()));
    }

    Ok(EstimateResult {
        delta,
        pi,
        tau: delta / pi,
        t0: split.t0(),
        zeta: sol.zeta,
        flags: EstimateFlags { weak_first_stage: weak, zeta_inflated: sol.zeta_inflated },
        weight_solution: sol,
        fits: StageFits { outcome, treatment },
        aggregates_y: ya,
        aggregates_w: wa,
        sigma_hat,
        rho_hat,
        warnings,
    })
}
