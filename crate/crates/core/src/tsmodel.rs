use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{DesignError, OlsDesign};
use crate::panel::SampleSplit;

/// Largest AR(1) coefficient magnitude the fit will report.
pub const RHO_CLAMP: f64 = 0.99;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PsiSpec {
    /// Degree of the polynomial trend in `t / T`.
    pub trend_degree: usize,
    /// User supplied aggregate series, one column each.
    pub extra: Option<DMatrix<f64>>,
}

impl PsiSpec {
    pub fn constant() -> Self {
        Self::default()
    }

    pub fn trend(degree: usize) -> Self {
        Self { trend_degree: degree, extra: None }
    }
}

/// Columns `1, t/T, (t/T)^2, ..., extras` for `t = 1..=T`.
pub fn build_psi(t: usize, spec: &PsiSpec) -> Result<DMatrix<f64>> {
    let k = spec.extra.as_ref().map_or(0, |m| m.ncols());
    if let Some(extra) = &spec.extra {
        if extra.nrows() != t {
            return Err(Error::InvalidInput(format!(
                "extra regressors have {} rows, expected {t}",
                extra.nrows()
            )));
        }
    }
    let p = spec.trend_degree + 1 + k;
    if p + 2 >= t {
        return Err(Error::RankDeficientPsi(format!("{p} regressors leave too few of {t} periods")));
    }
    let tf = t as f64;
    let psi = DMatrix::from_fn(t, p, |s, c| {
        if c <= spec.trend_degree {
            ((s + 1) as f64 / tf).powi(c as i32)
        } else {
            spec.extra.as_ref().expect("k > 0")[(s, c - spec.trend_degree - 1)]
        }
    });
    if psi.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue { context: "psi".into() });
    }
    OlsDesign::new(psi.clone()).map_err(|e| Error::RankDeficientPsi(format!("{e:?}")))?;
    Ok(psi)
}

/// OLS residuals of `Z` on `Psi` over the periods in `range`.
pub fn z_residuals(z: &DVector<f64>, psi: &DMatrix<f64>, range: Range<usize>) -> Result<DVector<f64>> {
    let len = range.len();
    let design = OlsDesign::new(psi.rows(range.start, len).into_owned()).map_err(|e| match e {
        DesignError::Underdetermined { rows, cols } => {
            Error::RankDeficientPsi(format!("{cols} regressors over {rows} periods"))
        }
        DesignError::RankDeficient { condition } => {
            Error::RankDeficientPsi(format!("condition number {condition:e} over the selected periods"))
        }
    })?;
    if len <= psi.ncols() {
        return Err(Error::RankDeficientPsi(format!("{len} periods for {} regressors", psi.ncols())));
    }
    Ok(design.fit(&z.rows(range.start, len).into_owned()).resid)
}

/// No-intercept lag regression `e_t = rho e_{t-1} + u_t`, clamped to `±0.99`.
pub fn fit_ar1(resid: &DVector<f64>) -> Result<f64> {
    let len = resid.len();
    if len < 3 {
        return Err(Error::DegenerateSeries(format!("{len} observations, need at least 3")));
    }
    let lagged = resid.rows(0, len - 1);
    let lead = resid.rows(1, len - 1);
    let sxx = lagged.norm_squared();
    let scale = resid.amax();
    if !(scale > 0.0) || !(sxx > (len as f64) * (1e-12 * scale).powi(2)) {
        return Err(Error::DegenerateSeries("residual series has no variation".into()));
    }
    let rho = lagged.dot(&lead) / sxx;
    Ok(rho.clamp(-RHO_CLAMP, RHO_CLAMP))
}

/// Root mean square of the one-step innovations `e_t - rho e_{t-1}`, `t >= 2`.
pub fn innovation_sd(resid: &DVector<f64>, rho: f64) -> f64 {
    let len = resid.len();
    if len < 2 {
        return 0.0;
    }
    let ss: f64 = (1..len).map(|t| (resid[t] - rho * resid[t - 1]).powi(2)).sum();
    (ss / (len - 1) as f64).sqrt()
}

/// How `Λ̂` is scaled before entering the variance formula.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaScale {
    /// Pure `ρ̂` powers, i.e. unit-variance innovations.
    #[default]
    Unit,
    /// Powers times the estimated innovation standard deviation. The test
    /// is then invariant to the units of `Z`.
    Innovation,
}

impl fmt::Display for LambdaScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LambdaScale::Unit => "unit",
            LambdaScale::Innovation => "innovation",
        })
    }
}

impl FromStr for LambdaScale {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "unit" => Ok(LambdaScale::Unit),
            "innovation" => Ok(LambdaScale::Innovation),
            _ => Err(format!("lambda scale must be `unit` or `innovation`, got `{s}`")),
        }
    }
}

/// Post-period rows of the lower-triangular AR(1) moving-average matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaModel {
    pub rho_hat: f64,
    #[serde(rename = "T")]
    pub t: usize,
    #[serde(rename = "T0")]
    pub t0: usize,
    pub scale: LambdaScale,
    /// Estimated innovation standard deviation (1 when not estimated).
    pub innovation_sd: f64,
    /// Unit-innovation rows, `T1 x T`.
    pub lambda_post: DMatrix<f64>,
}

impl LambdaModel {
    /// The matrix used by the variance formula.
    pub fn effective(&self) -> DMatrix<f64> {
        match self.scale {
            LambdaScale::Unit => self.lambda_post.clone(),
            LambdaScale::Innovation => &self.lambda_post * self.innovation_sd,
        }
    }

    pub fn with_innovation_sd(mut self, sd: f64) -> Self {
        self.innovation_sd = sd;
        self
    }

    pub fn with_scale(mut self, scale: LambdaScale) -> Self {
        self.scale = scale;
        self
    }

    pub fn t1(&self) -> usize {
        self.t - self.t0
    }
}

/// Row for post period `t` holds `rho^(t-s)` at column `s <= t`.
pub fn build_lambda_post(rho_hat: f64, t: usize, t0: usize) -> LambdaModel {
    assert!(t0 < t, "T0 must be below T");
    assert!(rho_hat.abs() < 1.0, "AR(1) coefficient must lie in (-1, 1)");
    let t1 = t - t0;
    let mut lambda = DMatrix::zeros(t1, t);
    for r in 0..t1 {
        let row_t = t0 + r;
        let mut power = 1.0;
        for s in (0..=row_t).rev() {
            lambda[(r, s)] = power;
            power *= rho_hat;
        }
    }
    LambdaModel { rho_hat, t, t0, scale: LambdaScale::Unit, innovation_sd: 1.0, lambda_post: lambda }
}

/// Fit the AR(1) on post-period instrument residuals.
pub fn fit_lambda(z: &DVector<f64>, psi: &DMatrix<f64>, split: &SampleSplit, scale: LambdaScale) -> Result<LambdaModel> {
    let resid = z_residuals(z, psi, split.post())?;
    let rho = fit_ar1(&resid)?;
    let sd = innovation_sd(&resid, rho);
    Ok(build_lambda_post(rho, split.t(), split.t0()).with_innovation_sd(sd).with_scale(scale))
}
