//! Exposure measures built from pre-period data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hstack, OlsDesign};
use crate::panel::{AggregateData, BalancedPanel, ExposureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureFit {
    /// Per-unit slopes on `Z`.
    pub d: ExposureVector,
    pub per_unit_se: DVector<f64>,
    pub r2: DVector<f64>,
}

/// Regress each unit's treatment on `(Ψ, Z)` over the first `t0` periods.
pub fn construct_exposures(panel: &BalancedPanel, agg: &AggregateData, t0: usize) -> Result<ExposureFit> {
    if agg.t() != panel.t() {
        return Err(Error::InvalidInput("aggregates and panel disagree on T".into()));
    }
    if t0 > panel.t() || t0 <= agg.p() + 1 {
        return Err(Error::CollinearDesign(format!(
            "T0 = {t0} periods cannot support {} regressors with residual degrees of freedom",
            agg.p() + 1
        )));
    }
    let psi = agg.psi().rows(0, t0).into_owned();
    let z = DMatrix::from_column_slice(t0, 1, &agg.z().as_slice()[..t0]);
    let design = OlsDesign::new(hstack(&[&psi, &z]))
        .map_err(|e| Error::CollinearDesign(format!("pre-period design: {e:?}")))?;
    let k = design.ncols();
    let v_zz = design.xtx_inv()[(k - 1, k - 1)];
    let dof = (t0 - k) as f64;

    let n = panel.n();
    let mut d = DVector::zeros(n);
    let mut se = DVector::zeros(n);
    let mut r2 = DVector::zeros(n);
    for i in 0..n {
        let wi = panel.w().row(i).columns(0, t0).transpose();
        let fit = design.fit(&wi);
        let rss = fit.resid.norm_squared();
        let mean = wi.mean();
        let tss: f64 = wi.iter().map(|v| (v - mean).powi(2)).sum();
        d[i] = fit.coef[k - 1];
        se[i] = (rss / dof * v_zz).sqrt();
        r2[i] = if tss > 0.0 { 1.0 - rss / tss } else { 0.0 };
    }
    Ok(ExposureFit { d: ExposureVector::new(d)?, per_unit_se: se, r2 })
}

/// Average treatment over the first `t0` periods.
pub fn mean_exposures(panel: &BalancedPanel, t0: usize) -> Result<ExposureVector> {
    if t0 == 0 || t0 > panel.t() {
        return Err(Error::InvalidInput(format!("T0 = {t0} is outside 1..={}", panel.t())));
    }
    let pre = panel.w().columns(0, t0);
    ExposureVector::new(DVector::from_fn(panel.n(), |i, _| pre.row(i).mean()))
}
