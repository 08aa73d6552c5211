//! Two-way fixed-effects TSLS with the shift-share style instrument `D_i Z_t`.
//!
//! The same coefficients are available from two computations: OLS after
//! two-way demeaning, and a time-series regression of cross-sectionally
//! weighted aggregates on `(1, Z_t)`. Both are exposed so that the second
//! can serve as a cross-check of the first.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{demean_two_way, BalancedPanel, ExposureVector};

/// Threshold on `|pi_fe|` below which the first stage is treated as absent.
pub const WEAK_FIRST_STAGE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TslsResult {
    pub delta_fe: f64,
    pub pi_fe: f64,
    pub delta_ts: f64,
    pub pi_ts: f64,
    /// `delta_fe / pi_fe`, or NaN when the first stage is weak.
    pub tau: f64,
    pub weak_first_stage: bool,
}

impl TslsResult {
    /// Largest gap between the two representations, relative to coefficient size.
    pub fn discrepancy(&self) -> f64 {
        let scale = 1.0 + self.delta_fe.abs() + self.pi_fe.abs();
        (self.delta_fe - self.delta_ts).abs().max((self.pi_fe - self.pi_ts).abs()) / scale
    }
}

fn check_dims(panel: &BalancedPanel, d: &ExposureVector, z: &DVector<f64>) -> Result<()> {
    if d.len() != panel.n() || z.len() != panel.t() {
        return Err(Error::InvalidInput(format!(
            "panel is {}x{} but D has {} entries and Z has {}",
            panel.n(),
            panel.t(),
            d.len(),
            z.len()
        )));
    }
    Ok(())
}

/// Within-transformed OLS of `Y` and `W` on `D_i Z_t`.
pub fn tsls_fixed_effects(
    panel: &BalancedPanel,
    d: &ExposureVector,
    z: &DVector<f64>,
) -> Result<(f64, f64)> {
    check_dims(panel, d, z)?;
    let x = d.values() * z.transpose();
    let xt = demean_two_way(&x);
    let sxx = xt.norm_squared();
    if !(sxx > 1e-20 * x.norm_squared()) {
        return Err(Error::CollinearInstrument);
    }
    // Demeaning one side of the cross product suffices.
    let delta = xt.dot(panel.y()) / sxx;
    let pi = xt.dot(panel.w()) / sxx;
    Ok((delta, pi))
}

/// Aggregation weights `(D_i - D̄) / V̂[D]` with the 1/n variance.
pub fn tsls_weights(d: &ExposureVector) -> Result<DVector<f64>> {
    if d.is_degenerate() {
        return Err(Error::CollinearInstrument);
    }
    Ok(d.tsls_weights())
}

/// Slope of `series` on `(1, z)`.
fn simple_slope(series: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    let zbar = z.mean();
    let zc = z.add_scalar(-zbar);
    let szz = zc.norm_squared();
    if !(szz > 1e-20 * z.norm_squared().max(f64::MIN_POSITIVE)) {
        return Err(Error::CollinearInstrument);
    }
    Ok(zc.dot(series) / szz)
}

/// Time-series representation: weighted cross-sectional averages regressed on `(1, Z_t)`.
pub fn tsls_timeseries(
    panel: &BalancedPanel,
    d: &ExposureVector,
    z: &DVector<f64>,
) -> Result<(f64, f64)> {
    check_dims(panel, d, z)?;
    let a = tsls_weights(d)?;
    let n = panel.n() as f64;
    let y_agg: DVector<f64> = panel.y().tr_mul(&a) / n;
    let w_agg: DVector<f64> = panel.w().tr_mul(&a) / n;
    Ok((simple_slope(&y_agg, z)?, simple_slope(&w_agg, z)?))
}

pub fn tsls_estimate(
    panel: &BalancedPanel,
    d: &ExposureVector,
    z: &DVector<f64>,
) -> Result<TslsResult> {
    let (delta_fe, pi_fe) = tsls_fixed_effects(panel, d, z)?;
    let (delta_ts, pi_ts) = tsls_timeseries(panel, d, z)?;
    let weak = !(pi_fe.abs() >= WEAK_FIRST_STAGE);
    Ok(TslsResult {
        delta_fe,
        pi_fe,
        delta_ts,
        pi_ts,
        tau: if weak { f64::NAN } else { delta_fe / pi_fe },
        weak_first_stage: weak,
    })
}
