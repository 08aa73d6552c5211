//! The shift-share two-way fixed effects regression and the aggregated
//! time-series regression give the same coefficients.

use aggshock::panel::ExposureVector;
use aggshock::sim::{simulate_once, synthetic_spec};
use aggshock::tsls::{tsls_estimate, tsls_weights};

fn main() -> aggshock::Result<()> {
    let spec = synthetic_spec(40, 30, 3);
    let draw = simulate_once(&spec, 1);
    // Exposures only need to vary across units; the structural loadings will do.
    let d = ExposureVector::new(spec.pi.clone())?;

    let fit = tsls_estimate(&draw.panel, &d, &draw.z)?;
    println!("fixed effects: delta = {:+.6}, pi = {:+.6}", fit.delta_fe, fit.pi_fe);
    println!("time series:   delta = {:+.6}, pi = {:+.6}", fit.delta_ts, fit.pi_ts);
    println!("tau = {:.4}, relative gap = {:.2e}", fit.tau, fit.discrepancy());

    let a = tsls_weights(&d)?;
    println!("weights: sum = {:.2e}, mean(a * D) = {:.6}", a.sum(), a.dot(d.values()) / d.len() as f64);
    Ok(())
}
