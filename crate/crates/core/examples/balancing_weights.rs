//! Solve for balancing weights at a few penalty levels and compare their
//! pre-period fit with the two-stage least squares weights.

use aggshock::panel::{default_t0, AggregateData};
use aggshock::exposures::construct_exposures;
use aggshock::sim::{simulate_once, synthetic_spec, Design};
use aggshock::weights::{balance_diagnostics, default_zeta, solve_weights, WeightConfig};

fn main() -> aggshock::Result<()> {
    let spec = synthetic_spec(51, 39, 5).with_design(Design::Three);
    let draw = simulate_once(&spec, 2);
    let agg = AggregateData::constant_mean(draw.z.clone())?;
    let t0 = default_t0(spec.t);
    let d = construct_exposures(&draw.panel, &agg, t0)?.d;

    let zeta0 = default_zeta(&draw.panel)?;
    println!("automatic zeta = {zeta0:.4}, T0 = {t0}");
    println!("{:>10}  {:>10}  {:>10}  {:>10}  {:>9}", "zeta", "rms_y", "rms_w", "ratio_y", "max|w|");
    for factor in [0.1, 1.0, 10.0, 100.0] {
        let sol = solve_weights(&draw.panel, &agg, &d, &WeightConfig::new(zeta0 * factor, t0))?;
        let b = balance_diagnostics(&sol);
        println!(
            "{:>10.4}  {:>10.4}  {:>10.4}  {:>10.4}  {:>9.3}",
            sol.zeta,
            b.rms_y,
            b.rms_w,
            b.ratio_y,
            sol.omega.amax()
        );
    }
    Ok(())
}
