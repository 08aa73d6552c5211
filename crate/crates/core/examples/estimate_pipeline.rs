//! Full estimate: weights, aggregate regressions, variance, a test of the
//! true effect and a grid confidence set. Compares against two-stage least
//! squares on the same panel.

use aggshock::aggregate::{estimate, EstimateConfig, Tuning};
use aggshock::exposures::construct_exposures;
use aggshock::inference::{ar_test, confidence_set};
use aggshock::panel::{default_t0, AggregateData};
use aggshock::sim::{simulate_once, synthetic_spec, Design, TAU};
use aggshock::tsls::tsls_estimate;
use aggshock::tsmodel::LambdaScale;

fn main() -> aggshock::Result<()> {
    let spec = synthetic_spec(51, 39, 1).with_design(Design::Four);
    let draw = simulate_once(&spec, 17);
    let agg = AggregateData::constant_mean(draw.z.clone())?;
    let d = construct_exposures(&draw.panel, &agg, default_t0(spec.t))?.d;

    for scale in [LambdaScale::Unit, LambdaScale::Innovation] {
        let cfg = EstimateConfig { t0: Tuning::Auto, lambda_scale: scale, ..Default::default() };
        let fit = estimate(&draw.panel, &agg, &d, &cfg)?;
        let sigma = fit.sigma_hat.expect("variance requested");
        let test = ar_test(fit.delta, fit.pi, &sigma, TAU, 0.05)?;
        let set = confidence_set(fit.delta, fit.pi, &sigma, 0.05, None)?;
        println!("lambda scale {scale:?}: rho = {:.3}", fit.rho_hat.unwrap_or(f64::NAN));
        println!("  delta = {:.4}, pi = {:.4}, tau = {:.4}, zeta = {:.4}", fit.delta, fit.pi, fit.tau, fit.zeta);
        println!("  test tau = {TAU}: stat {:.4} vs critical {:.4}, reject {}", test.statistic, test.critical, test.reject);
        println!("  95% set: {:?} (unbounded below {}, above {})", set.intervals, set.unbounded_below, set.unbounded_above);
        for w in &fit.warnings {
            println!("  warning: {w}");
        }
    }

    let tsls = tsls_estimate(&draw.panel, &d, &draw.z)?;
    println!("tsls: delta = {:.4}, pi = {:.4}, tau = {:.4}", tsls.delta_fe, tsls.pi_fe, tsls.tau);
    Ok(())
}
