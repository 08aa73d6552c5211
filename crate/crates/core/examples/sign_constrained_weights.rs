//! Weights restricted to share the sign of `D_i - D̄`, optionally also
//! orthogonal to a unit covariate.

use aggshock::panel::{default_t0, AggregateData, ExposureVector};
use aggshock::sim::{simulate_once, synthetic_spec};
use aggshock::weights::{default_zeta, solve_weights, solve_weights_constrained, WeightConfig};
use nalgebra::DMatrix;

fn main() -> aggshock::Result<()> {
    let spec = synthetic_spec(30, 24, 9);
    let draw = simulate_once(&spec, 4);
    let agg = AggregateData::constant_mean(draw.z.clone())?;
    let d = ExposureVector::new(spec.pi.clone())?;
    let t0 = default_t0(spec.t);
    let base = WeightConfig::new(default_zeta(&draw.panel)?, t0);

    let free = solve_weights(&draw.panel, &agg, &d, &base)?;
    let signed = solve_weights_constrained(&draw.panel, &agg, &d, &base.clone().with_sign_constraint())?;
    let dbar = d.mean();
    let wrong = |w: &nalgebra::DVector<f64>| (0..w.len()).filter(|&i| w[i] * (d.values()[i] - dbar) < -1e-12).count();
    println!("unconstrained: objective {:.5}, {} wrong-signed weights", free.objective, wrong(&free.omega));
    println!(
        "sign constrained: objective {:.5}, {} wrong-signed, {} binding, kkt residual {:.1e}",
        signed.objective,
        wrong(&signed.omega),
        signed.active_set.len(),
        signed.kkt_residual
    );

    // Orthogonality to the unit's average pre-period outcome.
    let x = DMatrix::from_fn(spec.n, 1, |i, _| draw.panel.y().row(i).columns(0, t0).mean());
    let both = solve_weights_constrained(&draw.panel, &agg, &d, &base.with_sign_constraint().with_covariates(x.clone()))?;
    println!("with covariate: objective {:.5}, X'w = {:.1e}", both.objective, (x.transpose() * &both.omega)[0]);
    Ok(())
}
