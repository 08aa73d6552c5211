//! Calibrate a data generating process to an observed panel, then compare
//! the estimators on draws from it.

use aggshock::sim::{calibrate_from_panel, run_monte_carlo, simulate_once, synthetic_spec, Design, McConfig};

fn main() -> aggshock::Result<()> {
    let reps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    // Stand-in for real data: one draw from the synthetic process.
    let observed = simulate_once(&synthetic_spec(40, 30, 12), 0);
    let rank = 6;
    let spec = calibrate_from_panel(&observed.panel, &observed.z, rank, 12)?;
    println!(
        "calibrated: n = {}, T = {}, rank = {}, noise sd = ({:.3}, {:.3}), confounder ratio = {:.3}",
        spec.n,
        spec.t,
        rank,
        spec.noise_cov[(0, 0)].sqrt(),
        spec.noise_cov[(1, 1)].sqrt(),
        spec.confounder_size_ratio()
    );

    let cfg = McConfig::new(reps, 12).with_test(spec.tau, 0.05);
    for design in [Design::One, Design::Four] {
        let r = run_monte_carlo(&spec.clone().with_design(design), design, &cfg)?;
        println!(
            "design {design}: rmse(tau) ours {:.4} tsls {:.4}, rejection {:.3}",
            r.ours.tau.rmse,
            r.tsls.tau.rmse,
            r.rejection_rate.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
