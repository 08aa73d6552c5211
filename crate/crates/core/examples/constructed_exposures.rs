//! Exposures estimated as unit-level slopes of the treatment on the
//! aggregate instrument, with a linear trend among the controls.

use aggshock::exposures::construct_exposures;
use aggshock::panel::AggregateData;
use aggshock::sim::{simulate_once, synthetic_spec};
use aggshock::tsmodel::{build_psi, PsiSpec};

fn main() -> aggshock::Result<()> {
    let spec = synthetic_spec(20, 36, 6);
    let draw = simulate_once(&spec, 0);
    let psi = build_psi(spec.t, &PsiSpec::trend(1))?;
    let agg = AggregateData::new(draw.z.clone(), psi)?;
    let fit = construct_exposures(&draw.panel, &agg, 18)?;

    println!("unit      d_hat       se      r2     pi");
    for i in 0..spec.n {
        println!(
            "{:>4}  {:>9.4}  {:>7.4}  {:>6.3}  {:>5.2}",
            draw.panel.unit_ids()[i],
            fit.d.values()[i],
            fit.per_unit_se[i],
            fit.r2[i],
            spec.pi[i]
        );
    }
    Ok(())
}
