//! Writes a simulated panel in the long CSV layout, reads it back and runs
//! the estimator on the loaded data.
//!
//! Usage: `cargo run --example load_csv_panel -- [path.csv]`

use std::fs::File;
use std::io::{BufReader, BufWriter};

use aggshock::aggregate::{estimate, EstimateConfig};
use aggshock::exposures::construct_exposures;
use aggshock::panel::{default_t0, read_panel_csv, write_panel_csv, AggregateData, PanelMetadata};
use aggshock::sim::{simulate_once, synthetic_spec, Design};

fn main() -> aggshock::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "panel.csv".into());
    let spec = synthetic_spec(51, 39, 7).with_design(Design::Three);
    let draw = simulate_once(&spec, 11);
    let agg = AggregateData::constant_mean(draw.z.clone())?;
    let d = construct_exposures(&draw.panel, &agg, default_t0(spec.t))?.d;
    write_panel_csv(BufWriter::new(File::create(&path)?), &draw.panel, &agg, Some(&d))?;

    let loaded = read_panel_csv(BufReader::new(File::open(&path)?))?;
    let meta = PanelMetadata::describe(&loaded.panel, &loaded.aggregate);
    println!("loaded {path}: n = {}, T = {}, p = {}", meta.n, meta.t, meta.p);
    let d = loaded.exposure.expect("the written file carries a d column");
    let fit = estimate(&loaded.panel, &loaded.aggregate, &d, &EstimateConfig::default())?;
    println!("delta = {:.4}, pi = {:.4}, tau = {:.4}", fit.delta, fit.pi, fit.tau);
    if let Some(s) = fit.sigma_hat {
        println!("sigma = [[{:.3e}, {:.3e}], [{:.3e}, {:.3e}]]", s[(0, 0)], s[(0, 1)], s[(1, 0)], s[(1, 1)]);
    }
    Ok(())
}
