//! Circle around a single PoI with and without the governor.

use std::path::Path;

use visgov::scenario::{build_or_load_moas, run_scenario, Pipeline, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::circle();
    let pipe = Pipeline::new(&cfg)?;
    let (moas, _) = build_or_load_moas(&cfg, &pipe, Path::new(".visgov-cache"))?;
    for rg_on in [true, false] {
        cfg.rg_on = rg_on;
        let out = Path::new("out").join(if rg_on { "circle-rg" } else { "circle-open" });
        let s = run_scenario(&cfg, &pipe, &moas, &out)?;
        println!(
            "rg {}: max true violation {:+.4}, reduced-FoV value {:+.4}, speed {:.3}, accel {:.3}, lambda mean {:.3} -> {}",
            if rg_on { "on " } else { "off" },
            s.run.max_violation,
            s.max_tightened_visibility,
            s.run.max_speed,
            s.run.max_accel,
            s.run.lambda_mean,
            out.display()
        );
    }
    Ok(())
}
