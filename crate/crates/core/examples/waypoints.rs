//! Three waypoint segments, each watched by its own PoI.

use std::path::Path;

use visgov::scenario::{build_or_load_moas, simulate, Pipeline, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::waypoints();
    let pipe = Pipeline::new(&cfg)?;
    let (moas, _) = build_or_load_moas(&cfg, &pipe, Path::new(".visgov-cache"))?;
    let (log, s) = simulate(&cfg, &pipe, &moas)?;
    let mut last_poi = usize::MAX;
    for row in &log.rows {
        if row.poi != last_poi {
            println!("t = {:6.2}: enforcing PoI {} at ({:.2}, {:.2})", row.t, row.poi, row.x[0], row.x[1]);
            last_poi = row.poi;
        }
    }
    println!(
        "max violation {:+.4}, goal error {:.2e} m, grace steps {}, governor {:.3} ms mean / {:.3} ms max",
        s.run.max_violation,
        s.goal_error.unwrap_or(f64::NAN),
        s.run.grace_steps_used,
        s.run.mean_step_ms,
        s.run.max_step_ms
    );
    Ok(())
}
