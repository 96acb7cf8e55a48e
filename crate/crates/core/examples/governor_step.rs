//! One governor update against a reference that would lose the PoI.

use std::path::Path;

use visgov::governor::{admissible, margin, rg_step, GovernorState, RgConfig};
use visgov::plant::{ClosedLoopModel, Reference};
use visgov::scenario::{build_or_load_moas, Pipeline, ScenarioConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::circle();
    let pipe = Pipeline::new(&cfg)?;
    let (moas, status) = build_or_load_moas(&cfg, &pipe, Path::new(".visgov-cache"))?;
    println!("{status:?}: {} rows", moas.nrows());

    // Hovering 3 m in front of the PoI, facing it.
    let v0 = Reference::new(-3.0, 0.0, 0.0, 0.0);
    let x = ClosedLoopModel::equilibrium(&v0);
    let mut gov = GovernorState::new(v0);
    for r in [Reference::new(-2.5, 0.5, 0.0, 0.1), Reference::new(-3.0, 0.0, 0.0, 1.4), Reference::new(1.0, 0.0, 0.0, 0.0)] {
        let feasible = admissible(&moas, &x, &r);
        let out = rg_step(&moas, &x, &r, &mut gov, &RgConfig::default())?;
        println!(
            "r = {:?}: admissible {feasible}, lambda = {:.4}, v = {:?}, margin {:.4}",
            r.as_slice(),
            out.lambda,
            out.v.as_slice(),
            margin(&moas, &x, &out.v)
        );
        gov = GovernorState::new(v0);
    }
    Ok(())
}
