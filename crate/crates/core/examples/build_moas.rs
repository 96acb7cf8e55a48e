//! Build the admissible set for the default multirotor and camera.

use std::time::Instant;

use visgov::lift::LiftedSystem;
use visgov::moas::{construct_moas, MoasConfig};
use visgov::plant::{ClosedLoopModel, PlantParams};
use visgov::trig::TrigApprox;
use visgov::vis::{build_poly_constraints, certify_fov, tighten_fov, violation_bounds, CameraModel, CertifyOptions, ConstraintLimits};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let plant = ClosedLoopModel::new(PlantParams::default())?;
    let approx = TrigApprox::table();
    let cam = CameraModel::default();
    let att = 4f64.to_radians();
    let fov = tighten_fov(&cam, violation_bounds(&approx, att, att, &cam)?)?;
    let fov = certify_fov(&approx, &cam, att, &fov, &CertifyOptions::default())?;
    let set = build_poly_constraints(&fov, &approx, &ConstraintLimits::default(), &plant, 4)?;
    let t = Instant::now();
    let sys = LiftedSystem::new(&plant.extended(), 4, 4)?;
    println!("lifted dimension {} ({} state-containing), {:.2} s", sys.dim(), sys.nx(), t.elapsed().as_secs_f64());
    let moas = construct_moas(&sys, &set, &MoasConfig::default())?;
    println!(
        "k* = {}, rows = {}, support = {}, LPs = {}, skipped = {}, {:.1} s",
        moas.k_star,
        moas.nrows(),
        moas.support.len(),
        moas.stats.lp_calls,
        moas.stats.norm_skips,
        moas.stats.seconds
    );
    Ok(())
}
