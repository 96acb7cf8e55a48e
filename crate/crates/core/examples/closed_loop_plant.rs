//! Step response of the pre-stabilized multirotor and the attitude that the
//! commanded acceleration implies.

use visgov::plant::{max_tilt, ClosedLoopModel, PlantParams, Reference};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let params = PlantParams::default();
    let plant = ClosedLoopModel::new(params)?;
    let mut x = ClosedLoopModel::equilibrium(&Reference::zeros());
    let v = Reference::new(1.0, 0.0, 0.0, 0.3);
    println!("   t      px      vx     yaw   roll  pitch (deg)");
    for k in 0..=300 {
        if k % 50 == 0 {
            let (roll, pitch) = plant.attitude(&x, &v)?;
            println!(
                "{:5.2} {:7.4} {:7.4} {:7.4} {:6.2} {:6.2}",
                k as f64 * params.ts,
                x[0],
                x[4],
                x[3],
                roll.to_degrees(),
                pitch.to_degrees()
            );
        }
        x = plant.step(&x, &v);
    }
    println!("tilt at a_max = {} m/s^2: {:.2} deg", params.a_max, max_tilt(params.a_max).to_degrees());
    Ok(())
}
