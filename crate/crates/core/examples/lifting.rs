//! Lift the closed-loop multirotor to monomials of degree 4 and check that
//! the lifted matrix propagates the monomials of the true state.

use nalgebra::DVector;
use visgov::lift::{build_phi_r, lift_no_rep, sigma, sigma_sum, LiftedSystem};
use visgov::plant::{ClosedLoopModel, PlantParams};
use visgov::sparse::SparseMatrix;
use visgov::spectral::{count_unit, eigenvalues_sparse};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let plant = ClosedLoopModel::new(PlantParams::default())?;
    let phi = plant.extended();
    let sys = LiftedSystem::new(&phi, 4, 4)?;
    println!("Sigma(12, 4) = {}, sigma(12, 4) = {}", sigma_sum(12, 4), sigma(12, 4));
    println!("lifted dimension {}: {} state-containing, {} pure-reference", sys.dim(), sys.nx(), sys.nv());

    let z: Vec<f64> = (0..12).map(|i| 0.3 * (i as f64 - 5.5)).collect();
    let mut zk = DVector::from_vec(z.clone());
    let mut big = sys.eta(&z)?;
    for _ in 0..50 {
        zk = &phi * zk;
        big = DVector::from_vec(sys.phi().mul_vec(big.as_slice()));
    }
    let err = (sys.eta(zk.as_slice())? - big).amax();
    println!("50 steps: |Phi^k eta(z) - eta(phi^k z)| = {err:.2e}");

    for r in 1..=4 {
        let phi_r = build_phi_r(&phi, r)?;
        let lifted = DVector::from_vec(lift_no_rep(&z, r)?);
        let once = DVector::from_vec(lift_no_rep((&phi * DVector::from_vec(z.clone())).as_slice(), r)?);
        let comm = (&phi_r * lifted - once).amax();
        let unit = count_unit(&eigenvalues_sparse(&SparseMatrix::from_dense(&phi_r)), 1e-8);
        println!("degree {r}: {} x {}, commutation error {comm:.1e}, {unit} unit eigenvalues", phi_r.nrows(), phi_r.ncols());
    }
    Ok(())
}
