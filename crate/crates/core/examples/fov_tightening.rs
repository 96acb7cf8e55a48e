//! Fit the sine/cosine surrogates, bound the attitude-induced bearing error
//! and shrink the field of view until the worst case is inside the camera.

use visgov::trig::{compute_delta_max, max_angle_error, TrigApprox};
use visgov::vis::{
    certify_fov, tighten_fov, violation_bounds, worst_case_violation, CameraModel, CertifyOptions,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let fit = TrigApprox::remez(3, 2)?;
    println!("remez   f_c = {:.4} {:+.4} psi^2", fit.kc[0], fit.kc[1]);
    println!("        f_s = {:.4} psi {:+.4} psi^3", fit.ks[0], fit.ks[1]);

    let approx = TrigApprox::table();
    let delta = compute_delta_max(&approx);
    println!("delta_max = {delta:.5}, max yaw error = {:.2} deg", max_angle_error(&approx).to_degrees());

    let cam = CameraModel::default();
    let att = 4f64.to_radians();
    let bounds = violation_bounds(&approx, att, att, &cam)?;
    let fov = tighten_fov(&cam, bounds)?;
    println!(
        "closed-form bounds eps1 = {:.4}, eps2 = {:.4} -> {:.2} x {:.2} deg",
        bounds.0,
        bounds.1,
        fov.alpha_h_eff.to_degrees(),
        fov.alpha_v_eff.to_degrees()
    );

    let opts = CertifyOptions::default();
    let w = worst_case_violation(&approx, &cam, fov.tan_h(), fov.tan_v(), att, &opts);
    println!("worst case on that rectangle: g1 = {:.4}, g2 = {:.4}", w.g1, w.g2);

    let cert = certify_fov(&approx, &cam, att, &fov, &opts)?;
    println!(
        "certified: {:.2} x {:.2} deg, depth bound {:.4} m",
        cert.alpha_h_eff.to_degrees(),
        cert.alpha_v_eff.to_degrees(),
        cert.eps_z_eff
    );
    Ok(())
}
