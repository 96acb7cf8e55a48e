//! Closed-loop multirotor model in flat outputs.
//!
//! Each flat output (x, y, z, yaw) is a double integrator driven by a PD
//! tracking law `p'' = kP (v - p) - kD p'`. The inner attitude loop is taken
//! as ideal, so roll and pitch are recovered from the commanded acceleration
//! by differential flatness.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lift::extended_matrix;
use crate::vis::CameraModel;

pub const GRAVITY: f64 = 9.81;

/// `[px, py, pz, yaw, vx, vy, vz, yaw_rate]`.
pub type FlatState = SVector<f64, 8>;
/// `[px, py, pz, yaw]`.
pub type Reference = SVector<f64, 4>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("gains must be positive (kP={kp}, kD={kd})")]
    BadGains { kp: f64, kd: f64 },
    #[error("sampling time must be positive, got {0}")]
    BadSampling(f64),
    #[error("thrust direction undefined: |a + g e3| = {0:.3e}")]
    FreeFall(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub kp: f64,
    pub kd: f64,
    /// Sampling period in seconds.
    pub ts: f64,
    pub v_max: f64,
    pub a_max: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        PlantParams { kp: 4.0, kd: 2.0, ts: 0.01, v_max: 1.5, a_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub params: PlantParams,
    pub ac: SMatrix<f64, 8, 8>,
    pub bc: SMatrix<f64, 8, 4>,
    pub ad: SMatrix<f64, 8, 8>,
    pub bd: SMatrix<f64, 8, 4>,
}

impl ClosedLoopModel {
    pub fn new(params: PlantParams) -> Result<Self, PlantError> {
        if !(params.kp > 0.0 && params.kd > 0.0) {
            return Err(PlantError::BadGains { kp: params.kp, kd: params.kd });
        }
        if !(params.ts > 0.0) {
            return Err(PlantError::BadSampling(params.ts));
        }
        let mut ac = SMatrix::<f64, 8, 8>::zeros();
        let mut bc = SMatrix::<f64, 8, 4>::zeros();
        for i in 0..4 {
            ac[(i, i + 4)] = 1.0;
            ac[(i + 4, i)] = -params.kp;
            ac[(i + 4, i + 4)] = -params.kd;
            bc[(i + 4, i)] = params.kp;
        }
        let (ad, bd) = zoh(&ac, &bc, params.ts);
        Ok(ClosedLoopModel { params, ac, bc, ad, bd })
    }

    pub fn step(&self, x: &FlatState, v: &Reference) -> FlatState {
        self.ad * x + self.bd * v
    }

    /// Continuous-time derivative `Ac x + Bc v`.
    pub fn derivative(&self, x: &FlatState, v: &Reference) -> FlatState {
        self.ac * x + self.bc * v
    }

    /// Commanded translational acceleration.
    pub fn acceleration(&self, x: &FlatState, v: &Reference) -> Vector3<f64> {
        let d = self.derivative(x, v);
        Vector3::new(d[4], d[5], d[6])
    }

    /// Extended matrix `[[Ad, Bd], [0, I]]` of the discrete system.
    pub fn extended(&self) -> DMatrix<f64> {
        let a = DMatrix::from_column_slice(8, 8, self.ad.as_slice());
        let b = DMatrix::from_column_slice(8, 4, self.bd.as_slice());
        extended_matrix(&a, &b)
    }

    /// Equilibrium state for a constant reference.
    pub fn equilibrium(v: &Reference) -> FlatState {
        let mut x = FlatState::zeros();
        x.fixed_rows_mut::<4>(0).copy_from(v);
        x
    }

    /// Roll and pitch implied by the commanded acceleration.
    pub fn attitude(&self, x: &FlatState, v: &Reference) -> Result<(f64, f64), PlantError> {
        attitude_from_acceleration(&self.acceleration(x, v), x[3])
    }
}

/// Exact zero-order-hold discretization via the exponential of the augmented
/// matrix `[[Ac, Bc], [0, 0]] Ts`.
pub fn zoh(
    ac: &SMatrix<f64, 8, 8>,
    bc: &SMatrix<f64, 8, 4>,
    ts: f64,
) -> (SMatrix<f64, 8, 8>, SMatrix<f64, 8, 4>) {
    let mut aug = SMatrix::<f64, 12, 12>::zeros();
    aug.fixed_view_mut::<8, 8>(0, 0).copy_from(&(ac * ts));
    aug.fixed_view_mut::<8, 4>(0, 8).copy_from(&(bc * ts));
    let e = aug.exp();
    (e.fixed_view::<8, 8>(0, 0).into_owned(), e.fixed_view::<8, 4>(0, 8).into_owned())
}

/// Flatness-based roll/pitch for acceleration `a` (inertial, z up) and yaw.
pub fn attitude_from_acceleration(a: &Vector3<f64>, yaw: f64) -> Result<(f64, f64), PlantError> {
    let r = rotation_from_acceleration(a, yaw)?;
    let pitch = (-r[(2, 0)]).clamp(-1.0, 1.0).asin();
    let roll = r[(2, 1)].atan2(r[(2, 2)]);
    Ok((roll, pitch))
}

/// Body rotation `R = Rz(yaw) Ry(pitch) Rx(roll)` whose third axis is the
/// thrust direction.
pub fn rotation_from_acceleration(a: &Vector3<f64>, yaw: f64) -> Result<Matrix3<f64>, PlantError> {
    let t = a + Vector3::new(0.0, 0.0, GRAVITY);
    let norm = t.norm();
    if norm < 1e-6 {
        return Err(PlantError::FreeFall(norm));
    }
    let b3 = t / norm;
    // Z-Y-X convention: the body x axis is orthogonal to the yawed y axis.
    let lateral = Vector3::new(-yaw.sin(), yaw.cos(), 0.0);
    let b1 = lateral.cross(&b3).normalize();
    let b2 = b3.cross(&b1);
    Ok(Matrix3::from_columns(&[b1, b2, b3]))
}

/// `Rz(yaw) Ry(pitch) Rx(roll)`.
pub fn rotation_rpy(roll: f64, pitch: f64, yaw: f64) -> Matrix3<f64> {
    let (sr, cr) = roll.sin_cos();
    let (sp, cp) = pitch.sin_cos();
    let (sy, cy) = yaw.sin_cos();
    let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
    let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
    let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
    rz * ry * rx
}

/// PoI expressed in the camera frame, camera at the body origin.
pub fn camera_projection(
    x: &FlatState,
    attitude: (f64, f64),
    cam: &CameraModel,
    poi: &Vector3<f64>,
) -> Vector3<f64> {
    let r = rotation_rpy(attitude.0, attitude.1, x[3]);
    let p = Vector3::new(x[0], x[1], x[2]);
    cam.r_bc().transpose() * (r.transpose() * (poi - p))
}

/// Largest roll or pitch reachable with `|a|_inf <= a_max`.
pub fn max_tilt(a_max: f64) -> f64 {
    (a_max * 2f64.sqrt() / GRAVITY).atan()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn model() -> ClosedLoopModel {
        ClosedLoopModel::new(PlantParams::default()).unwrap()
    }

    fn rk4(m: &ClosedLoopModel, x: &FlatState, v: &Reference, dt: f64, n: usize) -> FlatState {
        let h = dt / n as f64;
        let f = |s: &FlatState| m.derivative(s, v);
        let mut s = *x;
        for _ in 0..n {
            let k1 = f(&s);
            let k2 = f(&(s + k1 * (h / 2.0)));
            let k3 = f(&(s + k2 * (h / 2.0)));
            let k4 = f(&(s + k3 * h));
            s += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        s
    }

    #[test]
    fn poles_of_each_axis() {
        let m = model();
        let e = crate::spectral::eigenvalues(&DMatrix::from_column_slice(8, 8, m.ac.as_slice()));
        for l in e {
            assert_abs_diff_eq!(l.re, -1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(l.im.abs(), 3f64.sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn zoh_matches_rk4() {
        let m = model();
        for k in 0..8 {
            let mut x = FlatState::zeros();
            x[k] = 1.0;
            let want = rk4(&m, &x, &Reference::zeros(), m.params.ts, 1000);
            assert!((m.ad.column(k) - want).amax() < 1e-9);
        }
        for k in 0..4 {
            let mut v = Reference::zeros();
            v[k] = 1.0;
            let want = rk4(&m, &FlatState::zeros(), &v, m.params.ts, 1000);
            assert!((m.bd.column(k) - want).amax() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let m = model();
        let v = Reference::new(1.0, -2.0, 0.5, 0.3);
        let x = ClosedLoopModel::equilibrium(&v);
        assert!((m.step(&x, &v) - x).amax() < 1e-14);
        assert_eq!(m.step(&FlatState::zeros(), &Reference::zeros()), FlatState::zeros());
    }

    #[test]
    fn step_response_converges() {
        let m = model();
        let v = Reference::new(2.0, -1.0, 0.5, 0.4);
        let mut x = FlatState::zeros();
        for _ in 0..2000 {
            x = m.step(&x, &v);
        }
        assert!((x - ClosedLoopModel::equilibrium(&v)).amax() < 1e-6);
    }

    #[test]
    fn attitude_examples() {
        let (r, p) = attitude_from_acceleration(&Vector3::zeros(), 0.3).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, 0.0, epsilon = 1e-15);
        let (r, p) = attitude_from_acceleration(&Vector3::new(1.0, 0.0, 0.0), 0.0).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, (1.0 / GRAVITY).atan(), epsilon = 1e-12);
        assert_abs_diff_eq!(p.to_degrees(), 5.82, epsilon = 0.01);
        assert!(matches!(
            attitude_from_acceleration(&Vector3::new(0.0, 0.0, -GRAVITY), 0.0),
            Err(PlantError::FreeFall(_))
        ));
    }

    #[test]
    fn rotation_consistent_with_rpy() {
        let a = Vector3::new(0.4, -0.7, 0.2);
        let r = rotation_from_acceleration(&a, 0.8).unwrap();
        let (roll, pitch) = attitude_from_acceleration(&a, 0.8).unwrap();
        assert!((rotation_rpy(roll, pitch, 0.8) - r).amax() < 1e-12);
    }

    #[test]
    fn tilt_bound_holds_on_box() {
        let bound = max_tilt(1.0);
        for &ax in &[-1.0, 0.0, 1.0] {
            for &ay in &[-1.0, 0.0, 1.0] {
                for &yaw in &[0.0, 0.7, -1.4] {
                    let (r, p) = attitude_from_acceleration(&Vector3::new(ax, ay, 0.0), yaw).unwrap();
                    assert!(r.abs() <= bound + 1e-12 && p.abs() <= bound + 1e-12);
                }
            }
        }
    }

    #[test]
    fn projection_examples() {
        let cam = CameraModel::default();
        let x = FlatState::zeros();
        let pc = camera_projection(&x, (0.0, 0.0), &cam, &Vector3::new(1.0, 0.0, 0.0));
        assert!((pc - Vector3::new(0.0, 0.0, 1.0)).amax() < 1e-15);
        let mut x = FlatState::zeros();
        x[3] = std::f64::consts::FRAC_PI_2;
        let pc = camera_projection(&x, (0.0, 0.0), &cam, &Vector3::new(0.0, 2.0, 0.0));
        assert!((pc - Vector3::new(0.0, 0.0, 2.0)).amax() < 1e-12);
    }

    #[test]
    fn bad_params_rejected() {
        let p = PlantParams { kp: 0.0, ..Default::default() };
        assert!(matches!(ClosedLoopModel::new(p), Err(PlantError::BadGains { .. })));
        let p = PlantParams { ts: 0.0, ..Default::default() };
        assert!(matches!(ClosedLoopModel::new(p), Err(PlantError::BadSampling(_))));
    }
}
