//! Visibility constraints for a forward-looking camera.
//!
//! Constraints are written in the landmark frame (PoI at the origin) as
//! polynomials in the extended state `z = [x; v]`, using the virtual camera
//! frame (roll and pitch zeroed) and polynomial sine/cosine surrogates. The
//! error caused by dropping roll/pitch and by the surrogates is absorbed by
//! shrinking the field of view.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lift::{LiftedSystem, Monomial};
use crate::plant::{camera_projection, rotation_rpy, ClosedLoopModel, FlatState};
use crate::trig::{compute_delta_max, golden_min, TrigApprox, TrigPair};

/// Number of variables of the extended state `[x(8); v(4)]`.
pub const NZ: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VisError {
    #[error("invalid camera: {0}")]
    Camera(String),
    #[error("violation bound hypothesis failed: {0}")]
    Hypothesis(String),
    #[error("{axis} bound {bound:.4} does not fit tan(alpha) = {tan:.4}")]
    TooNarrow { axis: &'static str, bound: f64, tan: f64 },
    #[error("constraint degree {degree} exceeds configured p = {p}")]
    Degree { degree: usize, p: usize },
    #[error("interior point violates constraint {name} (value {value:.3e})")]
    Interior { name: String, value: f64 },
}

/// Pinhole camera at the body origin, optical axis along body x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Half horizontal FoV (rad).
    pub alpha_h: f64,
    /// Half vertical FoV (rad).
    pub alpha_v: f64,
    /// Minimum depth (m).
    pub eps_z: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel { alpha_h: 45f64.to_radians(), alpha_v: 35f64.to_radians(), eps_z: 0.1 }
    }
}

impl CameraModel {
    pub fn new(alpha_h: f64, alpha_v: f64, eps_z: f64) -> Result<Self, VisError> {
        let cam = CameraModel { alpha_h, alpha_v, eps_z };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), VisError> {
        let ok = |a: f64| a > 0.0 && a < FRAC_PI_2;
        if !ok(self.alpha_h) || !ok(self.alpha_v) {
            return Err(VisError::Camera(format!(
                "half angles must lie in (0, pi/2): {} {}",
                self.alpha_h, self.alpha_v
            )));
        }
        if !(self.eps_z > 0.0) {
            return Err(VisError::Camera(format!("eps_z must be positive, got {}", self.eps_z)));
        }
        Ok(())
    }

    /// Camera axes in body coordinates: `p_body = R_BC p_cam`.
    pub fn r_bc(&self) -> Matrix3<f64> {
        Matrix3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
    }
}

/// Shrunken field of view used by the polynomial constraints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TightenedFov {
    pub eps1_max: f64,
    pub eps2_max: f64,
    pub alpha_h_eff: f64,
    pub alpha_v_eff: f64,
    /// Depth bound imposed on the virtual-frame depth.
    pub eps_z_eff: f64,
}

impl TightenedFov {
    pub fn tan_h(&self) -> f64 {
        self.alpha_h_eff.tan()
    }
    pub fn tan_v(&self) -> f64 {
        self.alpha_v_eff.tan()
    }
}

/// Horizontal and vertical violation surfaces at attitude `(phi, theta)` for
/// a sine/cosine mismatch `delta`.
pub fn violation_surfaces(delta: f64, phi: f64, theta: f64, cam: &CameraModel) -> (f64, f64) {
    let (sp, cp) = phi.sin_cos();
    let (st, ct) = theta.sin_cos();
    let th = cam.alpha_h.tan();
    let tv = cam.alpha_v.tan();
    let k_min = (1.0 - delta) * ct - st * tv;
    let e1 = ((1.0 + delta) * (st * sp + cp * th - ct * th) + ct * sp * tv + st * tv * th) / k_min;
    let e2 = ((1.0 + delta) * (st * cp - sp * th - ct * tv) + st * tv * tv + ct * cp * tv) / k_min;
    (e1, e2)
}

/// Maxima of the violation surfaces over `|phi| <= phi_max`, `|theta| <= theta_max`.
pub fn violation_bounds(
    approx: &impl TrigPair,
    phi_max: f64,
    theta_max: f64,
    cam: &CameraModel,
) -> Result<(f64, f64), VisError> {
    violation_bounds_for_delta(compute_delta_max(approx), phi_max, theta_max, cam)
}

pub fn violation_bounds_for_delta(
    delta: f64,
    phi_max: f64,
    theta_max: f64,
    cam: &CameraModel,
) -> Result<(f64, f64), VisError> {
    cam.validate()?;
    if !(0.0..1.0).contains(&delta) {
        return Err(VisError::Hypothesis(format!("delta_max = {delta} not in [0, 1)")));
    }
    if !(phi_max >= 0.0 && phi_max < FRAC_PI_2 && theta_max >= 0.0 && theta_max < FRAC_PI_2) {
        return Err(VisError::Hypothesis(format!("attitude box ({phi_max}, {theta_max}) outside [0, pi/2)")));
    }
    let tv = cam.alpha_v.tan();
    let limit = (tv / (1.0 - delta)).min((1.0 - delta) / tv);
    if theta_max.tan() >= limit {
        return Err(VisError::Hypothesis(format!(
            "tan(theta_max) = {:.4} >= min(tan(av)/(1-D), (1-D)/tan(av)) = {limit:.4}",
            theta_max.tan()
        )));
    }
    let k_min = (1.0 - delta) * theta_max.cos() - theta_max.sin() * tv;
    if k_min <= 0.0 {
        return Err(VisError::Hypothesis(format!("k_min = {k_min:.4} <= 0")));
    }
    let e1 = box_max(|p, t| violation_surfaces(delta, p, t, cam).0, phi_max, theta_max);
    let e2 = box_max(|p, t| violation_surfaces(delta, p, t, cam).1, phi_max, theta_max);
    Ok((e1, e2))
}

/// Grid search on the box followed by alternating golden-section refinement.
fn box_max(f: impl Fn(f64, f64) -> f64, a: f64, b: f64) -> f64 {
    const N: usize = 501;
    let at = |i: usize, h: f64| if N == 1 { 0.0 } else { -h + 2.0 * h * i as f64 / (N - 1) as f64 };
    let (mut bp, mut bt, mut bv) = (0.0, 0.0, f64::NEG_INFINITY);
    for i in 0..N {
        for j in 0..N {
            let (p, t) = (at(i, a), at(j, b));
            let v = f(p, t);
            if v > bv {
                (bp, bt, bv) = (p, t, v);
            }
        }
    }
    let (hp, ht) = (2.0 * a / (N - 1) as f64, 2.0 * b / (N - 1) as f64);
    let (mut p, mut t) = (bp, bt);
    for _ in 0..20 {
        if a > 0.0 {
            let q = golden_min(|x| -f(x, t), (p - hp).max(-a), (p + hp).min(a), 1e-12);
            if f(q, t) > f(p, t) {
                p = q;
            }
        }
        if b > 0.0 {
            let q = golden_min(|y| -f(p, y), (t - ht).max(-b), (t + ht).min(b), 1e-12);
            if f(p, q) > f(p, t) {
                t = q;
            }
        }
    }
    f(p, t).max(bv)
}

/// `alpha_eff = atan(tan(alpha) - eps)` on each axis.
pub fn tighten_fov(cam: &CameraModel, bounds: (f64, f64)) -> Result<TightenedFov, VisError> {
    cam.validate()?;
    let (e1, e2) = bounds;
    let th = cam.alpha_h.tan();
    let tv = cam.alpha_v.tan();
    if e1 >= th {
        return Err(VisError::TooNarrow { axis: "horizontal", bound: e1, tan: th });
    }
    if e2 >= tv {
        return Err(VisError::TooNarrow { axis: "vertical", bound: e2, tan: tv });
    }
    Ok(TightenedFov {
        eps1_max: e1,
        eps2_max: e2,
        alpha_h_eff: (th - e1).atan(),
        alpha_v_eff: (tv - e2).atan(),
        eps_z_eff: cam.eps_z,
    })
}

/// Grid resolution and safety margin for [`certify_fov`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub psi_points: usize,
    pub attitude_points: usize,
    /// Required slack on each bearing constraint (tangent units).
    pub margin: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions { psi_points: 4001, attitude_points: 9, margin: 1e-3 }
    }
}

/// Worst true bearing violations and depth ratio over the yaw domain and
/// attitude box, for virtual-frame tangents `(tan_h, tan_v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub g1: f64,
    pub g2: f64,
    /// `min z_C / z_V`.
    pub depth_ratio: f64,
}

/// Maps from virtual-frame `(u, w, 1) = (x_V, y_V, z_V) / z_V` to true camera
/// coordinates over `z_V`, sampled over yaw and attitude.
struct VertexMaps {
    maps: Vec<Matrix3<f64>>,
}

impl VertexMaps {
    fn new(approx: &impl TrigPair, cam: &CameraModel, att_max: f64, opts: &CertifyOptions) -> Self {
        let d = approx.domain();
        let grid = |n: usize, h: f64| -> Vec<f64> {
            if n <= 1 || h == 0.0 {
                vec![0.0]
            } else {
                (0..n).map(|i| -h + 2.0 * h * i as f64 / (n - 1) as f64).collect()
            }
        };
        let psis = grid(opts.psi_points, d);
        let atts = grid(opts.attitude_points, att_max);
        let rbc_t = cam.r_bc().transpose();
        let mut maps = Vec::with_capacity(psis.len() * atts.len() * atts.len());
        for &psi in &psis {
            let (fs, fc) = (approx.sin_approx(psi), approx.cos_approx(psi));
            let p = Matrix3::new(fs, -fc, 0.0, 0.0, 0.0, -1.0, fc, fs, 0.0);
            let Some(p_inv) = p.try_inverse() else { continue };
            for &phi in &atts {
                for &theta in &atts {
                    let r = rotation_rpy(phi, theta, psi);
                    maps.push(rbc_t * r.transpose() * p_inv);
                }
            }
        }
        VertexMaps { maps }
    }

    fn worst(&self, cam: &CameraModel, tan_h: f64, tan_v: f64) -> WorstCase {
        let (th, tv) = (cam.alpha_h.tan(), cam.alpha_v.tan());
        let mut out = WorstCase { g1: f64::NEG_INFINITY, g2: f64::NEG_INFINITY, depth_ratio: f64::INFINITY };
        let verts = [(tan_h, tan_v), (tan_h, -tan_v), (-tan_h, tan_v), (-tan_h, -tan_v)];
        for m in &self.maps {
            for &(u, w) in &verts {
                let c = m * Vector3::new(u, w, 1.0);
                out.depth_ratio = out.depth_ratio.min(c.z);
                if c.z <= 0.0 {
                    out.g1 = f64::INFINITY;
                    out.g2 = f64::INFINITY;
                    continue;
                }
                out.g1 = out.g1.max((c.x / c.z).abs() - th);
                out.g2 = out.g2.max((c.y / c.z).abs() - tv);
            }
        }
        out
    }
}

/// Worst-case true violation for the given virtual-frame tangents. The true
/// camera ratios are linear-fractional in `(x_V/z_V, y_V/z_V)`, so the worst
/// case over the tightened rectangle sits at one of its corners.
pub fn worst_case_violation(
    approx: &impl TrigPair,
    cam: &CameraModel,
    tan_h: f64,
    tan_v: f64,
    att_max: f64,
    opts: &CertifyOptions,
) -> WorstCase {
    VertexMaps::new(approx, cam, att_max, opts).worst(cam, tan_h, tan_v)
}

/// Shrink `start` until the worst-case true violation over the yaw domain and
/// attitude box is at most `-margin` on both axes, and raise the depth bound
/// so that `z_C >= eps_z` follows from the polynomial depth constraint.
pub fn certify_fov(
    approx: &impl TrigPair,
    cam: &CameraModel,
    att_max: f64,
    start: &TightenedFov,
    opts: &CertifyOptions,
) -> Result<TightenedFov, VisError> {
    cam.validate()?;
    let maps = VertexMaps::new(approx, cam, att_max, opts);
    let target = -opts.margin;
    let (mut th, mut tv) = (start.tan_h(), start.tan_v());
    for _ in 0..6 {
        let w = maps.worst(cam, th, tv);
        if w.g1 <= target && w.g2 <= target {
            break;
        }
        if w.g1 > target {
            th = shrink(|t| maps.worst(cam, t, tv).g1, th, target)
                .ok_or(VisError::TooNarrow { axis: "horizontal", bound: w.g1, tan: th })?;
        }
        if maps.worst(cam, th, tv).g2 > target {
            tv = shrink(|t| maps.worst(cam, th, t).g2, tv, target)
                .ok_or(VisError::TooNarrow { axis: "vertical", bound: w.g2, tan: tv })?;
        }
    }
    let w = maps.worst(cam, th, tv);
    if w.g1 > target || w.g2 > target || w.depth_ratio <= 0.0 {
        return Err(VisError::TooNarrow { axis: "both", bound: w.g1.max(w.g2), tan: th.min(tv) });
    }
    Ok(TightenedFov {
        eps1_max: cam.alpha_h.tan() - th,
        eps2_max: cam.alpha_v.tan() - tv,
        alpha_h_eff: th.atan(),
        alpha_v_eff: tv.atan(),
        eps_z_eff: cam.eps_z / w.depth_ratio * (1.0 + opts.margin),
    })
}

/// Largest `t` in `(0, hi]` with `g(t) <= target`, by bisection.
fn shrink(g: impl Fn(f64) -> f64, hi: f64, target: f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut hi = hi;
    if g(lo) > target {
        return None;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if g(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-9 {
            break;
        }
    }
    Some(lo)
}

/// Exact visibility values for a pose.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrueEval {
    /// `|x_C / z_C| - tan(alpha_h)`.
    pub g1: f64,
    /// `|y_C / z_C| - tan(alpha_v)`.
    pub g2: f64,
    pub z_c: f64,
    /// Set when the PoI is not in front of the camera.
    pub behind: bool,
}

impl TrueEval {
    /// Largest violation among the bearing and positive-depth constraints.
    pub fn max_violation(&self) -> f64 {
        self.g1.max(self.g2).max(-self.z_c)
    }
}

pub fn true_constraint_eval(
    x: &FlatState,
    attitude: (f64, f64),
    cam: &CameraModel,
    poi: &Vector3<f64>,
) -> TrueEval {
    let c = camera_projection(x, attitude, cam, poi);
    let behind = c.z <= 0.0;
    let z = c.z.max(1e-12);
    TrueEval {
        g1: (c.x / z).abs() - cam.alpha_h.tan(),
        g2: (c.y / z).abs() - cam.alpha_v.tan(),
        z_c: c.z,
        behind,
    }
}

/// Virtual-frame coordinates `(x_V, y_V, z_V)` of the origin seen from
/// `pos` with yaw `psi`, using the trig surrogates.
pub fn virtual_coords(approx: &impl TrigPair, pos: &Vector3<f64>, psi: f64) -> Vector3<f64> {
    let (fs, fc) = (approx.sin_approx(psi), approx.cos_approx(psi));
    let (dx, dy, dz) = (-pos.x, -pos.y, -pos.z);
    Vector3::new(fs * dx - fc * dy, -dz, fc * dx + fs * dy)
}

/// Sparse polynomial over the extended state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: BTreeMap<Monomial, f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        let mut p = Poly::default();
        p.add_term(Monomial::one(), c);
        p
    }

    pub fn var(i: usize) -> Self {
        let mut p = Poly::default();
        p.add_term(Monomial::var(i), 1.0);
        p
    }

    pub fn add_term(&mut self, m: Monomial, c: f64) {
        let e = self.terms.entry(m).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.retain(|_, v| *v != 0.0);
        }
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (m, &c) in &other.terms {
            out.add_term(m.clone(), c);
        }
        out
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut out = Poly::default();
        for (m, &c) in &self.terms {
            out.add_term(m.clone(), c * s);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::default();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &other.terms {
                out.add_term(a.mul(b), ca * cb);
            }
        }
        out
    }

    /// Univariate polynomial `sum c_k z_var^k` from `(k, c_k)` pairs.
    pub fn univariate(var: usize, terms: impl IntoIterator<Item = (u32, f64)>) -> Poly {
        let mut out = Poly::default();
        for (k, c) in terms {
            out.add_term(Monomial::from_indices(vec![var as u8; k as usize]), c);
        }
        out
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|(m, &c)| c * m.eval(z)).sum()
    }

    pub fn degree(&self) -> usize {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    pub fn constant_term(&self) -> f64 {
        self.terms.get(&Monomial::one()).copied().unwrap_or(0.0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, &c)| (m, c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintKind {
    Bearing,
    Distance,
    Velocity,
    Acceleration,
    YawDomain,
    Compactness,
}

/// `poly(z) <= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyConstraint {
    pub name: String,
    pub kind: ConstraintKind,
    pub poly: Poly,
}

/// Non-visibility limits that enter the constraint set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintLimits {
    pub v_max: f64,
    pub a_max: f64,
    /// Half-width of the landmark-relative position box (m).
    pub position_box: f64,
    /// Half-width of the reference position box (m).
    pub reference_box: f64,
    /// Bound on `|yaw rate|` (rad/s).
    pub yaw_rate_max: f64,
}

impl Default for ConstraintLimits {
    fn default() -> Self {
        ConstraintLimits { v_max: 1.5, a_max: 1.0, position_box: 10.0, reference_box: 10.0, yaw_rate_max: 3.0 }
    }
}

/// Polynomial inequalities over `z` together with a strictly feasible point.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyConstraintSet {
    /// Number of variables of `z`.
    pub n_vars: usize,
    pub constraints: Vec<PolyConstraint>,
    pub degree: usize,
    /// A point of the extended state strictly inside every constraint.
    pub interior: Vec<f64>,
}

/// Lifted linear form `C_i Z <= c_i0`, rows stored sparsely.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedConstraints {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub offsets: Vec<f64>,
}

impl LiftedConstraints {
    pub fn eval(&self, i: usize, zl: &[f64]) -> f64 {
        self.rows[i].iter().map(|&(k, c)| c * zl[k]).sum::<f64>() - self.offsets[i]
    }
}

impl PolyConstraintSet {
    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn eval(&self, z: &[f64]) -> Vec<f64> {
        self.constraints.iter().map(|c| c.poly.eval(z)).collect()
    }

    /// Largest constraint value at `z`.
    pub fn max_value(&self, z: &[f64]) -> f64 {
        self.constraints.iter().map(|c| c.poly.eval(z)).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Rewrite each `c_i(z) <= 0` as `C_i eta(z) <= c_i0`.
    pub fn lift(&self, sys: &LiftedSystem) -> Result<LiftedConstraints, VisError> {
        if self.degree > sys.p {
            return Err(VisError::Degree { degree: self.degree, p: sys.p });
        }
        let mut rows = Vec::with_capacity(self.len());
        let mut offsets = Vec::with_capacity(self.len());
        for c in &self.constraints {
            let mut row = Vec::new();
            for (m, coef) in c.poly.terms() {
                if m.degree() == 0 {
                    continue;
                }
                let k = sys.index_of(m).ok_or(VisError::Degree { degree: m.degree(), p: sys.p })?;
                row.push((k, coef));
            }
            row.sort_by_key(|e| e.0);
            rows.push(row);
            offsets.push(-c.poly.constant_term());
        }
        Ok(LiftedConstraints { rows, offsets })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let doc = SetDoc {
            n_vars: self.n_vars,
            degree: self.degree,
            interior: self.interior.clone(),
            constraints: self
                .constraints
                .iter()
                .map(|c| ConstraintDoc {
                    name: c.name.clone(),
                    kind: c.kind,
                    terms: c
                        .poly
                        .terms()
                        .map(|(m, coeff)| TermDoc { exponents: m.exponents(self.n_vars), coeff })
                        .collect(),
                })
                .collect(),
        };
        serde_json::to_value(doc).expect("plain data serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, serde_json::Error> {
        let doc: SetDoc = serde_json::from_value(v.clone())?;
        let constraints = doc
            .constraints
            .into_iter()
            .map(|c| {
                let mut poly = Poly::default();
                for t in c.terms {
                    poly.add_term(Monomial::from_exponents(&t.exponents), t.coeff);
                }
                PolyConstraint { name: c.name, kind: c.kind, poly }
            })
            .collect();
        Ok(PolyConstraintSet { n_vars: doc.n_vars, constraints, degree: doc.degree, interior: doc.interior })
    }
}

#[derive(Serialize, Deserialize)]
struct TermDoc {
    exponents: Vec<u32>,
    coeff: f64,
}

#[derive(Serialize, Deserialize)]
struct ConstraintDoc {
    name: String,
    kind: ConstraintKind,
    terms: Vec<TermDoc>,
}

#[derive(Serialize, Deserialize)]
struct SetDoc {
    n_vars: usize,
    degree: usize,
    interior: Vec<f64>,
    constraints: Vec<ConstraintDoc>,
}

/// Default interior point: hover 3 m behind the PoI, facing it, reference
/// equal to the pose.
pub fn default_interior() -> Vec<f64> {
    let mut z = vec![0.0; NZ];
    z[0] = -3.0;
    z[8] = -3.0;
    z
}

/// Assemble the full constraint set in the landmark frame.
///
/// Variable order: `[px, py, pz, yaw, vx, vy, vz, yaw_rate, rx, ry, rz, ryaw]`.
pub fn build_poly_constraints(
    fov: &TightenedFov,
    approx: &TrigApprox,
    limits: &ConstraintLimits,
    plant: &ClosedLoopModel,
    p: usize,
) -> Result<PolyConstraintSet, VisError> {
    let mut out = Vec::new();
    let mut push = |name: &str, kind, poly: Poly| out.push(PolyConstraint { name: name.into(), kind, poly });

    let fs = Poly::univariate(3, approx.sin_terms());
    let fc = Poly::univariate(3, approx.cos_terms());
    let dx = Poly::var(0).scale(-1.0);
    let dy = Poly::var(1).scale(-1.0);
    let dz = Poly::var(2).scale(-1.0);
    let xv = fs.mul(&dx).sub(&fc.mul(&dy));
    let yv = dz.scale(-1.0);
    let zv = fc.mul(&dx).add(&fs.mul(&dy));
    let (th, tv) = (fov.tan_h(), fov.tan_v());

    push("bearing_h+", ConstraintKind::Bearing, xv.sub(&zv.scale(th)));
    push("bearing_h-", ConstraintKind::Bearing, xv.scale(-1.0).sub(&zv.scale(th)));
    push("bearing_v+", ConstraintKind::Bearing, yv.sub(&zv.scale(tv)));
    push("bearing_v-", ConstraintKind::Bearing, yv.scale(-1.0).sub(&zv.scale(tv)));
    push("distance", ConstraintKind::Distance, Poly::constant(fov.eps_z_eff).sub(&zv));

    let axes = ["x", "y", "z"];
    for (i, ax) in axes.iter().enumerate() {
        let v = Poly::var(4 + i);
        push(&format!("velocity_{ax}+"), ConstraintKind::Velocity, v.add(&Poly::constant(-limits.v_max)));
        push(&format!("velocity_{ax}-"), ConstraintKind::Velocity, v.scale(-1.0).add(&Poly::constant(-limits.v_max)));
    }
    for (i, ax) in axes.iter().enumerate() {
        let row = 4 + i;
        let mut a = Poly::default();
        for j in 0..8 {
            if plant.ac[(row, j)] != 0.0 {
                a.add_term(Monomial::var(j), plant.ac[(row, j)]);
            }
        }
        for j in 0..4 {
            if plant.bc[(row, j)] != 0.0 {
                a.add_term(Monomial::var(8 + j), plant.bc[(row, j)]);
            }
        }
        push(&format!("accel_{ax}+"), ConstraintKind::Acceleration, a.add(&Poly::constant(-limits.a_max)));
        push(&format!("accel_{ax}-"), ConstraintKind::Acceleration, a.scale(-1.0).add(&Poly::constant(-limits.a_max)));
    }
    let dom = approx.domain;
    push("yaw+", ConstraintKind::YawDomain, Poly::var(3).add(&Poly::constant(-dom)));
    push("yaw-", ConstraintKind::YawDomain, Poly::var(3).scale(-1.0).add(&Poly::constant(-dom)));

    let mut boxed = |name: String, var: usize, bound: f64| {
        push(&format!("{name}+"), ConstraintKind::Compactness, Poly::var(var).add(&Poly::constant(-bound)));
        push(&format!("{name}-"), ConstraintKind::Compactness, Poly::var(var).scale(-1.0).add(&Poly::constant(-bound)));
    };
    for (i, ax) in axes.iter().enumerate() {
        boxed(format!("position_{ax}"), i, limits.position_box);
    }
    boxed("yaw_rate".into(), 7, limits.yaw_rate_max);
    for (i, ax) in axes.iter().enumerate() {
        boxed(format!("reference_{ax}"), 8 + i, limits.reference_box);
    }
    boxed("reference_yaw".into(), 11, dom);

    let degree = out.iter().map(|c| c.poly.degree()).max().unwrap_or(0);
    if degree > p {
        return Err(VisError::Degree { degree, p });
    }
    let set = PolyConstraintSet { n_vars: NZ, constraints: out, degree, interior: default_interior() };
    for c in &set.constraints {
        let value = c.poly.eval(&set.interior);
        if value >= 0.0 {
            return Err(VisError::Interior { name: c.name.clone(), value });
        }
    }
    Ok(set)
}
