//! Online reference governor.
//!
//! Each period the desired reference `r` is replaced by
//! `v = v_prev + lambda (r - v_prev)` with the largest `lambda` (found by
//! bisection) such that `(x, v)` stays in the admissible set. All
//! set queries happen in the landmark frame: positions shifted by `-poi`.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moas::Moas;
use crate::plant::{ClosedLoopModel, FlatState, Reference};
use crate::vis::{true_constraint_eval, CameraModel, NZ};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GovernorError {
    #[error("no admissible reference for the current state: {0}")]
    Infeasible(String),
    #[error("bisection_iters must be at least 1")]
    Config,
    #[error("governor used before initialization")]
    NotInitialized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RgConfig {
    pub bisection_iters: usize,
    /// Control period (s).
    pub control_period: f64,
    /// Steps to keep enforcing the previous PoI after a switch that the
    /// current reference cannot follow.
    pub grace_steps: usize,
    /// Reference yaw is clamped to `[-yaw_limit, yaw_limit]`.
    pub yaw_limit: f64,
}

impl Default for RgConfig {
    fn default() -> Self {
        RgConfig { bisection_iters: 20, control_period: 0.01, grace_steps: 500, yaw_limit: FRAC_PI_2 }
    }
}

/// Last applied reference, landmark frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct GovernorState {
    pub v_prev: Reference,
    pub initialized: bool,
}

impl GovernorState {
    pub fn new(v0: Reference) -> Self {
        GovernorState { v_prev: v0, initialized: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub v: Reference,
    pub lambda: f64,
    /// Set residual of `(x, v)`; non-positive when admissible.
    pub margin: f64,
}

pub fn to_landmark_frame(x: &FlatState, r: &Reference, poi: &Vector3<f64>) -> (FlatState, Reference) {
    let mut xl = *x;
    let mut rl = *r;
    for i in 0..3 {
        xl[i] -= poi[i];
        rl[i] -= poi[i];
    }
    (xl, rl)
}

pub fn from_landmark_frame(v: &Reference, poi: &Vector3<f64>) -> Reference {
    let mut out = *v;
    for i in 0..3 {
        out[i] += poi[i];
    }
    out
}

fn extended(x: &FlatState, v: &Reference) -> [f64; NZ] {
    let mut z = [0.0; NZ];
    z[..8].copy_from_slice(x.as_slice());
    z[8..].copy_from_slice(v.as_slice());
    z
}

pub fn admissible(moas: &Moas, x: &FlatState, v: &Reference) -> bool {
    moas.is_member(&extended(x, v))
}

pub fn margin(moas: &Moas, x: &FlatState, v: &Reference) -> f64 {
    moas.margin(&extended(x, v))
}

/// Search pattern for [`find_initial_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitSearch {
    /// Grid pitch in position (m).
    pub pitch: f64,
    /// Half-width of the position grid (m).
    pub radius: f64,
    pub yaw_pitch: f64,
    pub yaw_radius: f64,
}

impl Default for InitSearch {
    fn default() -> Self {
        InitSearch { pitch: 0.25, radius: 1.0, yaw_pitch: 0.2, yaw_radius: 0.6 }
    }
}

/// An admissible reference for `x0` (landmark frame). Tries the current pose,
/// then the current position facing the landmark, then a grid around the
/// pose ordered by distance.
pub fn find_initial_reference(moas: &Moas, x0: &FlatState, search: &InitSearch) -> Result<Reference, GovernorError> {
    let pose = Reference::new(x0[0], x0[1], x0[2], x0[3].clamp(-FRAC_PI_2, FRAC_PI_2));
    let facing = (-x0[1]).atan2(-x0[0]).clamp(-FRAC_PI_2, FRAC_PI_2);
    let mut candidates = vec![pose, Reference::new(x0[0], x0[1], x0[2], facing)];
    let steps = |h: f64, r: f64| -> Vec<f64> {
        if h <= 0.0 || r <= 0.0 {
            return vec![0.0];
        }
        let n = (r / h).round() as i64;
        (-n..=n).map(|i| i as f64 * h).collect()
    };
    let mut grid = Vec::new();
    for &dx in &steps(search.pitch, search.radius) {
        for &dy in &steps(search.pitch, search.radius) {
            for &dz in &steps(search.pitch, search.radius) {
                for &dpsi in &steps(search.yaw_pitch, search.yaw_radius) {
                    let v = Reference::new(pose[0] + dx, pose[1] + dy, pose[2] + dz, (pose[3] + dpsi).clamp(-FRAC_PI_2, FRAC_PI_2));
                    grid.push(((dx * dx + dy * dy + dz * dz + dpsi * dpsi), v));
                }
            }
        }
    }
    grid.sort_by(|a, b| a.0.total_cmp(&b.0));
    candidates.extend(grid.into_iter().map(|g| g.1));
    candidates
        .into_iter()
        .find(|v| admissible(moas, x0, v))
        .ok_or_else(|| GovernorError::Infeasible(format!("state {:?}", x0.as_slice())))
}

/// Clamp the reference yaw to the approximation domain.
pub fn clamp_reference(r: &Reference, yaw_limit: f64) -> Reference {
    let mut out = *r;
    out[3] = out[3].clamp(-yaw_limit, yaw_limit);
    out
}

/// One governor update in the landmark frame.
pub fn rg_step(
    moas: &Moas,
    x: &FlatState,
    r: &Reference,
    gov: &mut GovernorState,
    cfg: &RgConfig,
) -> Result<StepOutcome, GovernorError> {
    if !gov.initialized {
        return Err(GovernorError::NotInitialized);
    }
    if cfg.bisection_iters == 0 {
        return Err(GovernorError::Config);
    }
    let r = clamp_reference(r, cfg.yaw_limit);
    let v_prev = gov.v_prev;
    let at = |l: f64| v_prev + (r - v_prev) * l;
    let lambda = if admissible(moas, x, &r) {
        1.0
    } else {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..cfg.bisection_iters {
            let mid = 0.5 * (lo + hi);
            if admissible(moas, x, &at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    };
    let v = if lambda == 1.0 { r } else { at(lambda) };
    gov.v_prev = v;
    Ok(StepOutcome { v, lambda, margin: margin(moas, x, &v) })
}

/// One logged control period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogRow {
    pub t: f64,
    pub x: FlatState,
    pub r: Reference,
    pub v: Reference,
    pub lambda: f64,
    pub margin: f64,
    pub g1: f64,
    pub g2: f64,
    pub z_c: f64,
    /// Index of the PoI whose landmark frame was enforced.
    pub poi: usize,
    pub roll: f64,
    pub pitch: f64,
    pub step_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub max_violation: f64,
    pub max_g1: f64,
    pub max_g2: f64,
    pub min_z_c: f64,
    pub max_speed: f64,
    pub max_accel: f64,
    pub max_tilt_deg: f64,
    /// Steps whose roll or pitch exceeded the attitude box used for tightening.
    pub tilt_exceedances: usize,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    pub governed_fraction: f64,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    /// Largest set residual over the run (recursive feasibility check).
    pub max_margin: f64,
    pub poi_switches: usize,
    pub grace_steps_used: usize,
    pub final_position: [f64; 3],
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub rows: Vec<LogRow>,
    pub summary: RunSummary,
}

impl RunLog {
    pub const HEADER: &'static str = "t,px,py,pz,yaw,vx,vy,vz,yaw_rate,r_x,r_y,r_z,r_yaw,v_x,v_y,v_z,v_yaw,lambda,margin,g1,g2,zC,poi,roll,pitch";

    /// CSV without timing columns, so identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.rows.len() * 300);
        s.push_str(Self::HEADER);
        s.push('\n');
        for r in &self.rows {
            let mut fields: Vec<String> = vec![format!("{:.3}", r.t)];
            fields.extend(r.x.iter().chain(r.r.iter()).chain(r.v.iter()).map(|v| format!("{v:.9}")));
            fields.extend([r.lambda, r.margin, r.g1, r.g2, r.z_c].iter().map(|v| format!("{v:.9}")));
            fields.push(r.poi.to_string());
            fields.push(format!("{:.9}", r.roll));
            fields.push(format!("{:.9}", r.pitch));
            s.push_str(&fields.join(","));
            s.push('\n');
        }
        s
    }
}

/// Inputs of [`run_closed_loop`] other than the set and plant.
pub struct RunSpec<'a> {
    pub cam: CameraModel,
    /// Desired reference (inertial) at time `t`.
    pub reference: &'a dyn Fn(f64) -> Reference,
    /// `(activation time, inertial position)`, sorted by time.
    pub pois: &'a [(f64, Vector3<f64>)],
    pub x0: FlatState,
    pub duration: f64,
    pub rg_on: bool,
    pub cfg: RgConfig,
    pub init: InitSearch,
    /// Attitude box assumed by the FoV tightening (rad).
    pub attitude_box: f64,
}

fn active_poi(pois: &[(f64, Vector3<f64>)], t: f64) -> usize {
    pois.iter().rposition(|p| p.0 <= t + 1e-12).unwrap_or(0)
}

/// Result of one [`GovernedLoop::step`], inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub x: FlatState,
    pub r: Reference,
    pub v: Reference,
    pub lambda: f64,
    pub margin: f64,
    pub g1: f64,
    pub g2: f64,
    pub z_c: f64,
    pub roll: f64,
    pub pitch: f64,
    pub acc: Vector3<f64>,
    /// PoI whose landmark frame was enforced.
    pub poi_id: usize,
    pub poi: Vector3<f64>,
    /// Wall time spent in the governor.
    pub seconds: f64,
}

/// Closed loop with the governor in front: owns the plant state and the
/// governor state, and handles PoI hand-over.
///
/// On a PoI change the previous physical reference is re-expressed in the
/// new landmark frame. If it is not admissible there, the old PoI keeps being
/// enforced for up to `grace_steps` periods, after which a fresh initial
/// reference is searched in the new frame.
#[derive(Debug, Clone)]
pub struct GovernedLoop<'a> {
    moas: &'a Moas,
    plant: &'a ClosedLoopModel,
    pub cam: CameraModel,
    pub cfg: RgConfig,
    pub init: InitSearch,
    pub rg_on: bool,
    x: FlatState,
    gov: GovernorState,
    poi_id: usize,
    poi: Vector3<f64>,
    grace_left: usize,
    pub switches: usize,
    pub grace_used: usize,
}

impl<'a> GovernedLoop<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        moas: &'a Moas,
        plant: &'a ClosedLoopModel,
        cam: CameraModel,
        cfg: RgConfig,
        init: InitSearch,
        rg_on: bool,
        x0: FlatState,
        poi: (usize, Vector3<f64>),
    ) -> Result<Self, GovernorError> {
        let mut lp = GovernedLoop {
            moas,
            plant,
            cam,
            cfg,
            init,
            rg_on,
            x: x0,
            gov: GovernorState::default(),
            poi_id: poi.0,
            poi: poi.1,
            grace_left: cfg.grace_steps,
            switches: 0,
            grace_used: 0,
        };
        lp.reset(x0)?;
        Ok(lp)
    }

    /// Put the vehicle at `x0` and search a fresh initial reference.
    pub fn reset(&mut self, x0: FlatState) -> Result<(), GovernorError> {
        let pose = Reference::new(x0[0], x0[1], x0[2], x0[3]);
        let (x_l, pose_l) = to_landmark_frame(&x0, &pose, &self.poi);
        let v0 = if self.rg_on { find_initial_reference(self.moas, &x_l, &self.init)? } else { clamp_reference(&pose_l, self.cfg.yaw_limit) };
        self.x = x0;
        self.gov = GovernorState::new(v0);
        self.grace_left = self.cfg.grace_steps;
        Ok(())
    }

    pub fn state(&self) -> &FlatState {
        &self.x
    }

    /// Enforced PoI `(id, position)`.
    pub fn poi(&self) -> (usize, Vector3<f64>) {
        (self.poi_id, self.poi)
    }

    /// Enforce `poi` from now on without any admissibility check; follow
    /// with [`GovernedLoop::reset`].
    pub fn force_poi(&mut self, poi: (usize, Vector3<f64>)) {
        let v = self.applied();
        self.poi_id = poi.0;
        self.poi = poi.1;
        self.gov.v_prev = to_landmark_frame(&self.x, &v, &poi.1).1;
    }

    /// Last applied reference, inertial frame.
    pub fn applied(&self) -> Reference {
        from_landmark_frame(&self.gov.v_prev, &self.poi)
    }

    /// Try to move enforcement to `wanted`. Returns an error only when the
    /// grace horizon is exhausted and the new PoI has no admissible reference.
    fn hand_over(&mut self, wanted: (usize, Vector3<f64>)) -> Result<(), GovernorError> {
        let v_phys = self.applied();
        let (x_new, v_new) = to_landmark_frame(&self.x, &v_phys, &wanted.1);
        let v_new = clamp_reference(&v_new, self.cfg.yaw_limit);
        let accept = |lp: &mut Self, v: Reference| {
            lp.poi_id = wanted.0;
            lp.poi = wanted.1;
            lp.gov.v_prev = v;
            lp.switches += 1;
            lp.grace_left = lp.cfg.grace_steps;
        };
        if !self.rg_on || admissible(self.moas, &x_new, &v_new) {
            accept(self, v_new);
        } else if self.grace_left == 0 {
            let v0 = find_initial_reference(self.moas, &x_new, &self.init)?;
            accept(self, v0);
        } else {
            self.grace_left -= 1;
            self.grace_used += 1;
        }
        Ok(())
    }

    /// One control period: govern `r` (inertial) against the requested PoI,
    /// evaluate the true constraints at the current state and advance the plant.
    pub fn step(&mut self, r: &Reference, wanted: (usize, Vector3<f64>)) -> Result<StepRecord, GovernorError> {
        let started = Instant::now();
        if wanted.0 != self.poi_id || wanted.1 != self.poi {
            self.hand_over(wanted)?;
        }
        let (x_l, r_l) = to_landmark_frame(&self.x, r, &self.poi);
        let out = if self.rg_on {
            rg_step(self.moas, &x_l, &r_l, &mut self.gov, &self.cfg)?
        } else {
            let r_c = clamp_reference(&r_l, self.cfg.yaw_limit);
            self.gov.v_prev = r_c;
            StepOutcome { v: r_c, lambda: 1.0, margin: margin(self.moas, &x_l, &r_c) }
        };
        let seconds = started.elapsed().as_secs_f64();
        let v = from_landmark_frame(&out.v, &self.poi);
        let x = self.x;
        let acc = self.plant.acceleration(&x, &v);
        let (roll, pitch) = self.plant.attitude(&x, &v).unwrap_or((f64::NAN, f64::NAN));
        let truth = true_constraint_eval(&x, (roll, pitch), &self.cam, &self.poi);
        self.x = self.plant.step(&x, &v);
        Ok(StepRecord {
            x,
            r: *r,
            v,
            lambda: out.lambda,
            margin: out.margin,
            g1: truth.g1,
            g2: truth.g2,
            z_c: truth.z_c,
            roll,
            pitch,
            acc,
            poi_id: self.poi_id,
            poi: self.poi,
            seconds,
        })
    }
}

/// Accumulates a [`RunSummary`] from step records.
#[derive(Debug, Clone)]
pub struct SummaryBuilder {
    sum: RunSummary,
    attitude_box: f64,
    lambda_sum: f64,
    governed: usize,
    time_sum: f64,
}

impl SummaryBuilder {
    pub fn new(attitude_box: f64) -> Self {
        let sum = RunSummary {
            lambda_min: 1.0,
            min_z_c: f64::INFINITY,
            max_violation: f64::NEG_INFINITY,
            max_g1: f64::NEG_INFINITY,
            max_g2: f64::NEG_INFINITY,
            max_margin: f64::NEG_INFINITY,
            ..Default::default()
        };
        SummaryBuilder { sum, attitude_box, lambda_sum: 0.0, governed: 0, time_sum: 0.0 }
    }

    pub fn push(&mut self, s: &StepRecord) {
        let sum = &mut self.sum;
        sum.steps += 1;
        sum.max_violation = sum.max_violation.max(s.g1).max(s.g2).max(-s.z_c);
        sum.max_g1 = sum.max_g1.max(s.g1);
        sum.max_g2 = sum.max_g2.max(s.g2);
        sum.min_z_c = sum.min_z_c.min(s.z_c);
        sum.max_speed = sum.max_speed.max(s.x.fixed_rows::<3>(4).amax());
        sum.max_accel = sum.max_accel.max(s.acc.amax());
        let tilt = s.roll.abs().max(s.pitch.abs());
        sum.max_tilt_deg = sum.max_tilt_deg.max(tilt.to_degrees());
        if tilt > self.attitude_box {
            sum.tilt_exceedances += 1;
        }
        sum.max_margin = sum.max_margin.max(s.margin);
        sum.lambda_min = sum.lambda_min.min(s.lambda);
        self.lambda_sum += s.lambda;
        if s.lambda < 1.0 {
            self.governed += 1;
        }
        self.time_sum += s.seconds;
        sum.max_step_ms = sum.max_step_ms.max(s.seconds * 1e3);
        sum.final_position = [s.x[0], s.x[1], s.x[2]];
    }

    pub fn finish(mut self, final_state: &FlatState, switches: usize, grace_used: usize) -> RunSummary {
        let n = self.sum.steps.max(1) as f64;
        self.sum.lambda_mean = self.lambda_sum / n;
        self.sum.governed_fraction = self.governed as f64 / n;
        self.sum.mean_step_ms = self.time_sum / n * 1e3;
        self.sum.final_position = [final_state[0], final_state[1], final_state[2]];
        self.sum.poi_switches = switches;
        self.sum.grace_steps_used = grace_used;
        self.sum
    }
}

/// Simulate the governed closed loop. Fails only when no admissible initial
/// reference exists; a failed PoI hand-over ends the run early and is
/// recorded in `summary.aborted`.
pub fn run_closed_loop(moas: &Moas, plant: &ClosedLoopModel, spec: &RunSpec) -> Result<RunLog, GovernorError> {
    assert!(!spec.pois.is_empty(), "at least one PoI");
    let ts = plant.params.ts;
    let steps = (spec.duration / ts).round() as usize;
    let first = active_poi(spec.pois, 0.0);
    let mut lp = GovernedLoop::new(moas, plant, spec.cam, spec.cfg, spec.init, spec.rg_on, spec.x0, (first, spec.pois[first].1))?;
    let mut log = RunLog::default();
    let mut acc = SummaryBuilder::new(spec.attitude_box);
    let mut aborted = None;
    for k in 0..steps {
        let t = k as f64 * ts;
        let wanted = active_poi(spec.pois, t);
        let s = match lp.step(&(spec.reference)(t), (wanted, spec.pois[wanted].1)) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(format!("t = {t:.2}: PoI {wanted} unreachable after grace horizon: {e}"));
                break;
            }
        };
        acc.push(&s);
        log.rows.push(LogRow {
            t,
            x: s.x,
            r: s.r,
            v: s.v,
            lambda: s.lambda,
            margin: s.margin,
            g1: s.g1,
            g2: s.g2,
            z_c: s.z_c,
            poi: s.poi_id,
            roll: s.roll,
            pitch: s.pitch,
            step_seconds: s.seconds,
        });
    }
    log.summary = acc.finish(lp.state(), lp.switches, lp.grace_used);
    log.summary.aborted = aborted;
    Ok(log)
}
