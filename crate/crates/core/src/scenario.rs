//! Scenario configuration, reference generation, MOAS caching and runs.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::governor::{run_closed_loop, to_landmark_frame, GovernorError, InitSearch, RgConfig, RunLog, RunSpec, RunSummary};
use crate::lift::{LiftError, LiftedSystem};
use crate::moas::{construct_moas, provenance_hash, Moas, MoasConfig, MoasError};
use crate::plant::{ClosedLoopModel, FlatState, PlantError, PlantParams, Reference};
use crate::trig::{RemezError, TrigApprox};
use crate::vis::{
    build_poly_constraints, certify_fov, tighten_fov, violation_bounds, CameraModel, CertifyOptions, ConstraintKind,
    ConstraintLimits, PolyConstraintSet, TightenedFov, VisError,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Remez(#[from] RemezError),
    #[error(transparent)]
    Vis(#[from] VisError),
    #[error(transparent)]
    Lift(#[from] LiftError),
    #[error(transparent)]
    Moas(#[from] MoasError),
    #[error(transparent)]
    Governor(#[from] GovernorError),
    #[error("reference time {0} outside [0, {1}]")]
    TimeRange(f64, f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ScenarioError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Governor(GovernorError::Infeasible(_)) => 2,
            ScenarioError::Moas(_) | ScenarioError::Lift(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraConfig {
    pub alpha_h_deg: f64,
    pub alpha_v_deg: f64,
    pub eps_z: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig { alpha_h_deg: 45.0, alpha_v_deg: 35.0, eps_z: 0.1 }
    }
}

impl CameraConfig {
    pub fn model(&self) -> Result<CameraModel, VisError> {
        CameraModel::new(self.alpha_h_deg.to_radians(), self.alpha_v_deg.to_radians(), self.eps_z)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TrigSource {
    /// Published coefficients.
    Table,
    Remez { sin_degree: u32, cos_degree: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tightening {
    /// Closed-form bounds only.
    Closed,
    /// Closed-form bounds, then shrunk until the sampled worst case fits.
    Certified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReferenceSpec {
    /// `[R cos(wt + pi/2) + cx, R sin(wt + pi/2) + cy, z, yaw]`.
    Circle {
        radius: f64,
        omega: f64,
        #[serde(default)]
        center: Option<[f64; 2]>,
        #[serde(default)]
        z: f64,
        #[serde(default)]
        yaw: f64,
    },
    /// Rest-to-rest minimum-jerk segments through the points.
    Waypoints {
        points: Vec<[f64; 3]>,
        #[serde(default)]
        durations: Option<Vec<f64>>,
        #[serde(default = "default_total")]
        total_duration: f64,
        /// 3 (cubic) or 5 (minimum-jerk).
        #[serde(default = "default_order")]
        order: u32,
    },
    /// CSV with columns `t,x,y,z,yaw`, linearly interpolated.
    File { path: PathBuf },
    /// Piecewise-constant random poses around `center`, seeded.
    Random {
        center: [f64; 3],
        radius: f64,
        hold: f64,
    },
    /// Live pilot input; `initial` is used until the first command arrives.
    Teleop { initial: [f64; 4] },
}

fn default_total() -> f64 {
    25.0
}

fn default_order() -> u32 {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoiEntry {
    /// Activation time; when absent for a waypoint reference, the start of
    /// the segment with the same index.
    #[serde(default)]
    pub t: Option<f64>,
    pub position: [f64; 3],
}

/// Everything needed to build the set and run a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub plant: PlantParams,
    pub camera: CameraConfig,
    pub trig: TrigSource,
    pub attitude_box_deg: f64,
    pub tightening: Tightening,
    pub certify: CertifyOptions,
    pub limits: ConstraintLimits,
    pub degree: usize,
    pub moas: MoasConfig,
    pub rg: RgConfig,
    pub init: InitSearch,
    pub reference: ReferenceSpec,
    pub pois: Vec<PoiEntry>,
    pub duration: f64,
    pub rg_on: bool,
    /// Initial flat state; defaults to rest at the reference pose at t = 0.
    pub x0: Option<[f64; 8]>,
    /// Yaw of waypoint references points at the active PoI.
    pub yaw_to_poi: bool,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig::circle()
    }
}

impl ScenarioConfig {
    /// Single PoI at the origin, circular reference of radius 1.5 m.
    pub fn circle() -> Self {
        ScenarioConfig {
            plant: PlantParams::default(),
            camera: CameraConfig::default(),
            trig: TrigSource::Table,
            attitude_box_deg: 4.0,
            tightening: Tightening::Certified,
            certify: CertifyOptions::default(),
            limits: ConstraintLimits::default(),
            degree: 4,
            moas: MoasConfig::default(),
            rg: RgConfig::default(),
            init: InitSearch::default(),
            reference: ReferenceSpec::Circle {
                radius: 1.5,
                omega: 2.0 * std::f64::consts::PI / 25.0,
                center: None,
                z: 0.0,
                yaw: 0.0,
            },
            pois: vec![PoiEntry { t: Some(0.0), position: [0.0, 0.0, 0.0] }],
            duration: 25.0,
            rg_on: true,
            x0: None,
            yaw_to_poi: false,
            seed: 0,
        }
    }

    /// Three waypoint segments, one PoI per segment, yaw facing the PoI.
    pub fn waypoints() -> Self {
        ScenarioConfig {
            reference: ReferenceSpec::Waypoints {
                points: vec![[0.0, 0.0, 0.0], [1.2, 0.8, 0.0], [3.0, -2.0, 0.0], [5.0, -1.0, 0.0]],
                durations: None,
                total_duration: 25.0,
                order: 5,
            },
            pois: vec![
                PoiEntry { t: None, position: [2.5, 1.5, 0.0] },
                PoiEntry { t: None, position: [4.5, -3.0, 0.0] },
                PoiEntry { t: None, position: [5.5, -1.0, 0.0] },
            ],
            duration: 35.0,
            yaw_to_poi: true,
            ..ScenarioConfig::circle()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path)?;
        let cfg: ScenarioConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.duration > 0.0) {
            return Err(ScenarioError::Config(format!("duration must be positive, got {}", self.duration)));
        }
        if self.pois.is_empty() {
            return Err(ScenarioError::Config("at least one PoI is required".into()));
        }
        if let ReferenceSpec::Waypoints { points, durations, total_duration, order } = &self.reference {
            if *order != 3 && *order != 5 {
                return Err(ScenarioError::Config(format!("waypoint order must be 3 or 5, got {order}")));
            }
            if points.len() < 2 {
                return Err(ScenarioError::Config("waypoint reference needs at least two points".into()));
            }
            if let Some(d) = durations {
                if d.len() != points.len() - 1 || d.iter().any(|&x| !(x > 0.0)) {
                    return Err(ScenarioError::Config("segment durations must be positive, one per segment".into()));
                }
            } else if !(*total_duration > 0.0) {
                return Err(ScenarioError::Config("total_duration must be positive".into()));
            }
        }
        if let ReferenceSpec::Random { hold, .. } = &self.reference {
            if !(*hold > 0.0) {
                return Err(ScenarioError::Config("hold must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Rest-to-rest minimum-jerk blend at phase `s` in [0, 1].
pub fn min_jerk(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
}

/// Rest-to-rest cubic blend (zero end velocity only).
pub fn cubic_blend(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Time-indexed reference source.
#[derive(Debug, Clone)]
pub struct ReferenceGen {
    spec: ReferenceSpec,
    duration: f64,
    /// Segment boundaries for waypoint references.
    times: Vec<f64>,
    samples: Vec<(f64, Reference)>,
    pois: Vec<(f64, Vector3<f64>)>,
    yaw_to_poi: bool,
}

impl ReferenceGen {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        let mut times = Vec::new();
        let mut samples = Vec::new();
        match &cfg.reference {
            ReferenceSpec::Waypoints { points, durations, total_duration, .. } => {
                let d: Vec<f64> = match durations {
                    Some(d) => d.clone(),
                    None => {
                        let lens: Vec<f64> = points
                            .windows(2)
                            .map(|w| (0..3).map(|i| (w[1][i] - w[0][i]).powi(2)).sum::<f64>().sqrt())
                            .collect();
                        let total: f64 = lens.iter().sum();
                        if total <= 0.0 {
                            vec![total_duration / lens.len() as f64; lens.len()]
                        } else {
                            lens.iter().map(|l| total_duration * l / total).collect()
                        }
                    }
                };
                times.push(0.0);
                for di in d {
                    times.push(times.last().unwrap() + di);
                }
            }
            ReferenceSpec::File { path } => {
                let text = fs::read_to_string(path)?;
                for (ln, line) in text.lines().enumerate() {
                    let f: Vec<&str> = line.split(',').map(str::trim).collect();
                    let parsed: Result<Vec<f64>, _> = f.iter().map(|s| s.parse::<f64>()).collect();
                    match parsed {
                        Ok(v) if v.len() == 5 => samples.push((v[0], Reference::new(v[1], v[2], v[3], v[4]))),
                        _ if ln == 0 => continue,
                        _ => return Err(ScenarioError::Config(format!("{}:{}: expected t,x,y,z,yaw", path.display(), ln + 1))),
                    }
                }
                if samples.is_empty() {
                    return Err(ScenarioError::Config(format!("{} has no samples", path.display())));
                }
            }
            ReferenceSpec::Random { center, radius, hold } => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
                let mut t = 0.0;
                while t <= cfg.duration {
                    let r = Reference::new(
                        center[0] + rng.gen_range(-radius..=*radius),
                        center[1] + rng.gen_range(-radius..=*radius),
                        center[2] + rng.gen_range(-radius..=*radius) * 0.5,
                        rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                    );
                    samples.push((t, r));
                    t += hold;
                }
            }
            _ => {}
        }
        let mut pois = Vec::new();
        for (i, p) in cfg.pois.iter().enumerate() {
            let t = match p.t {
                Some(t) => t,
                None => *times.get(i).ok_or_else(|| ScenarioError::Config(format!("PoI {i} has no activation time")))?,
            };
            pois.push((t, Vector3::from(p.position)));
        }
        if pois.windows(2).any(|w| w[1].0 < w[0].0) {
            return Err(ScenarioError::Config("PoI activation times must be non-decreasing".into()));
        }
        Ok(ReferenceGen { spec: cfg.reference.clone(), duration: cfg.duration, times, samples, pois, yaw_to_poi: cfg.yaw_to_poi })
    }

    pub fn pois(&self) -> &[(f64, Vector3<f64>)] {
        &self.pois
    }

    pub fn segment_times(&self) -> &[f64] {
        &self.times
    }

    fn active_poi(&self, t: f64) -> Vector3<f64> {
        let i = self.pois.iter().rposition(|p| p.0 <= t + 1e-12).unwrap_or(0);
        self.pois[i].1
    }

    /// Desired reference at time `t`.
    pub fn sample(&self, t: f64) -> Result<Reference, ScenarioError> {
        if !(0.0..=self.duration + 1e-9).contains(&t) {
            return Err(ScenarioError::TimeRange(t, self.duration));
        }
        let r = match &self.spec {
            ReferenceSpec::Circle { radius, omega, center, z, yaw } => {
                let c = center.unwrap_or([-1.5 * radius, 0.0]);
                let a = omega * t + std::f64::consts::FRAC_PI_2;
                Reference::new(radius * a.cos() + c[0], radius * a.sin() + c[1], *z, *yaw)
            }
            ReferenceSpec::Waypoints { points, order, .. } => {
                let seg = self.times.windows(2).position(|w| t < w[1]).unwrap_or(points.len() - 2);
                let (t0, t1) = (self.times[seg], self.times[seg + 1]);
                let phase = (t - t0) / (t1 - t0);
                let s = if *order == 3 { cubic_blend(phase) } else { min_jerk(phase) };
                let (a, b) = (points[seg], points[seg + 1]);
                let p = [0, 1, 2].map(|i| a[i] + (b[i] - a[i]) * s);
                Reference::new(p[0], p[1], p[2], 0.0)
            }
            ReferenceSpec::File { .. } => {
                let s = &self.samples;
                let k = s.partition_point(|e| e.0 <= t);
                if k == 0 {
                    s[0].1
                } else if k == s.len() {
                    s[k - 1].1
                } else {
                    let (ta, ra) = s[k - 1];
                    let (tb, rb) = s[k];
                    ra + (rb - ra) * ((t - ta) / (tb - ta))
                }
            }
            ReferenceSpec::Random { .. } => {
                let k = self.samples.partition_point(|e| e.0 <= t).max(1);
                self.samples[k - 1].1
            }
            ReferenceSpec::Teleop { initial } => Reference::from(*initial),
        };
        Ok(if self.yaw_to_poi { self.face_poi(r, t) } else { r })
    }

    fn face_poi(&self, mut r: Reference, t: f64) -> Reference {
        let p = self.active_poi(t);
        r[3] = (p.y - r[1]).atan2(p.x - r[0]).clamp(-std::f64::consts::FRAC_PI_2, std::f64::consts::FRAC_PI_2);
        r
    }
}

/// Plant, trig surrogate, FoV and constraint set derived from a config.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub plant: ClosedLoopModel,
    pub approx: TrigApprox,
    pub cam: CameraModel,
    pub fov: TightenedFov,
    pub set: PolyConstraintSet,
    pub provenance: String,
}

impl Pipeline {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let plant = ClosedLoopModel::new(cfg.plant)?;
        let approx = match cfg.trig {
            TrigSource::Table => TrigApprox::table(),
            TrigSource::Remez { sin_degree, cos_degree } => TrigApprox::remez(sin_degree, cos_degree)?,
        };
        let cam = cfg.camera.model()?;
        let att = cfg.attitude_box_deg.to_radians();
        let mut fov = tighten_fov(&cam, violation_bounds(&approx, att, att, &cam)?)?;
        if cfg.tightening == Tightening::Certified {
            fov = certify_fov(&approx, &cam, att, &fov, &cfg.certify)?;
        }
        let mut limits = cfg.limits;
        limits.v_max = cfg.plant.v_max;
        limits.a_max = cfg.plant.a_max;
        let set = build_poly_constraints(&fov, &approx, &limits, &plant, cfg.degree)?;
        let provenance = provenance_hash(&set, &plant.extended(), cfg.degree, &cfg.moas);
        Ok(Pipeline { plant, approx, cam, fov, set, provenance })
    }

    pub fn lifted(&self, degree: usize) -> Result<LiftedSystem, ScenarioError> {
        Ok(LiftedSystem::new(&self.plant.extended(), 4, degree)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Built,
    Rebuilt,
}

pub fn cache_path(cache_dir: &Path, provenance: &str) -> PathBuf {
    cache_dir.join(format!("moas-{}.json", &provenance[..16.min(provenance.len())]))
}

/// Load the set for this configuration from `cache_dir`, or build and store it.
pub fn build_or_load_moas(
    cfg: &ScenarioConfig,
    pipe: &Pipeline,
    cache_dir: &Path,
) -> Result<(Moas, CacheStatus), ScenarioError> {
    let path = cache_path(cache_dir, &pipe.provenance);
    let mut status = CacheStatus::Built;
    if path.exists() {
        match Moas::load(&path, Some(&pipe.provenance)) {
            Ok(m) => return Ok((m, CacheStatus::Hit)),
            Err(e) => {
                log::warn!("discarding cached set {}: {e}", path.display());
                status = CacheStatus::Rebuilt;
            }
        }
    }
    let sys = pipe.lifted(cfg.degree)?;
    let moas = construct_moas(&sys, &pipe.set, &cfg.moas)?;
    moas.save(&path)?;
    Ok((moas, status))
}

/// Everything written next to the trajectory log.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSummary {
    #[serde(flatten)]
    pub run: RunSummary,
    pub rg_on: bool,
    pub k_star: usize,
    pub moas_rows: usize,
    pub provenance: String,
    pub alpha_h_eff_deg: f64,
    pub alpha_v_eff_deg: f64,
    pub eps_z_eff: f64,
    pub goal_error: Option<f64>,
    /// Largest value of the tightened polynomial bearing/distance
    /// constraints along the run (positive means outside the reduced FoV).
    pub max_tightened_visibility: f64,
}

pub fn initial_state(cfg: &ScenarioConfig, gen: &ReferenceGen) -> Result<FlatState, ScenarioError> {
    Ok(match cfg.x0 {
        Some(x) => FlatState::from(x),
        None => ClosedLoopModel::equilibrium(&gen.sample(0.0)?),
    })
}

/// Run one scenario in memory.
pub fn simulate(cfg: &ScenarioConfig, pipe: &Pipeline, moas: &Moas) -> Result<(RunLog, ScenarioSummary), ScenarioError> {
    let gen = ReferenceGen::new(cfg)?;
    let x0 = initial_state(cfg, &gen)?;
    let reference = |t: f64| gen.sample(t.min(cfg.duration)).expect("t within duration");
    let spec = RunSpec {
        cam: pipe.cam,
        reference: &reference,
        pois: gen.pois(),
        x0,
        duration: cfg.duration,
        rg_on: cfg.rg_on,
        cfg: cfg.rg,
        init: cfg.init,
        attitude_box: cfg.attitude_box_deg.to_radians(),
    };
    let log = run_closed_loop(moas, &pipe.plant, &spec)?;
    let goal_error = match &cfg.reference {
        ReferenceSpec::Waypoints { points, .. } => {
            let g = points.last().expect("validated");
            let f = log.summary.final_position;
            Some((0..3).map(|i| (f[i] - g[i]).powi(2)).sum::<f64>().sqrt())
        }
        _ => None,
    };
    let max_tightened_visibility = tightened_visibility(&pipe.set, &log, gen.pois());
    let summary = ScenarioSummary {
        run: log.summary.clone(),
        rg_on: cfg.rg_on,
        k_star: moas.k_star,
        moas_rows: moas.nrows(),
        provenance: moas.provenance.clone(),
        alpha_h_eff_deg: pipe.fov.alpha_h_eff.to_degrees(),
        alpha_v_eff_deg: pipe.fov.alpha_v_eff.to_degrees(),
        eps_z_eff: pipe.fov.eps_z_eff,
        goal_error,
        max_tightened_visibility,
    };
    Ok((log, summary))
}

/// Largest bearing/distance polynomial value over a logged run, each row
/// evaluated in the landmark frame of the PoI it enforced.
pub fn tightened_visibility(set: &PolyConstraintSet, log: &RunLog, pois: &[(f64, Vector3<f64>)]) -> f64 {
    let vis: Vec<_> = set
        .constraints
        .iter()
        .filter(|c| matches!(c.kind, ConstraintKind::Bearing | ConstraintKind::Distance))
        .collect();
    let mut worst = f64::NEG_INFINITY;
    for row in &log.rows {
        let poi = pois[row.poi].1;
        let (x, v) = to_landmark_frame(&row.x, &row.v, &poi);
        let z: Vec<f64> = x.iter().chain(v.iter()).copied().collect();
        for c in &vis {
            worst = worst.max(c.poly.eval(&z));
        }
    }
    worst
}

/// Run and write `trajectory.csv` and `summary.json` into `out_dir`.
pub fn run_scenario(
    cfg: &ScenarioConfig,
    pipe: &Pipeline,
    moas: &Moas,
    out_dir: &Path,
) -> Result<ScenarioSummary, ScenarioError> {
    let (log, summary) = simulate(cfg, pipe, moas)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("trajectory.csv"), log.to_csv())?;
    fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_starts_at_top() {
        let gen = ReferenceGen::new(&ScenarioConfig::circle()).unwrap();
        let r = gen.sample(0.0).unwrap();
        assert!((r - Reference::new(-2.25, 1.5, 0.0, 0.0)).amax() < 1e-12);
        // Quarter period later the reference is at the far left.
        let r = gen.sample(25.0 / 4.0).unwrap();
        assert!((r - Reference::new(-3.75, 0.0, 0.0, 0.0)).amax() < 1e-12);
    }

    #[test]
    fn out_of_range_time_is_an_error() {
        let gen = ReferenceGen::new(&ScenarioConfig::circle()).unwrap();
        assert!(matches!(gen.sample(-0.1), Err(ScenarioError::TimeRange(..))));
        assert!(matches!(gen.sample(25.1), Err(ScenarioError::TimeRange(..))));
    }

    #[test]
    fn waypoints_pass_through_points() {
        let cfg = ScenarioConfig::waypoints();
        let gen = ReferenceGen::new(&cfg).unwrap();
        let ReferenceSpec::Waypoints { points, .. } = &cfg.reference else { unreachable!() };
        let times = gen.segment_times().to_vec();
        assert_eq!(times.len(), 4);
        assert!((times[3] - 25.0).abs() < 1e-12);
        for (t, p) in times.iter().zip(points) {
            let r = gen.sample(*t).unwrap();
            for i in 0..3 {
                assert!((r[i] - p[i]).abs() < 1e-12, "t={t}: {r:?} vs {p:?}");
            }
        }
        // Past the last segment the goal is held.
        let r = gen.sample(30.0).unwrap();
        assert!((r[0] - 5.0).abs() < 1e-12 && (r[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn waypoint_segments_split_by_distance() {
        let gen = ReferenceGen::new(&ScenarioConfig::waypoints()).unwrap();
        let t = gen.segment_times();
        let d = [(1.2f64.powi(2) + 0.64).sqrt(), (1.8f64.powi(2) + 2.8f64.powi(2)).sqrt(), 5f64.sqrt()];
        let total: f64 = d.iter().sum();
        for i in 0..3 {
            assert!((t[i + 1] - t[i] - 25.0 * d[i] / total).abs() < 1e-12);
        }
    }

    #[test]
    fn waypoint_yaw_faces_active_poi() {
        let cfg = ScenarioConfig::waypoints();
        let gen = ReferenceGen::new(&cfg).unwrap();
        let r = gen.sample(0.0).unwrap();
        assert!((r[3] - (1.5f64).atan2(2.5)).abs() < 1e-12);
        let t1 = gen.segment_times()[1];
        let r = gen.sample(t1).unwrap();
        assert!((r[3] - (-3.8f64).atan2(3.3)).abs() < 1e-12);
        assert_eq!(gen.pois()[1].0, t1);
    }

    #[test]
    fn equal_endpoints_give_constant_reference() {
        let cfg = ScenarioConfig {
            reference: ReferenceSpec::Waypoints { points: vec![[1.0, 2.0, 0.5], [1.0, 2.0, 0.5]], durations: None, total_duration: 5.0, order: 5 },
            yaw_to_poi: false,
            pois: vec![PoiEntry { t: Some(0.0), position: [0.0; 3] }],
            duration: 5.0,
            ..ScenarioConfig::circle()
        };
        let gen = ReferenceGen::new(&cfg).unwrap();
        for k in 0..=50 {
            let r = gen.sample(k as f64 * 0.1).unwrap();
            assert_eq!(r, Reference::new(1.0, 2.0, 0.5, 0.0));
        }
    }

    #[test]
    fn blends_are_rest_to_rest() {
        let h = 1e-5;
        for f in [min_jerk as fn(f64) -> f64, cubic_blend] {
            assert_eq!(f(0.0), 0.0);
            assert_eq!(f(1.0), 1.0);
            assert!(((f(h) - f(0.0)) / h).abs() < 1e-4);
            assert!(((f(1.0) - f(1.0 - h)) / h).abs() < 1e-4);
            assert!((f(0.5) - 0.5).abs() < 1e-15);
        }
        // Minimum jerk also starts and ends with zero acceleration.
        let acc = |s: f64| (min_jerk(s + h) - 2.0 * min_jerk(s) + min_jerk(s - h)) / (h * h);
        assert!(acc(h).abs() < 1e-3 && acc(1.0 - h).abs() < 1e-3);
    }

    #[test]
    fn file_reference_interpolates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        fs::write(&path, "t,x,y,z,yaw\n0,0,0,0,0\n2,2,-4,0,0.5\n").unwrap();
        let cfg = ScenarioConfig { reference: ReferenceSpec::File { path }, duration: 3.0, ..ScenarioConfig::circle() };
        let gen = ReferenceGen::new(&cfg).unwrap();
        assert!((gen.sample(1.0).unwrap() - Reference::new(1.0, -2.0, 0.0, 0.25)).amax() < 1e-12);
        assert_eq!(gen.sample(3.0).unwrap(), Reference::new(2.0, -4.0, 0.0, 0.5));
    }

    #[test]
    fn bad_file_reference_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.csv");
        fs::write(&path, "t,x,y,z,yaw\n0,0,0,0\n").unwrap();
        let cfg = ScenarioConfig { reference: ReferenceSpec::File { path }, ..ScenarioConfig::circle() };
        assert!(matches!(ReferenceGen::new(&cfg), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn random_reference_depends_only_on_seed() {
        let mk = |seed| ScenarioConfig {
            reference: ReferenceSpec::Random { center: [-2.0, 0.0, 0.0], radius: 1.0, hold: 0.5 },
            seed,
            ..ScenarioConfig::circle()
        };
        let a = ReferenceGen::new(&mk(7)).unwrap();
        let b = ReferenceGen::new(&mk(7)).unwrap();
        let c = ReferenceGen::new(&mk(8)).unwrap();
        let ts: Vec<f64> = (0..100).map(|k| k as f64 * 0.25).collect();
        let sa: Vec<_> = ts.iter().map(|&t| a.sample(t).unwrap()).collect();
        assert_eq!(sa, ts.iter().map(|&t| b.sample(t).unwrap()).collect::<Vec<_>>());
        assert_ne!(sa, ts.iter().map(|&t| c.sample(t).unwrap()).collect::<Vec<_>>());
        // Piecewise constant over each hold interval.
        assert_eq!(a.sample(0.5).unwrap(), a.sample(0.99).unwrap());
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let cfg = ScenarioConfig::waypoints();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        let minimal: ScenarioConfig = serde_json::from_str(r#"{"rg_on": false}"#).unwrap();
        assert_eq!(minimal, ScenarioConfig { rg_on: false, ..ScenarioConfig::circle() });
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let bad = [
            ScenarioConfig { duration: 0.0, ..ScenarioConfig::circle() },
            ScenarioConfig { pois: vec![], ..ScenarioConfig::circle() },
            ScenarioConfig {
                reference: ReferenceSpec::Waypoints { points: vec![[0.0; 3]], durations: None, total_duration: 5.0, order: 5 },
                ..ScenarioConfig::circle()
            },
            ScenarioConfig {
                reference: ReferenceSpec::Waypoints { points: vec![[0.0; 3], [1.0; 3]], durations: Some(vec![1.0, 2.0]), total_duration: 5.0, order: 5 },
                ..ScenarioConfig::circle()
            },
            ScenarioConfig {
                reference: ReferenceSpec::Waypoints { points: vec![[0.0; 3], [1.0; 3]], durations: None, total_duration: 5.0, order: 4 },
                ..ScenarioConfig::circle()
            },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(ScenarioError::Config(_))), "{cfg:?}");
        }
        let unsorted = ScenarioConfig {
            pois: vec![PoiEntry { t: Some(3.0), position: [0.0; 3] }, PoiEntry { t: Some(1.0), position: [0.0; 3] }],
            ..ScenarioConfig::circle()
        };
        assert!(matches!(ReferenceGen::new(&unsorted), Err(ScenarioError::Config(_))));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ScenarioError::Governor(GovernorError::Infeasible("x".into())).exit_code(), 2);
        assert_eq!(ScenarioError::Moas(MoasError::Config("x".into())).exit_code(), 3);
        assert_eq!(ScenarioError::Config("x".into()).exit_code(), 1);
    }

    #[test]
    fn pipeline_reproduces_certified_fov() {
        let pipe = Pipeline::new(&ScenarioConfig::circle()).unwrap();
        assert!((pipe.fov.alpha_h_eff.to_degrees() - 39.69).abs() < 0.01);
        assert!((pipe.fov.alpha_v_eff.to_degrees() - 28.23).abs() < 0.01);
        assert_eq!(pipe.set.len(), 35);
        let closed = Pipeline::new(&ScenarioConfig { tightening: Tightening::Closed, ..ScenarioConfig::circle() }).unwrap();
        assert!(closed.fov.alpha_h_eff > pipe.fov.alpha_h_eff);
        assert_ne!(closed.provenance, pipe.provenance);
    }
}
