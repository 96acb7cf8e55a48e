//! Finitely determined inner approximation of the maximal output admissible
//! set of the lifted system, and its online membership test.
//!
//! Everything is computed on the smallest coordinate subset of `Z` that the
//! constraint rows can reach under `Phi` (the observable closure). Rows
//! outside that subset are identically zero for every horizon.

use std::fs;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lift::{LiftedSystem, Monomial};
use crate::vis::{PolyConstraintSet, VisError};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum MoasError {
    #[error(transparent)]
    Constraints(#[from] VisError),
    #[error("constraint set is not compact: variable {0} has no two-sided linear bound")]
    NotCompact(usize),
    #[error("I - F is numerically singular (condition estimate {0:.3e})")]
    Singular(f64),
    #[error("interior point is not strictly admissible at steady state for constraint {constraint} (slack {slack:.3e})")]
    CenterNotInterior { constraint: usize, slack: f64 },
    #[error("not determined within k_max = {k_max}; largest LP excess {excess:.3e}")]
    NotDetermined { k_max: usize, excess: f64 },
    #[error("LP failed for constraint {constraint} at horizon {horizon}: {msg}")]
    Lp { constraint: usize, horizon: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed MOAS file: {0}")]
    Parse(String),
    #[error("provenance mismatch: expected {expected}, file has {found}")]
    HashMismatch { expected: String, found: String },
    #[error("MOAS file content does not match its checksum")]
    Corrupt,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoasConfig {
    /// Steady-state tightening in `(0, 1)`.
    pub epsilon: f64,
    pub k_max: usize,
    pub lp_tol: f64,
    /// When off, rows are only dropped by the norm test and every other row
    /// is kept.
    pub redundancy_check: bool,
}

impl Default for MoasConfig {
    fn default() -> Self {
        MoasConfig { epsilon: 0.01, k_max: 5000, lp_tol: 1e-7, redundancy_check: true }
    }
}

impl MoasConfig {
    pub fn validate(&self) -> Result<(), MoasError> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(MoasError::Config(format!("epsilon = {} not in (0, 1)", self.epsilon)));
        }
        if self.k_max == 0 {
            return Err(MoasError::Config("k_max must be at least 1".into()));
        }
        if !(self.lp_tol >= 0.0) {
            return Err(MoasError::Config(format!("lp_tol = {}", self.lp_tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("infeasible")]
    Infeasible,
    #[error("unbounded")]
    Unbounded,
    #[error("{0}")]
    Other(String),
}

/// Optimal value and maximizer of an LP.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub objective: f64,
    pub x: Vec<f64>,
}

/// `max c'y  s.t.  A y <= b,  lo <= y <= hi`.
pub trait LpSolver {
    fn maximize(&mut self, c: &[f64], a: &[Vec<f64>], b: &[f64], bounds: &[(f64, f64)]) -> Result<LpSolution, LpError>;
}

fn lp_error(e: microlp::Error) -> LpError {
    match e {
        microlp::Error::Infeasible => LpError::Infeasible,
        microlp::Error::Unbounded => LpError::Unbounded,
        e => LpError::Other(e.to_string()),
    }
}

fn sparse_row(row: &[f64], vars: &[microlp::Variable]) -> Vec<(microlp::Variable, f64)> {
    row.iter().zip(vars).filter(|(v, _)| **v != 0.0).map(|(&v, &x)| (x, v)).collect()
}

/// Simplex from the `microlp` crate on the full row set.
#[derive(Debug, Default, Clone, Copy)]
pub struct MicroLp;

impl LpSolver for MicroLp {
    fn maximize(&mut self, c: &[f64], a: &[Vec<f64>], b: &[f64], bounds: &[(f64, f64)]) -> Result<LpSolution, LpError> {
        use microlp::{ComparisonOp, OptimizationDirection, Problem};
        let mut p = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = c.iter().zip(bounds).map(|(&cj, &bj)| p.add_var(cj, bj)).collect();
        for (row, &rhs) in a.iter().zip(b) {
            p.add_constraint(sparse_row(row, &vars), ComparisonOp::Le, rhs);
        }
        let out = p.solve().map_err(lp_error)?;
        let sol = out.solution().ok_or_else(|| LpError::Other("interrupted".into()))?;
        Ok(LpSolution { objective: sol.objective(), x: vars.iter().map(|&v| sol[v]).collect() })
    }
}

/// Row generation on top of `microlp`: solve over a small working set, add
/// the most violated rows of the full system with a warm-started re-solve,
/// repeat until the maximizer is feasible. Rows that were active in recent
/// solves seed the next working set.
///
/// Intermediate optima are upper bounds of the true optimum, and the final
/// one is exact up to `feas_tol`.
#[derive(Debug, Clone)]
pub struct RowGeneration {
    pool: Vec<usize>,
    pub max_pool: usize,
    pub batch: usize,
    pub feas_tol: f64,
}

impl Default for RowGeneration {
    fn default() -> Self {
        RowGeneration { pool: Vec::new(), max_pool: 400, batch: 8, feas_tol: 1e-10 }
    }
}

impl LpSolver for RowGeneration {
    fn maximize(&mut self, c: &[f64], a: &[Vec<f64>], b: &[f64], bounds: &[(f64, f64)]) -> Result<LpSolution, LpError> {
        use microlp::{ComparisonOp, OptimizationDirection, Problem};
        let mut p = Problem::new(OptimizationDirection::Maximize);
        let vars: Vec<_> = c.iter().zip(bounds).map(|(&cj, &bj)| p.add_var(cj, bj)).collect();
        let mut in_set = vec![false; a.len()];
        let mut working = Vec::new();
        for &i in &self.pool {
            if i < a.len() && !in_set[i] {
                in_set[i] = true;
                working.push(i);
                p.add_constraint(sparse_row(&a[i], &vars), ComparisonOp::Le, b[i]);
            }
        }
        let mut sol = p.solve().map_err(lp_error)?.into_solution().map_err(|_| LpError::Other("interrupted".into()))?;
        let x = loop {
            let x: Vec<f64> = vars.iter().map(|&v| sol[v]).collect();
            let mut viol: Vec<(f64, usize)> = a
                .iter()
                .zip(b)
                .enumerate()
                .filter(|(i, _)| !in_set[*i])
                .map(|(i, (r, &o))| (dot(r, &x) - o, i))
                .filter(|v| v.0 > self.feas_tol)
                .collect();
            if viol.is_empty() {
                break x;
            }
            viol.sort_by(|p, q| q.0.total_cmp(&p.0).then(p.1.cmp(&q.1)));
            for &(_, i) in viol.iter().take(self.batch) {
                in_set[i] = true;
                working.push(i);
                sol = sol
                    .add_constraint(sparse_row(&a[i], &vars), ComparisonOp::Le, b[i])
                    .map_err(lp_error)?
                    .into_solution()
                    .map_err(|_| LpError::Other("interrupted".into()))?;
            }
        };
        let scale = 1e-7;
        let mut pool: Vec<usize> = working.iter().copied().filter(|&i| dot(&a[i], &x) >= b[i] - scale).collect();
        for &i in &self.pool {
            if pool.len() >= self.max_pool {
                break;
            }
            if i < a.len() && !pool.contains(&i) {
                pool.push(i);
            }
        }
        pool.truncate(self.max_pool);
        self.pool = pool;
        Ok(LpSolution { objective: sol.objective(), x })
    }
}

/// Where a MOAS row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowOrigin {
    pub constraint: usize,
    /// Propagation horizon; `None` for a steady-state row.
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildStats {
    pub lp_calls: usize,
    pub norm_skips: usize,
    pub seconds: f64,
}

/// Linear inequalities `rows * eta_S(z) <= offsets` over the support `S`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moas {
    pub version: u32,
    /// `(n, m, p)`.
    pub dims: (usize, usize, usize),
    pub epsilon: f64,
    pub k_star: usize,
    pub provenance: String,
    /// Indices into the full lifted vector `Z`.
    pub support: Vec<usize>,
    /// Variable-index tuple of each support coordinate.
    pub monomials: Vec<Vec<u8>>,
    pub rows: Vec<Vec<f64>>,
    pub offsets: Vec<f64>,
    pub origins: Vec<RowOrigin>,
    pub stats: BuildStats,
}

/// Steady-state rows over the support, `W` and the centering data.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// `(I - F)^{-1} G` restricted to the support.
    pub w: DMatrix<f64>,
    /// One row per constraint over the support (zero on the `Z_x` part).
    pub rows: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
    /// `c_i0 - C_i Z_c` at the center.
    pub slack: Vec<f64>,
}

/// The constraint rows restricted to the support, plus the reduced dynamics.
#[derive(Debug, Clone)]
pub struct Reduced {
    pub support: Vec<usize>,
    pub monomials: Vec<Monomial>,
    /// Number of support coordinates belonging to `Z_x`.
    pub sx: usize,
    pub phi: DMatrix<f64>,
    pub rows: Vec<DVector<f64>>,
    pub offsets: Vec<f64>,
    /// `|Z_j| <= bound_j` on the monomial manifold.
    pub bounds: Vec<f64>,
}

impl Reduced {
    pub fn new(sys: &LiftedSystem, set: &PolyConstraintSet) -> Result<Self, MoasError> {
        let lc = set.lift(sys)?;
        let seed: Vec<usize> = lc.rows.iter().flat_map(|r| r.iter().map(|e| e.0)).collect();
        let support = sys.observable_closure(seed);
        let sx = support.iter().filter(|&&k| k < sys.nx()).count();
        let mut local = vec![usize::MAX; sys.dim()];
        for (i, &k) in support.iter().enumerate() {
            local[k] = i;
        }
        let phi = sys.phi().submatrix(&support, &support);
        let rows = lc
            .rows
            .iter()
            .map(|r| {
                let mut v = DVector::zeros(support.len());
                for &(k, c) in r {
                    v[local[k]] = c;
                }
                v
            })
            .collect();
        let var_bounds = variable_bounds(set)?;
        let bounds = support
            .iter()
            .map(|&k| sys.monomials()[k].indices().iter().map(|&i| var_bounds[i as usize]).product())
            .collect();
        let monomials = support.iter().map(|&k| sys.monomials()[k].clone()).collect();
        Ok(Reduced { support, monomials, sx, phi, rows, offsets: lc.offsets, bounds })
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn f(&self) -> DMatrix<f64> {
        self.phi.view((0, 0), (self.sx, self.sx)).into_owned()
    }

    pub fn g(&self) -> DMatrix<f64> {
        self.phi.view((0, self.sx), (self.sx, self.len() - self.sx)).into_owned()
    }
}

/// Symmetric bound `max(|lo|, |hi|)` of each variable implied by single-variable
/// linear constraints.
pub fn variable_bounds(set: &PolyConstraintSet) -> Result<Vec<f64>, MoasError> {
    let n = set.n_vars;
    let mut hi = vec![f64::INFINITY; n];
    let mut lo = vec![f64::NEG_INFINITY; n];
    for c in &set.constraints {
        let terms: Vec<_> = c.poly.terms().filter(|(m, _)| m.degree() > 0).collect();
        if terms.len() != 1 || terms[0].0.degree() != 1 {
            continue;
        }
        let (m, a) = terms[0];
        let i = m.indices()[0] as usize;
        let b = -c.poly.constant_term() / a;
        if a > 0.0 {
            hi[i] = hi[i].min(b);
        } else {
            lo[i] = lo[i].max(b);
        }
    }
    (0..n)
        .map(|i| {
            if hi[i].is_finite() && lo[i].is_finite() {
                Ok(hi[i].abs().max(lo[i].abs()))
            } else {
                Err(MoasError::NotCompact(i))
            }
        })
        .collect()
}

/// Steady-state rows `C_i [W V; V] <= c_i0 - eps (c_i0 - C_i Z_c)`, where
/// `Z_c` is the steady-state lift of the interior point's reference.
pub fn steady_state_rows(
    red: &Reduced,
    set: &PolyConstraintSet,
    epsilon: f64,
) -> Result<SteadyState, MoasError> {
    let s = red.len();
    let sx = red.sx;
    let f = red.f();
    let g = red.g();
    let i_f = DMatrix::identity(sx, sx) - &f;
    let lu = i_f.clone().lu();
    let inv = lu.try_inverse().ok_or(MoasError::Singular(f64::INFINITY))?;
    let cond = i_f.abs().row_sum().max() * inv.abs().row_sum().max();
    if !cond.is_finite() || cond > 1e12 {
        return Err(MoasError::Singular(cond));
    }
    let w = &inv * &g;

    // Center: pure-input monomials of the interior point, x part at steady state.
    let zc_v = DVector::from_iterator(s - sx, (sx..s).map(|j| red.monomials[j].eval(&set.interior)));
    let zc_x = &w * &zc_v;
    let mut rows = Vec::new();
    let mut offsets = Vec::new();
    let mut slack = Vec::new();
    for (i, (r, &c0)) in red.rows.iter().zip(&red.offsets).enumerate() {
        let rx = r.rows(0, sx);
        let rv = r.rows(sx, s - sx);
        let steady = rx.transpose() * &w + rv.transpose();
        let value = (rx.transpose() * &zc_x)[0] + (rv.transpose() * &zc_v)[0];
        let sl = c0 - value;
        if sl <= 0.0 {
            return Err(MoasError::CenterNotInterior { constraint: i, slack: sl });
        }
        let mut row = DVector::zeros(s);
        row.rows_mut(sx, s - sx).copy_from(&steady.transpose());
        rows.push(row);
        offsets.push(c0 - epsilon * sl);
        slack.push(sl);
    }
    Ok(SteadyState { w, rows, offsets, slack })
}

/// Provenance hash of everything that determines the set.
pub fn provenance_hash(set: &PolyConstraintSet, phi_ext: &DMatrix<f64>, p: usize, cfg: &MoasConfig) -> String {
    let mut h = Sha256::new();
    h.update(FORMAT_VERSION.to_le_bytes());
    h.update(serde_json::to_string(&set.to_json()).expect("serializable").as_bytes());
    h.update((phi_ext.nrows() as u64).to_le_bytes());
    for v in phi_ext.iter() {
        h.update(v.to_bits().to_le_bytes());
    }
    h.update((p as u64).to_le_bytes());
    h.update(cfg.epsilon.to_bits().to_le_bytes());
    h.update(cfg.lp_tol.to_bits().to_le_bytes());
    h.update([cfg.redundancy_check as u8]);
    hex::encode(h.finalize())
}

/// Build the inner approximation with the default LP backend.
pub fn construct_moas(sys: &LiftedSystem, set: &PolyConstraintSet, cfg: &MoasConfig) -> Result<Moas, MoasError> {
    construct_moas_with(sys, set, cfg, &mut RowGeneration::default())
}

pub fn construct_moas_with(
    sys: &LiftedSystem,
    set: &PolyConstraintSet,
    cfg: &MoasConfig,
    lp: &mut impl LpSolver,
) -> Result<Moas, MoasError> {
    cfg.validate()?;
    let started = Instant::now();
    let red = Reduced::new(sys, set)?;
    let ss = steady_state_rows(&red, set, cfg.epsilon)?;
    let s = red.len();
    let sx = red.sx;
    let nc = red.rows.len();
    let f = red.f();

    // Work in scaled coordinates y_j = Z_j / bound_j so that y lies in [-1, 1].
    let scale = DVector::from_vec(red.bounds.clone());
    let lp_bounds = vec![(-1.0, 1.0); s];
    let normalize = |row: &DVector<f64>, off: f64| -> Option<(Vec<f64>, f64)> {
        let scaled = row.component_mul(&scale);
        let nrm = scaled.norm();
        if nrm < 1e-14 {
            return None;
        }
        Some((scaled.iter().map(|v| v / nrm).collect(), off / nrm))
    };

    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut origins = Vec::new();
    let mut stats = BuildStats::default();

    let mut push = |row: &DVector<f64>, off: f64, origin: RowOrigin, a: &mut Vec<Vec<f64>>, b: &mut Vec<f64>| -> Result<(), MoasError> {
        match normalize(row, off) {
            Some((r, o)) => {
                a.push(r);
                b.push(o);
                origins.push(origin);
                Ok(())
            }
            None if off >= 0.0 => Ok(()),
            None => Err(MoasError::CenterNotInterior { constraint: origin.constraint, slack: off }),
        }
    };
    for i in 0..nc {
        push(&red.rows[i], red.offsets[i], RowOrigin { constraint: i, horizon: Some(0) }, &mut a, &mut b)?;
    }
    for i in 0..nc {
        push(&ss.rows[i], ss.offsets[i], RowOrigin { constraint: i, horizon: None }, &mut a, &mut b)?;
    }

    // [I, -W] maps Z to its deviation from the steady-state image of V.
    let mut dev = DMatrix::zeros(sx, s);
    dev.view_mut((0, 0), (sx, sx)).fill_with_identity();
    dev.view_mut((0, sx), (sx, s - sx)).copy_from(&(-&ss.w));

    let mut prop: Vec<DVector<f64>> = red.rows.clone();
    let mut ex: Vec<DVector<f64>> = red.rows.iter().map(|r| r.rows(0, sx).into_owned()).collect();
    let mut k_star = None;
    let mut worst_excess = f64::NEG_INFINITY;
    // A constraint found redundant at horizon k stays redundant at every later
    // horizon: if Z satisfies horizons 0..k then Phi Z satisfies 0..k-1, and
    // the steady-state rows do not depend on Z_x. Settled constraints are
    // never propagated again.
    let mut settled = vec![false; nc];
    for k in 1..=cfg.k_max {
        let mut all_redundant = true;
        let mut added = Vec::new();
        let mut horizon_excess = f64::NEG_INFINITY;
        for i in 0..nc {
            if settled[i] {
                continue;
            }
            prop[i] = (prop[i].transpose() * &red.phi).transpose();
            ex[i] = (ex[i].transpose() * &f).transpose();
            // Sufficient test: the transient part cannot exceed the steady-state slack.
            let d = dev.tr_mul(&ex[i]);
            let transient: f64 = d.iter().zip(scale.iter()).map(|(v, s)| v.abs() * s).sum();
            if transient <= cfg.epsilon * ss.slack[i] * (1.0 - 1e-9) {
                stats.norm_skips += 1;
                settled[i] = true;
                continue;
            }
            let Some((row, off)) = normalize(&prop[i], red.offsets[i]) else {
                if red.offsets[i] >= 0.0 {
                    settled[i] = true;
                    continue;
                }
                return Err(MoasError::Lp { constraint: i, horizon: k, msg: "zero row with negative offset".into() });
            };
            if cfg.redundancy_check {
                stats.lp_calls += 1;
                let opt = lp
                    .maximize(&row, &a, &b, &lp_bounds)
                    .map_err(|e| MoasError::Lp { constraint: i, horizon: k, msg: e.to_string() })?
                    .objective;
                if opt <= off + cfg.lp_tol {
                    settled[i] = true;
                    continue;
                }
                worst_excess = worst_excess.max(opt - off);
                horizon_excess = horizon_excess.max(opt - off);
            }
            all_redundant = false;
            added.push((row, off, RowOrigin { constraint: i, horizon: Some(k) }));
        }
        if all_redundant {
            k_star = Some(k - 1);
            break;
        }
        log::debug!(
            "horizon {k}: {} rows added {:?}, excess {:.3e}, {} total, {} LPs, {:.1} s",
            added.len(),
            added.iter().map(|x| x.2.constraint).collect::<Vec<_>>(),
            horizon_excess,
            a.len() + added.len(),
            stats.lp_calls,
            started.elapsed().as_secs_f64()
        );
        for (row, off, o) in added {
            a.push(row);
            b.push(off);
            origins.push(o);
        }
    }
    let k_star = k_star.ok_or(MoasError::NotDetermined { k_max: cfg.k_max, excess: worst_excess })?;

    // Back to unscaled coordinates, unit norm.
    let mut rows = Vec::with_capacity(a.len());
    let mut offsets = Vec::with_capacity(a.len());
    for (r, &o) in a.iter().zip(&b) {
        let un: Vec<f64> = r.iter().zip(scale.iter()).map(|(v, s)| v / s).collect();
        let nrm = un.iter().map(|v| v * v).sum::<f64>().sqrt();
        rows.push(un.iter().map(|v| v / nrm).collect());
        offsets.push(o / nrm);
    }
    stats.seconds = started.elapsed().as_secs_f64();
    Ok(Moas {
        version: FORMAT_VERSION,
        dims: (sys.n, sys.m, sys.p),
        epsilon: cfg.epsilon,
        k_star,
        provenance: provenance_hash(set, sys.extended(), sys.p, cfg),
        support: red.support.clone(),
        monomials: red.monomials.iter().map(|m| m.indices().to_vec()).collect(),
        rows,
        offsets,
        origins,
        stats,
    })
}

#[derive(Serialize, Deserialize)]
struct MoasFile {
    #[serde(flatten)]
    moas: Moas,
    checksum: String,
}

impl Moas {
    pub fn nrows(&self) -> usize {
        self.rows.len()
    }

    /// Monomials of the support evaluated at `z`.
    pub fn lift(&self, z: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.monomials.iter().map(|m| m.iter().map(|&i| z[i as usize]).product::<f64>()));
    }

    /// Largest row residual at `z` (negative when strictly inside).
    pub fn margin(&self, z: &[f64]) -> f64 {
        let mut y = Vec::with_capacity(self.monomials.len());
        self.lift(z, &mut y);
        self.rows
            .iter()
            .zip(&self.offsets)
            .map(|(r, &o)| dot(r, &y) - o)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Membership with early exit.
    pub fn is_member(&self, z: &[f64]) -> bool {
        let mut y = Vec::with_capacity(self.monomials.len());
        self.lift(z, &mut y);
        self.rows.iter().zip(&self.offsets).all(|(r, &o)| dot(r, &y) <= o)
    }

    /// `(member, margin)` for the extended state `[x; v]`.
    pub fn contains(&self, x: &[f64], v: &[f64]) -> (bool, f64) {
        assert_eq!(x.len(), self.dims.0, "state dimension");
        assert_eq!(v.len(), self.dims.1, "reference dimension");
        let z: Vec<f64> = x.iter().chain(v).copied().collect();
        let m = self.margin(&z);
        (m <= 0.0, m)
    }

    fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(self).expect("serializable"));
        hex::encode(h.finalize())
    }

    pub fn save(&self, path: &Path) -> Result<(), MoasError> {
        let file = MoasFile { moas: self.clone(), checksum: self.checksum() };
        let text = serde_json::to_string(&file).map_err(|e| MoasError::Parse(e.to_string()))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load and check integrity; with `expected`, also check provenance.
    pub fn load(path: &Path, expected: Option<&str>) -> Result<Moas, MoasError> {
        let text = fs::read_to_string(path)?;
        let file: MoasFile = serde_json::from_str(&text).map_err(|e| MoasError::Parse(e.to_string()))?;
        if file.moas.version != FORMAT_VERSION {
            return Err(MoasError::Parse(format!("unsupported version {}", file.moas.version)));
        }
        if file.moas.checksum() != file.checksum {
            return Err(MoasError::Corrupt);
        }
        if let Some(h) = expected {
            if h != file.moas.provenance {
                return Err(MoasError::HashMismatch { expected: h.into(), found: file.moas.provenance });
            }
        }
        Ok(file.moas)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lift::extended_matrix;
    use crate::vis::{ConstraintKind, Poly, PolyConstraint};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bound(name: &str, var: usize, sign: f64, b: f64) -> PolyConstraint {
        PolyConstraint {
            name: name.into(),
            kind: ConstraintKind::Compactness,
            poly: Poly::var(var).scale(sign).add(&Poly::constant(-b)),
        }
    }

    /// `x+ = a x + b v`, `|x| <= 1`, `|v| <= 5`.
    fn toy(a: f64, b: f64) -> (LiftedSystem, PolyConstraintSet) {
        let phi = extended_matrix(&DMatrix::from_element(1, 1, a), &DMatrix::from_element(1, 1, b));
        let sys = LiftedSystem::new(&phi, 1, 1).unwrap();
        let set = PolyConstraintSet {
            n_vars: 2,
            constraints: vec![bound("x+", 0, 1.0, 1.0), bound("x-", 0, -1.0, 1.0), bound("v+", 1, 1.0, 5.0), bound("v-", 1, -1.0, 5.0)],
            degree: 1,
            interior: vec![0.0, 0.0],
        };
        (sys, set)
    }

    #[test]
    fn scalar_toy_matches_hand_computation() {
        // Steady state x = v, so the steady rows give |v| <= 0.99. Horizon 1
        // (-0.5 x + 1.5 v) is active; horizon 2 (0.25 x + 0.75 v) is implied.
        let (sys, set) = toy(-0.5, 1.5);
        let cfg = MoasConfig::default();
        let moas = construct_moas(&sys, &set, &cfg).unwrap();
        assert_eq!(moas.k_star, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let (x, v): (f64, f64) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let mut ok = v.abs() <= 1.0 - cfg.epsilon;
            let mut s: f64 = x;
            for _ in 0..100 {
                ok &= s.abs() <= 1.0;
                s = -0.5 * s + 1.5 * v;
            }
            let (member, _) = moas.contains(&[x], &[v]);
            let near = (x.abs() - 1.0).abs() < 1e-9 || (v.abs() - 0.99).abs() < 1e-9;
            assert!(member == ok || near, "x={x} v={v} member={member} oracle={ok}");
        }
    }

    #[test]
    fn contraction_needs_no_propagation() {
        let (sys, set) = toy(0.5, 0.5);
        let moas = construct_moas(&sys, &set, &MoasConfig::default()).unwrap();
        assert_eq!(moas.k_star, 0);
    }

    #[test]
    fn steady_state_fixed_point() {
        let (sys, set) = toy(-0.5, 1.5);
        let red = Reduced::new(&sys, &set).unwrap();
        let ss = steady_state_rows(&red, &set, 0.0).unwrap();
        let lhs = red.f() * &ss.w + red.g();
        assert!((lhs - &ss.w).amax() < 1e-12);
        // With no tightening the steady row is the constraint at equilibrium.
        assert!((ss.offsets[0] - red.offsets[0]).abs() < 1e-15);
    }

    #[test]
    fn smaller_epsilon_grows_the_set() {
        let (sys, set) = toy(-0.5, 1.5);
        let tight = construct_moas(&sys, &set, &MoasConfig { epsilon: 0.2, ..Default::default() }).unwrap();
        let loose = construct_moas(&sys, &set, &MoasConfig { epsilon: 0.05, ..Default::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let z = [rng.gen_range(-1.2..1.2), rng.gen_range(-1.2..1.2)];
            if tight.is_member(&z) {
                assert!(loose.is_member(&z));
            }
        }
    }

    #[test]
    fn unbounded_variable_rejected() {
        let (sys, mut set) = toy(0.5, 0.5);
        set.constraints.truncate(3);
        assert!(matches!(construct_moas(&sys, &set, &MoasConfig::default()), Err(MoasError::NotCompact(1))));
    }

    #[test]
    fn bad_config_rejected() {
        let (sys, set) = toy(0.5, 0.5);
        for cfg in [MoasConfig { epsilon: 0.0, ..Default::default() }, MoasConfig { k_max: 0, ..Default::default() }] {
            assert!(matches!(construct_moas(&sys, &set, &cfg), Err(MoasError::Config(_))));
        }
    }

    #[test]
    fn save_load_round_trip_and_integrity() {
        let (sys, set) = toy(-0.5, 1.5);
        let moas = construct_moas(&sys, &set, &MoasConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        moas.save(&path).unwrap();
        let back = Moas::load(&path, Some(&moas.provenance)).unwrap();
        assert_eq!(back, moas);
        for (a, b) in back.rows.iter().flatten().zip(moas.rows.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(matches!(Moas::load(&path, Some("00")), Err(MoasError::HashMismatch { .. })));

        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, &text[..text.len() / 2]).unwrap();
        assert!(matches!(Moas::load(&path, None), Err(MoasError::Parse(_))));

        let edited = text.replacen("\"offsets\":[", "\"offsets\":[0.5,", 1);
        fs::write(&path, edited).unwrap();
        assert!(matches!(Moas::load(&path, None), Err(MoasError::Corrupt)));
    }
}
