#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::OnceLock;

use nalgebra::Vector3;
use rand::Rng;
use visgov::moas::Moas;
use visgov::plant::{ClosedLoopModel, FlatState, Reference};
use visgov::scenario::{build_or_load_moas, Pipeline, ScenarioConfig};

pub struct Shared {
    pub cfg: ScenarioConfig,
    pub pipe: Pipeline,
    pub moas: Moas,
}

pub fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("visgov-cache")
}

/// The Table-I set, built once per test binary and shared through the cache.
pub fn table_one() -> &'static Shared {
    static SHARED: OnceLock<Shared> = OnceLock::new();
    SHARED.get_or_init(|| {
        let cfg = ScenarioConfig::circle();
        let pipe = Pipeline::new(&cfg).expect("pipeline");
        let (moas, _) = build_or_load_moas(&cfg, &pipe, &cache_dir()).expect("MOAS build");
        Shared { cfg, pipe, moas }
    })
}

pub fn extended(x: &FlatState, v: &Reference) -> Vec<f64> {
    x.iter().chain(v.iter()).copied().collect()
}

/// A random landmark-frame `(x, v)` pair, not necessarily admissible.
pub fn random_pair(rng: &mut impl Rng) -> (FlatState, Reference) {
    let mut x = FlatState::zeros();
    let mut v = Reference::zeros();
    for i in 0..3 {
        x[i] = rng.gen_range(-4.0..4.0);
        x[4 + i] = rng.gen_range(-1.5..1.5);
        v[i] = rng.gen_range(-4.0..4.0);
    }
    x[3] = rng.gen_range(-1.2..1.2);
    x[7] = rng.gen_range(-1.0..1.0);
    v[3] = rng.gen_range(-1.2..1.2);
    (x, v)
}

/// A member of the set: bisect from a deep interior point toward a random
/// pair, then take a random point of the admissible part of the segment.
pub fn random_member(moas: &Moas, rng: &mut impl Rng) -> (FlatState, Reference) {
    let v_c = Reference::new(-3.0, 0.0, 0.0, 0.0);
    let x_c = ClosedLoopModel::equilibrium(&v_c);
    assert!(moas.is_member(&extended(&x_c, &v_c)));
    loop {
        let (x, v) = random_pair(rng);
        let at = |s: f64| (x_c + (x - x_c) * s, v_c + (v - v_c) * s);
        let (mut lo, mut hi) = (0.0, 1.0);
        let (x1, v1) = at(1.0);
        if !moas.is_member(&extended(&x1, &v1)) {
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                let (xm, vm) = at(mid);
                if moas.is_member(&extended(&xm, &vm)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        } else {
            lo = 1.0;
        }
        // Bias toward the boundary, where invariance is hardest.
        let s = lo * (1.0 - rng.gen::<f64>().powi(3));
        let (xs, vs) = at(s);
        if moas.is_member(&extended(&xs, &vs)) {
            return (xs, vs);
        }
    }
}

pub fn poi_origin() -> Vector3<f64> {
    Vector3::zeros()
}
