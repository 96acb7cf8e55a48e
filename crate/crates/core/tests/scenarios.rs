mod common;

use std::fs;
use std::process::Command;

use visgov::moas::Moas;
use visgov::scenario::{
    build_or_load_moas, cache_path, run_scenario, simulate, CacheStatus, Pipeline, ReferenceSpec, ScenarioConfig,
};

fn visgov() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_visgov"));
    c.env("RUST_LOG", "warn");
    c
}

#[test]
fn cache_hit_and_rebuild_after_edit() {
    let shared = common::table_one();
    let dir = tempfile::tempdir().unwrap();
    let src = cache_path(&common::cache_dir(), &shared.pipe.provenance);
    let dst = cache_path(dir.path(), &shared.pipe.provenance);
    fs::copy(&src, &dst).unwrap();

    let (m, status) = build_or_load_moas(&shared.cfg, &shared.pipe, dir.path()).unwrap();
    assert_eq!(status, CacheStatus::Hit);
    assert_eq!(m, shared.moas);

    // Flip one coefficient: the checksum no longer matches and the set is rebuilt.
    let text = fs::read_to_string(&dst).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let row = &mut v["rows"][0][0];
    let old = row.as_f64().unwrap();
    *row = serde_json::json!(old + 0.5);
    fs::write(&dst, serde_json::to_string(&v).unwrap()).unwrap();
    assert!(Moas::load(&dst, Some(&shared.pipe.provenance)).is_err());
    let (m, status) = build_or_load_moas(&shared.cfg, &shared.pipe, dir.path()).unwrap();
    assert_eq!(status, CacheStatus::Rebuilt);
    assert_eq!(m.rows.len(), shared.moas.rows.len());
    for (a, b) in m.rows.iter().zip(&shared.moas.rows) {
        assert!(a.iter().zip(b).all(|(p, q)| (p - q).abs() <= 1e-12 * (1.0 + q.abs())));
    }
    assert_eq!(m.k_star, shared.moas.k_star);
}

#[test]
fn camera_change_changes_provenance() {
    let shared = common::table_one();
    let mut cfg = ScenarioConfig::circle();
    cfg.camera.alpha_h_deg = 40.0;
    let pipe = Pipeline::new(&cfg).unwrap();
    assert_ne!(pipe.provenance, shared.pipe.provenance);
    assert_ne!(cache_path(&common::cache_dir(), &pipe.provenance), cache_path(&common::cache_dir(), &shared.pipe.provenance));
    // The waypoint preset shares the set with the circle preset.
    let wp = Pipeline::new(&ScenarioConfig::waypoints()).unwrap();
    assert_eq!(wp.provenance, shared.pipe.provenance);
}

#[test]
fn runs_are_byte_identical() {
    let shared = common::table_one();
    let mut cfg = ScenarioConfig::circle();
    cfg.reference = ReferenceSpec::Random { center: [-3.0, 0.0, 0.0], radius: 1.5, hold: 1.0 };
    cfg.yaw_to_poi = true;
    cfg.duration = 8.0;
    cfg.seed = 42;
    let (a, sa) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    let (b, _) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(sa.run.max_violation <= 0.0);
    cfg.seed = 43;
    let (c, _) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    assert_ne!(a.to_csv(), c.to_csv());
}

#[test]
fn shifting_the_scene_shifts_the_trajectory() {
    let shared = common::table_one();
    let base = ScenarioConfig { duration: 10.0, ..ScenarioConfig::circle() };
    let shift = [5.0, -2.0, 1.0];
    let mut moved = base.clone();
    moved.reference = ReferenceSpec::Circle {
        radius: 1.5,
        omega: 2.0 * std::f64::consts::PI / 25.0,
        center: Some([-2.25 + shift[0], shift[1]]),
        z: shift[2],
        yaw: 0.0,
    };
    moved.pois[0].position = shift;
    let (a, _) = simulate(&base, &shared.pipe, &shared.moas).unwrap();
    let (b, _) = simulate(&moved, &shared.pipe, &shared.moas).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        for i in 0..3 {
            worst = worst.max((rb.x[i] - shift[i] - ra.x[i]).abs());
        }
        worst = worst.max((rb.x[3] - ra.x[3]).abs());
    }
    assert!(worst < 1e-4, "{worst}");
}

#[test]
fn scenario_outputs_are_written() {
    let shared = common::table_one();
    let dir = tempfile::tempdir().unwrap();
    let cfg = ScenarioConfig { duration: 2.0, ..ScenarioConfig::circle() };
    let s = run_scenario(&cfg, &shared.pipe, &shared.moas, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), s.run.steps + 1);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(json["k_star"], shared.moas.k_star);
    assert_eq!(json["steps"], s.run.steps);
}

#[test]
fn cli_build_and_run() {
    common::table_one();
    let out = visgov().arg("build-moas").arg("--cache-dir").arg(common::cache_dir()).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("Hit: k* = "), "{text}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("short.json");
    fs::write(&cfg, r#"{"duration": 1.5, "pois": [{"position": [0, 0, 0], "t": 0}]}"#).unwrap();
    let out = visgov()
        .args(["run", "--rg", "off", "--seed", "3"])
        .arg("--config")
        .arg(&cfg)
        .arg("--cache-dir")
        .arg(common::cache_dir())
        .arg("--out-dir")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["rg_on"], false);
    assert_eq!(summary["steps"], 150);
}

#[test]
fn cli_exit_codes() {
    common::table_one();
    let dir = tempfile::tempdir().unwrap();

    // Vehicle past the PoI with its back to it: no admissible start.
    let infeasible = dir.path().join("infeasible.json");
    fs::write(&infeasible, r#"{"duration": 1.0, "x0": [3, 0, 0, 0, 0, 0, 0, 0]}"#).unwrap();
    let out = visgov().arg("run").arg("--config").arg(&infeasible).arg("--cache-dir").arg(common::cache_dir())
        .arg("--out-dir").arg(dir.path().join("o1")).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    // A horizon cap far below the determination index.
    let short = dir.path().join("short_horizon.json");
    fs::write(&short, r#"{"moas": {"k_max": 2}}"#).unwrap();
    let out = visgov().arg("build-moas").arg("--config").arg(&short).arg("--cache-dir").arg(dir.path().join("c"))
        .output().unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"duration": -1}"#).unwrap();
    let out = visgov().arg("run").arg("--config").arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn waypoint_run_switches_pois_without_violation() {
    let shared = common::table_one();
    let (log, s) = simulate(&ScenarioConfig::waypoints(), &shared.pipe, &shared.moas).unwrap();
    assert_eq!(s.run.poi_switches, 2);
    assert!(s.run.max_violation <= 0.0);
    let used: std::collections::BTreeSet<usize> = log.rows.iter().map(|r| r.poi).collect();
    assert_eq!(used.into_iter().collect::<Vec<_>>(), vec![0, 1, 2]);
}
