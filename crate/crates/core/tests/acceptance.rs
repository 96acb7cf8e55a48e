//! Acceptance gate: one PASS/FAIL line per criterion.
//!
//! Criteria listed in `KNOWN_FAILURES` are measured at their stated
//! tolerance and reported as FAIL, but do not fail the run; see the README.

mod common;

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use visgov::governor::{GovernedLoop, InitSearch, RgConfig};
use visgov::lift::{build_phi_r, lift_no_rep, sigma};
use visgov::plant::{ClosedLoopModel, FlatState, Reference};
use visgov::scenario::{simulate, ScenarioConfig};
use visgov::sparse::SparseMatrix;
use visgov::spectral::{count_unit, eigenvalues_sparse};
use visgov::teleop::{ServerMessage, TeleopClient, TeleopMessage};
use visgov::trig::{compute_delta_max, TrigApprox};
use visgov::vis::{
    tighten_fov, true_constraint_eval, violation_bounds, violation_bounds_for_delta, CameraModel, ConstraintKind,
};

const KNOWN_FAILURES: &[usize] = &[4, 7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn lifting_commutation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let d = rng.gen_range(1..=8);
        let r = rng.gen_range(1..=4);
        let phi = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
        let z = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
        let lhs = lift_no_rep((&phi * &z).as_slice(), r).unwrap();
        let phi_r = build_phi_r(&phi, r).unwrap();
        let rhs = phi_r * DVector::from_vec(lift_no_rep(z.as_slice(), r).unwrap());
        let scale = lhs.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
        let err = lhs.iter().zip(rhs.iter()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs())) / scale;
        worst = worst.max(err);
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(worst <= 1e-9 && secs < 10.0, format!("max relative error {worst:.2e}, {secs:.2} s for 1000 instances"))
}

fn spectra() -> Outcome {
    let shared = common::table_one();
    let ext = shared.pipe.plant.extended();
    let mut ok = true;
    let mut parts = Vec::new();
    for r in 1..=4 {
        let phi_r = SparseMatrix::from_dense(&build_phi_r(&ext, r).unwrap());
        let unit = count_unit(&eigenvalues_sparse(&phi_r), 1e-8);
        ok &= unit == sigma(4, r);
        parts.push(format!("r={r}: {unit}/{}", sigma(4, r)));
    }
    let sys = shared.pipe.lifted(4).unwrap();
    let f = SparseMatrix::from_dense(&sys.f_block());
    let rho = eigenvalues_sparse(&f).iter().map(|l| l.norm()).fold(0.0, f64::max);
    ok &= rho < 1.0;
    outcome(ok, format!("unit eigenvalues {}; rho(F) = {rho:.6} over {} coordinates", parts.join(", "), sys.nx()))
}

fn remez() -> Outcome {
    let t = TrigApprox::remez(3, 2).unwrap();
    let got = [t.kc[0], t.kc[1], t.ks[0], t.ks[1]];
    let want = [0.8798, -0.3566, 0.9928, -0.1462];
    let err = got.iter().zip(want).fold(0.0f64, |a, (g, w)| a.max((g - w).abs()));
    outcome(err <= 1e-3, format!("coefficients {got:.4?}, max deviation {err:.2e}"))
}

fn appendix_bounds() -> Outcome {
    let cam = CameraModel::default();
    let att = 4f64.to_radians();
    let table = TrigApprox::table();
    let (e1, e2) = violation_bounds(&table, att, att, &cam).unwrap();
    let fov = tighten_fov(&cam, (e1, e2)).unwrap();
    let (h, v) = (fov.alpha_h_eff.to_degrees(), fov.alpha_v_eff.to_degrees());
    let pass = (e1 - 0.110).abs() <= 0.002
        && (e2 - 0.175).abs() <= 0.002
        && (h - 41.7).abs() <= 0.1
        && (v - 27.7).abs() <= 0.1;
    // The published bounds correspond to a much smaller sine/cosine mismatch.
    let (p1, p2) = violation_bounds_for_delta(0.014477, att, att, &cam).unwrap();
    outcome(
        pass,
        format!(
            "delta_max = {:.5} gives eps = ({e1:.4}, {e2:.4}), FoV {h:.2} x {v:.2} deg; \
             delta = 0.014477 gives ({p1:.4}, {p2:.4})",
            compute_delta_max(&table)
        ),
    )
}

fn lemma_soundness() -> Outcome {
    let shared = common::table_one();
    let set = &shared.pipe.set;
    let cam = shared.pipe.cam;
    let vis: Vec<_> = set
        .constraints
        .iter()
        .filter(|c| matches!(c.kind, ConstraintKind::Bearing | ConstraintKind::Distance | ConstraintKind::YawDomain))
        .collect();
    let inside = |q: &[f64; 4]| {
        let mut z = vec![0.0; set.n_vars];
        z[..4].copy_from_slice(q);
        vis.iter().all(|c| c.poly.eval(&z) <= 0.0)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let att = 4f64.to_radians();
    let draw = |rng: &mut ChaCha8Rng| {
        [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-3.0..3.0), rng.gen_range(-FRAC_PI_2..FRAC_PI_2)]
    };
    let (mut samples, mut boundary, mut violations) = (0usize, 0usize, 0usize);
    let mut worst = f64::NEG_INFINITY;
    let mut last_in: Option<[f64; 4]> = None;
    while samples < 100_000 {
        let q = draw(&mut rng);
        let q = if inside(&q) {
            last_in = Some(q);
            q
        } else if let Some(a) = last_in.take() {
            // Bisect to the boundary between the last inside draw and this one.
            let (mut lo, mut hi) = (0.0, 1.0);
            let at = |s: f64| std::array::from_fn::<f64, 4, _>(|i| a[i] + (q[i] - a[i]) * s);
            for _ in 0..40 {
                let mid = 0.5 * (lo + hi);
                if inside(&at(mid)) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            boundary += 1;
            at(lo)
        } else {
            continue;
        };
        let corner = rng.gen_bool(0.25);
        let pick = |rng: &mut ChaCha8Rng| if corner { att * if rng.gen_bool(0.5) { 1.0 } else { -1.0 } } else { rng.gen_range(-att..=att) };
        let (roll, pitch) = (pick(&mut rng), pick(&mut rng));
        let mut x = FlatState::zeros();
        x.fixed_rows_mut::<4>(0).copy_from_slice(&q);
        let e = true_constraint_eval(&x, (roll, pitch), &cam, &Vector3::zeros());
        worst = worst.max(e.g1.max(e.g2));
        if e.g1 > 0.0 || e.g2 > 0.0 || e.z_c <= 0.0 {
            violations += 1;
        }
        samples += 1;
    }
    outcome(
        violations == 0,
        format!("{samples} samples ({boundary} on the boundary), {violations} violations, worst bearing value {worst:.4}"),
    )
}

fn moas_invariance() -> Outcome {
    let shared = common::table_one();
    let moas = &shared.moas;
    let plant = &shared.pipe.plant;
    let set = &shared.pipe.set;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut left, mut infeasible) = (0usize, 0usize);
    let mut worst_poly = f64::NEG_INFINITY;
    for _ in 0..1000 {
        let (mut x, v) = common::random_member(moas, &mut rng);
        for k in 0..500 {
            let z = common::extended(&x, &v);
            if k <= 200 && !moas.is_member(&z) {
                left += 1;
            }
            let p = set.max_value(&z);
            worst_poly = worst_poly.max(p);
            if p > 0.0 {
                infeasible += 1;
            }
            x = plant.step(&x, &v);
        }
    }
    outcome(
        left == 0 && infeasible == 0 && moas.k_star < usize::MAX,
        format!(
            "k* = {}, {} rows, built in {:.1} s; {left} exits over 200 steps, {infeasible} polynomial violations \
             over 500 steps (max value {worst_poly:.3e})",
            moas.k_star,
            moas.nrows(),
            moas.stats.seconds
        ),
    )
}

fn circle() -> (Outcome, [f64; 2]) {
    let shared = common::table_one();
    let mut cfg = ScenarioConfig::circle();
    let (log, on) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    cfg.rg_on = false;
    let (_, off) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    // Tracking resumes after governed stretches.
    let resumed = log.rows.windows(2).filter(|w| w[0].lambda < 1.0 && w[1].lambda == 1.0).count();
    let r = &on.run;
    let pass = r.aborted.is_none()
        && r.max_violation <= 0.0
        && r.max_speed <= 1.5
        && r.max_accel <= 1.0 + 1e-9
        && resumed >= 1
        && off.run.max_violation > 0.0;
    (
        outcome(
            pass,
            format!(
                "RG on: max violation {:.4}, speed {:.3}, accel {:.4}, lambda mean {:.3}, {resumed} resumptions; \
                 RG off: max violation {:.4} (reduced-FoV value {:.4})",
                r.max_violation, r.max_speed, r.max_accel, r.lambda_mean, off.run.max_violation, off.max_tightened_visibility
            ),
        ),
        [r.mean_step_ms, r.max_step_ms],
    )
}

fn waypoints() -> (Outcome, [f64; 2]) {
    let shared = common::table_one();
    let cfg = ScenarioConfig::waypoints();
    let (_, s) = simulate(&cfg, &shared.pipe, &shared.moas).unwrap();
    let goal = s.goal_error.unwrap();
    let pass = s.run.aborted.is_none() && s.run.max_violation <= 0.0 && goal <= 0.05;
    (
        outcome(
            pass,
            format!(
                "max violation {:.4}, goal error {goal:.2e} m, {} PoI switches, lambda mean {:.3}",
                s.run.max_violation, s.run.poi_switches, s.run.lambda_mean
            ),
        ),
        [s.run.mean_step_ms, s.run.max_step_ms],
    )
}

fn budget(times: &[[f64; 2]]) -> Outcome {
    let mean = times.iter().map(|t| t[0]).sum::<f64>() / times.len() as f64;
    let max = times.iter().map(|t| t[1]).fold(0.0, f64::max);
    outcome(mean < 10.0, format!("mean {mean:.3} ms, max {max:.3} ms per governor step"))
}

fn adversarial_streams() -> Outcome {
    let shared = common::table_one();
    let (moas, plant) = (&shared.moas, &shared.pipe.plant);
    let poi = (0, Vector3::zeros());
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (mut violations, mut failures, mut governed, mut steps, mut inits) = (0usize, 0usize, 0usize, 0usize, 0usize);
    let mut streams = 0;
    while streams < 100 {
        let pose = Reference::new(-rng.gen_range(1.5..5.0), rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..1.0), 0.0);
        let mut pose = pose;
        pose[3] = (-pose[1]).atan2(-pose[0]) + rng.gen_range(-0.2..0.2);
        let x0 = ClosedLoopModel::equilibrium(&pose);
        inits += 1;
        let Ok(mut lp) =
            GovernedLoop::new(moas, plant, shared.pipe.cam, RgConfig::default(), InitSearch::default(), true, x0, poi)
        else {
            continue;
        };
        streams += 1;
        let mut r = Reference::zeros();
        let mut hold = 0;
        for _ in 0..600 {
            if hold == 0 {
                r = Reference::new(
                    rng.gen_range(-8.0..8.0),
                    rng.gen_range(-8.0..8.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-PI..PI),
                );
                hold = rng.gen_range(10..150);
            }
            hold -= 1;
            match lp.step(&r, poi) {
                Ok(s) => {
                    steps += 1;
                    governed += usize::from(s.lambda < 1.0);
                    if s.g1 > 0.0 || s.g2 > 0.0 || s.z_c <= 0.0 {
                        violations += 1;
                    }
                }
                Err(_) => {
                    failures += 1;
                    break;
                }
            }
        }
    }
    outcome(
        violations == 0 && failures == 0,
        format!(
            "{streams} streams ({inits} initializations tried), {steps} steps, {governed} governed, \
             {violations} violations, {failures} governor failures"
        ),
    )
}

/// Scripted pilot that keeps commanding poses that lose the PoI.
fn teleop_run(rg: &str) -> (u64, u64, u64) {
    common::table_one();
    let mut child = Command::new(env!("CARGO_BIN_EXE_visgov"))
        .args(["serve", "--as-fast-as-possible", "--single-session", "--max-steps", "3000", "--addr", "127.0.0.1:0"])
        .arg("--cache-dir")
        .arg(common::cache_dir())
        .args(["--rg", rg])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::piped())
        .spawn()
        .expect("spawn visgov");
    let mut out = BufReader::new(child.stdout.take().unwrap());
    let mut line = String::new();
    let addr = loop {
        line.clear();
        assert!(out.read_line(&mut line).unwrap() > 0, "server exited early");
        if let Some(a) = line.trim().strip_prefix("listening on ") {
            break a.to_string();
        }
    };
    let script = [
        TeleopMessage::SetReference { x: -2.25, y: 1.5, z: Some(0.0), yaw: Some(1.4) },
        TeleopMessage::SetReference { x: 2.0, y: 0.0, z: None, yaw: Some(0.0) },
        TeleopMessage::SetReference { x: -1.0, y: -4.0, z: Some(2.0), yaw: Some(-1.5) },
        TeleopMessage::SetReference { x: -0.3, y: 0.5, z: Some(-1.0), yaw: Some(0.8) },
        TeleopMessage::SetReference { x: -3.0, y: 3.0, z: Some(0.0), yaw: Some(-1.5) },
    ];
    let mut client = TeleopClient::connect(&addr).expect("connect");
    let (mut frames, mut flagged, mut bye_violations) = (0u64, 0u64, None);
    while let Some(msg) = client.recv().unwrap() {
        match msg {
            ServerMessage::Frame(f) => {
                frames += 1;
                flagged += u64::from(f.violation);
                if frames % 300 == 1 {
                    client.send(&script[(frames / 300) as usize % script.len()]).unwrap();
                }
            }
            ServerMessage::Bye(stats) => bye_violations = Some(stats.violation_frames),
            _ => {}
        }
    }
    child.wait().unwrap();
    (frames, flagged, bye_violations.expect("bye"))
}

fn headless_teleop() -> Outcome {
    let (f_on, v_on, b_on) = teleop_run("on");
    let (f_off, v_off, b_off) = teleop_run("off");
    let pass = f_on > 0 && v_on == 0 && b_on == 0 && v_off >= 1 && b_off == v_off;
    outcome(pass, format!("RG on: {v_on}/{f_on} violation frames; RG off: {v_off}/{f_off}"))
}

fn main() {
    let started = Instant::now();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    let mut run = |id: usize, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let note = if !o.pass && KNOWN_FAILURES.contains(&id) { " [known]" } else { "" };
        println!("{tag} {id:>2} {name}{note}: {}", o.detail);
        results.push((id, name, o));
    };
    let mut times = Vec::new();
    run(1, "lifting commutation", &mut lifting_commutation);
    run(2, "lifted spectra", &mut spectra);
    run(3, "minimax coefficients", &mut remez);
    run(4, "published violation bounds", &mut appendix_bounds);
    run(5, "tightened-set soundness", &mut lemma_soundness);
    run(6, "set determination and invariance", &mut moas_invariance);
    run(7, "circle scenario", &mut || {
        let (o, t) = circle();
        times.push(t);
        o
    });
    run(8, "multi-PoI waypoint scenario", &mut || {
        let (o, t) = waypoints();
        times.push(t);
        o
    });
    let t = times.clone();
    run(9, "online budget", &mut || budget(&t));
    run(10, "adversarial reference streams", &mut adversarial_streams);
    run(11, "headless teleoperation", &mut headless_teleop);

    let failed: Vec<usize> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    let unexpected: Vec<usize> = failed.iter().copied().filter(|id| !KNOWN_FAILURES.contains(id)).collect();
    println!(
        "acceptance: {} passed, {} failed ({} known) in {:.1} s",
        results.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        started.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
