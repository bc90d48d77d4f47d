//! Acceptance suite: one PASS/FAIL line per criterion, then a single assert.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the report.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use ipromp::basis::GaussianBasis;
use ipromp::demos::{generate_nominals, DemoConfig, Demonstration};
use ipromp::geometry::Vec3;
use ipromp::iplanner::{pick_cycle, plan_target, CycleConfig, Primitive, HOME};
use ipromp::promp::{fit_weights, ProMP, Waypoint, DEFAULT_LAMBDA, DEFAULT_WEIGHT_PRIOR};
use ipromp::scene::{preset, Stem, TableTopFrame, PRESETS};
use ipromp::sim::{contact_metrics, replay, FruitRole, SimConfig};
use ipromp::sip::{plan_pushes, stem_geometry};
use nalgebra::SymmetricEigen;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn composite(set: &ipromp::demos::DemoSet) -> Primitive {
    let reach = set.window(0.0, 0.85, 0.85).unwrap();
    let push = set.window(0.85, 1.0, 1.15).unwrap();
    let mp1 = ProMP::learn(&reach, &GaussianBasis::new(4).unwrap(), DEFAULT_LAMBDA).unwrap();
    let mp2 = ProMP::learn(&push, &GaussianBasis::new(5).unwrap(), DEFAULT_LAMBDA).unwrap();
    Primitive::composite(&mp1, &mp2, 0.85, 2.0).unwrap()
}

fn default_primitive() -> Primitive {
    composite(&generate_nominals(&DemoConfig::default(), 0).unwrap())
}

/// Conditioning exactness and covariance shrinkage over the same 100 draws.
fn conditioning_suite() -> (Outcome, Outcome) {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut worst_mean, mut worst_var, mut worst_eig) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..100 {
        let cfg = DemoConfig {
            samples_per_traj: rng.random_range(2..=6),
            duration: rng.random_range(0.5..2.0),
            ..DemoConfig::default()
        };
        let set = generate_nominals(&cfg, rng.random()).unwrap();
        let k = rng.random_range(3..=12);
        let mp = ProMP::learn(&set, &GaussianBasis::new(k).unwrap(), DEFAULT_LAMBDA)
            .unwrap()
            .with_weight_prior(DEFAULT_WEIGHT_PRIOR)
            .unwrap();
        let t = rng.random_range(0.0..=mp.duration());
        let offset = Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let target = mp.mean_at(t).unwrap() + offset;
        let post = mp.condition(&Waypoint::hard(t, target)).unwrap();

        let phi = post.basis().eval_time(t, post.duration()).unwrap();
        for d in 0..3 {
            let mean = phi.dot(&post.mean_weights()[d]);
            let var = (phi.transpose() * &post.weight_covariances()[d] * &phi)[0];
            worst_mean = worst_mean.max((mean - target[d]).abs());
            worst_var = worst_var.max(var);
            let shrink = &mp.weight_covariances()[d] - &post.weight_covariances()[d];
            worst_eig = worst_eig.min(SymmetricEigen::new(shrink).eigenvalues.min());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    (
        (
            worst_mean <= 1e-6 && worst_var <= 1e-6 && secs < 10.0,
            format!("max |mean - X*| = {worst_mean:.2e} m, max var = {worst_var:.2e} m^2, {secs:.2} s"),
        ),
        (worst_eig >= -1e-10, format!("min eigenvalue of prior - posterior = {worst_eig:.2e}")),
    )
}

/// Normalized Gaussian row, evaluated term by term.
fn oracle_row(z: f64, k: usize, h: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..k)
        .map(|i| {
            let c = if k == 1 { 0.5 } else { i as f64 / (k - 1) as f64 };
            (-(z - c) * (z - c) / (2.0 * h)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Gauss-Jordan elimination with partial pivoting on (ΦᵀΦ + λI) w = Φᵀy.
fn oracle_solve(rows: &[Vec<f64>], y: &[f64], lambda: f64) -> Vec<f64> {
    let k = rows[0].len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for (r, &yv) in rows.iter().zip(y) {
        for i in 0..k {
            for j in 0..k {
                a[i][j] += r[i] * r[j];
            }
            a[i][k] += r[i] * yv;
        }
    }
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += lambda;
    }
    for col in 0..k {
        let piv = (col..k).max_by(|&p, &q| a[p][col].abs().total_cmp(&a[q][col].abs())).unwrap();
        a.swap(col, piv);
        for r in 0..k {
            if r != col {
                let f = a[r][col] / a[col][col];
                for c in col..=k {
                    a[r][c] -= f * a[col][c];
                }
            }
        }
    }
    (0..k).map(|i| a[i][k] / a[i][i]).collect()
}

fn regression_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let k = rng.random_range(2..=12);
        let h = if rng.random_bool(0.5) { 1.0 / (k * k) as f64 } else { rng.random_range(0.005..0.05) };
        let lambda = 10f64.powf(rng.random_range(-6.0..-2.0));
        let n = rng.random_range(k + 5..80);
        let duration = rng.random_range(0.5..2.0);
        let times: Vec<f64> = (0..n).map(|i| duration * i as f64 / (n - 1) as f64).collect();
        let points: Vec<Vec3> = times
            .iter()
            .map(|t| Vec3::new(t.sin(), (2.0 * t).cos() * 0.3, 0.3 + 0.1 * t * t) + Vec3::from_fn(|_, _| rng.random_range(-0.01..0.01)))
            .collect();
        let demo = Demonstration::new(times.clone(), points.clone(), 0).unwrap();
        let got = fit_weights(&demo, &GaussianBasis::with_bandwidth(k, h).unwrap(), lambda).unwrap();
        let rows: Vec<Vec<f64>> = times.iter().map(|t| oracle_row(t / duration, k, h)).collect();
        for d in 0..3 {
            let y: Vec<f64> = points.iter().map(|p| p[d]).collect();
            let want = oracle_solve(&rows, &y, lambda);
            let norm = want.iter().map(|v| v * v).sum::<f64>().sqrt();
            let diff = want.iter().zip(got[d].iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            worst = worst.max(diff / norm);
        }
    }
    (worst <= 1e-8, format!("max relative error {worst:.2e} over 50 instances"))
}

fn basis_count_effect() -> Outcome {
    let started = Instant::now();
    let set = generate_nominals(&DemoConfig::default(), 0).unwrap();
    let reference = set.mean_path();
    let dev = |k: usize| {
        let mp = ProMP::learn(&set, &GaussianBasis::new(k).unwrap(), DEFAULT_LAMBDA).unwrap();
        let dist = mp.marginal(&reference.times).unwrap();
        dist.mean.iter().zip(&reference.points).map(|(m, p)| (m - p).norm()).fold(0.0, f64::max)
    };
    let (d4, d10) = (dev(4), dev(10));
    let secs = started.elapsed().as_secs_f64();
    (d10 < d4 && secs < 5.0, format!("k=4 {d4:.3e} m, k=10 {d10:.3e} m, {secs:.2} s"))
}

fn sip_geometry() -> Outcome {
    let frame = TableTopFrame::default();
    let (l, r_g) = (0.1, 0.03);
    let mut worst_theta = 0.0f64;
    let mut worst_s = 0.0f64;
    for (direction, theta0) in [
        (Vec3::new(0.0, 0.0, -1.0), 0.0),
        (Vec3::new(0.0, 0.0, 1.0), 0.0),
        (Vec3::new(0.1f64.sin(), 0.0, -0.1f64.cos()), 0.1),
    ] {
        let stem = Stem { id: 0, root: Vec3::zeros(), direction, length: l };
        let g = stem_geometry(0, &stem, &frame, r_g).unwrap();
        worst_theta = worst_theta.max((g.theta - 0.3f64.asin()).abs());
        let want = if theta0 == 0.0 {
            // cos(asin x) = sqrt(1 - x²)
            l * (2.0 * (1.0 - (1.0 - 0.09f64).sqrt())).sqrt()
        } else {
            l * (2.0 * (1.0 - (0.3f64.asin() - theta0).cos())).sqrt()
        };
        worst_s = worst_s.max((g.s - want).abs());
    }

    // Every pushed fruit with a real rotation ends up clear of the vertical
    // segment the gripper rises along, from 0.1 m below the target to the target.
    let mut corridor_ok = true;
    let mut tightest = f64::INFINITY;
    for id in &PRESETS[..6] {
        let scene = preset(id).unwrap();
        let target = scene.fruit(0).unwrap().position;
        let bottom = target - Vec3::new(0.0, 0.0, 0.1);
        let plan = plan_pushes(&scene, 0).unwrap();
        for d in plan.directives.iter().filter(|d| d.d_theta > 0.0) {
            let p = d.updated_position;
            let z = p.z.clamp(bottom.z, target.z);
            let dist = (p - Vec3::new(target.x, target.y, z)).norm();
            tightest = tightest.min(dist);
            corridor_ok &= dist >= r_g - 1e-6;
        }
    }
    (
        worst_theta <= 1e-12 && worst_s <= 1e-12 && corridor_ok,
        format!("|dθ| {worst_theta:.1e} rad, |ds| {worst_s:.1e} m, tightest corridor {tightest:.4} m"),
    )
}

fn push_reproduction() -> Outcome {
    let started = Instant::now();
    let prim = default_primitive();
    let cfg = CycleConfig::default();
    let mut ok = true;
    let mut notes = Vec::new();
    for id in ["C_IV", "C_V", "C_VI"] {
        let scene = preset(id).unwrap();
        let cp = plan_target(&scene, 0, Vec3::from(HOME), &prim, &cfg).unwrap();
        let trace = replay(&scene, &cp.result.mean_path.mean_trajectory(), Some(0), &SimConfig::default()).unwrap();
        let metrics = contact_metrics(&trace, &scene, &cp.plan).unwrap();
        let displacement = trace.displacement(0).unwrap();
        let pushed_ok = metrics.iter().filter(|m| m.role == FruitRole::Pushable).all(|m| m.contact);
        let swallowed = metrics.iter().any(|m| m.role == FruitRole::Target && m.swallowed);
        let case = !cp.plan.directives.is_empty() && pushed_ok && displacement <= 0.005 && swallowed && trace.jam.is_none();
        ok &= case;
        notes.push(format!("{id} {}", if case { "ok" } else { "bad" }));
    }
    let secs = started.elapsed().as_secs_f64();
    (ok && secs < 30.0, format!("{}, {secs:.2} s", notes.join(", ")))
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ipromp")
}

fn run_cli(out: &Path, args: &[&str]) -> std::process::Output {
    Command::new(bin())
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("PROMP_PUSH_OUT")
        .output()
        .expect("spawn ipromp")
}

fn planning_latency() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(dir.path(), &["--scene", "C_V", "plan", "--repeat", "1000"]);
    if !out.status.success() {
        return (false, String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let stdout = String::from_utf8_lossy(&out.stdout);
    let report: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap_or("")).unwrap();
    let mean = report["mean"].as_f64().unwrap();
    let std = report["std"].as_f64().unwrap();
    (mean <= 0.2, format!("mean {mean:.4} s, std {std:.4} s over {} runs", report["iterations"]))
}

fn simulator_invariants() -> Outcome {
    let prim = default_primitive();
    let cfg = CycleConfig::default();
    let (mut worst_len, mut worst_clear) = (0.0f64, f64::INFINITY);
    let mut ticks = 0;
    for id in PRESETS {
        let scene = preset(id).unwrap();
        let cp = plan_target(&scene, 0, Vec3::from(HOME), &prim, &cfg).unwrap();
        let trace = replay(&scene, &cp.result.mean_path.mean_trajectory(), Some(0), &SimConfig::default()).unwrap();
        ticks += trace.len();
        for fruit in &scene.fruits {
            let Some(stem) = scene.stem_of(fruit) else { continue };
            for p in &trace.fruit_paths[&fruit.id] {
                worst_len = worst_len.max(((p - stem.root).norm() - stem.length).abs());
            }
        }
        worst_clear = trace.min_clearance.iter().copied().fold(worst_clear, f64::min);
    }
    (
        worst_len <= 1e-9 && worst_clear >= -1e-6,
        format!("stem length drift {worst_len:.1e} m, min clearance {worst_clear:.1e} m over {ticks} ticks"),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Outcome {
    let commands: [&[&str]; 7] = [
        &["demos"],
        &["train"],
        &["experiment", "fig5"],
        &["experiment", "fig6"],
        &["--scene", "C_VI", "plan"],
        &["--scene", "C_VI", "replay"],
        &["--scene", "C_I", "pick-cycle"],
    ];
    let runs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            for args in commands {
                let mut full = vec!["--seed", "11"];
                full.extend_from_slice(args);
                let out = run_cli(dir.path(), &full);
                assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
            }
            let files = snapshot(dir.path());
            (dir, files)
        })
        .collect();
    let (a, b) = (&runs[0].1, &runs[1].1);
    let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
    (
        a.len() == b.len() && differing.is_empty(),
        format!("{} files compared, {} differ", a.len(), differing.len()),
    )
}

fn pick_cycle_chaining() -> Outcome {
    let mut scene = preset("C_I").unwrap();
    for f in &mut scene.fruits {
        f.ripe = true;
    }
    let targets: Vec<usize> = scene.fruits.iter().map(|f| f.id).collect();
    let outcomes = pick_cycle(&scene, &targets, &default_primitive(), &CycleConfig::default());
    let results: Vec<_> = outcomes.iter().filter_map(|o| o.outcome.as_ref().ok()).collect();
    if results.len() != 3 {
        return (false, format!("{} of 3 cycles planned", results.len()));
    }
    let mut worst = 0.0f64;
    for pair in results.windows(2) {
        let prev = &pair[0].result;
        let goal = prev.primitive.mean_at(prev.primitive.duration()).unwrap();
        worst = worst.max((pair[1].result.start().unwrap() - goal).norm());
    }
    (worst <= 1e-4, format!("max start/goal gap {worst:.2e} m"))
}

#[test]
fn acceptance() {
    let (c1, c2) = conditioning_suite();
    let results: Vec<(u32, &str, Outcome)> = vec![
        (1, "conditioning exactness", c1),
        (2, "variance monotonicity", c2),
        (3, "regression oracle", regression_oracle()),
        (4, "basis-count effect", basis_count_effect()),
        (5, "SIP geometry and corridor", sip_geometry()),
        (6, "end-to-end push reproduction", push_reproduction()),
        (7, "planning latency", planning_latency()),
        (8, "simulator invariants", simulator_invariants()),
        (9, "CLI determinism", determinism()),
        (10, "pick-cycle chaining", pick_cycle_chaining()),
    ];
    for (n, name, (ok, detail)) in &results {
        println!("{} criterion {n:>2} {name}: {detail}", if *ok { "PASS" } else { "FAIL" });
    }
    let failed: Vec<u32> = results.iter().filter(|r| !r.2 .0).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failing criteria: {failed:?}");
}
