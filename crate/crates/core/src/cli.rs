//! Command-line driver: demos, training, figure sweeps, planning, replay and
//! cyclic picking. Every output file is a pure function of the config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::basis::GaussianBasis;
use crate::demos::{generate_nominals, DemoConfig, DemoSet};
use crate::error::{Error, ErrorKind, Result};
use crate::geometry::Vec3;
use crate::iplanner::{pick_cycle, plan_target, CycleConfig, PlannerConfig, Primitive, HOME};
use crate::promp::{uniform_times, ProMP, Trajectory, TrajectoryDistribution, DEFAULT_LAMBDA, DEFAULT_WEIGHT_PRIOR};
use crate::scene::{preset, ClusterScene};
use crate::sim::{contact_metrics, metrics_json, replay, SimConfig};
use crate::sip::{choose_target, PushPlan};

#[derive(Debug, Parser)]
#[command(name = "ipromp", version, about = "Push-to-pick trajectory planning with interactive ProMPs")]
pub struct Cli {
    /// JSON run configuration; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Preset id or path to a scene JSON file.
    #[arg(long, global = true)]
    pub scene: Option<String>,
    #[arg(long, global = true)]
    pub target: Option<usize>,
    #[arg(long, global = true)]
    pub k1: Option<usize>,
    #[arg(long, global = true)]
    pub k2: Option<usize>,
    /// Basis bandwidth in phase² units (default 1/k²).
    #[arg(long, global = true)]
    pub h: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long = "tc-preset", global = true)]
    pub tc_preset: Option<String>,
    /// Output directory.
    #[arg(long, global = true, env = "PROMP_PUSH_OUT")]
    pub out: Option<PathBuf>,
    /// Directory holding trained model files.
    #[arg(long, global = true)]
    pub models: Option<PathBuf>,
    /// One primitive over the whole motion instead of reach + push segments.
    #[arg(long, global = true)]
    pub single: bool,
    /// Condition on neighbour positions directly, without pushed poses.
    #[arg(long, global = true)]
    pub naive: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize demonstrations.
    Demos {
        #[arg(long)]
        samples_per_traj: Option<usize>,
    },
    /// Fit the reach and push primitives.
    Train {
        /// Demonstrations JSON; generated from the seed when absent.
        #[arg(long)]
        demos: Option<PathBuf>,
    },
    /// Basis-count and conditioning-time sweeps.
    Experiment { figure: Figure },
    /// Push plan and trajectory for one target.
    Plan {
        /// Time this many generations and report latency.
        #[arg(long)]
        repeat: Option<usize>,
    },
    /// Replay a planned trajectory and score contacts.
    Replay {
        /// Directory with plan.json and trajectory.csv (default: output directory).
        #[arg(long)]
        from: Option<PathBuf>,
    },
    /// Plan several targets in sequence.
    PickCycle {
        #[arg(long, value_delimiter = ',')]
        targets: Vec<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    Fig5,
    Fig6,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: String,
    pub target: Option<usize>,
    pub k1: usize,
    pub k2: usize,
    pub h: Option<f64>,
    pub lambda: f64,
    pub total: f64,
    pub t1: f64,
    pub tc_preset: String,
    pub out: PathBuf,
    pub models: Option<PathBuf>,
    pub single: bool,
    pub naive: bool,
    pub samples_per_traj: usize,
    pub weight_prior: f64,
    pub spring_back: f64,
    pub home: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene: "C_IV".into(),
            target: None,
            k1: 4,
            k2: 5,
            h: None,
            lambda: DEFAULT_LAMBDA,
            total: 2.0,
            t1: 0.85,
            tc_preset: "T_c1".into(),
            out: PathBuf::from("out"),
            models: None,
            single: false,
            naive: false,
            samples_per_traj: 10,
            weight_prior: DEFAULT_WEIGHT_PRIOR,
            spring_back: 0.0,
            home: HOME,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("run config", e))
    }

    /// Config file (if any) with command-line overrides applied.
    pub fn resolve(cli: &Cli) -> Result<Self> {
        let mut cfg = match &cli.config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        macro_rules! take {
            ($($f:ident),*) => { $( if let Some(v) = cli.$f.clone() { cfg.$f = v; } )* };
        }
        take!(seed, scene, k1, k2, lambda, tc_preset, out);
        if cli.target.is_some() {
            cfg.target = cli.target;
        }
        if cli.h.is_some() {
            cfg.h = cli.h;
        }
        if cli.models.is_some() {
            cfg.models = cli.models.clone();
        }
        cfg.single |= cli.single;
        cfg.naive |= cli.naive;
        if let Command::Demos { samples_per_traj: Some(n) } = cli.command {
            cfg.samples_per_traj = n;
        }
        Ok(cfg)
    }

    pub fn basis(&self, k: usize) -> Result<GaussianBasis> {
        match self.h {
            Some(h) => GaussianBasis::with_bandwidth(k, h),
            None => GaussianBasis::new(k),
        }
    }

    pub fn demo_config(&self) -> DemoConfig {
        DemoConfig {
            samples_per_traj: self.samples_per_traj,
            ..DemoConfig::default()
        }
    }

    pub fn cycle_config(&self) -> CycleConfig {
        CycleConfig {
            timing: self.tc_preset.clone(),
            naive: self.naive,
            home: Vec3::from(self.home),
            t1: self.t1,
            planner: PlannerConfig {
                weight_prior: self.weight_prior,
                ..PlannerConfig::default()
            },
        }
    }

    pub fn load_scene(&self) -> Result<ClusterScene> {
        match preset(&self.scene) {
            Err(Error::UnknownPreset(_)) if Path::new(&self.scene).exists() => ClusterScene::load(Path::new(&self.scene)),
            other => other,
        }
    }
}

/// Trained primitives, in file order.
pub struct Trained {
    pub models: Vec<(String, ProMP)>,
}

/// Reach/push split of the demonstrations and one model per segment, or a
/// single model over the whole demonstration.
pub fn train(cfg: &RunConfig, set: &DemoSet) -> Result<Trained> {
    if cfg.single {
        let mp = ProMP::learn(set, &cfg.basis(cfg.k1)?, cfg.lambda)?;
        return Ok(Trained { models: vec![("model.json".into(), mp)] });
    }
    let split = cfg.t1.min(set.duration);
    let reach = set.window(0.0, split, cfg.t1)?;
    let push = set.window(split, set.duration, cfg.total - cfg.t1)?;
    let mp1 = ProMP::learn(&reach, &cfg.basis(cfg.k1)?, cfg.lambda)?;
    let mp2 = ProMP::learn(&push, &cfg.basis(cfg.k2)?, cfg.lambda)?;
    Ok(Trained {
        models: vec![("mp1.json".into(), mp1), ("mp2.json".into(), mp2)],
    })
}

/// Primitive from saved models, or trained from seeded demonstrations.
pub fn primitive(cfg: &RunConfig) -> Result<Primitive> {
    let models = match &cfg.models {
        Some(dir) => {
            let names: &[&str] = if cfg.single { &["model.json"] } else { &["mp1.json", "mp2.json"] };
            names
                .iter()
                .map(|n| ProMP::load(&dir.join(n)))
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            let set = generate_nominals(&cfg.demo_config(), cfg.seed)?;
            train(cfg, &set)?.models.into_iter().map(|(_, m)| m).collect()
        }
    };
    match models.as_slice() {
        [mp] => Primitive::single(mp, cfg.total),
        [mp1, mp2] => Primitive::composite(mp1, mp2, cfg.t1, cfg.total),
        _ => unreachable!("one or two models"),
    }
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn max_deviation(dist: &TrajectoryDistribution, reference: &crate::demos::Demonstration) -> f64 {
    dist.mean
        .iter()
        .zip(&reference.points)
        .map(|(m, p)| (m - p).norm())
        .fold(0.0, f64::max)
}

fn target_for(cfg: &RunConfig, scene: &ClusterScene) -> Result<usize> {
    match cfg.target {
        Some(t) => Ok(t),
        None => choose_target(scene, cfg.seed),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyReport {
    pub iterations: usize,
    pub mean: f64,
    pub std: f64,
}

/// Times `iterations` full plan generations, one after another.
pub fn measure_latency(cfg: &RunConfig, iterations: usize) -> Result<LatencyReport> {
    let scene = cfg.load_scene()?;
    let target = target_for(cfg, &scene)?;
    let prim = primitive(cfg)?;
    let cycle = cfg.cycle_config();
    let home = Vec3::from(cfg.home);
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        times.push(plan_target(&scene, target, home, &prim, &cycle)?.result.planning_time);
    }
    let n = times.len().max(1) as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n;
    Ok(LatencyReport {
        iterations,
        mean,
        std: var.sqrt(),
    })
}

fn experiment_fig5(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let set = generate_nominals(&cfg.demo_config(), cfg.seed)?;
    let reference = set.mean_path();
    let h = cfg.h.unwrap_or(1.0);
    let mut files = Vec::new();
    let mut summary = String::from("case,k,h,max_deviation\n");
    let mut dev = Vec::new();
    for k in [4usize, 10] {
        let mp = ProMP::learn(&set, &GaussianBasis::with_bandwidth(k, h)?, cfg.lambda)?;
        let dist = mp.marginal(&reference.times)?;
        let d = max_deviation(&dist, &reference);
        writeln!(summary, "k{k},{k},{h},{d}").unwrap();
        dev.push(d);
        files.push(write(&cfg.out, &format!("fig5_k{k}.csv"), &dist.to_csv())?);
    }
    writeln!(summary, "summary,k10_lt_k4,{},{}", dev[1] < dev[0], dev[0] - dev[1]).unwrap();
    files.push(write(&cfg.out, "fig5_summary.csv", &summary)?);
    Ok(files)
}

struct Fig6Case {
    label: char,
    k1: usize,
    k2: Option<usize>,
    timing: &'static str,
}

const FIG6: [Fig6Case; 6] = [
    Fig6Case { label: 'a', k1: 20, k2: None, timing: "T_c1" },
    Fig6Case { label: 'b', k1: 10, k2: None, timing: "T_c1" },
    Fig6Case { label: 'c', k1: 4, k2: None, timing: "T_c1" },
    Fig6Case { label: 'd', k1: 4, k2: None, timing: "T_c2" },
    Fig6Case { label: 'e', k1: 4, k2: Some(4), timing: "T_c1" },
    Fig6Case { label: 'f', k1: 4, k2: Some(5), timing: "T_c1" },
];

fn experiment_fig6(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let set = generate_nominals(&cfg.demo_config(), cfg.seed)?;
    let scene = cfg.load_scene()?;
    let target = target_for(cfg, &scene)?;
    let home = Vec3::from(cfg.home);
    let mut files = Vec::new();
    let mut summary = String::from("case,segments,k1,k2,h,timing,waypoints,max_waypoint_error\n");
    for case in &FIG6 {
        let run = RunConfig {
            k1: case.k1,
            k2: case.k2.unwrap_or(cfg.k2),
            single: case.k2.is_none(),
            // Single-model panels use the caption's bandwidth.
            h: if case.k2.is_none() { Some(cfg.h.unwrap_or(1.0)) } else { cfg.h },
            tc_preset: case.timing.into(),
            naive: true,
            ..cfg.clone()
        };
        let models: Vec<ProMP> = train(&run, &set)?.models.into_iter().map(|(_, m)| m).collect();
        let prim = match models.as_slice() {
            [mp] => Primitive::single(mp, run.total)?,
            [a, b] => Primitive::composite(a, b, run.t1, run.total)?,
            _ => unreachable!(),
        };
        let result = plan_target(&scene, target, home, &prim, &run.cycle_config())?.result;
        let h = run.h.map_or("1/k^2".to_string(), |h| h.to_string());
        writeln!(
            summary,
            "{},{},{},{},{h},{},{},{}",
            case.label,
            if run.single { 1 } else { 2 },
            run.k1,
            case.k2.map_or(String::new(), |k| k.to_string()),
            case.timing,
            result.schedule.waypoints.len(),
            result.max_waypoint_error()?
        )
        .unwrap();
        files.push(write(&cfg.out, &format!("fig6_{}.csv", case.label), &result.mean_path.to_csv())?);
        files.push(write(&cfg.out, &format!("fig6_{}_schedule.json", case.label), &result.schedule.to_json()?)?);
    }
    files.push(write(&cfg.out, "fig6_summary.csv", &summary)?);
    Ok(files)
}

fn trajectory_from_csv(text: &str) -> Result<Trajectory> {
    Ok(TrajectoryDistribution::from_csv(text)?.mean_trajectory())
}

/// Runs one command. Informational output goes to stdout.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli)?;
    let out = &cfg.out;
    match &cli.command {
        Command::Demos { .. } => {
            let set = generate_nominals(&cfg.demo_config(), cfg.seed)?;
            write(out, "demos.json", &set.to_json()?)?;
            write(out, "demos.csv", &set.to_csv())?;
            println!("wrote {} demonstrations to {}", set.demos.len(), out.display());
        }
        Command::Train { demos } => {
            let set = match demos {
                Some(p) => DemoSet::load(p)?,
                None => generate_nominals(&cfg.demo_config(), cfg.seed)?,
            };
            for (name, mp) in train(&cfg, &set)?.models {
                write(out, &name, &mp.to_json()?)?;
                println!("wrote {} (k = {})", name, mp.basis().len());
            }
        }
        Command::Experiment { figure } => {
            let files = match figure {
                Figure::Fig5 => experiment_fig5(&cfg)?,
                Figure::Fig6 => experiment_fig6(&cfg)?,
            };
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Command::Plan { repeat } => {
            let scene = cfg.load_scene()?;
            let target = target_for(&cfg, &scene)?;
            let prim = primitive(&cfg)?;
            let cp = plan_target(&scene, target, Vec3::from(cfg.home), &prim, &cfg.cycle_config())?;
            for f in &cp.plan.failures {
                eprintln!("fruit {}: {}", f.fruit_id, f.reason);
            }
            write(out, "plan.json", &cp.plan.to_json()?)?;
            write(out, "schedule.json", &cp.result.schedule.to_json()?)?;
            write(out, "trajectory.csv", &cp.result.mean_path.to_csv())?;
            println!(
                "target {target}: {} directive(s), {} waypoints, max waypoint error {:.3e} m, planning time {:.6} s",
                cp.plan.directives.len(),
                cp.result.schedule.waypoints.len(),
                cp.result.max_waypoint_error()?,
                cp.result.planning_time
            );
            if let Some(n) = repeat {
                let report = measure_latency(&cfg, *n)?;
                println!("{}", serde_json::to_string(&report).map_err(|e| Error::parse("latency", e))?);
            }
        }
        Command::Replay { from } => {
            let dir = from.as_deref().unwrap_or(out);
            let scene = cfg.load_scene()?;
            let plan = PushPlan::from_json(&read(&dir.join("plan.json"))?)?;
            let traj = trajectory_from_csv(&read(&dir.join("trajectory.csv"))?)?;
            let sim = SimConfig {
                spring_back: cfg.spring_back,
                ..SimConfig::default()
            };
            let trace = replay(&scene, &traj, Some(plan.target_id), &sim)?;
            write(out, "trace.csv", &trace.to_csv())?;
            let metrics = contact_metrics(&trace, &scene, &plan)?;
            write(out, "metrics.json", &metrics_json(&cfg.scene, &metrics)?)?;
            for m in &metrics {
                println!(
                    "fruit {} ({:?}): h_min {:?} h_max {:?} contact {} swallowed {}",
                    m.fruit_id, m.role, m.h_min, m.h_max, m.contact, m.swallowed
                );
            }
            trace.check()?;
        }
        Command::PickCycle { targets } => {
            let scene = cfg.load_scene()?;
            let targets: Vec<usize> = if targets.is_empty() {
                scene.ripe().map(|f| f.id).collect()
            } else {
                targets.clone()
            };
            let prim = primitive(&cfg)?;
            let outcomes = pick_cycle(&scene, &targets, &prim, &cfg.cycle_config());
            let mut summary = Vec::new();
            for (i, o) in outcomes.iter().enumerate() {
                match &o.outcome {
                    Ok(cp) => {
                        write(out, &format!("cycle_{i}_trajectory.csv"), &cp.result.mean_path.to_csv())?;
                        write(out, &format!("cycle_{i}_schedule.json"), &cp.result.schedule.to_json()?)?;
                        let start = cp.result.start()?;
                        let goal = cp.result.primitive.mean_at(cp.result.primitive.duration())?;
                        summary.push(serde_json::json!({
                            "cycle": i, "target": o.target_id, "ok": true,
                            "start": [start.x, start.y, start.z], "goal": [goal.x, goal.y, goal.z],
                        }));
                        println!("cycle {i}: target {} planned in {:.6} s", o.target_id, cp.result.planning_time);
                    }
                    Err(e) => {
                        summary.push(serde_json::json!({ "cycle": i, "target": o.target_id, "ok": false, "error": e.to_string() }));
                        eprintln!("cycle {i}: target {} failed: {e}", o.target_id);
                    }
                }
            }
            let text = serde_json::to_string_pretty(&summary).map_err(|e| Error::parse("cycle summary", e))?;
            write(out, "cycle_summary.json", &text)?;
        }
    }
    Ok(())
}

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Validation => 2,
        ErrorKind::Numerical => 3,
        ErrorKind::Io => 4,
    }
}

/// Dense time grid used for exported mean paths of a primitive.
pub fn export_times(prim: &Primitive) -> Vec<f64> {
    uniform_times(prim.duration(), 100.0)
}
