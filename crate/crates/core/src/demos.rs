//! Synthetic demonstrations: cubic-RBF reach paths from a shared start to a
//! set of nominal goals, each copied with Gaussian-perturbed end points.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::basis::CubicRbf;
use crate::error::{ensure, Error, Result};
use crate::geometry::{arr3, vec3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub times: Vec<f64>,
    pub points: Vec<Vec3>,
    pub nominal_id: usize,
}

impl Demonstration {
    pub fn new(times: Vec<f64>, points: Vec<Vec3>, nominal_id: usize) -> Result<Self> {
        ensure(times.len() == points.len(), || {
            format!("{} times but {} points", times.len(), points.len())
        })?;
        ensure(times.len() >= 2, || "a demonstration needs at least two samples".into())?;
        ensure(times[0] == 0.0, || format!("demonstration must start at t = 0, got {}", times[0]))?;
        ensure(times.windows(2).all(|w| w[0] < w[1]), || "times must be strictly increasing".into())?;
        ensure(points.iter().all(|p| p.iter().all(|v| v.is_finite())), || {
            "non-finite demonstration point".into()
        })?;
        Ok(Self { times, points, nominal_id })
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Piecewise-linear position at time `t`, clamped to the end points.
    pub fn position_at(&self, t: f64) -> Vec3 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.points[0];
        }
        if t >= self.times[n - 1] {
            return self.points[n - 1];
        }
        let hi = self.times.partition_point(|&x| x <= t);
        let (t0, t1) = (self.times[hi - 1], self.times[hi]);
        let w = (t - t0) / (t1 - t0);
        self.points[hi - 1] * (1.0 - w) + self.points[hi] * w
    }

    /// Column `dim` of the sampled points.
    pub fn coordinate(&self, dim: usize) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.points.iter().map(|p| p[dim]))
    }

    /// Portion of the demonstration inside `[from, to]`, shifted to start at zero.
    /// Boundary samples are interpolated when they fall between grid points.
    pub fn window(&self, from: f64, to: f64) -> Result<Self> {
        ensure(from >= 0.0 && to <= self.duration() && from < to, || {
            format!("window [{from}, {to}] outside [0, {}]", self.duration())
        })?;
        let mut times = vec![0.0];
        let mut points = vec![self.position_at(from)];
        for (&t, p) in self.times.iter().zip(&self.points) {
            if t > from && t < to {
                times.push(t - from);
                points.push(*p);
            }
        }
        times.push(to - from);
        points.push(self.position_at(to));
        Self::new(times, points, self.nominal_id)
    }

    /// Same samples stretched to a new total duration.
    pub fn retimed(&self, duration: f64) -> Result<Self> {
        ensure(duration > 0.0, || format!("duration must be positive, got {duration}"))?;
        let scale = duration / self.duration();
        let n = self.times.len();
        let times = self
            .times
            .iter()
            .enumerate()
            .map(|(i, &t)| if i + 1 == n { duration } else { t * scale })
            .collect();
        Self::new(times, self.points.clone(), self.nominal_id)
    }
}

/// Linear resampling onto `n` uniform times over the same span.
pub fn resample(demo: &Demonstration, n: usize) -> Result<Demonstration> {
    ensure(n >= 2, || format!("resampling needs n >= 2, got {n}"))?;
    let duration = demo.duration();
    let times: Vec<f64> = (0..n)
        .map(|i| if i + 1 == n { duration } else { duration * i as f64 / (n - 1) as f64 })
        .collect();
    let points = times.iter().map(|&t| demo.position_at(t)).collect();
    Demonstration::new(times, points, demo.nominal_id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    pub duration: f64,
    pub start: Vec3,
    pub goals: Vec<Vec3>,
    pub demos: Vec<Demonstration>,
}

impl DemoSet {
    /// Pointwise average of all demonstrations on the first demo's time grid.
    pub fn mean_path(&self) -> Demonstration {
        let first = &self.demos[0];
        let n = self.demos.len() as f64;
        let points = first
            .times
            .iter()
            .map(|&t| self.demos.iter().map(|d| d.position_at(t)).sum::<Vec3>() / n)
            .collect();
        Demonstration {
            times: first.times.clone(),
            points,
            nominal_id: usize::MAX,
        }
    }

    /// Every demonstration restricted to `[from, to]` and stretched to `duration`.
    pub fn window(&self, from: f64, to: f64, duration: f64) -> Result<Self> {
        let demos = self
            .demos
            .iter()
            .map(|d| d.window(from, to)?.retimed(duration))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            duration,
            start: demos[0].points[0],
            goals: self.goals.clone(),
            demos,
        })
    }

    pub fn retimed(&self, duration: f64) -> Result<Self> {
        self.window(0.0, self.duration, duration)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = DemoSetFile {
            duration: self.duration,
            start: arr3(&self.start),
            goals: self.goals.iter().map(arr3).collect(),
            demos: self
                .demos
                .iter()
                .map(|d| DemoFile {
                    nominal_id: d.nominal_id,
                    times: d.times.clone(),
                    points: d.points.iter().map(arr3).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).map_err(|e| Error::parse("demo set", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DemoSetFile = serde_json::from_str(text).map_err(|e| Error::parse("demo set", e))?;
        let demos = file
            .demos
            .into_iter()
            .map(|d| Demonstration::new(d.times, d.points.into_iter().map(vec3).collect(), d.nominal_id))
            .collect::<Result<Vec<_>>>()?;
        let set = Self {
            duration: file.duration,
            start: vec3(file.start),
            goals: file.goals.into_iter().map(vec3).collect(),
            demos,
        };
        ensure(set.duration > 0.0, || "demo set duration must be positive".into())?;
        for d in &set.demos {
            ensure(d.points[0] == set.start, || "demonstrations must share the start point".into())?;
            ensure((d.duration() - set.duration).abs() < 1e-12, || {
                "demonstrations must share the duration".into()
            })?;
        }
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Long-form CSV for plotting: `demo,nominal_id,t,x,y,z`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("demo,nominal_id,t,x,y,z\n");
        for (i, d) in self.demos.iter().enumerate() {
            for (t, p) in d.times.iter().zip(&d.points) {
                out.push_str(&format!("{i},{},{t},{},{},{}\n", d.nominal_id, p.x, p.y, p.z));
            }
        }
        out
    }
}

#[derive(Serialize, Deserialize)]
struct DemoFile {
    nominal_id: usize,
    times: Vec<f64>,
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct DemoSetFile {
    #[serde(rename = "T")]
    duration: f64,
    start: [f64; 3],
    #[serde(default)]
    goals: Vec<[f64; 3]>,
    demos: Vec<DemoFile>,
}

/// Parameters of the demonstration generator.
#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub start: Vec3,
    pub goals: Vec<Vec3>,
    pub duration: f64,
    pub samples_per_traj: usize,
    /// Samples per second.
    pub sample_rate: f64,
    /// Per-axis standard deviation of the perturbed end point, meters.
    pub end_std: f64,
    /// Height of the via point above the chord midpoint, meters.
    pub via_lift: f64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            start: Vec3::new(0.0, 0.0, 0.3),
            goals: default_goals(),
            duration: 1.0,
            samples_per_traj: 10,
            sample_rate: 100.0,
            end_std: 1e-3,
            via_lift: 0.05,
        }
    }
}

/// Ten goals on a 4 cm ring around the default cluster location, alternating
/// 1 cm above and below its plane.
pub fn default_goals() -> Vec<Vec3> {
    let center = Vec3::new(0.30, 0.0, 0.52);
    (0..10)
        .map(|j| {
            let a = std::f64::consts::TAU * j as f64 / 10.0;
            let dz = if j % 2 == 0 { 0.01 } else { -0.01 };
            center + Vec3::new(0.04 * a.cos(), 0.04 * a.sin(), dz)
        })
        .collect()
}

/// Cubic-RBF interpolant through start, a lifted midpoint via point, and goal.
#[derive(Debug, Clone)]
pub struct NominalPath {
    rbf: CubicRbf,
    coeffs: [DVector<f64>; 3],
    duration: f64,
}

impl NominalPath {
    pub fn fit(start: Vec3, goal: Vec3, duration: f64, via_lift: f64) -> Result<Self> {
        ensure(duration > 0.0, || format!("duration must be positive, got {duration}"))?;
        if (goal - start).norm() < 1e-9 {
            return Err(Error::DegenerateTrajectory(format!(
                "goal {goal:?} coincides with the start point"
            )));
        }
        let via = (start + goal) / 2.0 + Vec3::z() * via_lift;
        let knots = [0.0, 0.5, 1.0];
        let rbf = CubicRbf::new(knots.to_vec())?;
        // Kernel block plus a linear tail with the usual side conditions.
        let a = DMatrix::from_fn(5, 5, |i, j| match (i, j) {
            (i, j) if i < 3 && j < 3 => (knots[i] - knots[j]).abs().powi(3),
            (i, 3) | (3, i) if i < 3 => 1.0,
            (i, 4) if i < 3 => knots[i],
            (4, j) if j < 3 => knots[j],
            _ => 0.0,
        });
        let lu = a.lu();
        let mut coeffs: [DVector<f64>; 3] = Default::default();
        for (d, c) in coeffs.iter_mut().enumerate() {
            let rhs = DVector::from_vec(vec![start[d], via[d], goal[d], 0.0, 0.0]);
            *c = lu
                .solve(&rhs)
                .ok_or_else(|| Error::DegenerateTrajectory("singular RBF system".into()))?;
        }
        Ok(Self { rbf, coeffs, duration })
    }

    pub fn position(&self, t: f64) -> Result<Vec3> {
        let x = t / self.duration;
        let row = self.rbf.eval(x)?;
        let at = |c: &DVector<f64>| row.dot(&c.rows(0, 3)) + c[3] + c[4] * x;
        Ok(Vec3::new(at(&self.coeffs[0]), at(&self.coeffs[1]), at(&self.coeffs[2])))
    }
}

fn sample_times(duration: f64, rate: f64) -> Vec<f64> {
    let n = (duration * rate).round().max(1.0) as usize + 1;
    (0..n)
        .map(|i| if i + 1 == n { duration } else { duration * i as f64 / (n - 1) as f64 })
        .collect()
}

/// Synthesizes `goals.len() * samples_per_traj` demonstrations.
///
/// The start is shared exactly. Each copy's end point is drawn around its
/// nominal goal and the offset is blended in linearly with time.
pub fn generate_nominals(cfg: &DemoConfig, seed: u64) -> Result<DemoSet> {
    ensure(!cfg.goals.is_empty(), || "at least one goal is required".into())?;
    ensure(cfg.duration > 0.0, || format!("duration must be positive, got {}", cfg.duration))?;
    ensure(cfg.samples_per_traj >= 1, || "samples_per_traj must be at least 1".into())?;
    ensure(cfg.sample_rate > 0.0, || "sample rate must be positive".into())?;
    let noise = Normal::new(0.0, cfg.end_std)
        .map_err(|e| Error::InvalidInput(format!("end-point std {}: {e}", cfg.end_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times = sample_times(cfg.duration, cfg.sample_rate);

    let mut demos = Vec::with_capacity(cfg.goals.len() * cfg.samples_per_traj);
    for (id, goal) in cfg.goals.iter().enumerate() {
        let nominal = NominalPath::fit(cfg.start, *goal, cfg.duration, cfg.via_lift)?;
        let base = times
            .iter()
            .map(|&t| nominal.position(t))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..cfg.samples_per_traj {
            let offset = Vec3::new(noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng));
            let points = times
                .iter()
                .zip(&base)
                .enumerate()
                .map(|(i, (&t, p))| {
                    if i == 0 {
                        cfg.start
                    } else {
                        p + offset * (t / cfg.duration)
                    }
                })
                .collect();
            demos.push(Demonstration::new(times.clone(), points, id)?);
        }
    }
    Ok(DemoSet {
        duration: cfg.duration,
        start: cfg.start,
        goals: cfg.goals.clone(),
        demos,
    })
}
