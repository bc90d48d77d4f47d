//! Interactive ProMP generation for one picking cycle and for chains of them.

use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::Vec3;
use crate::promp::{
    uniform_times, CompositePrimitive, ProMP, Trajectory, TrajectoryDistribution, Waypoint, DEFAULT_T1,
    DEFAULT_TOTAL, DEFAULT_WEIGHT_PRIOR,
};
use crate::scene::{ClusterScene, TableTopFrame, R_F_MAX, R_G_MAX};
use crate::sip::{plan_pushes, PushPlan};

/// Start of the first cycle, m.
pub const HOME: [f64; 3] = [0.0, 0.0, 0.3];
/// Drop of the approach point below the goal, m.
pub const BELOW_OFFSET: f64 = 0.1;
/// Minimum density of the exported mean path, samples per second.
pub const MIN_RATE: f64 = 100.0;
/// Largest waypoint miss still counted as a hit, m.
pub const WAYPOINT_TOLERANCE: f64 = 1e-4;

const SAME_TIME: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    PreviousGoal,
    BelowGoal,
    PushableOriginal,
    PushableUpdated,
    Goal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduledWaypoint {
    #[serde(flatten)]
    pub waypoint: Waypoint,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fruit_id: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSchedule {
    pub waypoints: Vec<ScheduledWaypoint>,
}

impl ConditioningSchedule {
    pub fn new(waypoints: Vec<ScheduledWaypoint>) -> Result<Self> {
        let s = Self { waypoints };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        ensure(self.waypoints.len() >= 2, || "schedule needs at least a start and a goal".into())?;
        ensure(self.waypoints[0].waypoint.t >= 0.0, || "schedule starts before t = 0".into())?;
        for w in self.waypoints.windows(2) {
            ensure(w[1].waypoint.t > w[0].waypoint.t, || {
                format!("schedule times not increasing at t = {}", w[1].waypoint.t)
            })?;
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |w| w.waypoint.t)
    }

    pub fn times(&self) -> Vec<f64> {
        self.waypoints.iter().map(|w| w.waypoint.t).collect()
    }

    pub fn plain(&self) -> Vec<Waypoint> {
        self.waypoints.iter().map(|w| w.waypoint).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("schedule", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::parse("schedule", e))?;
        s.validate()?;
        Ok(s)
    }
}

/// Conditioning times: start, approach point, interior slots, goal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPreset {
    pub name: String,
    pub times: Vec<f64>,
}

impl TimingPreset {
    pub fn new(name: impl Into<String>, times: Vec<f64>) -> Result<Self> {
        ensure(times.len() >= 3, || "timing preset needs at least 3 slots".into())?;
        ensure(times[0] == 0.0, || "timing preset must start at 0".into())?;
        ensure(times.windows(2).all(|w| w[1] > w[0]), || "timing preset must be increasing".into())?;
        Ok(Self { name: name.into(), times })
    }

    pub fn tc1() -> Self {
        Self::new("T_c1", vec![0.0, 0.85, 1.0, 1.3, 1.6, 2.0]).expect("valid preset")
    }

    pub fn tc2() -> Self {
        Self::new("T_c2", vec![0.0, 1.2, 1.4, 1.6, 1.8, 2.0]).expect("valid preset")
    }

    /// Approach at `t1`, then `interior` evenly spaced slots before `total`.
    pub fn dense(interior: usize, t1: f64, total: f64) -> Result<Self> {
        ensure(t1 > 0.0 && t1 < total, || format!("switch time {t1} must lie in (0, {total})"))?;
        let step = (total - t1) / (interior + 1) as f64;
        let mut times = vec![0.0, t1];
        times.extend((1..=interior).map(|i| t1 + step * i as f64));
        times.push(total);
        Self::new("auto", times)
    }

    /// `T_c1`, `T_c2`, or `auto` sized for `points` interior waypoints.
    pub fn by_name(name: &str, points: usize, t1: f64, total: f64) -> Result<Self> {
        match name {
            "T_c1" | "tc1" => Ok(Self::tc1()),
            "T_c2" | "tc2" => Ok(Self::tc2()),
            "auto" => Self::dense(points.max(1), t1, total),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    pub fn duration(&self) -> f64 {
        *self.times.last().expect("non-empty preset")
    }

    pub fn interior_slots(&self) -> usize {
        self.times.len() - 3
    }
}

/// Directives that actually move a fruit, in plan order.
fn moving(plan: &PushPlan) -> impl Iterator<Item = &crate::sip::PushDirective> {
    plan.directives.iter().filter(|d| d.s > 0.0)
}

/// Interior waypoints a schedule for `plan` needs.
pub fn interior_points(plan: &PushPlan, naive: bool) -> usize {
    moving(plan).count() * if naive { 1 } else { 2 }
}

fn assemble(
    interior: Vec<(Vec3, Provenance, usize)>,
    prev_goal: Vec3,
    goal: Vec3,
    frame: &TableTopFrame,
    timing: &TimingPreset,
) -> Result<ConditioningSchedule> {
    if interior.len() > timing.interior_slots() {
        return Err(Error::ScheduleOverflow {
            needed: interior.len() + 3,
            available: timing.times.len(),
        });
    }
    let slot = &timing.times;
    let mut out = vec![
        ScheduledWaypoint {
            waypoint: Waypoint::hard(slot[0], prev_goal),
            provenance: Provenance::PreviousGoal,
            fruit_id: None,
        },
        ScheduledWaypoint {
            waypoint: Waypoint::hard(slot[1], goal - frame.k * BELOW_OFFSET),
            provenance: Provenance::BelowGoal,
            fruit_id: None,
        },
    ];
    for (i, (p, provenance, id)) in interior.into_iter().enumerate() {
        out.push(ScheduledWaypoint {
            waypoint: Waypoint::hard(slot[2 + i], p),
            provenance,
            fruit_id: Some(id),
        });
    }
    out.push(ScheduledWaypoint {
        waypoint: Waypoint::hard(timing.duration(), goal),
        provenance: Provenance::Goal,
        fruit_id: None,
    });
    ConditioningSchedule::new(out)
}

/// Waypoints for one cycle: previous goal, approach point below the goal,
/// each pushable fruit followed by its pushed-aside pose, then the goal.
///
/// Directives with no displacement are left out.
pub fn build_schedule(
    plan: &PushPlan,
    prev_goal: Vec3,
    goal: Vec3,
    frame: &TableTopFrame,
    timing: &TimingPreset,
) -> Result<ConditioningSchedule> {
    let shift = R_G_MAX + R_F_MAX;
    let interior = moving(plan)
        .flat_map(|d| {
            [
                (d.original_position, Provenance::PushableOriginal, d.fruit_id),
                (d.original_position + d.u_p * shift, Provenance::PushableUpdated, d.fruit_id),
            ]
        })
        .collect();
    assemble(interior, prev_goal, goal, frame, timing)
}

/// Conditions directly on the neighbour positions, without pushed poses.
pub fn build_naive_schedule(
    plan: &PushPlan,
    prev_goal: Vec3,
    goal: Vec3,
    frame: &TableTopFrame,
    timing: &TimingPreset,
) -> Result<ConditioningSchedule> {
    let interior = moving(plan)
        .map(|d| (d.original_position, Provenance::PushableOriginal, d.fruit_id))
        .collect();
    assemble(interior, prev_goal, goal, frame, timing)
}

/// Trajectory model before or after conditioning.
#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    Single(ProMP),
    Composite(CompositePrimitive),
}

impl Primitive {
    /// One model stretched over `total`.
    pub fn single(mp: &ProMP, total: f64) -> Result<Self> {
        Ok(Self::Single(mp.with_duration(total)?))
    }

    /// Reach segment on `[0, t1)`, push segment on `[t1, total]`.
    pub fn composite(mp1: &ProMP, mp2: &ProMP, t1: f64, total: f64) -> Result<Self> {
        ensure(t1 > 0.0 && t1 < total, || format!("switch time {t1} must lie in (0, {total})"))?;
        Ok(Self::Composite(CompositePrimitive::from_parts(
            mp1.clone(),
            mp2.with_duration(total - t1)?,
            t1,
        )?))
    }

    pub fn duration(&self) -> f64 {
        match self {
            Self::Single(m) => m.duration(),
            Self::Composite(c) => c.duration(),
        }
    }

    pub fn mean_at(&self, t: f64) -> Result<Vec3> {
        match self {
            Self::Single(m) => m.mean_at(t),
            Self::Composite(c) => c.mean_at(t),
        }
    }

    pub fn marginal(&self, times: &[f64]) -> Result<TrajectoryDistribution> {
        match self {
            Self::Single(m) => m.marginal(times),
            Self::Composite(c) => c.marginal(times),
        }
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, times: &[f64], rng: &mut R) -> Result<Trajectory> {
        match self {
            Self::Single(m) => m.sample_with(times, rng, false),
            Self::Composite(c) => c.sample_with(times, rng),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlannerConfig {
    /// Isotropic weight variance added before conditioning, m².
    pub weight_prior: f64,
    /// Density of the exported mean path, samples per second.
    pub rate: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            weight_prior: DEFAULT_WEIGHT_PRIOR,
            rate: MIN_RATE,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IProMPResult {
    pub primitive: Primitive,
    pub mean_path: TrajectoryDistribution,
    pub schedule: ConditioningSchedule,
    /// Wall-clock seconds spent in [`generate`].
    pub planning_time: f64,
}

impl IProMPResult {
    /// Largest distance between the conditioned mean and a scheduled point.
    pub fn max_waypoint_error(&self) -> Result<f64> {
        self.schedule.waypoints.iter().try_fold(0.0f64, |acc, w| {
            Ok(acc.max((self.primitive.mean_at(w.waypoint.t)? - w.waypoint.position).norm()))
        })
    }

    pub fn start(&self) -> Result<Vec3> {
        self.primitive.mean_at(0.0)
    }
}

/// Conditions the primitive on every scheduled waypoint.
///
/// For a composite, waypoints before the switch time go to the reach
/// segment and the rest to the push segment in its local time. A waypoint
/// exactly at the switch time pins both; without one, the push segment is
/// pinned to the reach segment's end.
pub fn generate(primitive: &Primitive, schedule: &ConditioningSchedule, cfg: &PlannerConfig) -> Result<IProMPResult> {
    let started = Instant::now();
    schedule.validate()?;
    let total = primitive.duration();
    ensure((schedule.duration() - total).abs() <= 1e-9, || {
        format!("schedule ends at {} but the primitive lasts {total}", schedule.duration())
    })?;
    let wps = schedule.plain();
    let conditioned = match primitive {
        Primitive::Single(mp) => Primitive::Single(mp.with_weight_prior(cfg.weight_prior)?.condition_all(&wps)?),
        Primitive::Composite(c) => {
            let t1 = c.t1;
            let reach: Vec<Waypoint> = wps.iter().copied().filter(|w| w.t <= t1 + SAME_TIME).collect();
            let mut push: Vec<Waypoint> = wps
                .iter()
                .filter(|w| w.t >= t1 - SAME_TIME)
                .map(|w| Waypoint { t: (w.t - t1).max(0.0), ..*w })
                .collect();
            let mp1 = c.mp1.with_weight_prior(cfg.weight_prior)?.condition_all(&reach)?;
            if !reach.iter().any(|w| (w.t - t1).abs() <= SAME_TIME) {
                push.insert(0, Waypoint::hard(0.0, mp1.mean_at(t1)?));
            }
            let mp2 = c.mp2.with_weight_prior(cfg.weight_prior)?.condition_all(&push)?;
            Primitive::Composite(CompositePrimitive::from_parts(mp1, mp2, t1)?)
        }
    };
    let mean_path = conditioned.marginal(&uniform_times(total, cfg.rate.max(MIN_RATE)))?;
    Ok(IProMPResult {
        primitive: conditioned,
        mean_path,
        schedule: schedule.clone(),
        planning_time: started.elapsed().as_secs_f64(),
    })
}

/// Which schedule the cycle builds and from which timing preset.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleConfig {
    pub timing: String,
    pub naive: bool,
    pub home: Vec3,
    pub t1: f64,
    pub planner: PlannerConfig,
}

impl Default for CycleConfig {
    fn default() -> Self {
        Self {
            timing: "T_c1".into(),
            naive: false,
            home: Vec3::from(HOME),
            t1: DEFAULT_T1,
            planner: PlannerConfig::default(),
        }
    }
}

/// Push plan, schedule and conditioned trajectory for one target.
#[derive(Debug, Clone)]
pub struct CyclePlan {
    pub plan: PushPlan,
    pub result: IProMPResult,
}

/// Plans one target starting from `prev_goal`.
pub fn plan_target(
    scene: &ClusterScene,
    target_id: usize,
    prev_goal: Vec3,
    primitive: &Primitive,
    cfg: &CycleConfig,
) -> Result<CyclePlan> {
    let plan = plan_pushes(scene, target_id)?;
    let goal = scene.fruit(target_id)?.position;
    let timing = TimingPreset::by_name(
        &cfg.timing,
        interior_points(&plan, cfg.naive),
        cfg.t1,
        primitive.duration(),
    )?;
    ensure((timing.duration() - primitive.duration()).abs() <= 1e-9, || {
        format!(
            "timing preset {} ends at {} but the primitive lasts {}",
            timing.name,
            timing.duration(),
            primitive.duration()
        )
    })?;
    let schedule = if cfg.naive {
        build_naive_schedule(&plan, prev_goal, goal, &scene.frame, &timing)?
    } else {
        build_schedule(&plan, prev_goal, goal, &scene.frame, &timing)?
    };
    let result = generate(primitive, &schedule, &cfg.planner)?;
    Ok(CyclePlan { plan, result })
}

#[derive(Debug)]
pub struct CycleOutcome {
    pub target_id: usize,
    pub outcome: Result<CyclePlan>,
}

/// Plans the targets in order. Each picked target's goal starts the next
/// cycle and the fruit leaves the scene; failures are kept and skipped.
pub fn pick_cycle(scene: &ClusterScene, targets: &[usize], primitive: &Primitive, cfg: &CycleConfig) -> Vec<CycleOutcome> {
    let mut scene = scene.clone();
    let mut prev_goal = cfg.home;
    let mut out = Vec::with_capacity(targets.len());
    for &target_id in targets {
        let outcome = plan_target(&scene, target_id, prev_goal, primitive, cfg);
        if let Ok(done) = &outcome {
            prev_goal = done.result.schedule.waypoints.last().expect("goal").waypoint.position;
            scene = scene.without(target_id);
        }
        out.push(CycleOutcome { target_id, outcome });
    }
    out
}

/// Default composite timing.
pub fn default_composite(mp1: &ProMP, mp2: &ProMP) -> Result<Primitive> {
    Primitive::composite(mp1, mp2, DEFAULT_T1, DEFAULT_TOTAL)
}
