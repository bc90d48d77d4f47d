//! Quasi-static replay of a gripper path through a cluster.
//!
//! Stems are rigid and hinged at their roots. Whenever the gripper cone
//! overlaps a hinged fruit, the stem swings by the smallest angle that puts
//! the fruit back on the cone surface.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::f64::consts::FRAC_PI_2;

use nalgebra::Unit;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::{horizontal_distance, rotate, Vec3};
use crate::promp::Trajectory;
use crate::scene::{ClusterScene, R_F_MAX};
use crate::sip::PushPlan;

/// Height of the contact cone below its vertex, m.
pub const CONE_HEIGHT: f64 = 0.04;
/// Height band counted as "at the fruit's altitude", m.
pub const ALTITUDE_BAND: f64 = 0.005;
/// Upper bound on the horizontal distance for a contact, m.
pub const CONTACT_RANGE: f64 = 0.045;
/// Largest gripper displacement between two contact resolutions, m.
pub const MAX_SUBSTEP: f64 = 1e-3;

const ANGLE_SCAN: usize = 64;
const BISECTIONS: usize = 60;

/// Solid cone, vertex at `position`, widening downward along `axis`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    pub position: Vec3,
    pub radius: f64,
    pub height: f64,
    /// Upward unit axis.
    pub axis: Vec3,
}

impl GripperState {
    pub fn new(position: Vec3, radius: f64) -> Result<Self> {
        ensure(radius > 0.0, || format!("gripper radius must be positive, got {radius}"))?;
        Ok(Self {
            position,
            radius,
            height: CONE_HEIGHT,
            axis: Vec3::z(),
        })
    }

    pub fn at(&self, position: Vec3) -> Self {
        Self { position, ..*self }
    }

    /// Signed distance from `p` to the cone (negative inside).
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        let d = p - self.position;
        let y = d.dot(&self.axis);
        let r = (d - self.axis * y).norm();
        cone_section_distance(r, y, self.radius, self.height)
    }

    /// Distance from a sphere's surface to the cone (negative when overlapping).
    pub fn clearance(&self, center: &Vec3, radius: f64) -> f64 {
        self.signed_distance(center) - radius
    }

    /// Outward direction of increasing distance at `p`.
    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let e = 1e-7;
        let g = Vec3::from_fn(|i, _| {
            let mut a = *p;
            let mut b = *p;
            a[i] += e;
            b[i] -= e;
            self.signed_distance(&a) - self.signed_distance(&b)
        });
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            self.axis
        }
    }
}

/// Signed distance in the meridian half-plane `(r >= 0, y)` to the triangle
/// `(0, 0), (radius, -height), (0, -height)`.
fn cone_section_distance(r: f64, y: f64, radius: f64, height: f64) -> f64 {
    let seg = |ax: f64, ay: f64, bx: f64, by: f64| {
        let (dx, dy) = (bx - ax, by - ay);
        let s = (((r - ax) * dx + (y - ay) * dy) / (dx * dx + dy * dy)).clamp(0.0, 1.0);
        ((r - ax - s * dx).powi(2) + (y - ay - s * dy).powi(2)).sqrt()
    };
    let slant = seg(0.0, 0.0, radius, -height);
    let base = seg(0.0, -height, radius, -height);
    let inside = y <= 0.0 && y >= -height && r <= radius * (-y) / height;
    if inside {
        -slant.min(base)
    } else {
        slant.min(base)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Fraction of the way back to the rest direction per second without contact.
    pub spring_back: f64,
    pub max_substep: f64,
    pub cone_height: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            spring_back: 0.0,
            max_substep: MAX_SUBSTEP,
            cone_height: CONE_HEIGHT,
        }
    }
}

/// Mutable part of a scene during replay.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub scene: ClusterScene,
    rest: BTreeMap<usize, Vec3>,
    /// Fruit carried by the gripper; it never collides.
    pub payload: Option<usize>,
}

impl SceneState {
    pub fn new(scene: ClusterScene, payload: Option<usize>) -> Self {
        let rest = scene.stems.iter().map(|s| (s.id, s.direction)).collect();
        Self { scene, rest, payload }
    }

    /// Smallest clearance of any hinged, non-payload fruit.
    pub fn min_clearance(&self, gripper: &GripperState) -> f64 {
        self.scene
            .fruits
            .iter()
            .filter(|f| f.stem_id.is_some() && Some(f.id) != self.payload)
            .map(|f| gripper.clearance(&f.position, f.radius))
            .fold(f64::INFINITY, f64::min)
    }
}

/// What a single contact resolution did.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepReport {
    /// Fruits rotated in this step.
    pub moved: Vec<usize>,
    /// Stemless fruits the gripper overlaps.
    pub obstacle_hits: Vec<usize>,
}

/// Resolves every overlap with the gripper at its current pose.
///
/// Fails with the fruit id when a stem would have to swing more than a
/// right angle away from its rest direction.
pub fn step(state: &mut SceneState, gripper: &GripperState) -> std::result::Result<StepReport, usize> {
    let mut report = StepReport::default();
    let ids: Vec<usize> = state.scene.fruits.iter().map(|f| f.id).collect();
    for id in ids {
        if Some(id) == state.payload {
            continue;
        }
        let fruit = state.scene.fruit(id).expect("listed fruit").clone();
        if gripper.clearance(&fruit.position, fruit.radius) >= 0.0 {
            continue;
        }
        let Some(stem) = state.scene.stem_of(&fruit).cloned() else {
            report.obstacle_hits.push(id);
            continue;
        };
        let u0 = stem.direction;
        let n = gripper.normal(&fruit.position);
        let mut axis = u0.cross(&n);
        if axis.norm() < 1e-9 {
            let mut away = fruit.position - gripper.position;
            away -= gripper.axis * away.dot(&gripper.axis);
            if away.norm() < 1e-12 {
                away = any_horizontal(&gripper.axis);
            }
            axis = u0.cross(&away);
        }
        let axis = Unit::new_normalize(axis);
        let clearance_at = |phi: f64| {
            let p = stem.root + rotate(&u0, &axis, phi) * stem.length;
            gripper.clearance(&p, fruit.radius)
        };
        // Coarse scan for the first non-penetrating angle, then bisect.
        let mut lo = 0.0;
        let mut hi = None;
        for i in 1..=ANGLE_SCAN {
            let phi = FRAC_PI_2 * i as f64 / ANGLE_SCAN as f64;
            if clearance_at(phi) >= 0.0 {
                hi = Some(phi);
                break;
            }
            lo = phi;
        }
        let Some(mut hi) = hi else {
            return Err(id);
        };
        for _ in 0..BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if clearance_at(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let dir = rotate(&u0, &axis, hi).normalize();
        let rest = state.rest.get(&stem.id).copied().unwrap_or(u0);
        if dir.dot(&rest).clamp(-1.0, 1.0).acos() > FRAC_PI_2 {
            return Err(id);
        }
        state.scene.set_stem_direction(stem.id, dir).expect("known stem");
        report.moved.push(id);
    }
    Ok(report)
}

fn any_horizontal(axis: &Vec3) -> Vec3 {
    let trial = if axis.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (trial - axis * trial.dot(axis)).normalize()
}

fn relax(state: &mut SceneState, fraction: f64, touching: &[usize]) {
    let stems: Vec<(usize, Vec3)> = state
        .scene
        .fruits
        .iter()
        .filter(|f| !touching.contains(&f.id))
        .filter_map(|f| f.stem_id)
        .filter_map(|sid| state.scene.stem(sid).map(|s| (sid, s.direction)))
        .collect();
    for (sid, dir) in stems {
        let rest = state.rest[&sid];
        let blended = dir + (rest - dir) * fraction;
        if blended.norm() > 1e-12 {
            state.scene.set_stem_direction(sid, blended).expect("known stem");
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JamEvent {
    pub tick: usize,
    pub fruit: usize,
}

/// Gripper path and fruit/stem histories, one entry per trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub times: Vec<f64>,
    pub gripper_path: Vec<Vec3>,
    pub fruit_paths: BTreeMap<usize, Vec<Vec3>>,
    pub stem_paths: BTreeMap<usize, Vec<Vec3>>,
    /// Smallest hinged-fruit clearance at each tick.
    pub min_clearance: Vec<f64>,
    /// `(tick, fruit)` for every overlap with a stemless fruit.
    pub obstacle_hits: Vec<(usize, usize)>,
    pub jam: Option<JamEvent>,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Fails with the jam, if one stopped the replay.
    pub fn check(&self) -> Result<()> {
        match self.jam {
            Some(j) => Err(Error::Jam { tick: j.tick, fruit: j.fruit }),
            None => Ok(()),
        }
    }

    /// Distance between a fruit's first and last recorded positions.
    pub fn displacement(&self, fruit: usize) -> Option<f64> {
        let path = self.fruit_paths.get(&fruit)?;
        Some((path.last()? - path.first()?).norm())
    }

    /// Largest distance of a fruit from its initial position.
    pub fn max_excursion(&self, fruit: usize) -> Option<f64> {
        let path = self.fruit_paths.get(&fruit)?;
        let p0 = path.first()?;
        Some(path.iter().map(|p| (p - p0).norm()).fold(0.0, f64::max))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,gx,gy,gz");
        for id in self.fruit_paths.keys() {
            write!(out, ",f{id}_x,f{id}_y,f{id}_z").unwrap();
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let g = self.gripper_path[i];
            write!(out, "{t},{},{},{}", g.x, g.y, g.z).unwrap();
            for path in self.fruit_paths.values() {
                let p = path[i];
                write!(out, ",{},{},{}", p.x, p.y, p.z).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Drives the gripper along `trajectory`, resolving contacts on the way.
///
/// Motion between samples is split so the gripper never moves more than
/// `max_substep` between resolutions. A jam ends the trace at that tick.
pub fn replay(scene: &ClusterScene, trajectory: &Trajectory, payload: Option<usize>, cfg: &SimConfig) -> Result<SimTrace> {
    ensure(!trajectory.is_empty(), || "trajectory is empty".into())?;
    ensure(cfg.max_substep > 0.0 && cfg.spring_back >= 0.0, || "invalid simulator settings".into())?;
    scene.validate()?;
    let mut state = SceneState::new(scene.clone(), payload);
    let mut gripper = GripperState::new(trajectory.points[0], scene.gripper_radius)?;
    gripper.height = cfg.cone_height;
    gripper.axis = scene.frame.k;

    let mut trace = SimTrace {
        times: Vec::with_capacity(trajectory.len()),
        gripper_path: Vec::with_capacity(trajectory.len()),
        fruit_paths: scene.fruits.iter().map(|f| (f.id, Vec::new())).collect(),
        stem_paths: scene.stems.iter().map(|s| (s.id, Vec::new())).collect(),
        min_clearance: Vec::with_capacity(trajectory.len()),
        obstacle_hits: Vec::new(),
        jam: None,
    };
    let mut prev = trajectory.points[0];
    let mut prev_t = trajectory.times[0];
    for (tick, (&t, &target)) in trajectory.times.iter().zip(&trajectory.points).enumerate() {
        let n = ((target - prev).norm() / cfg.max_substep).ceil().max(1.0) as usize;
        let mut touching = Vec::new();
        let mut hits = Vec::new();
        for j in 1..=n {
            let pose = gripper.at(prev + (target - prev) * (j as f64 / n as f64));
            match step(&mut state, &pose) {
                Ok(r) => {
                    touching.extend(r.moved);
                    hits.extend(r.obstacle_hits);
                }
                Err(fruit) => {
                    trace.jam = Some(JamEvent { tick, fruit });
                    break;
                }
            }
        }
        if trace.jam.is_some() {
            break;
        }
        gripper = gripper.at(target);
        if cfg.spring_back > 0.0 {
            relax(&mut state, (cfg.spring_back * (t - prev_t)).min(1.0), &touching);
            if let Err(fruit) = step(&mut state, &gripper) {
                trace.jam = Some(JamEvent { tick, fruit });
                break;
            }
        }
        hits.sort_unstable();
        hits.dedup();
        trace.obstacle_hits.extend(hits.into_iter().map(|f| (tick, f)));
        trace.times.push(t);
        trace.gripper_path.push(target);
        for f in &state.scene.fruits {
            trace.fruit_paths.get_mut(&f.id).expect("fruit").push(f.position);
        }
        for s in &state.scene.stems {
            trace.stem_paths.get_mut(&s.id).expect("stem").push(s.direction);
        }
        trace.min_clearance.push(state.min_clearance(&gripper));
        prev = target;
        prev_t = t;
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FruitRole {
    Target,
    Pushable,
}

/// Horizontal gripper-to-fruit distances while at the fruit's altitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactMetric {
    pub fruit_id: usize,
    pub role: FruitRole,
    /// `None` when the gripper never reaches the fruit's altitude.
    pub h_min: Option<f64>,
    pub h_max: Option<f64>,
    pub contact: bool,
    pub swallowed: bool,
}

impl ContactMetric {
    pub fn applicable(&self) -> bool {
        self.h_min.is_some()
    }
}

/// Metrics for the target and every fruit the plan pushes.
pub fn contact_metrics(trace: &SimTrace, scene: &ClusterScene, plan: &PushPlan) -> Result<Vec<ContactMetric>> {
    let mut subjects = vec![(plan.target_id, FruitRole::Target)];
    subjects.extend(plan.directives.iter().map(|d| (d.fruit_id, FruitRole::Pushable)));
    let k = scene.frame.k;
    let swallow_radius = scene.gripper_radius - R_F_MAX;
    subjects
        .into_iter()
        .map(|(id, role)| {
            let path = trace.fruit_paths.get(&id).ok_or(Error::UnknownFruit(id))?;
            let hs: Vec<f64> = trace
                .gripper_path
                .iter()
                .zip(path)
                .filter(|(g, f)| k.dot(&(*g - *f)).abs() <= ALTITUDE_BAND)
                .map(|(g, f)| horizontal_distance(g, f))
                .collect();
            let h_min = hs.iter().copied().reduce(f64::min);
            let h_max = hs.iter().copied().reduce(f64::max);
            Ok(ContactMetric {
                fruit_id: id,
                role,
                h_min,
                h_max,
                contact: h_min.is_some_and(|h| h > 0.0 && h <= CONTACT_RANGE),
                swallowed: h_min.is_some_and(|h| h <= swallow_radius),
            })
        })
        .collect()
}

/// Table-style export: distances in centimetres.
pub fn metrics_json(configuration: &str, metrics: &[ContactMetric]) -> Result<String> {
    let rows: Vec<serde_json::Value> = metrics
        .iter()
        .map(|m| {
            serde_json::json!({
                "fruit_id": m.fruit_id,
                "role": m.role,
                "h_min_cm": m.h_min.map(|h| h * 100.0),
                "h_max_cm": m.h_max.map(|h| h * 100.0),
                "contact": m.contact,
                "swallowed": m.swallowed,
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "configuration": configuration, "fruits": rows }))
        .map_err(|e| Error::parse("metrics", e))
}
