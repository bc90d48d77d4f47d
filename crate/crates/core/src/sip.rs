//! Push selection for a target fruit: which occluding neighbours to move,
//! in which direction, and by how much.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Vec3};
use crate::promp::vec3_serde;
use crate::scene::{radius_nearest_neighbours, ClusterScene, Fruit, Stem, TableTopFrame, RNN_RADIUS};

/// Height band treated as "the same level", m.
pub const LEVEL_TOLERANCE: f64 = 0.005;

/// Occluding neighbours split by height relative to the target.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OcclusionSubsets {
    /// Below the target, ascending along `k`.
    pub below: Vec<Fruit>,
    pub level: Vec<Fruit>,
    pub above: Vec<Fruit>,
}

/// Keeps neighbours inside the approach corridor (`|i · d| <= r_g`) and
/// buckets them by height.
pub fn split_subsets(cluster: &[&Fruit], target: &Fruit, frame: &TableTopFrame, r_g_max: f64) -> OcclusionSubsets {
    let mut out = OcclusionSubsets::default();
    for &n in cluster {
        let d = n.position - target.position;
        if frame.i.dot(&d).abs() > r_g_max {
            continue;
        }
        let dz = frame.k.dot(&d);
        if dz < -LEVEL_TOLERANCE {
            out.below.push(n.clone());
        } else if dz > LEVEL_TOLERANCE {
            out.above.push(n.clone());
        } else {
            out.level.push(n.clone());
        }
    }
    let k = frame.k;
    out.below.sort_by(|a, b| k.dot(&a.position).total_cmp(&k.dot(&b.position)).then(a.id.cmp(&b.id)));
    out
}

/// True when the stem segment cuts through the target fruit.
pub fn stem_occludes(stem: &Stem, target: &Fruit) -> bool {
    point_segment_distance(&target.position, &stem.root, &stem.tip()) <= target.radius
}

/// Reduces the lower subset to the fruits that must be pushed.
///
/// Each group of quasi-equal height keeps one member: the one closest to the
/// approach line, or, when a stem in the group crosses the target, the one
/// with the most vertical stem. Level and upper occluders are dropped.
pub fn subset_opt(subsets: &OcclusionSubsets, target: &Fruit, scene: &ClusterScene) -> Vec<Fruit> {
    let frame = &scene.frame;
    let height = |f: &Fruit| frame.k.dot(&f.position);
    let lateral = |f: &Fruit| frame.i.dot(&(f.position - target.position)).abs();
    let verticality = |f: &Fruit| scene.stem_of(f).map_or(0.0, |s| s.direction.dot(&frame.k).abs());

    let mut kept = Vec::new();
    let mut rest: &[Fruit] = &subsets.below;
    while let Some(first) = rest.first() {
        let base = height(first);
        let len = rest.iter().take_while(|f| height(f) - base <= LEVEL_TOLERANCE).count();
        let group = &rest[..len];
        let crossing = group
            .iter()
            .any(|f| scene.stem_of(f).is_some_and(|s| stem_occludes(s, target)));
        let pick = if crossing {
            group.iter().max_by(|a, b| verticality(a).total_cmp(&verticality(b)))
        } else {
            group.iter().min_by(|a, b| lateral(a).total_cmp(&lateral(b)))
        };
        kept.extend(pick.cloned());
        rest = &rest[len..];
    }
    kept
}

/// Stem inclination, clearance angle, extra rotation and fruit displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StemGeometry {
    pub theta0: f64,
    pub theta: f64,
    pub d_theta: f64,
    pub s: f64,
}

/// Rotation needed to swing a fruit `r_g_max` clear of its stem's vertical.
///
/// Inclination is measured from the vertical line, so hanging stems
/// (`u · k < 0`) are handled like upright ones.
pub fn stem_geometry(fruit_id: usize, stem: &Stem, frame: &TableTopFrame, r_g_max: f64) -> Result<StemGeometry> {
    if stem.length <= r_g_max {
        return Err(Error::GeometryInfeasible {
            fruit: fruit_id,
            length: stem.length,
            radius: r_g_max,
        });
    }
    let u = stem.direction.normalize();
    let cos0 = u.dot(&frame.k).abs();
    if !(cos0 <= 1.0 + 1e-12) {
        return Err(Error::InvalidStem(format!("{}: u_stem . k = {cos0}", stem.id)));
    }
    let theta0 = cos0.min(1.0).acos();
    let theta = (r_g_max / stem.length).asin();
    let d_theta = (theta - theta0).max(0.0);
    let s = stem.length * (2.0 * (1.0 - d_theta.cos())).sqrt();
    Ok(StemGeometry { theta0, theta, d_theta, s })
}

/// Push direction for one selected fruit.
///
/// With another selected fruit at the same level the push is vertical, away
/// from the target height. Otherwise it runs along the table-top axis, away
/// from the target.
pub fn get_dir(fruit: &Fruit, selected: &[Fruit], target: &Fruit, frame: &TableTopFrame) -> Vec3 {
    let level = frame.k.dot(&fruit.position);
    let crowded = selected
        .iter()
        .any(|o| o.id != fruit.id && (frame.k.dot(&o.position) - level).abs() <= LEVEL_TOLERANCE);
    let d = fruit.position - target.position;
    if crowded {
        if frame.k.dot(&d) < 0.0 {
            -frame.k
        } else {
            frame.k
        }
    } else if frame.i.dot(&d) < 0.0 {
        -frame.i
    } else {
        frame.i
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushDirective {
    pub fruit_id: usize,
    #[serde(with = "vec3_serde")]
    pub u_p: Vec3,
    pub d_theta: f64,
    pub s: f64,
    #[serde(with = "vec3_serde")]
    pub original_position: Vec3,
    #[serde(with = "vec3_serde")]
    pub stem_direction: Vec3,
    #[serde(with = "vec3_serde")]
    pub updated_position: Vec3,
}

/// A selected fruit that could not be given a push.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushFailure {
    pub fruit_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PushPlan {
    pub target_id: usize,
    /// Bottom-up along `k`.
    pub directives: Vec<PushDirective>,
    #[serde(default)]
    pub failures: Vec<PushFailure>,
}

impl PushPlan {
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }

    pub fn original_positions(&self) -> Vec<Vec3> {
        self.directives.iter().map(|d| d.original_position).collect()
    }

    pub fn orientations(&self) -> Vec<Vec3> {
        self.directives.iter().map(|d| d.stem_direction).collect()
    }

    pub fn updated_positions(&self) -> Vec<Vec3> {
        self.directives.iter().map(|d| d.updated_position).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("push plan", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("push plan", e))
    }
}

/// Full push selection for one ripe target.
pub fn plan_pushes(scene: &ClusterScene, target_id: usize) -> Result<PushPlan> {
    let target = scene.fruit(target_id)?;
    if !target.ripe {
        return Err(Error::InvalidInput(format!("fruit {target_id} is not ripe")));
    }
    let frame = &scene.frame;
    let r_g = scene.gripper_radius;
    let cluster = radius_nearest_neighbours(scene, target, RNN_RADIUS);
    let subsets = split_subsets(&cluster, target, frame, r_g);
    let selected = subset_opt(&subsets, target, scene);

    let mut plan = PushPlan {
        target_id,
        directives: Vec::with_capacity(selected.len()),
        failures: Vec::new(),
    };
    for fruit in &selected {
        let Some(stem) = scene.stem_of(fruit) else {
            plan.failures.push(PushFailure {
                fruit_id: fruit.id,
                reason: "fruit has no stem and cannot be pushed".into(),
            });
            continue;
        };
        let geom = match stem_geometry(fruit.id, stem, frame, r_g) {
            Ok(g) => g,
            Err(e @ (Error::GeometryInfeasible { .. } | Error::InvalidStem(_))) => {
                plan.failures.push(PushFailure {
                    fruit_id: fruit.id,
                    reason: e.to_string(),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let u_p = get_dir(fruit, &selected, target, frame);
        plan.directives.push(PushDirective {
            fruit_id: fruit.id,
            u_p,
            d_theta: geom.d_theta,
            s: geom.s,
            original_position: fruit.position,
            stem_direction: stem.direction,
            updated_position: fruit.position + u_p * geom.s,
        });
    }
    Ok(plan)
}

/// Picks a ripe fruit at random when the caller does not name one.
pub fn choose_target(scene: &ClusterScene, seed: u64) -> Result<usize> {
    let ripe: Vec<usize> = scene.ripe().map(|f| f.id).collect();
    ripe.choose(&mut ChaCha8Rng::seed_from_u64(seed))
        .copied()
        .ok_or_else(|| Error::InvalidInput("scene has no ripe fruit".into()))
}
