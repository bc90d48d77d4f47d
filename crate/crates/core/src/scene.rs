//! Fruit clusters: fruits hanging from hinged stems under a table-top plane.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::geometry::Vec3;
use crate::promp::vec3_serde;

/// Maximum gripper opening radius, m.
pub const R_G_MAX: f64 = 0.03;
/// Maximum fruit radius estimate, m.
pub const R_F_MAX: f64 = 0.015;
/// Cluster radius used to collect neighbours of a target, m.
pub const RNN_RADIUS: f64 = 0.05;

const STEM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fruit {
    pub id: usize,
    #[serde(with = "vec3_serde")]
    pub position: Vec3,
    pub radius: f64,
    pub ripe: bool,
    pub stem_id: Option<usize>,
}

/// Rigid stem with a ball hinge at `root`; its fruit sits at `root + length * direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stem {
    pub id: usize,
    #[serde(with = "vec3_serde")]
    pub root: Vec3,
    #[serde(with = "vec3_serde")]
    pub direction: Vec3,
    pub length: f64,
}

impl Stem {
    pub fn tip(&self) -> Vec3 {
        self.root + self.direction * self.length
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableTopFrame {
    #[serde(with = "vec3_serde")]
    pub i: Vec3,
    #[serde(with = "vec3_serde")]
    pub k: Vec3,
    pub plane_z: f64,
}

impl Default for TableTopFrame {
    fn default() -> Self {
        Self {
            i: Vec3::x(),
            k: Vec3::z(),
            plane_z: 0.6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScene {
    pub frame: TableTopFrame,
    pub gripper_radius: f64,
    pub fruits: Vec<Fruit>,
    pub stems: Vec<Stem>,
}

/// Named cluster layouts.
pub const PRESETS: [&str; 9] = [
    "C_I",
    "C_II",
    "C_III",
    "C_IV",
    "C_V",
    "C_VI",
    "detached_I",
    "detached_II",
    "detached_III",
];

fn preset_source(id: &str) -> Option<&'static str> {
    Some(match id {
        "C_I" => include_str!("../presets/C_I.json"),
        "C_II" => include_str!("../presets/C_II.json"),
        "C_III" => include_str!("../presets/C_III.json"),
        "C_IV" => include_str!("../presets/C_IV.json"),
        "C_V" => include_str!("../presets/C_V.json"),
        "C_VI" => include_str!("../presets/C_VI.json"),
        "detached_I" => include_str!("../presets/detached_I.json"),
        "detached_II" => include_str!("../presets/detached_II.json"),
        "detached_III" => include_str!("../presets/detached_III.json"),
        _ => return None,
    })
}

/// Loads one of the bundled [`PRESETS`].
pub fn preset(id: &str) -> Result<ClusterScene> {
    let text = preset_source(id).ok_or_else(|| Error::UnknownPreset(id.to_string()))?;
    ClusterScene::from_json(text)
}

impl ClusterScene {
    pub fn validate(&self) -> Result<()> {
        let f = &self.frame;
        ensure((f.i.norm() - 1.0).abs() < 1e-9 && (f.k.norm() - 1.0).abs() < 1e-9, || {
            "frame axes must be unit vectors".into()
        })?;
        ensure(f.i.dot(&f.k).abs() < 1e-9, || "frame axes must be orthogonal".into())?;
        ensure(self.gripper_radius > 0.0, || "gripper radius must be positive".into())?;
        for stem in &self.stems {
            if (stem.direction.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidStem(format!("{}: direction is not a unit vector", stem.id)));
            }
            if !(stem.length > 0.0) {
                return Err(Error::InvalidStem(format!("{}: non-positive length", stem.id)));
            }
            ensure(self.stems.iter().filter(|s| s.id == stem.id).count() == 1, || {
                format!("duplicate stem id {}", stem.id)
            })?;
        }
        for fruit in &self.fruits {
            ensure(fruit.radius > 0.0, || format!("fruit {} has non-positive radius", fruit.id))?;
            ensure(self.fruits.iter().filter(|g| g.id == fruit.id).count() == 1, || {
                format!("duplicate fruit id {}", fruit.id)
            })?;
            if let Some(sid) = fruit.stem_id {
                let stem = self
                    .stem(sid)
                    .ok_or_else(|| Error::InvalidStem(format!("fruit {} references missing stem {sid}", fruit.id)))?;
                ensure((stem.tip() - fruit.position).norm() <= STEM_TOLERANCE, || {
                    format!("fruit {} is not at the tip of stem {sid}", fruit.id)
                })?;
                ensure(self.fruits.iter().filter(|g| g.stem_id == Some(sid)).count() == 1, || {
                    format!("stem {sid} carries more than one fruit")
                })?;
            }
        }
        Ok(())
    }

    pub fn fruit(&self, id: usize) -> Result<&Fruit> {
        self.fruits.iter().find(|f| f.id == id).ok_or(Error::UnknownFruit(id))
    }

    pub fn stem(&self, id: usize) -> Option<&Stem> {
        self.stems.iter().find(|s| s.id == id)
    }

    pub fn stem_of(&self, fruit: &Fruit) -> Option<&Stem> {
        fruit.stem_id.and_then(|sid| self.stem(sid))
    }

    pub fn ripe(&self) -> impl Iterator<Item = &Fruit> {
        self.fruits.iter().filter(|f| f.ripe)
    }

    /// Points a stem in a new direction and moves its fruit with it.
    pub fn set_stem_direction(&mut self, stem_id: usize, direction: Vec3) -> Result<()> {
        let stem = self
            .stems
            .iter_mut()
            .find(|s| s.id == stem_id)
            .ok_or_else(|| Error::InvalidStem(format!("missing stem {stem_id}")))?;
        stem.direction = direction.normalize();
        let tip = stem.tip();
        for fruit in self.fruits.iter_mut().filter(|f| f.stem_id == Some(stem_id)) {
            fruit.position = tip;
        }
        Ok(())
    }

    /// Scene without the given fruit (and its stem).
    pub fn without(&self, fruit_id: usize) -> Self {
        let mut out = self.clone();
        if let Some(pos) = out.fruits.iter().position(|f| f.id == fruit_id) {
            let removed = out.fruits.remove(pos);
            if let Some(sid) = removed.stem_id {
                out.stems.retain(|s| s.id != sid);
            }
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let scene: Self = serde_json::from_str(text).map_err(|e| Error::parse("scene", e))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::parse("scene", e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Every other fruit within distance `r` of the target (closed ball).
pub fn radius_nearest_neighbours<'a>(scene: &'a ClusterScene, target: &Fruit, r: f64) -> Vec<&'a Fruit> {
    scene
        .fruits
        .iter()
        .filter(|f| f.id != target.id && (f.position - target.position).norm() <= r)
        .collect()
}
