//! Scene state and the push dynamics.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Footprint, Vec2, DEFAULT_RESOLUTION};

pub type ObjectId = u32;
pub type ClassId = u8;

/// Side length of the action / state grid.
pub const GRID: usize = 28;
pub const NUM_DIRECTIONS: usize = 8;
/// Located pushes plus the single stop action.
pub const NUM_ACTIONS: usize = GRID * GRID * NUM_DIRECTIONS + 1;
pub const STOP_INDEX: usize = NUM_ACTIONS - 1;

pub const SCENE_FORMAT_VERSION: u32 = 1;

/// Displacements below this are treated as "already at the wall".
const WALL_EPS: f64 = 1e-9;

/// Default "simple scene" overlap threshold; boundary values count as visible.
pub const DEFAULT_SIMPLE_THRESHOLD: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub width: f64,
    pub height: f64,
}

impl Default for Bin {
    fn default() -> Self {
        Self {
            width: 100.0,
            height: 100.0,
        }
    }
}

impl Bin {
    pub fn push_length(&self) -> f64 {
        self.width / 4.0
    }

    /// Centre of grid cell `(row, col)` in bin coordinates.
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            (col as f64 + 0.5) * self.width / GRID as f64,
            (row as f64 + 0.5) * self.height / GRID as f64,
        )
    }

    /// Grid cell containing a point (clamped to the grid).
    pub fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let c = ((p.x / self.width) * GRID as f64)
            .floor()
            .clamp(0.0, (GRID - 1) as f64);
        let r = ((p.y / self.height) * GRID as f64)
            .floor()
            .clamp(0.0, (GRID - 1) as f64);
        (r as usize, c as usize)
    }

    pub fn contains(&self, fp: &Footprint) -> bool {
        let bb = fp.bbox();
        bb.min.x >= -WALL_EPS
            && bb.min.y >= -WALL_EPS
            && bb.max.x <= self.width + WALL_EPS
            && bb.max.y <= self.height + WALL_EPS
    }

    /// Largest `t ≥ 0` keeping `fp + t·dir` inside the bin.
    fn max_travel(&self, fp: &Footprint, dir: Vec2) -> f64 {
        let mut t = f64::INFINITY;
        for p in fp.vertices() {
            if dir.x > 0.0 {
                t = t.min((self.width - p.x) / dir.x);
            } else if dir.x < 0.0 {
                t = t.min(-p.x / dir.x);
            }
            if dir.y > 0.0 {
                t = t.min((self.height - p.y) / dir.y);
            } else if dir.y < 0.0 {
                t = t.min(-p.y / dir.y);
            }
        }
        if t < WALL_EPS {
            0.0
        } else {
            t
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub id: ObjectId,
    pub class_id: ClassId,
    pub instance_id: u8,
    /// Shape in local coordinates; the world shape is this plus `position`.
    #[serde(rename = "vertices")]
    pub footprint: Footprint,
    pub position: Vec2,
    pub z: u32,
}

impl SceneObject {
    pub fn world_footprint(&self) -> Footprint {
        self.footprint.translated(self.position)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "SceneDocument", try_from = "SceneDocument")]
pub struct Scene {
    pub bin: Bin,
    pub objects: Vec<SceneObject>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SceneDocument {
    format_version: u32,
    seed: u64,
    bin: Bin,
    objects: Vec<SceneObject>,
}

impl From<Scene> for SceneDocument {
    fn from(s: Scene) -> Self {
        SceneDocument {
            format_version: SCENE_FORMAT_VERSION,
            seed: s.seed,
            bin: s.bin,
            objects: s.objects,
        }
    }
}

impl TryFrom<SceneDocument> for Scene {
    type Error = String;
    fn try_from(doc: SceneDocument) -> std::result::Result<Self, String> {
        if doc.format_version != SCENE_FORMAT_VERSION {
            return Err(format!(
                "unsupported scene format_version {}",
                doc.format_version
            ));
        }
        Ok(Scene {
            bin: doc.bin,
            objects: doc.objects,
            seed: doc.seed,
        })
    }
}

impl Scene {
    pub fn empty(bin: Bin) -> Self {
        Self {
            bin,
            objects: Vec::new(),
            seed: 0,
        }
    }

    pub fn object(&self, id: ObjectId) -> Option<&SceneObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn ids_of_class(&self, class: ClassId) -> Vec<ObjectId> {
        let mut ids: Vec<_> = self
            .objects
            .iter()
            .filter(|o| o.class_id == class)
            .map(|o| o.id)
            .collect();
        ids.sort_unstable();
        ids
    }

    pub fn count_class(&self, class: ClassId) -> usize {
        self.objects.iter().filter(|o| o.class_id == class).count()
    }

    pub fn max_z(&self) -> u32 {
        self.objects.iter().map(|o| o.z).max().unwrap_or(0)
    }

    /// Topmost object whose footprint contains `p`.
    pub fn topmost_at(&self, p: Vec2) -> Option<&SceneObject> {
        self.objects
            .iter()
            .filter(|o| o.world_footprint().contains(p))
            .max_by_key(|o| (o.z, o.id))
    }

    /// Checks the structural invariants: unique ids, every shape in the bin.
    pub fn validate(&self) -> Result<()> {
        let mut ids = BTreeSet::new();
        for o in &self.objects {
            if !ids.insert(o.id) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate object id {}",
                    o.id
                )));
            }
            if !self.bin.contains(&o.world_footprint()) {
                return Err(Error::InvalidArgument(format!(
                    "object {} leaves the bin",
                    o.id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serialization cannot fail")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scene::from_json(&text).map_err(|m| Error::format(path, m))
    }
}

/// Push direction `k` points at `k·45°` from +x; with y pointing down,
/// direction 2 moves objects toward larger y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct Direction(u8);

impl TryFrom<u8> for Direction {
    type Error = String;
    fn try_from(k: u8) -> std::result::Result<Self, String> {
        Direction::new(k).ok_or_else(|| format!("push direction {k} out of range 0..8"))
    }
}

impl From<Direction> for u8 {
    fn from(d: Direction) -> u8 {
        d.0
    }
}

impl Direction {
    pub fn new(k: u8) -> Option<Self> {
        (k < NUM_DIRECTIONS as u8).then_some(Direction(k))
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = Direction> {
        (0..NUM_DIRECTIONS as u8).map(Direction)
    }

    /// Unit vector with exact zeros on the axes.
    pub fn unit(self) -> Vec2 {
        const S: f64 = std::f64::consts::FRAC_1_SQRT_2;
        match self.0 {
            0 => Vec2::new(1.0, 0.0),
            1 => Vec2::new(S, S),
            2 => Vec2::new(0.0, 1.0),
            3 => Vec2::new(-S, S),
            4 => Vec2::new(-1.0, 0.0),
            5 => Vec2::new(-S, -S),
            6 => Vec2::new(0.0, -1.0),
            _ => Vec2::new(S, -S),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PushAction {
    Push {
        row: u8,
        col: u8,
        direction: Direction,
    },
    Stop,
}

impl PushAction {
    pub fn push(row: usize, col: usize, direction: u8) -> Option<Self> {
        (row < GRID && col < GRID).then_some(())?;
        Some(PushAction::Push {
            row: row as u8,
            col: col as u8,
            direction: Direction::new(direction)?,
        })
    }

    pub fn is_stop(&self) -> bool {
        matches!(self, PushAction::Stop)
    }

    /// Flat index in `0..NUM_ACTIONS`; pushes are `(row·GRID + col)·8 + dir`.
    pub fn to_index(&self) -> usize {
        match *self {
            PushAction::Push {
                row,
                col,
                direction,
            } => (row as usize * GRID + col as usize) * NUM_DIRECTIONS + direction.0 as usize,
            PushAction::Stop => STOP_INDEX,
        }
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index == STOP_INDEX {
            return Some(PushAction::Stop);
        }
        if index > STOP_INDEX {
            return None;
        }
        let dir = index % NUM_DIRECTIONS;
        let cell = index / NUM_DIRECTIONS;
        PushAction::push(cell / GRID, cell % GRID, dir as u8)
    }
}

impl std::fmt::Display for PushAction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PushAction::Push {
                row,
                col,
                direction,
            } => write!(f, "push cell=({row},{col}) dir={}", direction.0),
            PushAction::Stop => write!(f, "stop"),
        }
    }
}

struct Mover {
    original: Footprint,
    corridor: Footprint,
    z: u32,
}

/// Deterministic corridor push.
///
/// The topmost object under the cell centre slides `bin.width / 4` along
/// the direction (clamped at the walls). Objects on its layer or below that
/// enter the swept corridor are shoved ahead just far enough to clear it,
/// and in turn shove what lies in their own corridors. Objects the mover
/// was resting on stay put, as do objects above it. Layers never change.
pub fn apply_push(scene: &Scene, action: &PushAction) -> Scene {
    let PushAction::Push {
        row,
        col,
        direction,
    } = *action
    else {
        return scene.clone();
    };
    let point = scene.bin.cell_center(row as usize, col as usize);
    let Some(pushed) = scene.topmost_at(point) else {
        return scene.clone();
    };
    let dir = direction.unit();
    let start = pushed.world_footprint();
    let travel = scene
        .bin
        .push_length()
        .min(scene.bin.max_travel(&start, dir));
    if travel <= 0.0 {
        return scene.clone();
    }

    let mut displacement = vec![0.0f64; scene.objects.len()];
    let pushed_idx = scene
        .objects
        .iter()
        .position(|o| o.id == pushed.id)
        .expect("pushed object comes from the scene");
    displacement[pushed_idx] = travel;
    let mut movers = vec![Mover {
        corridor: start.swept(dir * travel),
        original: start,
        z: pushed.z,
    }];

    let mut order: Vec<(f64, ObjectId, usize, Footprint)> = scene
        .objects
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != pushed_idx)
        .map(|(i, o)| {
            let fp = o.world_footprint();
            let lead = fp
                .vertices()
                .iter()
                .map(|v| v.dot(dir))
                .fold(f64::INFINITY, f64::min);
            (lead, o.id, i, fp)
        })
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    for (_, _, idx, fp) in order {
        let z = scene.objects[idx].z;
        let mut need = 0.0f64;
        for m in &movers {
            if z > m.z || fp.overlaps(&m.original) || !fp.overlaps(&m.corridor) {
                continue;
            }
            need = need.max(fp.exit_distance(&m.corridor, dir));
        }
        if need <= 0.0 {
            continue;
        }
        let d = need.min(scene.bin.max_travel(&fp, dir));
        if d <= 0.0 {
            continue;
        }
        displacement[idx] = d;
        movers.push(Mover {
            corridor: fp.swept(dir * d),
            original: fp,
            z,
        });
    }

    let mut out = scene.clone();
    for (obj, d) in out.objects.iter_mut().zip(displacement) {
        if d > 0.0 {
            obj.position = obj.position + dir * d;
        }
    }
    out
}

/// Overlap rate of every object of `class`, in id order. Objects too small
/// to cover a pixel count as hidden.
pub fn class_overlaps(scene: &Scene, class: ClassId) -> Vec<(ObjectId, f64)> {
    let ids = scene.ids_of_class(class);
    if ids.is_empty() {
        return Vec::new();
    }
    let map = geometry::rasterize(scene, DEFAULT_RESOLUTION).expect("default resolution is valid");
    ids.into_iter()
        .map(|id| (id, map.overlap(id).unwrap_or(1.0)))
        .collect()
}

/// True iff every `target_class` object has χ ≤ `threshold`.
pub fn is_simple(scene: &Scene, target_class: ClassId, threshold: f64) -> bool {
    class_overlaps(scene, target_class)
        .iter()
        .all(|&(_, chi)| chi <= threshold)
}

/// Ids of `target_class` objects with χ ≤ `threshold`.
pub fn visible_instances(
    scene: &Scene,
    target_class: ClassId,
    threshold: f64,
) -> BTreeSet<ObjectId> {
    class_overlaps(scene, target_class)
        .into_iter()
        .filter(|&(_, chi)| chi <= threshold)
        .map(|(id, _)| id)
        .collect()
}
