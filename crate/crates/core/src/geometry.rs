//! Convex polygon math and painter's-algorithm visibility.
//!
//! Coordinates are bin units with the origin at the bin's top-left corner,
//! x to the right and y down. A polygon is stored with positive shoelace
//! area; all predicates below assume that orientation.

use std::collections::BTreeMap;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{ObjectId, Scene};

/// Default rasterization resolution (pixels per bin side).
pub const DEFAULT_RESOLUTION: usize = 224;
pub const MIN_RESOLUTION: usize = 8;

/// Overlaps thinner than this (in bin units) do not count as contact.
pub const CONTACT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from([x, y]: [f64; 2]) -> Self {
        Vec2 { x, y }
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

/// A convex polygon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec2>", into = "Vec<Vec2>")]
pub struct Footprint {
    vertices: Vec<Vec2>,
}

impl TryFrom<Vec<Vec2>> for Footprint {
    type Error = Error;
    fn try_from(v: Vec<Vec2>) -> Result<Self> {
        Footprint::new(v)
    }
}

impl From<Footprint> for Vec<Vec2> {
    fn from(f: Footprint) -> Self {
        f.vertices
    }
}

fn signed_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        s += v[i].cross(v[(i + 1) % n]);
    }
    0.5 * s
}

impl Footprint {
    /// Validates that `vertices` form a convex polygon with positive area.
    pub fn new(vertices: Vec<Vec2>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::InvalidArgument(format!(
                "footprint needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|p| !p.x.is_finite() || !p.y.is_finite())
        {
            return Err(Error::InvalidArgument("non-finite footprint vertex".into()));
        }
        if signed_area(&vertices) <= 0.0 {
            return Err(Error::InvalidArgument(
                "footprint must have positive signed area".into(),
            ));
        }
        let n = vertices.len();
        for i in 0..n {
            let a = vertices[i];
            let b = vertices[(i + 1) % n];
            let c = vertices[(i + 2) % n];
            if (b - a).cross(c - b) < -1e-12 {
                return Err(Error::InvalidArgument("footprint is not convex".into()));
            }
        }
        Ok(Self { vertices })
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        Footprint::new(vec![
            Vec2::new(x0, y0),
            Vec2::new(x1, y0),
            Vec2::new(x1, y1),
            Vec2::new(x0, y1),
        ])
    }

    pub fn vertices(&self) -> &[Vec2] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.vertices)
    }

    pub fn centroid(&self) -> Vec2 {
        let n = self.vertices.len();
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let p = self.vertices[i];
            let q = self.vertices[(i + 1) % n];
            let w = p.cross(q);
            a2 += w;
            cx += (p.x + q.x) * w;
            cy += (p.y + q.y) * w;
        }
        Vec2::new(cx / (3.0 * a2), cy / (3.0 * a2))
    }

    pub fn bbox(&self) -> Aabb {
        let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
        let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
        }
        Aabb { min, max }
    }

    pub fn translated(&self, offset: Vec2) -> Footprint {
        Footprint {
            vertices: self.vertices.iter().map(|&p| p + offset).collect(),
        }
    }

    /// Rotation about the origin; orientation is preserved.
    pub fn rotated(&self, angle: f64) -> Footprint {
        Footprint {
            vertices: self.vertices.iter().map(|p| p.rotated(angle)).collect(),
        }
    }

    /// Same shape translated so its centroid sits at the origin.
    pub fn centered(&self) -> Footprint {
        let c = self.centroid();
        self.translated(-c)
    }

    /// Point containment with the boundary counted as inside.
    pub fn contains(&self, p: Vec2) -> bool {
        let n = self.vertices.len();
        (0..n).all(|i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (b - a).cross(p - a) >= 0.0
        })
    }

    fn unit_normals(&self) -> impl Iterator<Item = Vec2> + '_ {
        let n = self.vertices.len();
        (0..n).filter_map(move |i| {
            let d = self.vertices[(i + 1) % n] - self.vertices[i];
            let len = d.norm();
            (len > 0.0).then(|| Vec2::new(d.y / len, -d.x / len))
        })
    }

    fn project(&self, axis: Vec2) -> (f64, f64) {
        self.vertices
            .iter()
            .map(|p| p.dot(axis))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// True when the two polygons share positive area (touching does not count).
    pub fn overlaps(&self, other: &Footprint) -> bool {
        let a = self.bbox();
        let b = other.bbox();
        if a.max.x <= b.min.x + CONTACT_EPS
            || b.max.x <= a.min.x + CONTACT_EPS
            || a.max.y <= b.min.y + CONTACT_EPS
            || b.max.y <= a.min.y + CONTACT_EPS
        {
            return false;
        }
        for axis in self.unit_normals().chain(other.unit_normals()) {
            let (a0, a1) = self.project(axis);
            let (b0, b1) = other.project(axis);
            if a1 <= b0 + CONTACT_EPS || b1 <= a0 + CONTACT_EPS {
                return false;
            }
        }
        true
    }

    /// Region covered while translating this polygon by `offset`.
    pub fn swept(&self, offset: Vec2) -> Footprint {
        let mut pts = self.vertices.clone();
        pts.extend(self.vertices.iter().map(|&p| p + offset));
        Footprint {
            vertices: convex_hull(&pts),
        }
    }

    /// Smallest `t ≥ 0` such that `self` translated by `t·dir` no longer
    /// overlaps `obstacle`. `dir` must be a unit vector.
    pub fn exit_distance(&self, obstacle: &Footprint, dir: Vec2) -> f64 {
        if !self.overlaps(obstacle) {
            return 0.0;
        }
        // Translations that keep the pair overlapping form the Minkowski
        // difference obstacle ⊖ self; walk the ray t·dir out of it.
        let mut pts = Vec::with_capacity(self.vertices.len() * obstacle.vertices.len());
        for o in &obstacle.vertices {
            for s in &self.vertices {
                pts.push(*o - *s);
            }
        }
        let hull = Footprint {
            vertices: convex_hull(&pts),
        };
        let mut exit = f64::INFINITY;
        let n = hull.vertices.len();
        for i in 0..n {
            let a = hull.vertices[i];
            let d = hull.vertices[(i + 1) % n] - a;
            let normal = Vec2::new(d.y, -d.x);
            let along = normal.dot(dir);
            if along > 0.0 {
                exit = exit.min(normal.dot(a) / along);
            }
        }
        if exit.is_finite() {
            exit.max(0.0)
        } else {
            0.0
        }
    }
}

/// Andrew's monotone chain; returns the hull with positive orientation and
/// no collinear vertices.
pub fn convex_hull(points: &[Vec2]) -> Vec<Vec2> {
    let mut pts: Vec<Vec2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let turn = |o: Vec2, a: Vec2, b: Vec2| (a - o).cross(b - o);
    let mut lower: Vec<Vec2> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && turn(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && turn(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Top-down view of a scene: which object is visible at every pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct VisibilityMap {
    pub resolution: usize,
    /// Row-major, `resolution²` entries; `None` is bin floor.
    pub top_owner: Vec<Option<ObjectId>>,
    /// z-layer of the topmost object per pixel; 0 on background.
    pub depth: Vec<u32>,
    /// Pixels covered by each object's footprint when rasterized alone.
    pub footprint_pixels: BTreeMap<ObjectId, usize>,
}

impl VisibilityMap {
    pub fn visible_pixels(&self) -> BTreeMap<ObjectId, usize> {
        let mut counts: BTreeMap<ObjectId, usize> =
            self.footprint_pixels.keys().map(|&id| (id, 0)).collect();
        for id in self.top_owner.iter().flatten() {
            *counts.entry(*id).or_insert(0) += 1;
        }
        counts
    }

    /// χ = 1 − visible/total for one object; `None` for an unknown or
    /// sub-pixel object.
    pub fn overlap(&self, id: ObjectId) -> Option<f64> {
        let total = *self.footprint_pixels.get(&id)?;
        if total == 0 {
            return None;
        }
        let seen = self.top_owner.iter().filter(|o| **o == Some(id)).count();
        Some(1.0 - seen as f64 / total as f64)
    }
}

/// Pixel spans `(row, col_start..=col_end)` covered by a convex polygon.
fn scan_polygon(
    fp: &Footprint,
    width: f64,
    height: f64,
    res: usize,
    mut emit: impl FnMut(usize, usize, usize),
) {
    let bb = fp.bbox();
    let sy = height / res as f64;
    let sx = width / res as f64;
    let r0 = ((bb.min.y / sy - 0.5).ceil().max(0.0)) as usize;
    let r1 = (bb.max.y / sy - 0.5).floor();
    if r1 < 0.0 {
        return;
    }
    let r1 = (r1 as usize).min(res - 1);
    let v = fp.vertices();
    let n = v.len();
    for r in r0..=r1 {
        let yc = (r as f64 + 0.5) * sy;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let a = v[i];
            let b = v[(i + 1) % n];
            let (ymin, ymax) = if a.y < b.y { (a.y, b.y) } else { (b.y, a.y) };
            if yc < ymin || yc > ymax || a.y == b.y {
                continue;
            }
            let x = a.x + (yc - a.y) * (b.x - a.x) / (b.y - a.y);
            lo = lo.min(x);
            hi = hi.max(x);
        }
        if lo > hi {
            continue;
        }
        let c0 = (lo / sx - 0.5).ceil().max(0.0);
        let c1 = (hi / sx - 0.5).floor().min((res - 1) as f64);
        if c1 < c0 {
            continue;
        }
        emit(r, c0 as usize, c1 as usize);
    }
}

/// Painter's-algorithm rasterization of the scene viewed from above.
///
/// Objects are painted in ascending `(z, id)` order, so the highest layer
/// wins and equal layers resolve to the larger id.
pub fn rasterize(scene: &Scene, resolution: usize) -> Result<VisibilityMap> {
    if resolution < MIN_RESOLUTION {
        return Err(Error::InvalidArgument(format!(
            "resolution must be at least {MIN_RESOLUTION}, got {resolution}"
        )));
    }
    let n_px = resolution * resolution;
    let mut top_owner = vec![None; n_px];
    let mut depth = vec![0u32; n_px];
    let mut footprint_pixels = BTreeMap::new();
    let mut order: Vec<_> = scene.objects.iter().collect();
    order.sort_by_key(|o| (o.z, o.id));
    for obj in order {
        let fp = obj.world_footprint();
        let mut count = 0usize;
        scan_polygon(
            &fp,
            scene.bin.width,
            scene.bin.height,
            resolution,
            |r, c0, c1| {
                let row = r * resolution;
                top_owner[row + c0..=row + c1].fill(Some(obj.id));
                depth[row + c0..=row + c1].fill(obj.z);
                count += c1 - c0 + 1;
            },
        );
        footprint_pixels.insert(obj.id, count);
    }
    Ok(VisibilityMap {
        resolution,
        top_owner,
        depth,
        footprint_pixels,
    })
}

/// Overlap rate χ = 1 − A_s/A_t of one object.
pub fn overlap_rate(scene: &Scene, id: ObjectId, resolution: usize) -> Result<f64> {
    overlap_rates(scene, &[id], resolution).map(|v| v[0])
}

/// Overlap rates for several objects from a single rasterization.
pub fn overlap_rates(scene: &Scene, ids: &[ObjectId], resolution: usize) -> Result<Vec<f64>> {
    if let Some(missing) = ids.iter().find(|id| scene.object(**id).is_none()) {
        return Err(Error::InvalidArgument(format!(
            "object {missing} is not in the scene"
        )));
    }
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let map = rasterize(scene, resolution)?;
    let seen = map.visible_pixels();
    ids.iter()
        .map(|id| {
            let total = map.footprint_pixels[id];
            if total == 0 {
                return Err(Error::DegenerateObject {
                    id: *id,
                    resolution,
                });
            }
            Ok(1.0 - seen[id] as f64 / total as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{Bin, SceneObject};
    use proptest::prelude::*;

    fn obj(id: u32, fp: Footprint, z: u32) -> SceneObject {
        let c = fp.centroid();
        SceneObject {
            id,
            class_id: 0,
            instance_id: 0,
            footprint: fp.centered(),
            position: c,
            z,
        }
    }

    fn scene(objects: Vec<SceneObject>) -> Scene {
        Scene {
            bin: Bin::default(),
            objects,
            seed: 0,
        }
    }

    fn brute_force_owner(scene: &Scene, res: usize) -> Vec<Option<ObjectId>> {
        let s = scene.bin.width / res as f64;
        let mut out = vec![None; res * res];
        for r in 0..res {
            for c in 0..res {
                let p = Vec2::new((c as f64 + 0.5) * s, (r as f64 + 0.5) * s);
                let mut best: Option<(u32, u32)> = None;
                for o in &scene.objects {
                    if o.world_footprint().contains(p) && best.is_none_or(|b| (o.z, o.id) > b) {
                        best = Some((o.z, o.id));
                    }
                }
                out[r * res + c] = best.map(|b| b.1);
            }
        }
        out
    }

    #[test]
    fn rejects_bad_footprints() {
        assert!(Footprint::new(vec![Vec2::ZERO, Vec2::new(1.0, 0.0)]).is_err());
        // clockwise
        assert!(Footprint::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(1.0, 0.0)
        ])
        .is_err());
        // reflex vertex
        assert!(Footprint::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(4.0, 0.0),
            Vec2::new(2.0, 1.0),
            Vec2::new(4.0, 4.0),
            Vec2::new(0.0, 4.0)
        ])
        .is_err());
    }

    #[test]
    fn rasterize_rejects_tiny_resolution() {
        assert!(matches!(
            rasterize(&scene(vec![]), 7),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn empty_scene_is_all_background() {
        let map = rasterize(&scene(vec![]), 224).unwrap();
        assert!(map.top_owner.iter().all(Option::is_none));
    }

    #[test]
    fn single_square_matches_point_in_polygon() {
        let s = scene(vec![obj(
            0,
            Footprint::rect(40.1, 30.3, 50.1, 40.3).unwrap(),
            0,
        )]);
        let map = rasterize(&s, 224).unwrap();
        assert_eq!(map.top_owner, brute_force_owner(&s, 224));
        assert!(map.footprint_pixels[&0] > 0);
    }

    #[test]
    fn stacked_squares_show_the_top_one() {
        let fp = Footprint::rect(20.0, 20.0, 30.0, 30.0).unwrap();
        let s = scene(vec![obj(0, fp.clone(), 0), obj(1, fp, 1)]);
        let map = rasterize(&s, 224).unwrap();
        assert!(map.top_owner.iter().flatten().all(|&id| id == 1));
        assert!(map.top_owner.iter().any(|o| o.is_some()));
        assert_eq!(overlap_rate(&s, 0, 224).unwrap(), 1.0);
        assert_eq!(overlap_rate(&s, 1, 224).unwrap(), 0.0);
    }

    #[test]
    fn equal_layers_break_ties_by_id() {
        let fp = Footprint::rect(20.0, 20.0, 30.0, 30.0).unwrap();
        let s = scene(vec![obj(5, fp.clone(), 2), obj(3, fp, 2)]);
        let map = rasterize(&s, 64).unwrap();
        assert!(map.top_owner.iter().flatten().all(|&id| id == 5));
    }

    #[test]
    fn sole_object_is_unoccluded() {
        let s = scene(vec![obj(
            0,
            Footprint::rect(10.0, 10.0, 25.0, 18.0).unwrap(),
            3,
        )]);
        assert_eq!(overlap_rate(&s, 0, 224).unwrap(), 0.0);
    }

    #[test]
    fn half_covered_square() {
        // Analytic χ is exactly 0.5; a 448-pixel raster agrees with it too.
        let s = scene(vec![
            obj(0, Footprint::rect(40.0, 40.0, 50.0, 50.0).unwrap(), 0),
            obj(1, Footprint::rect(40.0, 40.0, 50.0, 45.0).unwrap(), 1),
        ]);
        let chi = overlap_rate(&s, 0, 224).unwrap();
        assert!((chi - 0.5).abs() <= 0.02, "chi = {chi}");
        let fine = overlap_rate(&s, 0, 448).unwrap();
        assert!((fine - 0.5).abs() <= 0.02, "chi@448 = {fine}");
    }

    #[test]
    fn overlap_errors() {
        let s = scene(vec![obj(
            0,
            Footprint::rect(10.05, 10.05, 10.15, 10.15).unwrap(),
            0,
        )]);
        assert!(matches!(
            overlap_rate(&s, 0, 224),
            Err(Error::DegenerateObject { id: 0, .. })
        ));
        assert!(matches!(
            overlap_rate(&s, 9, 224),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn exit_distance_clears_obstacle() {
        let mover = Footprint::rect(10.0, 10.0, 20.0, 20.0).unwrap();
        let wall = Footprint::rect(15.0, 0.0, 40.0, 30.0).unwrap();
        let d = mover.exit_distance(&wall, Vec2::new(1.0, 0.0));
        assert!((d - 30.0).abs() < 1e-9);
        let diag = Vec2::new(1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2;
        let d = mover.exit_distance(&wall, diag);
        assert!(!mover.translated(diag * d).overlaps(&wall));
        assert!(mover.translated(diag * (d - 1e-3)).overlaps(&wall));
    }

    #[test]
    fn touching_is_not_overlapping() {
        let a = Footprint::rect(0.0, 0.0, 10.0, 10.0).unwrap();
        let b = Footprint::rect(10.0, 0.0, 20.0, 10.0).unwrap();
        assert!(!a.overlaps(&b));
        assert!(a.overlaps(&Footprint::rect(9.0, 9.0, 20.0, 20.0).unwrap()));
    }

    fn arb_convex() -> impl Strategy<Value = Footprint> {
        (
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3..9),
            5.0f64..95.0,
            5.0f64..95.0,
            1.0f64..12.0,
        )
            .prop_filter_map("degenerate hull", |(pts, cx, cy, scale)| {
                let pts: Vec<Vec2> = pts
                    .into_iter()
                    .map(|(x, y)| Vec2::new(cx + x * scale, cy + y * scale))
                    .collect();
                Footprint::new(convex_hull(&pts)).ok()
            })
    }

    proptest! {
        #[test]
        fn scanline_matches_point_in_polygon(fps in prop::collection::vec(arb_convex(), 1..5)) {
            let s = scene(
                fps.into_iter()
                    .enumerate()
                    .map(|(i, fp)| obj(i as u32, fp, (i % 2) as u32))
                    .collect(),
            );
            let map = rasterize(&s, 64).unwrap();
            let oracle = brute_force_owner(&s, 64);
            let mismatches = map.top_owner.iter().zip(&oracle).filter(|(a, b)| a != b).count();
            // Pixel centres landing exactly on an edge may round either way.
            prop_assert!(mismatches <= 2, "mismatches = {}", mismatches);
        }

        #[test]
        fn chi_stays_in_unit_interval(fps in prop::collection::vec(arb_convex(), 1..6), res in 64usize..160) {
            let s = scene(
                fps.into_iter()
                    .enumerate()
                    .map(|(i, fp)| obj(i as u32, fp, i as u32))
                    .collect(),
            );
            let map = rasterize(&s, res).unwrap();
            for o in &s.objects {
                if let Some(chi) = map.overlap(o.id) {
                    prop_assert!((0.0..=1.0).contains(&chi));
                }
            }
        }

        #[test]
        fn removing_an_occluder_never_raises_chi(fps in prop::collection::vec(arb_convex(), 2..6), drop in 1usize..6) {
            let objects: Vec<_> = fps
                .into_iter()
                .enumerate()
                .map(|(i, fp)| obj(i as u32, fp, i as u32))
                .collect();
            let drop = drop % objects.len();
            prop_assume!(drop != 0);
            let full = scene(objects.clone());
            let mut reduced = objects;
            reduced.remove(drop);
            let reduced = scene(reduced);
            if let (Ok(a), Ok(b)) = (overlap_rate(&full, 0, 128), overlap_rate(&reduced, 0, 128)) {
                prop_assert!(b <= a);
            }
        }

        #[test]
        fn swept_region_contains_both_ends(fp in arb_convex(), dx in -20.0f64..20.0, dy in -20.0f64..20.0) {
            let off = Vec2::new(dx, dy);
            let hull = fp.swept(off);
            for &p in fp.vertices() {
                let q = p + off;
                // Inflate slightly for rounding on hull vertices.
                let inside = |pt: Vec2| {
                    let c = hull.centroid();
                    hull.contains(pt + (c - pt) * 1e-9)
                };
                prop_assert!(inside(p) && inside(q));
            }
        }
    }
}
