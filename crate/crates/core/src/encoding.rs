//! The DQN state: ground-truth class-occupancy planes fused with a question
//! embedding on the 28×28 action grid.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{Question, QuestionType, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{self, VisibilityMap};
use crate::rng;
use crate::world::{Scene, GRID};

/// 20 class planes, one depth plane, one background plane.
pub const C_VIS: usize = NUM_CLASSES + 2;
pub const C_Q: usize = 8;
pub const C_STATE: usize = C_VIS + C_Q;
pub const DEPTH_PLANE: usize = NUM_CLASSES;
pub const BACKGROUND_PLANE: usize = NUM_CLASSES + 1;
/// Pixels per grid cell side in the source raster.
pub const CELL_PIXELS: usize = 8;
pub const VISUAL_RESOLUTION: usize = GRID * CELL_PIXELS;
pub const PLANE: usize = GRID * GRID;

/// Channel-major `C_VIS × 28 × 28` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualGrid {
    pub data: Vec<f64>,
}

impl VisualGrid {
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[channel * PLANE + row * GRID + col]
    }

    pub fn plane(&self, channel: usize) -> &[f64] {
        &self.data[channel * PLANE..(channel + 1) * PLANE]
    }
}

/// Channel-major `C_STATE × 28 × 28` tensor fed to the Q-network.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor {
    pub data: Vec<f64>,
}

impl StateTensor {
    pub fn channels(&self) -> usize {
        self.data.len() / PLANE
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[channel * PLANE + row * GRID + col]
    }
}

pub fn encode_visual(scene: &Scene) -> VisualGrid {
    let map = geometry::rasterize(scene, VISUAL_RESOLUTION).expect("fixed resolution is valid");
    encode_visual_map(scene, &map)
}

/// Downsamples an existing `VISUAL_RESOLUTION` raster of `scene`.
pub fn encode_visual_map(scene: &Scene, map: &VisibilityMap) -> VisualGrid {
    CompactVisual::from_map(scene, map).to_grid()
}

/// The visual grid stored as raw pixel counts; expands bit-exactly to the
/// [`VisualGrid`] it came from at a fraction of the memory.
#[derive(Debug, Clone, PartialEq)]
pub struct CompactVisual {
    /// `(cell, plane, pixel count)` for class and background planes, sorted
    /// by plane then cell.
    pub counts: Vec<(u16, u8, u8)>,
    /// `(cell, sum of topmost z over the block)` where nonzero.
    pub depth: Vec<(u16, u32)>,
    pub max_z: u32,
}

impl CompactVisual {
    pub fn from_map(scene: &Scene, map: &VisibilityMap) -> Self {
        assert_eq!(
            map.resolution, VISUAL_RESOLUTION,
            "raster must be {VISUAL_RESOLUTION} px"
        );
        let max_id = scene
            .objects
            .iter()
            .map(|o| o.id as usize)
            .max()
            .unwrap_or(0);
        let mut class_of = vec![0u8; max_id + 1];
        for o in &scene.objects {
            class_of[o.id as usize] = o.class_id;
        }
        let mut per_plane = vec![0u8; C_VIS * PLANE];
        let mut depth = Vec::new();
        for r in 0..GRID {
            for c in 0..GRID {
                let cell = r * GRID + c;
                let mut depth_sum = 0u32;
                for pr in r * CELL_PIXELS..(r + 1) * CELL_PIXELS {
                    let row = pr * VISUAL_RESOLUTION;
                    for pc in c * CELL_PIXELS..(c + 1) * CELL_PIXELS {
                        let ch = match map.top_owner[row + pc] {
                            Some(id) => {
                                depth_sum += map.depth[row + pc];
                                class_of[id as usize] as usize
                            }
                            None => BACKGROUND_PLANE,
                        };
                        per_plane[ch * PLANE + cell] += 1;
                    }
                }
                if depth_sum > 0 {
                    depth.push((cell as u16, depth_sum));
                }
            }
        }
        let counts = per_plane
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(i, &n)| ((i % PLANE) as u16, (i / PLANE) as u8, n))
            .collect();
        Self {
            counts,
            depth,
            max_z: scene.max_z(),
        }
    }

    fn depth_value(&self, sum: u32) -> f64 {
        let block = (CELL_PIXELS * CELL_PIXELS) as f64;
        sum as f64 / block / self.max_z as f64
    }

    /// Nonzero `(cell, channel, value)` entries in channel-major order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let block = (CELL_PIXELS * CELL_PIXELS) as f64;
        let classes = self
            .counts
            .iter()
            .take_while(|e| (e.1 as usize) < DEPTH_PLANE)
            .map(move |&(cell, ch, n)| (cell as usize, ch as usize, n as f64 / block));
        let depth = self
            .depth
            .iter()
            .filter(move |_| self.max_z > 0)
            .map(|&(cell, sum)| (cell as usize, DEPTH_PLANE, self.depth_value(sum)));
        let background = self
            .counts
            .iter()
            .skip_while(|e| (e.1 as usize) < DEPTH_PLANE)
            .map(move |&(cell, ch, n)| (cell as usize, ch as usize, n as f64 / block));
        classes.chain(depth).chain(background)
    }

    pub fn to_grid(&self) -> VisualGrid {
        let mut data = vec![0.0; C_VIS * PLANE];
        for (cell, ch, v) in self.entries() {
            data[ch * PLANE + cell] = v;
        }
        VisualGrid { data }
    }
}

/// Row layout: 4 question-type rows, 20 class rows, one "no second object" row.
pub const EMBED_ROWS: usize = 4 + NUM_CLASSES + 1;
pub const NULL_ROW: usize = EMBED_ROWS - 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub rows: Vec<[f64; C_Q]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuestionEmbedding {
    pub vector: [f64; C_Q],
}

impl EmbeddingTable {
    /// Random rows in [-1, 1]; distinct rows almost surely.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng::from_seed(seed);
        let rows = (0..EMBED_ROWS)
            .map(|_| std::array::from_fn(|_| rng.gen_range(-1.0..1.0)))
            .collect();
        Self { rows }
    }

    pub fn zeros() -> Self {
        Self {
            rows: vec![[0.0; C_Q]; EMBED_ROWS],
        }
    }

    pub fn qtype_row(qtype: QuestionType) -> usize {
        qtype.index()
    }

    pub fn class_row(class: u8) -> usize {
        4 + class as usize
    }

    /// Row indices summed for a question: type, first object, second object or null.
    pub fn row_indices(question: &Question) -> Result<[usize; 3]> {
        let check = |c: u8| {
            if (c as usize) < NUM_CLASSES {
                Ok(Self::class_row(c))
            } else {
                Err(Error::InvalidArgument(format!("unknown class id {c}")))
            }
        };
        let second = match question.obj2 {
            Some(c) => check(c)?,
            None => NULL_ROW,
        };
        Ok([
            Self::qtype_row(question.qtype),
            check(question.obj1)?,
            second,
        ])
    }

    /// Sum of the question's rows before normalization.
    pub fn raw(&self, question: &Question) -> Result<[f64; C_Q]> {
        let idx = Self::row_indices(question)?;
        Ok(std::array::from_fn(|k| {
            idx.iter().map(|&r| self.rows[r][k]).sum()
        }))
    }
}

/// Max-norm normalization `v / max|v_i|`; returns the index of the max
/// entry too (`None` for an all-zero vector, which is returned unchanged).
pub fn max_normalize(v: [f64; C_Q]) -> ([f64; C_Q], Option<usize>) {
    let (arg, m) = v
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x.abs()))
        .fold(
            (0, 0.0),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    if m == 0.0 {
        return (v, None);
    }
    (v.map(|x| x / m), Some(arg))
}

/// Backward pass of [`max_normalize`]: maps the gradient w.r.t. the
/// normalized vector to the gradient w.r.t. the raw vector.
pub fn max_normalize_backward(raw: &[f64; C_Q], grad: &[f64; C_Q]) -> [f64; C_Q] {
    let (_, arg) = max_normalize(*raw);
    let Some(a) = arg else { return [0.0; C_Q] };
    let m = raw[a].abs();
    let mut out = grad.map(|g| g / m);
    let dot: f64 = grad.iter().zip(raw).map(|(g, r)| g * r).sum();
    out[a] -= raw[a].signum() * dot / (m * m);
    out
}

pub fn encode_question(question: &Question, table: &EmbeddingTable) -> Result<QuestionEmbedding> {
    let (vector, _) = max_normalize(table.raw(question)?);
    Ok(QuestionEmbedding { vector })
}

/// Broadcasts the embedding over the grid and appends it to the visual planes.
pub fn fuse(visual: &VisualGrid, q: &QuestionEmbedding) -> StateTensor {
    let mut data = Vec::with_capacity(C_STATE * PLANE);
    data.extend_from_slice(&visual.data);
    for &v in &q.vector {
        data.extend(std::iter::repeat_n(v, PLANE));
    }
    StateTensor { data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_catalog, generate_scene, Difficulty};
    use crate::geometry::Footprint;
    use crate::world::{Bin, SceneObject};

    #[test]
    fn empty_scene_is_background() {
        let g = encode_visual(&Scene::empty(Bin::default()));
        assert!(g.plane(BACKGROUND_PLANE).iter().all(|&v| v == 1.0));
        for ch in 0..BACKGROUND_PLANE {
            assert!(g.plane(ch).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn cell_aligned_square_fills_one_cell() {
        // One cell is 100/28 units; place a square exactly on cell (5, 9).
        let s = 100.0 / 28.0;
        let fp = Footprint::rect(9.0 * s, 5.0 * s, 10.0 * s, 6.0 * s).unwrap();
        let scene = Scene {
            bin: Bin::default(),
            objects: vec![SceneObject {
                id: 0,
                class_id: 7,
                instance_id: 0,
                position: fp.centroid(),
                footprint: fp.centered(),
                z: 0,
            }],
            seed: 0,
        };
        let g = encode_visual(&scene);
        for r in 0..GRID {
            for c in 0..GRID {
                let expect = if (r, c) == (5, 9) { 1.0 } else { 0.0 };
                assert_eq!(g.get(7, r, c), expect, "cell ({r},{c})");
            }
        }
    }

    #[test]
    fn planes_partition_every_cell() {
        let cat = build_catalog(4);
        let scene = generate_scene(&cat, Difficulty::Hard, 12).unwrap();
        let g = encode_visual(&scene);
        for cell in 0..PLANE {
            let total: f64 = (0..NUM_CLASSES)
                .chain([BACKGROUND_PLANE])
                .map(|ch| g.data[ch * PLANE + cell])
                .sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        assert!(g.data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn object_order_does_not_matter() {
        let cat = build_catalog(4);
        let scene = generate_scene(&cat, Difficulty::Medium, 3).unwrap();
        let mut shuffled = scene.clone();
        shuffled.objects.reverse();
        assert_eq!(encode_visual(&scene), encode_visual(&shuffled));
    }

    #[test]
    fn compact_form_expands_exactly() {
        let cat = build_catalog(2);
        for seed in 0..4 {
            let scene = generate_scene(&cat, Difficulty::Hard, seed).unwrap();
            let map = geometry::rasterize(&scene, VISUAL_RESOLUTION).unwrap();
            let compact = CompactVisual::from_map(&scene, &map);
            let grid = compact.to_grid();
            assert_eq!(grid, encode_visual(&scene));
            let keys: Vec<_> = compact.entries().map(|(cell, ch, _)| (ch, cell)).collect();
            assert!(keys.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn depth_plane_is_mean_normalized_z() {
        let s = 100.0 / 28.0;
        let mk = |id, x0: f64, z| {
            let fp = Footprint::rect(x0 * s, 0.0, (x0 + 1.0) * s, s).unwrap();
            SceneObject {
                id,
                class_id: 0,
                instance_id: 0,
                position: fp.centroid(),
                footprint: fp.centered(),
                z,
            }
        };
        let scene = Scene {
            bin: Bin::default(),
            objects: vec![mk(0, 0.0, 1), mk(1, 1.0, 4)],
            seed: 0,
        };
        let g = encode_visual(&scene);
        assert_eq!(g.get(DEPTH_PLANE, 0, 0), 0.25);
        assert_eq!(g.get(DEPTH_PLANE, 0, 1), 1.0);
        assert_eq!(g.get(DEPTH_PLANE, 0, 2), 0.0);
    }

    #[test]
    fn normalization_gradient_matches_finite_differences() {
        let raw = [0.3, -1.7, 0.9, 0.1, -0.4, 1.2, 0.0, 0.5];
        let w = [0.7, -0.2, 0.4, 1.1, -0.9, 0.3, 0.6, -0.5];
        let f =
            |v: [f64; C_Q]| -> f64 { max_normalize(v).0.iter().zip(&w).map(|(a, b)| a * b).sum() };
        let g = max_normalize_backward(&raw, &w);
        let h = 1e-6;
        for i in 0..C_Q {
            let mut up = raw;
            up[i] += h;
            let mut down = raw;
            down[i] -= h;
            let fd = (f(up) - f(down)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-8, "component {i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn question_embeddings() {
        let cat = build_catalog(0);
        let table = EmbeddingTable::init(5);
        let a = encode_question(&Question::counting(0, &cat), &table).unwrap();
        let b = encode_question(&Question::counting(1, &cat), &table).unwrap();
        assert_eq!(
            a,
            encode_question(&Question::counting(0, &cat), &table).unwrap()
        );
        assert_ne!(a, b);
        for e in [a, b] {
            let m = e.vector.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((m - 1.0).abs() < 1e-15);
        }
        let bad = Question {
            qtype: QuestionType::Counting,
            obj1: 20,
            obj2: None,
            text: String::new(),
        };
        assert!(matches!(
            encode_question(&bad, &table),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn fuse_appends_broadcast_question() {
        let cat = build_catalog(0);
        let scene = generate_scene(&cat, Difficulty::Easy, 1).unwrap();
        let vis = encode_visual(&scene);
        let q = encode_question(&Question::counting(3, &cat), &EmbeddingTable::init(1)).unwrap();
        let st = fuse(&vis, &q);
        assert_eq!(st.channels(), 30);
        assert_eq!(&st.data[..C_VIS * PLANE], &vis.data[..]);
        for k in 0..C_Q {
            let plane = &st.data[(C_VIS + k) * PLANE..(C_VIS + k + 1) * PLANE];
            assert!(plane.iter().all(|&v| v == q.vector[k]));
        }
        assert!(st.data.iter().all(|v| v.is_finite()));
    }
}
