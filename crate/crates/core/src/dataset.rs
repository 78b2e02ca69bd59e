//! Object catalog, scene generation, template questions and oracle answers.

use std::f64::consts::TAU;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, Footprint, Vec2};
use crate::par::{self, Exec};
use crate::rng::{self, derive_seed};
use crate::world::{Bin, ClassId, Scene, SceneObject};

pub const NUM_CLASSES: usize = 20;
pub const INSTANCES_PER_CLASS: usize = 3;
pub const NUM_INSTANCES: usize = NUM_CLASSES * INSTANCES_PER_CLASS;
pub const MAX_COUNT: u8 = INSTANCES_PER_CLASS as u8;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "can",
    "box",
    "cup",
    "bottle",
    "book",
    "ball",
    "banana",
    "apple",
    "gamepad",
    "mouse",
    "scissors",
    "pen",
    "spoon",
    "toothbrush",
    "wallet",
    "glasses",
    "remote",
    "sponge",
    "tape",
    "clock",
];

/// Footprint areas are spread log-uniformly over `[MIN_AREA, MAX_AREA]`.
pub const MIN_AREA: f64 = 70.0;
pub const MAX_AREA: f64 = 350.0;

const PLACEMENT_ATTEMPTS: usize = 64;
const COMPOSITION_ATTEMPTS: usize = 2000;
const GENERATION_RESEEDS: u64 = 8;

pub const DATASET_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceTemplate {
    pub class_id: ClassId,
    pub instance_id: u8,
    /// Centred at the origin.
    pub footprint: Footprint,
    pub color: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub seed: u64,
    pub classes: Vec<String>,
    /// Indexed by `class_id * 3 + instance_id`.
    pub instances: Vec<InstanceTemplate>,
}

impl Catalog {
    pub fn instance(&self, class_id: ClassId, instance_id: u8) -> &InstanceTemplate {
        &self.instances[class_id as usize * INSTANCES_PER_CLASS + instance_id as usize]
    }

    pub fn class_name(&self, class_id: ClassId) -> &str {
        &self.classes[class_id as usize]
    }

    pub fn color(&self, class_id: ClassId, instance_id: u8) -> &str {
        &self.instance(class_id, instance_id).color
    }
}

fn hsv_hex(h: f64, s: f64, v: f64) -> String {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - ((hp % 2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let to = |u: f64| ((u + m) * 255.0).round() as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

/// Shape of unit area for a class family; scaled afterwards.
fn unit_shape(family: usize, rng: &mut rng::Rng) -> Footprint {
    let pts: Vec<Vec2> = match family {
        // boxes
        0 => {
            let aspect: f64 = rng.gen_range(1.0..1.6);
            let (w, h) = (aspect.sqrt(), 1.0 / aspect.sqrt());
            return Footprint::rect(-w / 2.0, -h / 2.0, w / 2.0, h / 2.0).expect("valid rect");
        }
        // round things: octagon on an ellipse
        1 => {
            let aspect: f64 = rng.gen_range(1.0..1.3);
            (0..8)
                .map(|k| {
                    let t = k as f64 * TAU / 8.0;
                    Vec2::new(aspect.sqrt() * t.cos(), t.sin() / aspect.sqrt())
                })
                .collect()
        }
        // elongated things
        2 => {
            let aspect: f64 = rng.gen_range(2.0..3.5);
            let (w, h) = (aspect.sqrt(), 1.0 / aspect.sqrt());
            let bevel = 0.2 * h;
            vec![
                Vec2::new(-w / 2.0 + bevel, -h / 2.0),
                Vec2::new(w / 2.0 - bevel, -h / 2.0),
                Vec2::new(w / 2.0, 0.0),
                Vec2::new(w / 2.0 - bevel, h / 2.0),
                Vec2::new(-w / 2.0 + bevel, h / 2.0),
                Vec2::new(-w / 2.0, 0.0),
            ]
        }
        // irregular: hull of jittered points on an ellipse
        _ => {
            let aspect: f64 = rng.gen_range(1.0..1.8);
            (0..7)
                .map(|k| {
                    let t = (k as f64 + rng.gen_range(-0.3..0.3)) * TAU / 7.0;
                    let r = rng.gen_range(0.8..1.2);
                    Vec2::new(r * aspect.sqrt() * t.cos(), r * t.sin() / aspect.sqrt())
                })
                .collect()
        }
    };
    Footprint::new(convex_hull(&pts)).expect("hull of spread points is a valid polygon")
}

fn scaled_to_area(fp: &Footprint, area: f64) -> Footprint {
    let k = (area / fp.area()).sqrt();
    let v = fp.vertices().iter().map(|&p| p * k).collect();
    Footprint::new(v)
        .expect("scaling preserves validity")
        .centered()
}

/// Deterministic catalog of 20 classes × 3 instances.
pub fn build_catalog(seed: u64) -> Catalog {
    let mut rng = rng::from_seed(seed);
    let mut rank: Vec<usize> = (0..NUM_INSTANCES).collect();
    rank.shuffle(&mut rng);
    let ratio = MAX_AREA / MIN_AREA;
    let mut instances = Vec::with_capacity(NUM_INSTANCES);
    for class in 0..NUM_CLASSES {
        let hue = class as f64 * 360.0 / NUM_CLASSES as f64;
        for inst in 0..INSTANCES_PER_CLASS {
            let idx = class * INSTANCES_PER_CLASS + inst;
            let area = MIN_AREA * ratio.powf(rank[idx] as f64 / (NUM_INSTANCES - 1) as f64);
            let shape = unit_shape(class % 4, &mut rng);
            instances.push(InstanceTemplate {
                class_id: class as ClassId,
                instance_id: inst as u8,
                footprint: scaled_to_area(&shape, area),
                color: hsv_hex(hue, 0.75, 0.95 - 0.2 * inst as f64),
            });
        }
    }
    Catalog {
        seed,
        classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        instances,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];

    pub fn object_count(self) -> usize {
        match self {
            Difficulty::Easy => 20,
            Difficulty::Medium => 35,
            Difficulty::Hard => 50,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Difficulty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        })
    }
}

impl std::str::FromStr for Difficulty {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(format!("unknown difficulty {other:?}")),
        }
    }
}

fn class_counts(picks: &[usize]) -> [u8; NUM_CLASSES] {
    let mut counts = [0u8; NUM_CLASSES];
    for &i in picks {
        counts[i / INSTANCES_PER_CLASS] += 1;
    }
    counts
}

fn covers_all_counts(counts: &[u8; NUM_CLASSES]) -> bool {
    (0..=MAX_COUNT).all(|b| counts.contains(&b))
}

/// Drops `difficulty.object_count()` distinct catalog instances into the bin.
///
/// The instance subset is redrawn (bounded) until every per-class count
/// 0..=3 occurs, which lets the question sampler balance COUNTING answers.
/// Each object lands at a uniform in-bin position with a uniform rotation;
/// its layer is one above the highest object it lands on.
pub fn generate_scene(catalog: &Catalog, difficulty: Difficulty, seed: u64) -> Result<Scene> {
    let mut rng = rng::from_seed(seed);
    let bin = Bin::default();
    let n = difficulty.object_count();
    let mut picks = Vec::new();
    for _ in 0..COMPOSITION_ATTEMPTS {
        picks = rand::seq::index::sample(&mut rng, NUM_INSTANCES, n).into_vec();
        if covers_all_counts(&class_counts(&picks)) {
            break;
        }
    }
    picks.shuffle(&mut rng);

    let mut objects: Vec<SceneObject> = Vec::with_capacity(n);
    let mut placed: Vec<Footprint> = Vec::with_capacity(n);
    for (id, &pick) in picks.iter().enumerate() {
        let template = &catalog.instances[pick];
        let mut spot = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let angle = rng.gen_range(0.0..TAU);
            let fp = template.footprint.rotated(angle).centered();
            let bb = fp.bbox();
            let (lo_x, hi_x) = (-bb.min.x, bin.width - bb.max.x);
            let (lo_y, hi_y) = (-bb.min.y, bin.height - bb.max.y);
            if lo_x >= hi_x || lo_y >= hi_y {
                continue;
            }
            let pos = Vec2::new(rng.gen_range(lo_x..hi_x), rng.gen_range(lo_y..hi_y));
            spot = Some((fp, pos));
            break;
        }
        let Some((fp, pos)) = spot else {
            return Err(Error::GenerationFailure {
                seed,
                attempts: PLACEMENT_ATTEMPTS,
            });
        };
        let world = fp.translated(pos);
        let z = objects
            .iter()
            .zip(&placed)
            .filter(|(_, other)| other.overlaps(&world))
            .map(|(o, _)| o.z + 1)
            .max()
            .unwrap_or(0);
        placed.push(world);
        objects.push(SceneObject {
            id: id as u32,
            class_id: template.class_id,
            instance_id: template.instance_id,
            footprint: fp,
            position: pos,
            z,
        });
    }
    Ok(Scene { bin, objects, seed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum QuestionType {
    Counting,
    Existence,
    Spatial,
    Logic,
}

impl QuestionType {
    pub const ALL: [QuestionType; 4] = [
        QuestionType::Counting,
        QuestionType::Existence,
        QuestionType::Spatial,
        QuestionType::Logic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_pair(self) -> bool {
        matches!(self, QuestionType::Spatial | QuestionType::Logic)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Question {
    pub qtype: QuestionType,
    pub obj1: ClassId,
    pub obj2: Option<ClassId>,
    pub text: String,
}

impl Question {
    pub fn new(
        qtype: QuestionType,
        obj1: ClassId,
        obj2: Option<ClassId>,
        catalog: &Catalog,
    ) -> Result<Self> {
        let check = |c: ClassId| {
            if (c as usize) < catalog.classes.len() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("unknown class id {c}")))
            }
        };
        check(obj1)?;
        if let Some(c) = obj2 {
            check(c)?;
        }
        if qtype.is_pair() != obj2.is_some() {
            return Err(Error::InvalidArgument(format!(
                "{qtype:?} question {} a second object",
                if qtype.is_pair() { "needs" } else { "takes no" }
            )));
        }
        let a = catalog.class_name(obj1);
        let text = match (qtype, obj2.map(|c| catalog.class_name(c))) {
            (QuestionType::Counting, _) => format!("How many {a} are there in the bin?"),
            (QuestionType::Existence, _) => format!("Is there a {a} in the bin?"),
            (QuestionType::Spatial, Some(b)) => format!("Is there a {a} under the {b}?"),
            (QuestionType::Logic, Some(b)) => format!("Is there a {a} and a {b} in the bin?"),
            _ => unreachable!("pair-ness checked above"),
        };
        Ok(Self {
            qtype,
            obj1,
            obj2,
            text,
        })
    }

    pub fn counting(obj: ClassId, catalog: &Catalog) -> Self {
        Question::new(QuestionType::Counting, obj, None, catalog).expect("valid class")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Answer {
    Count(u8),
    Yes,
    No,
}

impl Answer {
    pub fn from_bool(b: bool) -> Self {
        if b {
            Answer::Yes
        } else {
            Answer::No
        }
    }

    /// Position in the answer set of this answer's question type:
    /// counts map to 0..=3, yes/no to 0/1.
    pub fn class_index(self) -> usize {
        match self {
            Answer::Count(n) => n as usize,
            Answer::Yes => 0,
            Answer::No => 1,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Answer::Count(n) => write!(f, "{n}"),
            Answer::Yes => f.write_str("yes"),
            Answer::No => f.write_str("no"),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum AnswerRepr {
    Count(u8),
    Word(String),
}

impl Serialize for Answer {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Answer::Count(n) => AnswerRepr::Count(n),
            Answer::Yes => AnswerRepr::Word("yes".into()),
            Answer::No => AnswerRepr::Word("no".into()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match AnswerRepr::deserialize(d)? {
            AnswerRepr::Count(n) if n <= MAX_COUNT => Ok(Answer::Count(n)),
            AnswerRepr::Count(n) => {
                Err(serde::de::Error::custom(format!("count {n} out of range")))
            }
            AnswerRepr::Word(w) if w == "yes" => Ok(Answer::Yes),
            AnswerRepr::Word(w) if w == "no" => Ok(Answer::No),
            AnswerRepr::Word(w) => Err(serde::de::Error::custom(format!("unknown answer {w:?}"))),
        }
    }
}

/// One line of a QA file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QAPair {
    pub scene_id: u32,
    #[serde(flatten)]
    pub question: Question,
    pub answer: Answer,
}

/// Ground-truth answer from the full scene state, ignoring occlusion.
pub fn oracle_answer(scene: &Scene, question: &Question) -> Answer {
    let count = |c: ClassId| scene.count_class(c);
    match question.qtype {
        QuestionType::Counting => Answer::Count(count(question.obj1).min(MAX_COUNT as usize) as u8),
        QuestionType::Existence => Answer::from_bool(count(question.obj1) >= 1),
        QuestionType::Logic => Answer::from_bool(
            count(question.obj1) >= 1 && question.obj2.is_some_and(|c| count(c) >= 1),
        ),
        QuestionType::Spatial => {
            let Some(upper) = question.obj2 else {
                return Answer::No;
            };
            Answer::from_bool(is_under(scene, question.obj1, upper))
        }
    }
}

/// Some `lower`-class object overlaps an `upper`-class object on a higher layer.
pub fn is_under(scene: &Scene, lower: ClassId, upper: ClassId) -> bool {
    let lows: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| o.class_id == lower)
        .collect();
    let ups: Vec<_> = scene
        .objects
        .iter()
        .filter(|o| o.class_id == upper)
        .collect();
    lows.iter().any(|l| {
        let lf = l.world_footprint();
        ups.iter()
            .any(|u| l.z < u.z && lf.overlaps(&u.world_footprint()))
    })
}

/// Every question of one type over the catalog's classes.
pub fn question_pool(qtype: QuestionType, catalog: &Catalog) -> Vec<Question> {
    let n = catalog.classes.len() as ClassId;
    if qtype.is_pair() {
        (0..n)
            .flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b)))
            .map(|(a, b)| Question::new(qtype, a, Some(b), catalog).expect("valid pair"))
            .collect()
    } else {
        (0..n)
            .map(|a| Question::new(qtype, a, None, catalog).expect("valid class"))
            .collect()
    }
}

/// Samples `per_type` questions of each type for one scene and answers them.
///
/// COUNTING questions are drawn so each answer 0..=3 gets an equal share of
/// slots: a slot whose answer bucket has no class in this scene is redrawn
/// among the non-empty buckets, and classes are cycled within a bucket.
pub fn generate_questions(
    scene_id: u32,
    scene: &Scene,
    catalog: &Catalog,
    seed: u64,
    per_type: usize,
) -> Vec<QAPair> {
    let mut rng = rng::from_seed(seed);
    let mut out = Vec::with_capacity(per_type * 4);
    let pair = |q: Question| QAPair {
        scene_id,
        answer: oracle_answer(scene, &q),
        question: q,
    };

    let mut buckets: Vec<Vec<ClassId>> = vec![Vec::new(); MAX_COUNT as usize + 1];
    for c in 0..catalog.classes.len() as ClassId {
        let n = scene.count_class(c).min(MAX_COUNT as usize);
        buckets[n].push(c);
    }
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    let nonempty: Vec<usize> = (0..buckets.len())
        .filter(|&b| !buckets[b].is_empty())
        .collect();
    let mut cursor = vec![0usize; buckets.len()];
    let mut slots: Vec<usize> = (0..per_type).map(|i| i % buckets.len()).collect();
    slots.shuffle(&mut rng);
    for mut b in slots {
        while buckets[b].is_empty() {
            b = nonempty[rng.gen_range(0..nonempty.len())];
        }
        let class = buckets[b][cursor[b] % buckets[b].len()];
        cursor[b] += 1;
        out.push(pair(Question::counting(class, catalog)));
    }

    for qtype in [
        QuestionType::Existence,
        QuestionType::Spatial,
        QuestionType::Logic,
    ] {
        let pool = question_pool(qtype, catalog);
        let take = per_type.min(pool.len());
        let picks = rand::seq::index::sample(&mut rng, pool.len(), take);
        out.extend(picks.into_iter().map(|i| pair(pool[i].clone())));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub easy: usize,
    pub medium: usize,
    pub hard: usize,
    pub train_fraction: f64,
    pub questions_per_type: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            easy: 30,
            medium: 30,
            hard: 40,
            train_fraction: 0.7,
            questions_per_type: 20,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        if self.questions_per_type == 0 {
            return Err(Error::InvalidArgument(
                "questions_per_type must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn total_scenes(&self) -> usize {
        self.easy + self.medium + self.hard
    }

    /// Difficulty of scene `i`: easy scenes first, then medium, then hard.
    pub fn difficulty_of(&self, i: usize) -> Difficulty {
        if i < self.easy {
            Difficulty::Easy
        } else if i < self.easy + self.medium {
            Difficulty::Medium
        } else {
            Difficulty::Hard
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub scene_id: u32,
    pub difficulty: Difficulty,
    pub split: Split,
    pub seed: u64,
    pub scene_file: String,
    pub qa_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub master_seed: u64,
    pub catalog_seed: u64,
    pub config: DatasetConfig,
    pub scenes: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<u32> {
        self.scenes
            .iter()
            .filter(|e| e.split == split)
            .map(|e| e.scene_id)
            .collect()
    }
}

/// A generated dataset held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub catalog: Catalog,
    pub manifest: DatasetManifest,
    pub scenes: Vec<Scene>,
    pub qa: Vec<Vec<QAPair>>,
}

fn stratified_split(config: &DatasetConfig, master_seed: u64) -> Vec<Split> {
    let mut split = vec![Split::Test; config.total_scenes()];
    for d in Difficulty::ALL {
        let mut ids: Vec<usize> = (0..config.total_scenes())
            .filter(|&i| config.difficulty_of(i) == d)
            .collect();
        let n_train = (ids.len() as f64 * config.train_fraction).round() as usize;
        ids.shuffle(&mut rng::substream(master_seed, "split", d.index() as u64));
        for &i in &ids[..n_train] {
            split[i] = Split::Train;
        }
    }
    split
}

/// Generates the full dataset. Each scene draws from its own sub-stream, so
/// serial and parallel runs are identical.
pub fn build_dataset(config: &DatasetConfig, master_seed: u64, exec: Exec) -> Result<Dataset> {
    config.validate()?;
    let catalog_seed = derive_seed(master_seed, "catalog", 0);
    let catalog = build_catalog(catalog_seed);
    let split = stratified_split(config, master_seed);

    let generated = par::try_map_range(exec, config.total_scenes(), |i| {
        let difficulty = config.difficulty_of(i);
        let mut last_err = None;
        for attempt in 0..GENERATION_RESEEDS {
            let seed = derive_seed(master_seed, &format!("scene/{attempt}"), i as u64);
            match generate_scene(&catalog, difficulty, seed) {
                Ok(scene) => {
                    let qseed = derive_seed(master_seed, "questions", i as u64);
                    let qa = generate_questions(
                        i as u32,
                        &scene,
                        &catalog,
                        qseed,
                        config.questions_per_type,
                    );
                    return Ok((scene, qa));
                }
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one attempt"))
    })?;

    let mut scenes = Vec::with_capacity(generated.len());
    let mut qa = Vec::with_capacity(generated.len());
    let mut entries = Vec::with_capacity(generated.len());
    for (i, (scene, pairs)) in generated.into_iter().enumerate() {
        entries.push(ManifestEntry {
            scene_id: i as u32,
            difficulty: config.difficulty_of(i),
            split: split[i],
            seed: scene.seed,
            scene_file: format!("scenes/scene_{i:03}.json"),
            qa_file: format!("qa/scene_{i:03}.jsonl"),
        });
        scenes.push(scene);
        qa.push(pairs);
    }
    Ok(Dataset {
        catalog,
        manifest: DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            master_seed,
            catalog_seed,
            config: config.clone(),
            scenes: entries,
        },
        scenes,
        qa,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl Dataset {
    pub fn entry(&self, scene_id: u32) -> &ManifestEntry {
        &self.manifest.scenes[scene_id as usize]
    }

    /// Scene ids in a split, optionally restricted to one difficulty.
    pub fn select(&self, split: Split, difficulty: Option<Difficulty>) -> Vec<u32> {
        self.manifest
            .scenes
            .iter()
            .filter(|e| e.split == split && difficulty.is_none_or(|d| d == e.difficulty))
            .map(|e| e.scene_id)
            .collect()
    }

    pub fn counting_pairs(&self, scene_id: u32) -> impl Iterator<Item = &QAPair> {
        self.qa[scene_id as usize]
            .iter()
            .filter(|p| p.question.qtype == QuestionType::Counting)
    }

    /// Histogram of COUNTING answers over every scene.
    pub fn counting_histogram(&self) -> [usize; MAX_COUNT as usize + 1] {
        let mut h = [0usize; MAX_COUNT as usize + 1];
        for scene in 0..self.scenes.len() {
            for p in self.counting_pairs(scene as u32) {
                if let Answer::Count(n) = p.answer {
                    h[n as usize] += 1;
                }
            }
        }
        h
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let manifest = serde_json::to_string_pretty(&self.manifest).expect("serializable");
        write_file(&dir.join("manifest.json"), &manifest)?;
        let catalog = serde_json::to_string_pretty(&self.catalog).expect("serializable");
        write_file(&dir.join("catalog.json"), &catalog)?;
        for (entry, (scene, pairs)) in self
            .manifest
            .scenes
            .iter()
            .zip(self.scenes.iter().zip(&self.qa))
        {
            write_file(&dir.join(&entry.scene_file), &scene.to_json())?;
            let mut lines = String::new();
            for p in pairs {
                lines.push_str(&serde_json::to_string(p).expect("serializable"));
                lines.push('\n');
            }
            write_file(&dir.join(&entry.qa_file), &lines)?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        let manifest: DatasetManifest = serde_json::from_str(&read_file(&manifest_path)?)
            .map_err(|e| Error::format(&manifest_path, e))?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::format(
                &manifest_path,
                format!("unsupported format_version {}", manifest.format_version),
            ));
        }
        let catalog_path = dir.join("catalog.json");
        let catalog: Catalog = serde_json::from_str(&read_file(&catalog_path)?)
            .map_err(|e| Error::format(&catalog_path, e))?;
        let mut scenes = Vec::with_capacity(manifest.scenes.len());
        let mut qa = Vec::with_capacity(manifest.scenes.len());
        for entry in &manifest.scenes {
            scenes.push(Scene::load(&dir.join(&entry.scene_file))?);
            let qa_path: PathBuf = dir.join(&entry.qa_file);
            let pairs = read_file(&qa_path)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| serde_json::from_str::<QAPair>(l).map_err(|e| Error::format(&qa_path, e)))
                .collect::<Result<Vec<_>>>()?;
            qa.push(pairs);
        }
        Ok(Dataset {
            catalog,
            manifest,
            scenes,
            qa,
        })
    }
}
