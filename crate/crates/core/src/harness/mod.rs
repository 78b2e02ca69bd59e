//! Experiment runner: configuration, persistence, evaluation, baselines
//! and replay rendering.

mod eval;
mod render;

pub use eval::{
    eval_items, evaluate, random_policy, rollouts, summarize, AccuracyReport, Answerer,
    DifficultyScore, EvalConfig, EvalRecord, EvalSetup, Policy,
};
pub use render::{action_log, object_color, render_frames, render_scene, write_replay};

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{train, Checkpoint, EpisodeRecord, EpisodeTrace, TrainConfig, TrainOutput};
use crate::dataset::{build_dataset, Dataset, DatasetConfig, Difficulty, Split};
use crate::encoding::encode_visual;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::qa::{train_qa, QaEpochRecord, QaExample, QaModel, QaTrainConfig};
use crate::reward::{RewardConfig, RqMode};
use crate::rng::derive_seed;

pub const RUN_CONFIG_FORMAT_VERSION: u32 = 1;
pub const RUN_CONFIG_FILE: &str = "run_config.toml";

/// A manipulation policy under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Random,
    Rg,
    Rl,
    Rgrl,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::Random, Arm::Rg, Arm::Rl, Arm::Rgrl];
    pub const DQN: [Arm; 3] = [Arm::Rg, Arm::Rl, Arm::Rgrl];

    pub fn rq_mode(self) -> Option<RqMode> {
        match self {
            Arm::Random => None,
            Arm::Rg => Some(RqMode::Rg),
            Arm::Rl => Some(RqMode::Rl),
            Arm::Rgrl => Some(RqMode::RgRl),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Arm::Random => "random",
            Arm::Rg => "DQN(R_g)",
            Arm::Rl => "DQN(R_l)",
            Arm::Rgrl => "DQN(R_g+R_l)",
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::Random => "random",
            Arm::Rg => "rg",
            Arm::Rl => "rl",
            Arm::Rgrl => "rgrl",
        })
    }
}

impl FromStr for Arm {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "random" => Ok(Arm::Random),
            "rg" => Ok(Arm::Rg),
            "rl" => Ok(Arm::Rl),
            "rgrl" => Ok(Arm::Rgrl),
            other => Err(format!(
                "unknown arm {other:?} (expected random, rg, rl or rgrl)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaBackend {
    Oracle,
    Learned,
}

impl fmt::Display for QaBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QaBackend::Oracle => "oracle",
            QaBackend::Learned => "learned",
        })
    }
}

impl FromStr for QaBackend {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "oracle" => Ok(QaBackend::Oracle),
            "learned" => Ok(QaBackend::Learned),
            other => Err(format!(
                "unknown QA backend {other:?} (expected oracle or learned)"
            )),
        }
    }
}

/// `"all"` or a single difficulty.
pub fn parse_difficulty_filter(s: &str) -> std::result::Result<Option<Difficulty>, String> {
    if s == "all" {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

mod filter_serde {
    use super::*;
    use serde::{de::Error as _, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(
        v: &Option<Difficulty>,
        s: S,
    ) -> std::result::Result<S::Ok, S::Error> {
        match v {
            None => s.serialize_str("all"),
            Some(d) => s.serialize_str(&d.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<Option<Difficulty>, D::Error> {
        let text = String::deserialize(d)?;
        parse_difficulty_filter(&text).map_err(D::Error::custom)
    }
}

/// Everything that determines a run. Stored next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub seed: u64,
    pub arm: Arm,
    pub qa: QaBackend,
    #[serde(with = "filter_serde")]
    pub difficulty: Option<Difficulty>,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub reward: RewardConfig,
    pub agent: TrainConfig,
    pub qa_train: QaTrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            format_version: RUN_CONFIG_FORMAT_VERSION,
            seed: 0,
            arm: Arm::Rl,
            qa: QaBackend::Oracle,
            difficulty: None,
            out: PathBuf::from("runs/default"),
            dataset: DatasetConfig::default(),
            reward: RewardConfig::default(),
            agent: TrainConfig::default(),
            qa_train: QaTrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Serialize)]
struct TrainingInputs<'a> {
    seed: u64,
    dataset: &'a DatasetConfig,
    reward: &'a RewardConfig,
    agent: &'a TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.format_version != RUN_CONFIG_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported run config format_version {}",
                self.format_version
            )));
        }
        self.dataset.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        if self.eval.max_steps == 0 {
            return Err(Error::InvalidArgument(
                "eval.max_steps must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|m| Error::format(path, m))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_text(&dir.join(RUN_CONFIG_FILE), &self.to_toml())
    }

    /// Reward settings with the arm's question-reward mode.
    pub fn reward_for(&self, arm: Arm) -> RewardConfig {
        let mut r = self.reward.clone();
        if let Some(mode) = arm.rq_mode() {
            r.rq_mode = mode;
        }
        r
    }

    /// Hash of the settings that determine a trained policy.
    pub fn training_hash(&self, arm: Arm) -> String {
        let reward = self.reward_for(arm);
        let inputs = TrainingInputs {
            seed: self.seed,
            dataset: &self.dataset,
            reward: &reward,
            agent: &self.agent,
        };
        sha256_hex(toml::to_string(&inputs).expect("serializable").as_bytes())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out.join("dataset")
    }

    pub fn train_dir(&self, arm: Arm) -> PathBuf {
        self.out.join("train").join(arm.to_string())
    }

    pub fn qa_dir(&self, arm: Arm) -> PathBuf {
        self.out.join("qa").join(arm.to_string())
    }

    pub fn eval_dir(&self, arm: Arm, qa: QaBackend) -> PathBuf {
        self.out.join("eval").join(format!("{arm}-{qa}"))
    }

    pub fn dataset(&self, exec: Exec) -> Result<Dataset> {
        build_dataset(&self.dataset, derive_seed(self.seed, "dataset", 0), exec)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub(crate) fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut text = String::new();
    for item in items {
        text.push_str(&serde_json::to_string(item).expect("serializable"));
        text.push('\n');
    }
    write_text(path, &text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(
        path,
        &(serde_json::to_string_pretty(value).expect("serializable") + "\n"),
    )
}

/// Mean per-step reward over the first and last `fraction` of episodes.
pub fn reward_trend(log: &[EpisodeRecord], fraction: f64) -> Option<(f64, f64)> {
    let k = ((log.len() as f64 * fraction).floor() as usize).max(1);
    if log.len() < 2 * k {
        return None;
    }
    let mean = |eps: &[EpisodeRecord]| {
        let (sum, n) = eps
            .iter()
            .flat_map(|e| e.steps.iter())
            .fold((0.0, 0usize), |(s, n), r| (s + r.total, n + 1));
        sum / n.max(1) as f64
    };
    Some((mean(&log[..k]), mean(&log[log.len() - k..])))
}

/// `gen-dataset`: writes manifest, catalog, scenes and QA files.
pub fn cmd_gen_dataset(cfg: &RunConfig, exec: Exec) -> Result<Dataset> {
    cfg.validate()?;
    let ds = cfg.dataset(exec)?;
    let dir = cfg.dataset_dir();
    ds.write(&dir)?;
    cfg.save(&dir)?;
    Ok(ds)
}

/// `train`: trains one DQN arm and writes its checkpoint and log.
pub fn cmd_train(cfg: &RunConfig, arm: Arm, exec: Exec) -> Result<TrainOutput> {
    cfg.validate()?;
    if arm == Arm::Random {
        return Err(Error::Usage("the random arm has nothing to train".into()));
    }
    let ds = cfg.dataset(exec)?;
    let reward = cfg.reward_for(arm);
    let out = train(
        &ds,
        &cfg.agent,
        &reward,
        derive_seed(cfg.seed, "train", arm as u64),
        exec,
    )?;
    let dir = cfg.train_dir(arm);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Checkpoint::new(out.params.clone(), cfg.training_hash(arm), out.rng.clone())
        .save(&dir.join("checkpoint.json"))?;
    write_jsonl(&dir.join("train_log.jsonl"), &out.log)?;
    cfg.save(&dir)?;
    Ok(out)
}

/// Loads the checkpoint of a trained arm, warning when it was produced by
/// different training settings.
pub fn load_policy(cfg: &RunConfig, arm: Arm) -> Result<Checkpoint> {
    let path = cfg.train_dir(arm).join("checkpoint.json");
    let ckpt = Checkpoint::load(&path)?;
    if ckpt.config_hash != cfg.training_hash(arm) {
        log::warn!("{} was trained with different settings", path.display());
    }
    Ok(ckpt)
}

fn with_policy<T>(cfg: &RunConfig, arm: Arm, f: impl FnOnce(Policy) -> Result<T>) -> Result<T> {
    match arm {
        Arm::Random => f(Policy::Random),
        _ => {
            let ckpt = load_policy(cfg, arm)?;
            f(Policy::Trained(&ckpt.params))
        }
    }
}

/// QA training set: the arm's frozen policy rolled out on every train
/// COUNTING question, labelled with the ground-truth answer.
pub fn qa_examples(cfg: &RunConfig, ds: &Dataset, arm: Arm, exec: Exec) -> Result<Vec<QaExample>> {
    let reward = cfg.reward_for(arm);
    let records = with_policy(cfg, arm, |policy| {
        let setup = EvalSetup {
            policy,
            answerer: Answerer::GroundTruth,
            config: &cfg.eval,
            reward: &reward,
            seed: derive_seed(cfg.seed, "qa/rollout", arm as u64),
        };
        rollouts(ds, Split::Train, None, &setup, exec)
    })?;
    Ok(records
        .into_iter()
        .map(|r| QaExample {
            visual_0: encode_visual(&r.trace.scene_0),
            visual_t: encode_visual(&r.trace.scene_t),
            question: r.trace.question,
            answer: r.truth,
        })
        .collect())
}

/// `train-qa`: trains the learned answerer on one arm's rollouts.
pub fn cmd_train_qa(
    cfg: &RunConfig,
    arm: Arm,
    exec: Exec,
) -> Result<(QaModel, Vec<QaEpochRecord>)> {
    cfg.validate()?;
    let ds = cfg.dataset(exec)?;
    let examples = qa_examples(cfg, &ds, arm, exec)?;
    let seed = derive_seed(cfg.seed, "qa/train", arm as u64);
    let model = QaModel::init(cfg.qa_train.arch, derive_seed(seed, "init", 0));
    let (model, log) = train_qa(model, &examples, &cfg.qa_train, seed, exec)?;
    let dir = cfg.qa_dir(arm);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    model.save(&dir.join("qa_model.json"))?;
    write_jsonl(&dir.join("qa_log.jsonl"), &log)?;
    cfg.save(&dir)?;
    Ok((model, log))
}

/// Evaluates one arm without writing anything.
pub fn run_eval(
    cfg: &RunConfig,
    ds: &Dataset,
    arm: Arm,
    qa: QaBackend,
    exec: Exec,
) -> Result<(AccuracyReport, Vec<EvalRecord>)> {
    let reward = cfg.reward_for(arm);
    let model = match qa {
        QaBackend::Oracle => None,
        QaBackend::Learned => Some(QaModel::load(&cfg.qa_dir(arm).join("qa_model.json"))?),
    };
    let answerer = model
        .as_ref()
        .map_or(Answerer::OracleVisible, Answerer::Learned);
    with_policy(cfg, arm, |policy| {
        let setup = EvalSetup {
            policy,
            answerer,
            config: &cfg.eval,
            reward: &reward,
            seed: derive_seed(cfg.seed, "eval", 0),
        };
        evaluate(ds, &setup, cfg.difficulty, exec)
    })
}

/// `eval` and `baseline`: writes the report and every episode trace.
pub fn cmd_eval(cfg: &RunConfig, arm: Arm, qa: QaBackend, exec: Exec) -> Result<AccuracyReport> {
    cfg.validate()?;
    let ds = cfg.dataset(exec)?;
    let (report, records) = run_eval(cfg, &ds, arm, qa, exec)?;
    let dir = cfg.eval_dir(arm, qa);
    write_json(&dir.join("report.json"), &report)?;
    write_jsonl(&dir.join("traces.jsonl"), &records)?;
    cfg.save(&dir)?;
    Ok(report)
}

/// One row of the arm comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityRow {
    pub arm: Arm,
    pub report: AccuracyReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParityTable {
    pub qa: QaBackend,
    pub rows: Vec<ParityRow>,
    /// Difficulty/arm pairs where a DQN arm did not beat random.
    pub ordering_violations: Vec<String>,
}

impl ParityTable {
    pub fn report(&self, arm: Arm) -> Option<&AccuracyReport> {
        self.rows.iter().find(|r| r.arm == arm).map(|r| &r.report)
    }

    pub fn to_markdown(&self) -> String {
        let cell = |a: Option<f64>| a.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = format!(
            "QA backend: {}\n\n| policy | easy | medium | hard | pushes |\n|---|---|---|---|---|\n",
            self.qa
        );
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {} | {} | {} | {:.2} |\n",
                r.arm.label(),
                cell(r.report.accuracy(Difficulty::Easy)),
                cell(r.report.accuracy(Difficulty::Medium)),
                cell(r.report.accuracy(Difficulty::Hard)),
                r.report.mean_episode_length
            ));
        }
        s
    }
}

/// All four arms side by side. DQN arms that fail to beat random are
/// reported as warnings, not errors.
pub fn parity_table(rows: Vec<ParityRow>, qa: QaBackend) -> ParityTable {
    let mut violations = Vec::new();
    if let Some(random) = rows.iter().find(|r| r.arm == Arm::Random) {
        for r in rows.iter().filter(|r| r.arm != Arm::Random) {
            for d in Difficulty::ALL {
                if let (Some(a), Some(b)) = (r.report.accuracy(d), random.report.accuracy(d)) {
                    if a <= b {
                        violations.push(format!("{} <= random on {d}", r.arm.label()));
                    }
                }
            }
        }
    }
    for v in &violations {
        log::warn!("expected ordering violated: {v}");
    }
    ParityTable {
        qa,
        rows,
        ordering_violations: violations,
    }
}

/// `eval --arm all`: evaluates every arm and writes the comparison.
pub fn cmd_parity(cfg: &RunConfig, qa: QaBackend, exec: Exec) -> Result<ParityTable> {
    cfg.validate()?;
    let ds = cfg.dataset(exec)?;
    let mut rows = Vec::new();
    for arm in Arm::ALL {
        let (report, _) = run_eval(cfg, &ds, arm, qa, exec)?;
        rows.push(ParityRow { arm, report });
    }
    let table = parity_table(rows, qa);
    let dir = cfg.out.join("parity");
    write_json(&dir.join(format!("parity-{qa}.json")), &table)?;
    write_text(&dir.join(format!("parity-{qa}.md")), &table.to_markdown())?;
    cfg.save(&dir)?;
    Ok(table)
}

/// Reads a trace from a file holding one trace, or line `index` of a JSONL
/// file of traces or evaluation records.
pub fn load_trace(path: &Path, index: Option<usize>) -> Result<EpisodeTrace> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse = |s: &str| -> std::result::Result<EpisodeTrace, String> {
        EpisodeTrace::from_json(s).or_else(|e| {
            serde_json::from_str::<EvalRecord>(s)
                .map(|r| r.trace)
                .map_err(|_| e)
        })
    };
    let doc = match index {
        None => match parse(&text) {
            Ok(t) => return Ok(t),
            Err(_) => text.lines().find(|l| !l.trim().is_empty()).unwrap_or(""),
        },
        Some(i) => text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .nth(i)
            .ok_or_else(|| Error::Usage(format!("{} has no trace at index {i}", path.display())))?,
    };
    parse(doc).map_err(|m| Error::format(path, m))
}

/// `replay`: renders a stored trace to `dir`, returning the frame count.
pub fn cmd_replay(trace_path: &Path, index: Option<usize>, dir: &Path) -> Result<usize> {
    let trace = load_trace(trace_path, index)?;
    write_replay(&trace, dir)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = RunConfig::default();
        cfg.difficulty = Some(Difficulty::Medium);
        cfg.arm = Arm::Rgrl;
        let text = cfg.to_toml();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
        assert!(text.contains("format_version = 1"));
        assert!(text.contains("difficulty = \"medium\""));
        let bad = text.replace("format_version = 1", "format_version = 9");
        assert!(RunConfig::from_toml(&bad).is_err());
        assert!(RunConfig::from_toml("no_such_key = 3").is_err());
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn hashes_follow_training_inputs() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.difficulty = Some(Difficulty::Hard);
        b.out = "elsewhere".into();
        assert_eq!(a.training_hash(Arm::Rl), b.training_hash(Arm::Rl));
        assert_ne!(a.training_hash(Arm::Rl), a.training_hash(Arm::Rg));
        b.agent.lr *= 2.0;
        assert_ne!(a.training_hash(Arm::Rl), b.training_hash(Arm::Rl));
        assert_eq!(sha256_hex(b"abc").len(), 64);
    }

    #[test]
    fn arms_parse_and_print() {
        for arm in Arm::ALL {
            assert_eq!(arm.to_string().parse::<Arm>().unwrap(), arm);
        }
        assert!("dqn".parse::<Arm>().is_err());
        assert_eq!(parse_difficulty_filter("all"), Ok(None));
        assert_eq!(parse_difficulty_filter("hard"), Ok(Some(Difficulty::Hard)));
        assert!(parse_difficulty_filter("extreme").is_err());
    }

    #[test]
    fn reward_trend_splits_the_log() {
        assert_eq!(reward_trend(&[], 0.1), None);
    }
}
