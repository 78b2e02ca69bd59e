use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::agent::{run_episode, Env, EpisodeOptions, EpisodeTrace, QParams};
use crate::dataset::{oracle_answer, Answer, Dataset, Difficulty, Question, QuestionType, Split};
use crate::encoding::encode_visual;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::qa::{answer_learned, answer_oracle_visible, QaModel, COUNT_ANSWERS};
use crate::reward::RewardConfig;
use crate::rng::{self, Rng};
use crate::world::{PushAction, Scene, GRID, NUM_DIRECTIONS};

/// The random baseline: a uniform number of pushes in `0..=max_steps`,
/// each uniform over the push space, then Stop.
pub fn random_policy(
    scene: &Scene,
    question: &Question,
    max_steps: usize,
    reward: &RewardConfig,
    rng: &mut Rng,
) -> Result<EpisodeTrace> {
    let pushes = rng.gen_range(0..=max_steps);
    let mut env = Env::new(scene.clone(), question, reward)?;
    let mut actions = Vec::with_capacity(pushes + 1);
    let mut rewards = Vec::with_capacity(pushes + 1);
    let step0 = eval_step(reward);
    for i in 0..=pushes {
        let action = if i == pushes {
            PushAction::Stop
        } else {
            let (row, col) = (rng.gen_range(0..GRID), rng.gen_range(0..GRID));
            PushAction::push(row, col, rng.gen_range(0..NUM_DIRECTIONS as u8)).expect("in range")
        };
        rewards.push(env.step(&action, step0 + i as u64)?);
        actions.push(action);
    }
    Ok(EpisodeTrace {
        question: question.clone(),
        scene_0: scene.clone(),
        actions,
        rewards,
        scene_t: env.scene,
        answer: None,
        seed: 0,
    })
}

/// Global step used for rewards at evaluation time, where β has settled.
fn eval_step(reward: &RewardConfig) -> u64 {
    reward.replay_half
}

#[derive(Debug, Clone, Copy)]
pub enum Policy<'a> {
    Trained(&'a QParams),
    Random,
}

/// How the answer is produced after manipulation.
#[derive(Debug, Clone, Copy)]
pub enum Answerer<'a> {
    /// Instances visible in the first or last frame.
    OracleVisible,
    Learned(&'a QaModel),
    /// Ground truth from the full scene, ignoring the policy.
    GroundTruth,
    /// A uniform guess over the answer domain.
    UniformRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub max_steps: usize,
    pub simple_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            max_steps: 10,
            simple_threshold: crate::world::DEFAULT_SIMPLE_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DifficultyScore {
    pub questions: usize,
    pub correct: usize,
}

impl DifficultyScore {
    pub fn accuracy(&self) -> Option<f64> {
        (self.questions > 0).then(|| self.correct as f64 / self.questions as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub easy: DifficultyScore,
    pub medium: DifficultyScore,
    pub hard: DifficultyScore,
    /// `confusion[truth][predicted]` over counts 0..=3.
    pub confusion: [[usize; COUNT_ANSWERS]; COUNT_ANSWERS],
    /// Mean number of pushes per episode.
    pub mean_episode_length: f64,
    pub mean_total_reward: f64,
}

impl AccuracyReport {
    pub fn score(&self, d: Difficulty) -> &DifficultyScore {
        match d {
            Difficulty::Easy => &self.easy,
            Difficulty::Medium => &self.medium,
            Difficulty::Hard => &self.hard,
        }
    }

    fn score_mut(&mut self, d: Difficulty) -> &mut DifficultyScore {
        match d {
            Difficulty::Easy => &mut self.easy,
            Difficulty::Medium => &mut self.medium,
            Difficulty::Hard => &mut self.hard,
        }
    }

    pub fn accuracy(&self, d: Difficulty) -> Option<f64> {
        self.score(d).accuracy()
    }

    pub fn questions(&self) -> usize {
        Difficulty::ALL
            .iter()
            .map(|&d| self.score(d).questions)
            .sum()
    }

    pub fn overall(&self) -> Option<f64> {
        let n = self.questions();
        let c: usize = Difficulty::ALL.iter().map(|&d| self.score(d).correct).sum();
        (n > 0).then(|| c as f64 / n as f64)
    }
}

/// One evaluated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub scene_id: u32,
    pub difficulty: Difficulty,
    pub truth: Answer,
    pub trace: EpisodeTrace,
}

impl EvalRecord {
    pub fn correct(&self) -> bool {
        self.trace.answer == Some(self.truth)
    }
}

/// COUNTING questions of a split, in dataset order, as `(scene, index)`.
pub fn eval_items(
    dataset: &Dataset,
    split: Split,
    difficulty: Option<Difficulty>,
) -> Vec<(u32, usize)> {
    dataset
        .select(split, difficulty)
        .into_iter()
        .flat_map(|id| {
            dataset.qa[id as usize]
                .iter()
                .enumerate()
                .filter(|(_, p)| p.question.qtype == QuestionType::Counting)
                .map(move |(k, _)| (id, k))
        })
        .collect()
}

/// What to roll out and how to answer.
#[derive(Debug, Clone, Copy)]
pub struct EvalSetup<'a> {
    pub policy: Policy<'a>,
    pub answerer: Answerer<'a>,
    pub config: &'a EvalConfig,
    pub reward: &'a RewardConfig,
    pub seed: u64,
}

fn answer(
    answerer: Answerer,
    trace: &EpisodeTrace,
    config: &EvalConfig,
    rng: &mut Rng,
) -> Result<Answer> {
    let q = &trace.question;
    Ok(match answerer {
        Answerer::OracleVisible => {
            answer_oracle_visible(&trace.scene_0, &trace.scene_t, q, config.simple_threshold)
        }
        Answerer::Learned(model) => {
            answer_learned(
                model,
                &encode_visual(&trace.scene_0),
                &encode_visual(&trace.scene_t),
                q,
            )?
            .answer
        }
        Answerer::GroundTruth => oracle_answer(&trace.scene_0, q),
        Answerer::UniformRandom => match q.qtype {
            QuestionType::Counting => Answer::Count(rng.gen_range(0..COUNT_ANSWERS) as u8),
            _ => Answer::from_bool(rng.gen()),
        },
    })
}

/// Rolls out every COUNTING question of `split` (optionally of one
/// difficulty) with ε = 0 and answers it. Each question has its own seed,
/// so the result does not depend on `exec`.
pub fn rollouts(
    dataset: &Dataset,
    split: Split,
    difficulty: Option<Difficulty>,
    setup: &EvalSetup,
    exec: Exec,
) -> Result<Vec<EvalRecord>> {
    let items = eval_items(dataset, split, difficulty);
    if items.is_empty() {
        return Err(Error::Usage(format!(
            "the selected {split:?} split has no COUNTING questions"
        )));
    }
    let (config, reward) = (setup.config, setup.reward);
    par::map_slice(exec, &items, |&(scene_id, k)| {
        let pair = &dataset.qa[scene_id as usize][k];
        let scene = &dataset.scenes[scene_id as usize];
        let episode_seed = rng::derive_seed(setup.seed, &format!("eval/{scene_id}"), k as u64);
        let mut rng = rng::from_seed(episode_seed);
        let mut trace = match setup.policy {
            Policy::Trained(params) => {
                let opts = EpisodeOptions {
                    epsilon: 0.0,
                    max_steps: config.max_steps,
                    first_step: eval_step(reward),
                };
                run_episode(params, scene, &pair.question, &opts, reward, episode_seed)?
            }
            Policy::Random => {
                random_policy(scene, &pair.question, config.max_steps, reward, &mut rng)?
            }
        };
        trace.seed = episode_seed;
        trace.answer = Some(answer(setup.answerer, &trace, config, &mut rng)?);
        Ok(EvalRecord {
            scene_id,
            difficulty: dataset.entry(scene_id).difficulty,
            truth: pair.answer,
            trace,
        })
    })
    .into_iter()
    .collect()
}

/// Test-split evaluation: rollouts plus their report.
pub fn evaluate(
    dataset: &Dataset,
    setup: &EvalSetup,
    difficulty: Option<Difficulty>,
    exec: Exec,
) -> Result<(AccuracyReport, Vec<EvalRecord>)> {
    let records = rollouts(dataset, Split::Test, difficulty, setup, exec)?;
    Ok((summarize(&records), records))
}

/// Aggregates records into a report.
pub fn summarize(records: &[EvalRecord]) -> AccuracyReport {
    let mut report = AccuracyReport {
        easy: DifficultyScore::default(),
        medium: DifficultyScore::default(),
        hard: DifficultyScore::default(),
        confusion: [[0; COUNT_ANSWERS]; COUNT_ANSWERS],
        mean_episode_length: 0.0,
        mean_total_reward: 0.0,
    };
    let mut pushes = 0usize;
    let mut reward = 0.0;
    for r in records {
        let s = report.score_mut(r.difficulty);
        s.questions += 1;
        s.correct += r.correct() as usize;
        if let (Answer::Count(t), Some(Answer::Count(p))) = (r.truth, r.trace.answer) {
            report.confusion[t as usize][p as usize] += 1;
        }
        pushes += r.trace.pushes();
        reward += r.trace.total_reward();
    }
    if !records.is_empty() {
        report.mean_episode_length = pushes as f64 / records.len() as f64;
        report.mean_total_reward = reward / records.len() as f64;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_dataset, DatasetConfig};

    fn small() -> Dataset {
        let cfg = DatasetConfig {
            easy: 4,
            medium: 4,
            hard: 4,
            ..DatasetConfig::default()
        };
        build_dataset(&cfg, 11, Exec::Serial).unwrap()
    }

    #[test]
    fn random_policy_respects_the_action_space() {
        let ds = small();
        let q = ds.counting_pairs(0).next().unwrap().question.clone();
        let mut rng = rng::from_seed(5);
        let mut zero_seen = false;
        for _ in 0..200 {
            let tr =
                random_policy(&ds.scenes[0], &q, 4, &RewardConfig::default(), &mut rng).unwrap();
            assert!(tr.pushes() <= 4);
            assert_eq!(tr.actions.last(), Some(&PushAction::Stop));
            assert_eq!(tr.actions.len(), tr.pushes() + 1);
            assert!(tr
                .actions
                .iter()
                .all(|a| a.to_index() < crate::world::NUM_ACTIONS));
            if tr.pushes() == 0 {
                zero_seen = true;
                assert_eq!(tr.scene_t, ds.scenes[0]);
            }
            assert_eq!(tr.replay().last().unwrap(), &tr.scene_t);
        }
        assert!(zero_seen);
    }

    #[test]
    fn reports_are_consistent_and_exec_independent() {
        let ds = small();
        let cfg = EvalConfig {
            max_steps: 3,
            ..EvalConfig::default()
        };
        let rc = RewardConfig::default();
        let setup = EvalSetup {
            policy: Policy::Random,
            answerer: Answerer::OracleVisible,
            config: &cfg,
            reward: &rc,
            seed: 3,
        };
        let (a, recs) = evaluate(&ds, &setup, None, Exec::Serial).unwrap();
        let (b, recs_b) = evaluate(&ds, &setup, None, Exec::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(recs, recs_b);
        let total: usize = a.confusion.iter().flatten().sum();
        assert_eq!(total, a.questions());
        assert_eq!(a.questions(), eval_items(&ds, Split::Test, None).len());
        for row in 0..COUNT_ANSWERS {
            let n: usize = a.confusion[row].iter().sum();
            let truth = recs
                .iter()
                .filter(|r| r.truth == Answer::Count(row as u8))
                .count();
            assert_eq!(n, truth);
        }
        for d in Difficulty::ALL {
            let acc = a.accuracy(d).unwrap();
            assert!((0.0..=1.0).contains(&acc));
        }
    }

    #[test]
    fn ground_truth_answerer_is_exact() {
        let ds = small();
        let setup = EvalSetup {
            policy: Policy::Random,
            answerer: Answerer::GroundTruth,
            config: &EvalConfig::default(),
            reward: &RewardConfig::default(),
            seed: 0,
        };
        let (r, _) = evaluate(&ds, &setup, None, Exec::Parallel).unwrap();
        for d in Difficulty::ALL {
            assert_eq!(r.accuracy(d), Some(1.0));
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        let mut ds = small();
        for e in &mut ds.manifest.scenes {
            e.split = Split::Train;
        }
        let setup = EvalSetup {
            policy: Policy::Random,
            answerer: Answerer::OracleVisible,
            config: &EvalConfig::default(),
            reward: &RewardConfig::default(),
            seed: 0,
        };
        let res = evaluate(&ds, &setup, None, Exec::Serial);
        assert!(matches!(res, Err(Error::Usage(_))));
    }
}
