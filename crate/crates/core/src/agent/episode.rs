use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{select_with, Observation, QParams, QuestionRows};
use crate::dataset::{Answer, Question, QuestionType};
use crate::encoding::{CompactVisual, EmbeddingTable, VISUAL_RESOLUTION};
use crate::error::{Error, Result};
use crate::geometry;
use crate::reward::{self, RewardBreakdown, RewardConfig, StepOutcome};
use crate::rng;
use crate::world::{apply_push, PushAction, Scene};

/// Everything needed to replay one question-driven episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub question: Question,
    pub scene_0: Scene,
    pub actions: Vec<PushAction>,
    pub rewards: Vec<RewardBreakdown>,
    #[serde(rename = "scene_T")]
    pub scene_t: Scene,
    pub answer: Option<Answer>,
    pub seed: u64,
}

impl EpisodeTrace {
    /// Ended by reaching the step limit rather than by stopping.
    pub fn truncated(&self) -> bool {
        !self.actions.last().is_some_and(PushAction::is_stop)
    }

    /// Number of pushes, excluding the final stop.
    pub fn pushes(&self) -> usize {
        self.actions.iter().filter(|a| !a.is_stop()).count()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().map(|r| r.total).sum()
    }

    /// Scenes from `scene_0` through each action.
    pub fn replay(&self) -> Vec<Scene> {
        let mut frames = vec![self.scene_0.clone()];
        for a in &self.actions {
            let last = frames.last().expect("nonempty");
            let next = if a.is_stop() {
                last.clone()
            } else {
                apply_push(last, a)
            };
            frames.push(next);
        }
        frames
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("serializable")
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub epsilon: f64,
    pub max_steps: usize,
    /// Global step index of the first action, which sets β.
    pub first_step: u64,
}

/// The environment seen by one episode: current scene, its encoding and
/// the target objects' overlap rates.
pub(crate) struct Env<'a> {
    pub scene: Scene,
    pub rows: QuestionRows,
    target: u8,
    visual: Arc<CompactVisual>,
    chis: Vec<f64>,
    reward: &'a RewardConfig,
}

fn measure(scene: &Scene, target: u8) -> (Arc<CompactVisual>, Vec<f64>) {
    let map = geometry::rasterize(scene, VISUAL_RESOLUTION).expect("fixed resolution is valid");
    let chis = scene
        .ids_of_class(target)
        .into_iter()
        .map(|id| map.overlap(id).unwrap_or(1.0))
        .collect();
    (Arc::new(CompactVisual::from_map(scene, &map)), chis)
}

impl<'a> Env<'a> {
    pub fn new(scene: Scene, question: &Question, reward: &'a RewardConfig) -> Result<Self> {
        if question.qtype != QuestionType::Counting {
            return Err(Error::InvalidArgument(format!(
                "manipulation episodes take COUNTING questions, got {:?}",
                question.qtype
            )));
        }
        let rows = EmbeddingTable::row_indices(question)?;
        let (visual, chis) = measure(&scene, question.obj1);
        Ok(Self {
            scene,
            rows,
            target: question.obj1,
            visual,
            chis,
            reward,
        })
    }

    pub fn observation(&self) -> Observation {
        Observation {
            visual: self.visual.clone(),
            rows: self.rows,
        }
    }

    /// Applies an action and returns its reward.
    pub fn step(&mut self, action: &PushAction, global_step: u64) -> Result<RewardBreakdown> {
        if action.is_stop() {
            return reward::reward_from_outcome(
                &StepOutcome {
                    stopped: true,
                    chis_before: &self.chis,
                    chis_after: &self.chis,
                    r_e: 0.0,
                },
                global_step,
                self.reward,
            );
        }
        let next = apply_push(&self.scene, action);
        let r_e = reward::exploration_reward(&self.scene, &next, self.reward.epsilon_pos)?;
        let (visual, chis) = measure(&next, self.target);
        let out = reward::reward_from_outcome(
            &StepOutcome {
                stopped: false,
                chis_before: &self.chis,
                chis_after: &chis,
                r_e,
            },
            global_step,
            self.reward,
        )?;
        self.scene = next;
        self.visual = visual;
        self.chis = chis;
        Ok(out)
    }
}

/// Runs the policy from `scene_0` until it stops or `max_steps` actions
/// have been taken. Exploration draws come from `seed`.
pub fn run_episode(
    params: &QParams,
    scene_0: &Scene,
    question: &Question,
    options: &EpisodeOptions,
    reward: &RewardConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    if !(0.0..=1.0).contains(&options.epsilon) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in [0, 1], got {}",
            options.epsilon
        )));
    }
    let mut rng = rng::from_seed(seed);
    let mut env = Env::new(scene_0.clone(), question, reward)?;
    let mut actions = Vec::new();
    let mut rewards = Vec::new();
    for i in 0..options.max_steps {
        let obs = env.observation();
        let action = select_with(options.epsilon, &mut rng, || {
            params.q_map(&obs).greedy_action()
        });
        rewards.push(env.step(&action, options.first_step + i as u64)?);
        actions.push(action);
        if action.is_stop() {
            break;
        }
    }
    Ok(EpisodeTrace {
        question: question.clone(),
        scene_0: scene_0.clone(),
        actions,
        rewards,
        scene_t: env.scene,
        answer: None,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{QArch, OUT_CHANNELS, STOP_CHANNEL};
    use crate::dataset::{build_catalog, generate_scene, Difficulty};
    use crate::reward::step_reward;

    fn setup(seed: u64) -> (Scene, Question) {
        let cat = build_catalog(0);
        let scene = generate_scene(&cat, Difficulty::Medium, seed).unwrap();
        let class = scene.objects[0].class_id;
        (scene, Question::counting(class, &cat))
    }

    fn always_stop() -> QParams {
        let mut p = QParams::zeros(QArch::default());
        let n = p.weights.len();
        p.weights[n - OUT_CHANNELS + STOP_CHANNEL] = 1.0;
        p
    }

    #[test]
    fn stopping_policy_ends_immediately() {
        let (scene, q) = setup(1);
        let opts = EpisodeOptions {
            epsilon: 0.0,
            max_steps: 10,
            first_step: 0,
        };
        let tr = run_episode(
            &always_stop(),
            &scene,
            &q,
            &opts,
            &RewardConfig::default(),
            4,
        )
        .unwrap();
        assert_eq!(tr.actions, vec![PushAction::Stop]);
        assert_eq!(tr.scene_t, scene);
        assert!(!tr.truncated());
    }

    #[test]
    fn traces_replay_and_rewards_recompute() {
        let cfg = RewardConfig::default();
        for seed in 0..3 {
            let (scene, q) = setup(seed);
            let params = QParams::init(QArch::default(), seed);
            let opts = EpisodeOptions {
                epsilon: 0.9,
                max_steps: 6,
                first_step: 100,
            };
            let tr = run_episode(&params, &scene, &q, &opts, &cfg, seed).unwrap();
            assert!(tr.actions.len() <= 6);
            let frames = tr.replay();
            assert_eq!(frames.last().unwrap(), &tr.scene_t);
            for (i, a) in tr.actions.iter().enumerate() {
                let expect =
                    step_reward(&frames[i], &frames[i + 1], a, q.obj1, 100 + i as u64, &cfg)
                        .unwrap();
                assert_eq!(expect, tr.rewards[i]);
            }
            let again = run_episode(&params, &scene, &q, &opts, &cfg, seed).unwrap();
            assert_eq!(again, tr);
            let json = tr.to_json();
            assert_eq!(EpisodeTrace::from_json(&json).unwrap(), tr);
        }
    }

    #[test]
    fn non_counting_questions_are_rejected() {
        let cat = build_catalog(0);
        let (scene, _) = setup(0);
        let q = Question::new(QuestionType::Existence, 1, None, &cat).unwrap();
        let opts = EpisodeOptions {
            epsilon: 0.0,
            max_steps: 3,
            first_step: 0,
        };
        assert!(run_episode(
            &always_stop(),
            &scene,
            &q,
            &opts,
            &RewardConfig::default(),
            0
        )
        .is_err());
    }
}
