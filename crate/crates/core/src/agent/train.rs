use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{select_with, td_gradient_to, Env, QArch, QParams, ReplayMemory, Transition};
use crate::dataset::{Dataset, Question, Split};
use crate::encoding::{C_Q, EMBED_ROWS};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::par::{self, Exec};
use crate::reward::{RewardBreakdown, RewardConfig};
use crate::rng::{self, RngState};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub arch: QArch,
    pub gamma: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient updates between target-network syncs.
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the step budget over which ε anneals linearly.
    pub epsilon_anneal: f64,
    pub max_steps: usize,
    /// Total environment steps.
    pub env_steps: u64,
    /// Transitions collected before the first update.
    pub learn_start: usize,
    /// Environment steps per gradient update.
    pub update_every: u64,
    pub optimizer: Optimizer,
    pub learn_embedding: bool,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Rewards stored for learning are clipped to `[-reward_clip,
    /// reward_clip]`; 0 disables clipping. Logged rewards are never clipped.
    pub reward_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            arch: QArch::default(),
            gamma: 0.5,
            lr: 1e-3,
            batch_size: 32,
            target_sync: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.1,
            epsilon_anneal: 0.5,
            max_steps: 10,
            env_steps: 20_000,
            learn_start: 500,
            update_every: 1,
            optimizer: Optimizer::Adam,
            learn_embedding: true,
            grad_clip: 10.0,
            reward_clip: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size == 0 || self.target_sync == 0 || self.update_every == 0 {
            return bad("batch_size, target_sync and update_every must be positive".into());
        }
        for (name, e) in [
            ("epsilon_start", self.epsilon_start),
            ("epsilon_end", self.epsilon_end),
        ] {
            if !(0.0..=1.0).contains(&e) {
                return bad(format!("{name} must lie in [0, 1], got {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.epsilon_anneal) {
            return bad(format!(
                "epsilon_anneal must lie in [0, 1], got {}",
                self.epsilon_anneal
            ));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        if self.grad_clip < 0.0 || self.reward_clip < 0.0 {
            return bad("grad_clip and reward_clip must be non-negative".into());
        }
        Ok(())
    }

    /// Linear ε schedule over global environment steps.
    pub fn epsilon(&self, step: u64) -> f64 {
        let span = self.epsilon_anneal * self.env_steps as f64;
        if span <= 0.0 || step as f64 >= span {
            return self.epsilon_end;
        }
        let f = step as f64 / span;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: u64,
    pub scene_id: u32,
    pub target_class: u8,
    pub first_step: u64,
    pub epsilon: f64,
    pub total_reward: f64,
    /// Mean TD loss over the updates made during the episode.
    pub loss: Option<f64>,
    pub steps: Vec<RewardBreakdown>,
}

impl EpisodeRecord {
    pub fn beta(&self) -> Option<f64> {
        self.steps.first().map(|s| s.beta)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: QParams,
    pub log: Vec<EpisodeRecord>,
    pub updates: u64,
    pub rng: RngState,
}

fn clip(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Trains a Q-network on the dataset's training COUNTING questions.
/// Everything is derived from `seed`; `exec` only changes how per-sample
/// gradients are computed, never the result.
pub fn train(
    dataset: &Dataset,
    config: &TrainConfig,
    reward: &RewardConfig,
    seed: u64,
    exec: Exec,
) -> Result<TrainOutput> {
    config.validate()?;
    reward.validate()?;
    let pairs: Vec<(u32, Question)> = dataset
        .select(Split::Train, None)
        .into_iter()
        .flat_map(|id| {
            dataset
                .counting_pairs(id)
                .map(move |p| (id, p.question.clone()))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "no COUNTING questions in the train split".into(),
        ));
    }

    let mut params = QParams::init(config.arch, rng::derive_seed(seed, "qnet/init", 0));
    let mut target = params.clone();
    let mut rollout_rng = rng::substream(seed, "rollout", 0);
    let mut replay_rng = rng::substream(seed, "replay", 0);
    let mut replay = ReplayMemory::new(2 * reward.replay_half as usize);
    // max_a Q_target(s', a) per replay slot, valid until the next sync.
    let mut next_max: Vec<Option<f64>> = vec![None; replay.capacity()];
    let mut opt = Adam::new(params.flat_len());
    let embed_from = params.weights.len();

    let mut log = Vec::new();
    let mut step = 0u64;
    let mut updates = 0u64;
    let mut episode = 0u64;
    while step < config.env_steps {
        let (scene_id, question) = &pairs[rollout_rng.gen_range(0..pairs.len())];
        let mut env = Env::new(dataset.scenes[*scene_id as usize].clone(), question, reward)?;
        let first_step = step;
        let epsilon = config.epsilon(step);
        let mut steps = Vec::new();
        let mut losses = Vec::new();
        for i in 0..config.max_steps {
            let obs = env.observation();
            let eps = config.epsilon(step);
            let action = select_with(eps, &mut rollout_rng, || params.q_map(&obs).greedy_action());
            let r = env.step(&action, step)?;
            let slot = replay.push(Transition {
                state: obs,
                action,
                reward: if config.reward_clip > 0.0 {
                    r.total.clamp(-config.reward_clip, config.reward_clip)
                } else {
                    r.total
                },
                next_state: env.observation(),
                done: action.is_stop(),
            });
            next_max[slot] = None;
            steps.push(r);
            step += 1;

            if replay.len() >= config.learn_start.max(config.batch_size)
                && step.is_multiple_of(config.update_every)
            {
                let slots = replay.sample_slots(config.batch_size, &mut replay_rng);
                let batch: Vec<Transition> = slots
                    .iter()
                    .map(|&i| replay.get(i).expect("sampled slot").clone())
                    .collect();
                let missing: Vec<usize> = slots
                    .iter()
                    .copied()
                    .filter(|&i| next_max[i].is_none() && !replay.get(i).expect("slot").done)
                    .collect();
                let fresh = par::map_slice(exec, &missing, |&i| {
                    target.q_map(&replay.get(i).expect("slot").next_state).max()
                });
                for (&i, m) in missing.iter().zip(fresh) {
                    next_max[i] = Some(m);
                }
                let targets: Vec<f64> = slots
                    .iter()
                    .zip(&batch)
                    .map(|(&i, t)| match next_max[i] {
                        Some(m) if !t.done => t.reward + config.gamma * m,
                        _ => t.reward,
                    })
                    .collect();
                let (loss, mut grad) =
                    td_gradient_to(&params, &batch, &targets, exec).map_err(|e| match e {
                        Error::TrainingDivergence(m) => Error::TrainingDivergence(format!(
                            "{m} (update {updates}, env step {step}, episode {episode})"
                        )),
                        other => other,
                    })?;
                if !config.learn_embedding {
                    grad[embed_from..].iter_mut().for_each(|g| *g = 0.0);
                }
                clip(&mut grad, config.grad_clip);
                let mut flat = params.flat();
                match config.optimizer {
                    Optimizer::Adam => opt.step(&mut flat, &grad, config.lr),
                    Optimizer::Sgd => {
                        for (p, g) in flat.iter_mut().zip(&grad) {
                            *p -= config.lr * g;
                        }
                    }
                }
                params.set_flat(&flat);
                losses.push(loss);
                updates += 1;
                if updates.is_multiple_of(config.target_sync) {
                    target = params.clone();
                    next_max.iter_mut().for_each(|m| *m = None);
                }
            }
            if action.is_stop() || step >= config.env_steps || i + 1 == config.max_steps {
                break;
            }
        }
        let total_reward = steps.iter().map(|s| s.total).sum();
        let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
        if episode.is_multiple_of(200) {
            log::info!(
                "episode {episode}: step {step}, epsilon {epsilon:.3}, reward {total_reward:.3}, updates {updates}"
            );
        }
        log.push(EpisodeRecord {
            episode,
            scene_id: *scene_id,
            target_class: question.obj1,
            first_step,
            epsilon,
            total_reward,
            loss,
            steps,
        });
        episode += 1;
    }
    if !params.is_finite() {
        return Err(Error::TrainingDivergence(
            "parameters became non-finite".into(),
        ));
    }
    Ok(TrainOutput {
        params,
        log,
        updates,
        rng: RngState::capture(&rollout_rng),
    })
}

/// Saved policy: weights, embedding, the hash of the configuration that
/// produced them and the rollout RNG position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub params: QParams,
    pub config_hash: String,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn new(params: QParams, config_hash: String, rng: RngState) -> Self {
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: "dqn".into(),
            params,
            config_hash,
            rng,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("serializable");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if ck.format_version != CHECKPOINT_FORMAT_VERSION || ck.kind != "dqn" {
            return Err(Error::format(
                path,
                format!("not a version-{CHECKPOINT_FORMAT_VERSION} dqn checkpoint"),
            ));
        }
        let p = &ck.params;
        if p.weights.len() != p.arch.num_weights()
            || p.embedding.rows.len() != EMBED_ROWS
            || !p.is_finite()
        {
            return Err(Error::format(
                path,
                "checkpoint weights do not match their architecture",
            ));
        }
        debug_assert_eq!(p.flat_len(), p.weights.len() + EMBED_ROWS * C_Q);
        Ok(ck)
    }
}
