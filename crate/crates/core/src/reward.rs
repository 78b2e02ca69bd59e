//! Reward for one manipulation step.
//!
//! Stopping is judged against whether the scene is already simple for the
//! queried class (+1 / −1); pushing a simple scene is redundant (0); pushing
//! a complex scene earns `β·R_e + (1 − β)·R_q`, where `R_e` rewards moving
//! things and `R_q` rewards reducing the target objects' overlap rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{self, ClassId, PushAction, Scene, DEFAULT_SIMPLE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RqMode {
    Rg,
    Rl,
    RgRl,
}

impl std::str::FromStr for RqMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "rg" => Ok(RqMode::Rg),
            "rl" => Ok(RqMode::Rl),
            "rgrl" => Ok(RqMode::RgRl),
            other => Err(format!("unknown reward arm {other:?}")),
        }
    }
}

impl std::fmt::Display for RqMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RqMode::Rg => "rg",
            RqMode::Rl => "rl",
            RqMode::RgRl => "rgrl",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    pub simple_threshold: f64,
    /// Half the replay capacity; β reaches 0.5 after this many steps.
    pub replay_half: u64,
    pub rq_mode: RqMode,
    /// `(w_g, w_l)` used in `RgRl` mode.
    pub rq_weights: [f64; 2],
    pub epsilon_pos: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            simple_threshold: DEFAULT_SIMPLE_THRESHOLD,
            replay_half: 2500,
            rq_mode: RqMode::RgRl,
            rq_weights: [0.5, 0.5],
            epsilon_pos: 1e-6,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.simple_threshold > 0.0 && self.simple_threshold < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "simple_threshold must lie in (0, 1), got {}",
                self.simple_threshold
            )));
        }
        if self.replay_half == 0 {
            return Err(Error::InvalidArgument(
                "replay_half must be at least 1".into(),
            ));
        }
        let [wg, wl] = self.rq_weights;
        if wg < 0.0 || wl < 0.0 || ((wg + wl) - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "rq_weights must be non-negative and sum to 1, got {:?}",
                self.rq_weights
            )));
        }
        if self.epsilon_pos <= 0.0 {
            return Err(Error::InvalidArgument(
                "epsilon_pos must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardCase {
    TerminalCorrect,
    TerminalWrong,
    Redundant,
    Shaped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub total: f64,
    pub case: RewardCase,
    pub beta: f64,
    pub r_e: Option<f64>,
    pub r_g: Option<f64>,
    pub r_l: Option<f64>,
    pub r_q: Option<f64>,
}

impl RewardBreakdown {
    fn terminal(case: RewardCase, total: f64, beta: f64) -> Self {
        Self {
            total,
            case,
            beta,
            r_e: None,
            r_g: None,
            r_l: None,
            r_q: None,
        }
    }
}

/// Exploration weight: `1 − 0.5·step/T` up to `T`, then 0.5.
pub fn beta(step: u64, replay_half: u64) -> f64 {
    if step <= replay_half {
        1.0 - 0.5 * (step as f64 / replay_half as f64)
    } else {
        0.5
    }
}

/// Largest displacement of any object relative to its distance from the
/// bin's top-left corner.
pub fn exploration_reward(before: &Scene, after: &Scene, eps: f64) -> Result<f64> {
    let after_pos: BTreeMap<_, _> = after.objects.iter().map(|o| (o.id, o.position)).collect();
    if after_pos.len() != before.objects.len() {
        return Err(Error::InvalidArgument(
            "scenes hold different object sets".into(),
        ));
    }
    let mut best = 0.0f64;
    for o in &before.objects {
        let Some(&p2) = after_pos.get(&o.id) else {
            return Err(Error::InvalidArgument(format!(
                "object {} missing after the step",
                o.id
            )));
        };
        let ratio = (o.position - p2).norm() / o.position.norm().max(eps);
        best = best.max(ratio);
    }
    Ok(best)
}

fn check_lengths(before: &[f64], after: &[f64]) -> Result<()> {
    if before.len() != after.len() {
        return Err(Error::InvalidArgument(format!(
            "overlap lists differ in length ({} vs {})",
            before.len(),
            after.len()
        )));
    }
    Ok(())
}

/// Relative drop of the mean overlap rate; 0 when the mean is already 0
/// or there are no targets.
pub fn global_reward(chis_before: &[f64], chis_after: &[f64]) -> Result<f64> {
    check_lengths(chis_before, chis_after)?;
    if chis_before.is_empty() {
        return Ok(0.0);
    }
    let m = chis_before.len() as f64;
    let mean = chis_before.iter().sum::<f64>() / m;
    let mean_after = chis_after.iter().sum::<f64>() / m;
    if mean == 0.0 {
        return Ok(0.0);
    }
    Ok((mean - mean_after) / mean)
}

/// Relative drop of the largest overlap rate; 0 when it is already 0 or
/// there are no targets.
pub fn local_reward(chis_before: &[f64], chis_after: &[f64]) -> Result<f64> {
    check_lengths(chis_before, chis_after)?;
    if chis_before.is_empty() {
        return Ok(0.0);
    }
    let max = chis_before
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let max_after = chis_after.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max <= 0.0 {
        return Ok(0.0);
    }
    Ok((max - max_after) / max)
}

/// Everything [`step_reward`] needs, with the overlap rates already measured.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome<'a> {
    pub stopped: bool,
    pub chis_before: &'a [f64],
    pub chis_after: &'a [f64],
    /// Only read for pushes.
    pub r_e: f64,
}

/// Case analysis shared by [`step_reward`] and the episode runner.
pub fn reward_from_outcome(
    outcome: &StepOutcome<'_>,
    step: u64,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let beta = beta(step, config.replay_half);
    let simple = outcome
        .chis_before
        .iter()
        .all(|&chi| chi <= config.simple_threshold);
    match (outcome.stopped, simple) {
        (true, true) => Ok(RewardBreakdown::terminal(
            RewardCase::TerminalCorrect,
            1.0,
            beta,
        )),
        (true, false) => Ok(RewardBreakdown::terminal(
            RewardCase::TerminalWrong,
            -1.0,
            beta,
        )),
        (false, true) => Ok(RewardBreakdown::terminal(RewardCase::Redundant, 0.0, beta)),
        (false, false) => {
            let r_g = global_reward(outcome.chis_before, outcome.chis_after)?;
            let r_l = local_reward(outcome.chis_before, outcome.chis_after)?;
            let r_q = match config.rq_mode {
                RqMode::Rg => r_g,
                RqMode::Rl => r_l,
                RqMode::RgRl => config.rq_weights[0] * r_g + config.rq_weights[1] * r_l,
            };
            let r_e = outcome.r_e;
            Ok(RewardBreakdown {
                total: beta * r_e + (1.0 - beta) * r_q,
                case: RewardCase::Shaped,
                beta,
                r_e: Some(r_e),
                r_g: Some(r_g),
                r_l: Some(r_l),
                r_q: Some(r_q),
            })
        }
    }
}

fn consistent(before: &Scene, after: &Scene) -> bool {
    before.objects.len() == after.objects.len()
        && before.objects.iter().zip(&after.objects).all(|(a, b)| {
            a.id == b.id && a.class_id == b.class_id && a.z == b.z && a.footprint == b.footprint
        })
}

/// Reward for taking `action` in `before`, which led to `after`.
pub fn step_reward(
    before: &Scene,
    after: &Scene,
    action: &PushAction,
    target_class: ClassId,
    step: u64,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    if !consistent(before, after) || (action.is_stop() && before != after) {
        return Err(Error::InvalidArgument(
            "after-scene is not a successor of the before-scene".into(),
        ));
    }
    let chis = |s: &Scene| -> Vec<f64> {
        world::class_overlaps(s, target_class)
            .into_iter()
            .map(|(_, chi)| chi)
            .collect()
    };
    let chis_before = chis(before);
    let (chis_after, r_e) = if action.is_stop() {
        (chis_before.clone(), 0.0)
    } else {
        (
            chis(after),
            exploration_reward(before, after, config.epsilon_pos)?,
        )
    };
    reward_from_outcome(
        &StepOutcome {
            stopped: action.is_stop(),
            chis_before: &chis_before,
            chis_after: &chis_after,
            r_e,
        },
        step,
        config,
    )
}
