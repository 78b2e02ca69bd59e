//! The manipulation policy: a pixel-wise deep Q-network over 28×28×9
//! actions, trained with experience replay and a target network.

mod episode;
mod qnet;
mod replay;
mod train;

pub(crate) use episode::Env;
pub use episode::{run_episode, EpisodeOptions, EpisodeTrace};
pub use qnet::{
    decode_flat, q_values, td_gradient, td_gradient_to, td_loss, td_target, td_update, Observation,
    QArch, QMap, QParams, QuestionRows, Transition, OUT_CHANNELS, QMAP_LEN, STOP_CHANNEL,
};
pub use replay::ReplayMemory;
pub use train::{
    train, Checkpoint, EpisodeRecord, Optimizer, TrainConfig, TrainOutput,
    CHECKPOINT_FORMAT_VERSION,
};

use rand::Rng as _;

use crate::rng::Rng;
use crate::world::{PushAction, NUM_ACTIONS};

/// ε-greedy choice: with probability ε a uniform draw over all distinct
/// actions, otherwise the greedy decode of the Q-map.
pub fn select_action(qmap: &QMap, epsilon: f64, rng: &mut Rng) -> PushAction {
    select_with(epsilon, rng, || qmap.greedy_action())
}

/// [`select_action`] that only builds the Q-map when acting greedily.
pub(crate) fn select_with(
    epsilon: f64,
    rng: &mut Rng,
    greedy: impl FnOnce() -> PushAction,
) -> PushAction {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        PushAction::from_index(rng.gen_range(0..NUM_ACTIONS)).expect("index in range")
    } else {
        greedy()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::GRID;

    #[test]
    fn greedy_and_uniform_selection() {
        let mut rng = crate::rng::from_seed(0);
        let mut m = QMap {
            values: vec![0.0; QMAP_LEN],
        };
        m.values[(3 * GRID + 5) * OUT_CHANNELS + 2] = 1.0;
        assert_eq!(
            select_action(&m, 0.0, &mut rng),
            PushAction::push(3, 5, 2).unwrap()
        );
        m.values[STOP_CHANNEL] = 5.0;
        assert_eq!(select_action(&m, 0.0, &mut rng), PushAction::Stop);

        let draws = 100_000usize;
        let mut counts = vec![0u32; NUM_ACTIONS];
        for _ in 0..draws {
            counts[select_action(&m, 1.0, &mut rng).to_index()] += 1;
        }
        // Chi-square against the uniform distribution, within 3σ of its mean.
        let expect = draws as f64 / NUM_ACTIONS as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expect).powi(2) / expect)
            .sum();
        let dof = (NUM_ACTIONS - 1) as f64;
        assert!(
            (chi2 - dof).abs() < 3.0 * (2.0 * dof).sqrt(),
            "chi2 = {chi2}"
        );
        assert!(counts[crate::world::STOP_INDEX] < 60);
    }
}
