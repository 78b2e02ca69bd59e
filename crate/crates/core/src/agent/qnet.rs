//! The pixel-wise Q-function: 3×3 conv → ReLU → 3×3 conv → ReLU → 1×1 conv
//! to nine channels (eight push directions and stop) on the 28×28 grid.

use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::encoding::{
    max_normalize, max_normalize_backward, CompactVisual, EmbeddingTable, StateTensor, C_Q,
    C_STATE, C_VIS, EMBED_ROWS,
};
use crate::error::{Error, Result};
use crate::nn::{self, SparseGrid, CELLS, TAPS};
use crate::par::{self, Exec};
use crate::rng;
use crate::world::{PushAction, GRID, NUM_DIRECTIONS};

pub const OUT_CHANNELS: usize = NUM_DIRECTIONS + 1;
pub const STOP_CHANNEL: usize = NUM_DIRECTIONS;
pub const QMAP_LEN: usize = CELLS * OUT_CHANNELS;
/// Hidden biases start in `[0, BIAS_INIT)` so no pre-activation sits exactly
/// on the ReLU kink.
const BIAS_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QArch {
    pub hidden1: usize,
    pub hidden2: usize,
}

impl Default for QArch {
    fn default() -> Self {
        Self {
            hidden1: 64,
            hidden2: 16,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
    len: usize,
}

impl QArch {
    fn layout(&self) -> Layout {
        let (h1, h2) = (self.hidden1, self.hidden2);
        let w1 = 0;
        let b1 = w1 + C_STATE * TAPS * h1;
        let w2 = b1 + h1;
        let b2 = w2 + h1 * TAPS * h2;
        let w3 = b2 + h2;
        let b3 = w3 + h2 * OUT_CHANNELS;
        Layout {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            len: b3 + OUT_CHANNELS,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layout().len
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::InvalidArgument(
                "hidden widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Network weights plus the question embedding table they are trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QParams {
    pub arch: QArch,
    pub weights: Vec<f64>,
    pub embedding: EmbeddingTable,
}

/// A question as the three embedding-table rows it sums.
pub type QuestionRows = [usize; 3];

/// What the agent sees: the visual grid and the question.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub visual: Arc<CompactVisual>,
    pub rows: QuestionRows,
}

/// Q-values in cell-major order: `values[(row * 28 + col) * 9 + channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct QMap {
    pub values: Vec<f64>,
}

impl QMap {
    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.values[(row * GRID + col) * OUT_CHANNELS + channel]
    }

    /// Flat index of the largest entry; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }

    pub fn max(&self) -> f64 {
        self.values[self.argmax()]
    }

    /// Cell holding the largest stop value, and that value.
    pub fn stop_cell(&self) -> (usize, f64) {
        let mut best = 0;
        for cell in 1..CELLS {
            if self.values[cell * OUT_CHANNELS + STOP_CHANNEL]
                > self.values[best * OUT_CHANNELS + STOP_CHANNEL]
            {
                best = cell;
            }
        }
        (best, self.values[best * OUT_CHANNELS + STOP_CHANNEL])
    }

    /// Value the policy assigns to an action; stop is worth its best cell.
    pub fn action_value(&self, action: &PushAction) -> f64 {
        match action {
            PushAction::Stop => self.stop_cell().1,
            PushAction::Push {
                row,
                col,
                direction,
            } => self.get(*row as usize, *col as usize, direction.index() as usize),
        }
    }

    pub fn greedy_action(&self) -> PushAction {
        decode_flat(self.argmax())
    }
}

/// Decodes a flat Q-map index; channel 8 at any cell means stop.
pub fn decode_flat(flat: usize) -> PushAction {
    let cell = flat / OUT_CHANNELS;
    let ch = flat % OUT_CHANNELS;
    if ch == STOP_CHANNEL {
        PushAction::Stop
    } else {
        PushAction::push(cell / GRID, cell % GRID, ch as u8).expect("index within the grid")
    }
}

/// He-uniform bound for a layer with `fan_in` inputs.
fn he_bound(fan_in: usize) -> f64 {
    (6.0 / fan_in as f64).sqrt()
}

impl QParams {
    pub fn zeros(arch: QArch) -> Self {
        Self {
            arch,
            weights: vec![0.0; arch.num_weights()],
            embedding: EmbeddingTable::zeros(),
        }
    }

    pub fn init(arch: QArch, seed: u64) -> Self {
        let l = arch.layout();
        let mut rng = rng::substream(seed, "qnet/weights", 0);
        let mut weights = vec![0.0; l.len];
        let mut fill = |range: std::ops::Range<usize>, lo: f64, hi: f64| {
            for w in &mut weights[range] {
                *w = rng.gen_range(lo..hi);
            }
        };
        let (c1, c2, c3) = (
            he_bound(C_STATE * TAPS),
            he_bound(arch.hidden1 * TAPS),
            he_bound(arch.hidden2),
        );
        fill(l.w1..l.b1, -c1, c1);
        fill(l.b1..l.w2, 0.0, BIAS_INIT);
        fill(l.w2..l.b2, -c2, c2);
        fill(l.b2..l.w3, 0.0, BIAS_INIT);
        fill(l.w3..l.b3, -c3, c3);
        Self {
            arch,
            weights,
            embedding: EmbeddingTable::init(rng::derive_seed(seed, "qnet/embedding", 0)),
        }
    }

    /// Length of [`QParams::flat`].
    pub fn flat_len(&self) -> usize {
        self.weights.len() + EMBED_ROWS * C_Q
    }

    /// Weights followed by the embedding rows.
    pub fn flat(&self) -> Vec<f64> {
        let mut v = self.weights.clone();
        for row in &self.embedding.rows {
            v.extend_from_slice(row);
        }
        v
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.flat_len());
        let n = self.weights.len();
        self.weights.copy_from_slice(&flat[..n]);
        for (r, row) in self.embedding.rows.iter_mut().enumerate() {
            row.copy_from_slice(&flat[n + r * C_Q..n + (r + 1) * C_Q]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite())
            && self.embedding.rows.iter().flatten().all(|w| w.is_finite())
    }

    fn raw_question(&self, rows: &QuestionRows) -> [f64; C_Q] {
        std::array::from_fn(|k| rows.iter().map(|&r| self.embedding.rows[r][k]).sum())
    }

    fn sparse_input(&self, obs: &Observation) -> SparseGrid {
        let (q, _) = max_normalize(self.raw_question(&obs.rows));
        SparseGrid {
            entries: obs
                .visual
                .entries()
                .map(|(cell, ch, v)| (cell as u32, ch as u16, v))
                .collect(),
            constants: q
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(k, &v)| ((C_VIS + k) as u16, v))
                .collect(),
        }
    }

    fn forward(&self, input: &SparseGrid) -> QMap {
        let l = self.arch.layout();
        let (h1, h2) = (self.arch.hidden1, self.arch.hidden2);
        let w = &self.weights;
        let mut a1 = nn::conv3x3_sparse(input, &w[l.w1..l.b1], &w[l.b1..l.w2], h1);
        nn::relu_inplace(&mut a1);
        let mut a2 = nn::conv3x3_dense(&a1, h1, &w[l.w2..l.b2], &w[l.b2..l.w3], h2);
        nn::relu_inplace(&mut a2);
        let w3 = &w[l.w3..l.b3];
        let b3 = &w[l.b3..l.len];
        let mut values = Vec::with_capacity(QMAP_LEN);
        for cell in 0..CELLS {
            let a = &a2[cell * h2..][..h2];
            for k in 0..OUT_CHANNELS {
                let mut s = b3[k];
                for (j, &aj) in a.iter().enumerate() {
                    s += aj * w3[j * OUT_CHANNELS + k];
                }
                values.push(s);
            }
        }
        QMap { values }
    }

    /// Full Q-map for an observation.
    pub fn q_map(&self, obs: &Observation) -> QMap {
        self.forward(&self.sparse_input(obs))
    }

    /// Gradient-carrying evaluation of one Q-map entry. Adds
    /// `scale · ∂Q/∂θ` to `grad` (laid out like [`QParams::flat`]).
    fn local(
        &self,
        obs: &Observation,
        cell: usize,
        ch: usize,
        scale: f64,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let l = self.arch.layout();
        let (h1, h2) = (self.arch.hidden1, self.arch.hidden2);
        let w = &self.weights;
        let raw = self.raw_question(&obs.rows);
        let (q, _) = max_normalize(raw);

        // 5×5 input patch around `cell`; patch index (dr + 2) * 5 + (dc + 2).
        let (r0, c0) = ((cell / GRID) as isize, (cell % GRID) as isize);
        let in_grid = |dr: isize, dc: isize| {
            let (r, c) = (r0 + dr, c0 + dc);
            r >= 0 && c >= 0 && r < GRID as isize && c < GRID as isize
        };
        let mut patch = [[0.0f64; C_VIS]; 25];
        for (pc, ch_in, v) in obs.visual.entries() {
            let dr = (pc / GRID) as isize - r0;
            let dc = (pc % GRID) as isize - c0;
            if dr.abs() <= 2 && dc.abs() <= 2 {
                patch[((dr + 2) * 5 + dc + 2) as usize][ch_in] = v;
            }
        }
        let off = |t: usize| ((t / 3) as isize - 1, (t % 3) as isize - 1);

        // First layer at the 3×3 neighbourhood.
        let mut z1 = vec![0.0; TAPS * h1];
        let mut valid2 = [false; TAPS];
        for t2 in 0..TAPS {
            let (dr2, dc2) = off(t2);
            if !in_grid(dr2, dc2) {
                continue;
            }
            valid2[t2] = true;
            let z = &mut z1[t2 * h1..][..h1];
            z.copy_from_slice(&w[l.b1..l.w2]);
            for t1 in 0..TAPS {
                let (dr1, dc1) = off(t1);
                let (dr, dc) = (dr2 + dr1, dc2 + dc1);
                if !in_grid(dr, dc) {
                    continue;
                }
                let px = &patch[((dr + 2) * 5 + dc + 2) as usize];
                for (ci, &v) in px.iter().enumerate() {
                    if v != 0.0 {
                        let wr = &w[l.w1 + (ci * TAPS + t1) * h1..][..h1];
                        for (zo, &wo) in z.iter_mut().zip(wr) {
                            *zo += v * wo;
                        }
                    }
                }
                for (k, &v) in q.iter().enumerate() {
                    if v != 0.0 {
                        let wr = &w[l.w1 + ((C_VIS + k) * TAPS + t1) * h1..][..h1];
                        for (zo, &wo) in z.iter_mut().zip(wr) {
                            *zo += v * wo;
                        }
                    }
                }
            }
        }
        let a1: Vec<f64> = z1.iter().map(|&v| v.max(0.0)).collect();

        let mut z2 = w[l.b2..l.w3].to_vec();
        for t2 in 0..TAPS {
            if !valid2[t2] {
                continue;
            }
            for hi in 0..h1 {
                let v = a1[t2 * h1 + hi];
                if v != 0.0 {
                    let wr = &w[l.w2 + (hi * TAPS + t2) * h2..][..h2];
                    for (zo, &wo) in z2.iter_mut().zip(wr) {
                        *zo += v * wo;
                    }
                }
            }
        }
        let a2: Vec<f64> = z2.iter().map(|&v| v.max(0.0)).collect();
        let mut out = w[l.b3 + ch];
        for (j, &aj) in a2.iter().enumerate() {
            out += aj * w[l.w3 + j * OUT_CHANNELS + ch];
        }

        let Some(g) = grad else { return out };
        g[l.b3 + ch] += scale;
        let mut dz2 = vec![0.0; h2];
        for j in 0..h2 {
            g[l.w3 + j * OUT_CHANNELS + ch] += scale * a2[j];
            if z2[j] > 0.0 {
                dz2[j] = scale * w[l.w3 + j * OUT_CHANNELS + ch];
            }
        }
        for (gb, &d) in g[l.b2..l.w3].iter_mut().zip(&dz2) {
            *gb += d;
        }
        let mut dz1 = vec![0.0; TAPS * h1];
        for t2 in 0..TAPS {
            if !valid2[t2] {
                continue;
            }
            for hi in 0..h1 {
                let base = l.w2 + (hi * TAPS + t2) * h2;
                let v = a1[t2 * h1 + hi];
                let mut back = 0.0;
                for j in 0..h2 {
                    g[base + j] += v * dz2[j];
                    back += w[base + j] * dz2[j];
                }
                if z1[t2 * h1 + hi] > 0.0 {
                    dz1[t2 * h1 + hi] = back;
                }
            }
        }
        let mut dq = [0.0; C_Q];
        for t2 in 0..TAPS {
            if !valid2[t2] {
                continue;
            }
            let d = &dz1[t2 * h1..][..h1];
            for (gb, &dv) in g[l.b1..l.w2].iter_mut().zip(d) {
                *gb += dv;
            }
            let (dr2, dc2) = off(t2);
            for t1 in 0..TAPS {
                let (dr1, dc1) = off(t1);
                let (dr, dc) = (dr2 + dr1, dc2 + dc1);
                if !in_grid(dr, dc) {
                    continue;
                }
                let px = &patch[((dr + 2) * 5 + dc + 2) as usize];
                for (ci, &v) in px.iter().enumerate() {
                    if v != 0.0 {
                        let base = l.w1 + (ci * TAPS + t1) * h1;
                        for (gw, &dv) in g[base..base + h1].iter_mut().zip(d) {
                            *gw += v * dv;
                        }
                    }
                }
                for k in 0..C_Q {
                    let base = l.w1 + ((C_VIS + k) * TAPS + t1) * h1;
                    let mut acc = 0.0;
                    for hi in 0..h1 {
                        g[base + hi] += q[k] * d[hi];
                        acc += w[base + hi] * d[hi];
                    }
                    dq[k] += acc;
                }
            }
        }
        let draw = max_normalize_backward(&raw, &dq);
        let n = self.weights.len();
        for &r in &obs.rows {
            for k in 0..C_Q {
                g[n + r * C_Q + k] += draw[k];
            }
        }
        out
    }

    /// Q(s, a) with its gradient scaled by `scale` added to `grad`. Stop
    /// takes the best stop cell of the full map.
    pub fn action_value_grad(
        &self,
        obs: &Observation,
        action: &PushAction,
        scale: f64,
        grad: &mut [f64],
    ) -> f64 {
        let (cell, ch) = match action {
            PushAction::Stop => (self.q_map(obs).stop_cell().0, STOP_CHANNEL),
            PushAction::Push {
                row,
                col,
                direction,
            } => (
                *row as usize * GRID + *col as usize,
                direction.index() as usize,
            ),
        };
        self.local(obs, cell, ch, scale, Some(grad))
    }

    /// Q(s, a) without gradient.
    pub fn action_value(&self, obs: &Observation, action: &PushAction) -> f64 {
        match action {
            PushAction::Stop => self.q_map(obs).stop_cell().1,
            PushAction::Push {
                row,
                col,
                direction,
            } => self.local(
                obs,
                *row as usize * GRID + *col as usize,
                direction.index() as usize,
                0.0,
                None,
            ),
        }
    }
}

/// Forward pass on a fused state tensor.
pub fn q_values(params: &QParams, state: &StateTensor) -> Result<QMap> {
    if state.data.len() != C_STATE * CELLS {
        return Err(Error::InvalidArgument(format!(
            "state must hold {} values ({} channels of {GRID}×{GRID}), got {}",
            C_STATE * CELLS,
            C_STATE,
            state.data.len()
        )));
    }
    if params.weights.len() != params.arch.num_weights() {
        return Err(Error::InvalidArgument(format!(
            "expected {} weights for {:?}, got {}",
            params.arch.num_weights(),
            params.arch,
            params.weights.len()
        )));
    }
    Ok(params.forward(&SparseGrid::from_channel_major(&state.data, C_STATE, C_VIS)))
}

/// One stored step of experience.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Observation,
    pub action: PushAction,
    pub reward: f64,
    pub next_state: Observation,
    pub done: bool,
}

/// Bellman target `r` or `r + γ·max Q_target(s')`.
pub fn td_target(target: &QParams, t: &Transition, gamma: f64) -> f64 {
    if t.done {
        t.reward
    } else {
        t.reward + gamma * target.q_map(&t.next_state).max()
    }
}

fn check_batch(batch: &[Transition], gamma: f64) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("TD batch is empty".into()));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "gamma must lie in [0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// Mean squared TD error of a batch.
pub fn td_loss(
    params: &QParams,
    target: &QParams,
    batch: &[Transition],
    gamma: f64,
) -> Result<f64> {
    check_batch(batch, gamma)?;
    let sum: f64 = batch
        .iter()
        .map(|t| {
            let d = params.action_value(&t.state, &t.action) - td_target(target, t, gamma);
            d * d
        })
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Mean squared TD error and its gradient w.r.t. [`QParams::flat`].
/// Per-sample terms are summed in batch order for both execution modes.
pub fn td_gradient(
    params: &QParams,
    target: &QParams,
    batch: &[Transition],
    gamma: f64,
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    check_batch(batch, gamma)?;
    let targets = par::map_slice(exec, batch, |t| td_target(target, t, gamma));
    td_gradient_to(params, batch, &targets, exec)
}

/// [`td_gradient`] against precomputed Bellman targets, one per transition.
pub fn td_gradient_to(
    params: &QParams,
    batch: &[Transition],
    targets: &[f64],
    exec: Exec,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() || batch.len() != targets.len() {
        return Err(Error::InvalidArgument(format!(
            "TD batch of {} transitions with {} targets",
            batch.len(),
            targets.len()
        )));
    }
    let n = batch.len() as f64;
    let items: Vec<(&Transition, f64)> = batch.iter().zip(targets.iter().copied()).collect();
    let per_sample = par::map_slice(exec, &items, |&(t, y)| {
        let q = params.action_value(&t.state, &t.action);
        let mut g = vec![0.0; params.flat_len()];
        params.action_value_grad(&t.state, &t.action, 2.0 * (q - y) / n, &mut g);
        ((q - y) * (q - y), g)
    });
    let mut loss = 0.0;
    let mut grad = vec![0.0; params.flat_len()];
    for (l, g) in per_sample {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    loss /= n;
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDivergence(format!(
            "TD loss is {loss} on a batch of {}",
            batch.len()
        )));
    }
    Ok((loss, grad))
}

/// One plain gradient-descent step on the batch TD loss.
pub fn td_update(
    params: &QParams,
    target: &QParams,
    batch: &[Transition],
    gamma: f64,
    lr: f64,
) -> Result<QParams> {
    if !(lr > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "lr must be positive, got {lr}"
        )));
    }
    let (_, grad) = td_gradient(params, target, batch, gamma, Exec::Serial)?;
    let mut flat = params.flat();
    for (p, g) in flat.iter_mut().zip(&grad) {
        *p -= lr * g;
    }
    let mut out = params.clone();
    out.set_flat(&flat);
    Ok(out)
}
