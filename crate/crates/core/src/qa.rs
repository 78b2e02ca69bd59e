//! Answering questions from the first and last frames of an episode.
//!
//! Two backends: [`answer_oracle_visible`] counts the target instances that
//! were visible in either frame, and [`QaModel`] is a learned classifier
//! that weighs the two frames by their similarity to the question.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{is_under, Answer, Question, QuestionType, MAX_COUNT};
use crate::encoding::{
    max_normalize, max_normalize_backward, EmbeddingTable, VisualGrid, C_Q, C_VIS, EMBED_ROWS,
};
use crate::error::{Error, Result};
use crate::nn::{self, Adam, SparseGrid, CELLS, TAPS};
use crate::par::{self, Exec};
use crate::rng;
use crate::world::{visible_instances, ObjectId, Scene};

pub const QA_FORMAT_VERSION: u32 = 1;
pub const COUNT_ANSWERS: usize = MAX_COUNT as usize + 1;
pub const BINARY_ANSWERS: usize = 2;
/// Hidden biases start in `[0, BIAS_INIT)` so no pre-activation sits exactly
/// on the ReLU kink.
const BIAS_INIT: f64 = 0.1;

fn union_visible(s0: &Scene, st: &Scene, class: u8, threshold: f64) -> BTreeSet<ObjectId> {
    let mut seen = visible_instances(s0, class, threshold);
    seen.extend(visible_instances(st, class, threshold));
    seen
}

/// Answer from what was visible: instances seen (χ ≤ `threshold`) in the
/// initial or final frame count once each. SPATIAL questions are judged on
/// the final scene's geometry.
pub fn answer_oracle_visible(
    scene_0: &Scene,
    scene_t: &Scene,
    question: &Question,
    threshold: f64,
) -> Answer {
    let seen = |c: u8| union_visible(scene_0, scene_t, c, threshold);
    match question.qtype {
        QuestionType::Counting => {
            Answer::Count(seen(question.obj1).len().min(MAX_COUNT as usize) as u8)
        }
        QuestionType::Existence => Answer::from_bool(!seen(question.obj1).is_empty()),
        QuestionType::Logic => Answer::from_bool(
            !seen(question.obj1).is_empty() && question.obj2.is_some_and(|c| !seen(c).is_empty()),
        ),
        QuestionType::Spatial => Answer::from_bool(
            question
                .obj2
                .is_some_and(|u| is_under(scene_t, question.obj1, u)),
        ),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QaArch {
    pub enc1: usize,
    pub enc2: usize,
    pub hidden: usize,
}

impl Default for QaArch {
    fn default() -> Self {
        Self {
            enc1: 8,
            enc2: 16,
            hidden: 16,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    c1w: usize,
    c1b: usize,
    c2w: usize,
    c2b: usize,
    bil: usize,
    hw: usize,
    hb: usize,
    cw: usize,
    cb: usize,
    yw: usize,
    yb: usize,
    len: usize,
}

impl QaArch {
    fn layout(&self) -> Layout {
        let (e1, e2, h) = (self.enc1, self.enc2, self.hidden);
        let c1w = 0;
        let c1b = c1w + C_VIS * TAPS * e1;
        let c2w = c1b + e1;
        let c2b = c2w + e1 * TAPS * e2;
        let bil = c2b + e2;
        let hw = bil + C_Q * e2;
        let hb = hw + h * (e2 + C_Q);
        let cw = hb + h;
        let cb = cw + COUNT_ANSWERS * h;
        let yw = cb + COUNT_ANSWERS;
        let yb = yw + BINARY_ANSWERS * h;
        Layout {
            c1w,
            c1b,
            c2w,
            c2b,
            bil,
            hw,
            hb,
            cw,
            cb,
            yw,
            yb,
            len: yb + BINARY_ANSWERS,
        }
    }

    pub fn num_weights(&self) -> usize {
        self.layout().len
    }
}

/// Image encoder, question embedding, bilinear image-question similarity
/// and a one-hidden-layer classifier with a head per answer domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaModel {
    pub arch: QaArch,
    pub weights: Vec<f64>,
    pub embedding: EmbeddingTable,
}

/// The attention weights and answer distribution of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct QaOutput {
    pub answer: Answer,
    pub distribution: Vec<f64>,
    pub attention: [f64; 2],
}

struct ImageCache {
    a1: Vec<f64>,
    a2: Vec<f64>,
    feat: Vec<f64>,
}

fn sparse_image(img: &VisualGrid) -> Result<SparseGrid> {
    if img.data.len() != C_VIS * CELLS {
        return Err(Error::InvalidArgument(format!(
            "visual grid must hold {} values, got {}",
            C_VIS * CELLS,
            img.data.len()
        )));
    }
    Ok(SparseGrid::from_channel_major(&img.data, C_VIS, C_VIS))
}

fn answer_domain(qtype: QuestionType) -> usize {
    if qtype == QuestionType::Counting {
        COUNT_ANSWERS
    } else {
        BINARY_ANSWERS
    }
}

fn decode_answer(qtype: QuestionType, index: usize) -> Answer {
    match qtype {
        QuestionType::Counting => Answer::Count(index as u8),
        _ => Answer::from_bool(index == 0),
    }
}

impl QaModel {
    pub fn init(arch: QaArch, seed: u64) -> Self {
        let l = arch.layout();
        let mut rng = rng::substream(seed, "qa/weights", 0);
        let mut weights = vec![0.0; l.len];
        let he = |fan_in: usize| (6.0 / fan_in as f64).sqrt();
        let mut fill = |range: std::ops::Range<usize>, lo: f64, hi: f64| {
            for w in &mut weights[range] {
                *w = rng.gen_range(lo..hi);
            }
        };
        let (b1, b2) = (he(C_VIS * TAPS), he(arch.enc1 * TAPS));
        fill(l.c1w..l.c1b, -b1, b1);
        fill(l.c1b..l.c2w, 0.0, BIAS_INIT);
        fill(l.c2w..l.c2b, -b2, b2);
        fill(l.c2b..l.bil, 0.0, BIAS_INIT);
        let (bb, bh, bo) = (he(C_Q + arch.enc2), he(arch.enc2 + C_Q), he(arch.hidden));
        fill(l.bil..l.hw, -bb, bb);
        fill(l.hw..l.hb, -bh, bh);
        fill(l.hb..l.cw, 0.0, BIAS_INIT);
        fill(l.cw..l.cb, -bo, bo);
        fill(l.yw..l.yb, -bo, bo);
        Self {
            arch,
            weights,
            embedding: EmbeddingTable::init(rng::derive_seed(seed, "qa/embedding", 0)),
        }
    }

    pub fn flat_len(&self) -> usize {
        self.weights.len() + EMBED_ROWS * C_Q
    }

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

    fn encode_image(&self, img: &SparseGrid) -> ImageCache {
        let l = self.arch.layout();
        let (e1, e2) = (self.arch.enc1, self.arch.enc2);
        let w = &self.weights;
        let mut a1 = nn::conv3x3_sparse(img, &w[l.c1w..l.c1b], &w[l.c1b..l.c2w], e1);
        nn::relu_inplace(&mut a1);
        let mut a2 = nn::conv3x3_dense(&a1, e1, &w[l.c2w..l.c2b], &w[l.c2b..l.bil], e2);
        nn::relu_inplace(&mut a2);
        let mut feat = vec![0.0; e2];
        for cell in 0..CELLS {
            for (f, &v) in feat.iter_mut().zip(&a2[cell * e2..][..e2]) {
                *f += v;
            }
        }
        feat.iter_mut().for_each(|f| *f /= CELLS as f64);
        ImageCache { a1, a2, feat }
    }

    /// Forward pass plus, when `target` is given, the cross-entropy loss and
    /// its gradient (laid out like [`QaModel::flat`]) added to `grad`.
    fn run(
        &self,
        imgs: [&SparseGrid; 2],
        question: &Question,
        target: Option<(Answer, &mut [f64])>,
    ) -> Result<(QaOutput, f64)> {
        let l = self.arch.layout();
        let (e1, e2, hn) = (self.arch.enc1, self.arch.enc2, self.arch.hidden);
        let w = &self.weights;
        let rows = EmbeddingTable::row_indices(question)?;
        let raw = self.embedding.raw(question)?;
        let (q, _) = max_normalize(raw);

        let caches = imgs.map(|g| self.encode_image(g));
        let bil = &w[l.bil..l.hw];
        // Bq[k] = Σ_j q_j B[j][k], so s_i = Bq · f_i.
        let bq: Vec<f64> = (0..e2)
            .map(|k| (0..C_Q).map(|j| q[j] * bil[j * e2 + k]).sum())
            .collect();
        let scores: Vec<f64> = caches
            .iter()
            .map(|c| c.feat.iter().zip(&bq).map(|(a, b)| a * b).sum())
            .collect();
        let att = nn::softmax(&scores);
        let fused: Vec<f64> = (0..e2)
            .map(|k| att[0] * caches[0].feat[k] + att[1] * caches[1].feat[k])
            .collect();
        let mut x = fused.clone();
        x.extend_from_slice(&q);
        let zh = nn::affine(&w[l.hw..l.hb], &w[l.hb..l.cw], &x);
        let h: Vec<f64> = zh.iter().map(|&v| v.max(0.0)).collect();
        let (hw_, hb_) = if question.qtype == QuestionType::Counting {
            (l.cw..l.cb, l.cb..l.yw)
        } else {
            (l.yw..l.yb, l.yb..l.len)
        };
        let logits = nn::affine(&w[hw_.clone()], &w[hb_.clone()], &h);
        let p = nn::softmax(&logits);
        let best = (0..p.len()).fold(0, |b, i| if p[i] > p[b] { i } else { b });
        let out = QaOutput {
            answer: decode_answer(question.qtype, best),
            distribution: p.clone(),
            attention: [att[0], att[1]],
        };

        let Some((answer, grad)) = target else {
            return Ok((out, 0.0));
        };
        let y = answer.class_index();
        if y >= p.len() || answer_domain(question.qtype) != p.len() {
            return Err(Error::InvalidArgument(format!(
                "answer {answer} does not fit a {:?} question",
                question.qtype
            )));
        }
        let loss = -p[y].max(f64::MIN_POSITIVE).ln();
        let mut dlogits = p;
        dlogits[y] -= 1.0;
        let (gw, gb) = grad.split_at_mut(hb_.start);
        let dh = nn::affine_backward(
            &w[hw_.clone()],
            &h,
            &dlogits,
            &mut gw[hw_.clone()],
            &mut gb[..hb_.len()],
        );
        let dzh: Vec<f64> = dh
            .iter()
            .zip(&zh)
            .map(|(&d, &z)| if z > 0.0 { d } else { 0.0 })
            .collect();
        let (gw, gb) = grad.split_at_mut(l.hb);
        let dx = nn::affine_backward(&w[l.hw..l.hb], &x, &dzh, &mut gw[l.hw..l.hb], &mut gb[..hn]);
        let dfused = &dx[..e2];
        let mut dq: [f64; C_Q] = std::array::from_fn(|k| dx[e2 + k]);

        let datt: Vec<f64> = caches
            .iter()
            .map(|c| c.feat.iter().zip(dfused).map(|(a, b)| a * b).sum())
            .collect();
        let mean = att[0] * datt[0] + att[1] * datt[1];
        let dscore = [att[0] * (datt[0] - mean), att[1] * (datt[1] - mean)];
        let mut dbq = vec![0.0; e2];
        for (i, c) in caches.iter().enumerate() {
            for k in 0..e2 {
                dbq[k] += dscore[i] * c.feat[k];
            }
        }
        for j in 0..C_Q {
            for k in 0..e2 {
                grad[l.bil + j * e2 + k] += q[j] * dbq[k];
                dq[j] += bil[j * e2 + k] * dbq[k];
            }
        }

        for (i, c) in caches.iter().enumerate() {
            let dfeat: Vec<f64> = (0..e2)
                .map(|k| att[i] * dfused[k] + dscore[i] * bq[k])
                .collect();
            let mut dz2 = vec![0.0; CELLS * e2];
            for cell in 0..CELLS {
                for k in 0..e2 {
                    if c.a2[cell * e2 + k] > 0.0 {
                        dz2[cell * e2 + k] = dfeat[k] / CELLS as f64;
                    }
                }
            }
            let mut da1 = vec![0.0; CELLS * e1];
            {
                let (lo, hi) = grad.split_at_mut(l.c2b);
                nn::conv3x3_dense_backward(
                    &c.a1,
                    e1,
                    &w[l.c2w..l.c2b],
                    e2,
                    &dz2,
                    &mut lo[l.c2w..l.c2b],
                    &mut hi[..e2],
                    Some(&mut da1),
                );
            }
            for (d, &a) in da1.iter_mut().zip(&c.a1) {
                if a <= 0.0 {
                    *d = 0.0;
                }
            }
            let (lo, hi) = grad.split_at_mut(l.c1b);
            nn::conv3x3_sparse_backward(imgs[i], e1, &da1, &mut lo[l.c1w..l.c1b], &mut hi[..e1]);
        }

        let draw = max_normalize_backward(&raw, &dq);
        let n = self.weights.len();
        for &r in &rows {
            for k in 0..C_Q {
                grad[n + r * C_Q + k] += draw[k];
            }
        }
        Ok((out, loss))
    }

    fn predict_sparse(
        &self,
        img_0: &SparseGrid,
        img_t: &SparseGrid,
        question: &Question,
    ) -> Result<QaOutput> {
        self.run([img_0, img_t], question, None).map(|(o, _)| o)
    }

    /// Cross-entropy loss of one example.
    pub fn loss(&self, example: &QaExample) -> Result<f64> {
        let mut scratch = vec![0.0; self.flat_len()];
        let imgs = [
            sparse_image(&example.visual_0)?,
            sparse_image(&example.visual_t)?,
        ];
        self.run(
            [&imgs[0], &imgs[1]],
            &example.question,
            Some((example.answer, &mut scratch)),
        )
        .map(|(_, l)| l)
    }

    /// Mean loss over examples and its gradient.
    pub fn loss_and_gradient(&self, examples: &[QaExample], exec: Exec) -> Result<(f64, Vec<f64>)> {
        let prepared = examples
            .iter()
            .map(Prepared::new)
            .collect::<Result<Vec<_>>>()?;
        self.batch_gradient(&prepared, exec)
    }

    fn batch_gradient(&self, batch: &[Prepared], exec: Exec) -> Result<(f64, Vec<f64>)> {
        let n = batch.len() as f64;
        let per = par::map_slice(exec, batch, |ex| {
            let mut g = vec![0.0; self.flat_len()];
            self.run(
                [&ex.img_0, &ex.img_t],
                &ex.question,
                Some((ex.answer, &mut g)),
            )
            .map(|(_, l)| (l, g))
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.flat_len()];
        for r in per {
            let (l, g) = r?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / n;
            }
        }
        Ok((loss / n, grad))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let doc = QaCheckpoint {
            format_version: QA_FORMAT_VERSION,
            kind: "qa".into(),
            model: self.clone(),
        };
        fs::write(path, serde_json::to_string(&doc).expect("serializable"))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let doc: QaCheckpoint =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        if doc.format_version != QA_FORMAT_VERSION || doc.kind != "qa" {
            return Err(Error::format(
                path,
                format!("not a version-{QA_FORMAT_VERSION} qa checkpoint"),
            ));
        }
        if doc.model.weights.len() != doc.model.arch.num_weights()
            || doc.model.embedding.rows.len() != EMBED_ROWS
        {
            return Err(Error::format(
                path,
                "qa weights do not match their architecture",
            ));
        }
        Ok(doc.model)
    }
}

#[derive(Serialize, Deserialize)]
struct QaCheckpoint {
    format_version: u32,
    kind: String,
    model: QaModel,
}

/// Answer from the learned model given the visual encodings of the first
/// and last frames.
pub fn answer_learned(
    model: &QaModel,
    img_0: &VisualGrid,
    img_t: &VisualGrid,
    question: &Question,
) -> Result<QaOutput> {
    model.predict_sparse(&sparse_image(img_0)?, &sparse_image(img_t)?, question)
}

/// One training example: both frames, the question and the target answer.
#[derive(Debug, Clone, PartialEq)]
pub struct QaExample {
    pub visual_0: VisualGrid,
    pub visual_t: VisualGrid,
    pub question: Question,
    pub answer: Answer,
}

struct Prepared {
    img_0: SparseGrid,
    img_t: SparseGrid,
    question: Question,
    answer: Answer,
}

impl Prepared {
    fn new(ex: &QaExample) -> Result<Self> {
        Ok(Self {
            img_0: sparse_image(&ex.visual_0)?,
            img_t: sparse_image(&ex.visual_t)?,
            question: ex.question.clone(),
            answer: ex.answer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QaTrainConfig {
    pub arch: QaArch,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for QaTrainConfig {
    fn default() -> Self {
        Self {
            arch: QaArch::default(),
            lr: 3e-3,
            epochs: 20,
            batch_size: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaEpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Exponential moving average of minibatch losses at the end of the epoch.
    pub ema_loss: f64,
    pub accuracy: f64,
}

/// Minibatch Adam on cross-entropy. Deterministic given `seed`.
pub fn train_qa(
    model: QaModel,
    examples: &[QaExample],
    config: &QaTrainConfig,
    seed: u64,
    exec: Exec,
) -> Result<(QaModel, Vec<QaEpochRecord>)> {
    if examples.is_empty() {
        return Err(Error::InvalidArgument("QA training set is empty".into()));
    }
    if config.batch_size == 0 || !(config.lr > 0.0) {
        return Err(Error::InvalidArgument(
            "batch_size and lr must be positive".into(),
        ));
    }
    let prepared = examples
        .iter()
        .map(Prepared::new)
        .collect::<Result<Vec<_>>>()?;
    let mut model = model;
    let mut opt = Adam::new(model.flat_len());
    let mut rng = rng::substream(seed, "qa/shuffle", 0);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut ema: Option<f64> = None;
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Prepared> = chunk.iter().map(|&i| &prepared[i]).collect();
            let n = batch.len() as f64;
            let per = par::map_slice(exec, &batch, |ex| {
                let mut g = vec![0.0; model.flat_len()];
                model
                    .run(
                        [&ex.img_0, &ex.img_t],
                        &ex.question,
                        Some((ex.answer, &mut g)),
                    )
                    .map(|(_, l)| (l, g))
            });
            let mut loss = 0.0;
            let mut grad = vec![0.0; model.flat_len()];
            for r in per {
                let (l, g) = r?;
                loss += l;
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b / n;
                }
            }
            loss /= n;
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence(format!(
                    "QA loss is {loss} in epoch {epoch}"
                )));
            }
            total += loss * n;
            ema = Some(match ema {
                None => loss,
                Some(e) => 0.9 * e + 0.1 * loss,
            });
            let mut flat = model.flat();
            opt.step(&mut flat, &grad, config.lr);
            model.set_flat(&flat);
        }
        let accuracy = accuracy_prepared(&model, &prepared, exec)?;
        log::info!(
            "qa epoch {epoch}: loss {:.4}, accuracy {accuracy:.3}",
            total / prepared.len() as f64
        );
        log.push(QaEpochRecord {
            epoch,
            mean_loss: total / prepared.len() as f64,
            ema_loss: ema.expect("at least one batch"),
            accuracy,
        });
    }
    Ok((model, log))
}

fn accuracy_prepared(model: &QaModel, data: &[Prepared], exec: Exec) -> Result<f64> {
    let hits = par::map_slice(exec, data, |ex| {
        model
            .predict_sparse(&ex.img_0, &ex.img_t, &ex.question)
            .map(|o| o.answer == ex.answer)
    });
    let mut n = 0usize;
    for h in hits {
        n += h? as usize;
    }
    Ok(n as f64 / data.len() as f64)
}

/// Fraction of examples the model answers correctly.
pub fn qa_accuracy(model: &QaModel, examples: &[QaExample], exec: Exec) -> Result<f64> {
    let prepared = examples
        .iter()
        .map(Prepared::new)
        .collect::<Result<Vec<_>>>()?;
    accuracy_prepared(model, &prepared, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_catalog, generate_scene, oracle_answer, Catalog, Difficulty};
    use crate::encoding::encode_visual;
    use crate::geometry::{Footprint, Vec2};
    use crate::world::{apply_push, Bin, PushAction, SceneObject};

    fn sq(id: u32, class: u8, cx: f64, cy: f64, side: f64, z: u32) -> SceneObject {
        let h = side / 2.0;
        SceneObject {
            id,
            class_id: class,
            instance_id: 0,
            footprint: Footprint::rect(-h, -h, h, h).unwrap(),
            position: Vec2::new(cx, cy),
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

    #[test]
    fn oracle_visible_counts_union_by_id() {
        let cat = build_catalog(0);
        let q = Question::counting(0, &cat);
        // a visible at the start; b buried under a cover that is pushed away.
        let s0 = scene(vec![
            sq(0, 0, 20.0, 20.0, 8.0, 0),
            sq(1, 0, 60.0, 60.0, 8.0, 0),
            sq(2, 5, 60.0, 60.0, 12.0, 1),
        ]);
        let (r, c) = s0.bin.cell_of(Vec2::new(60.0, 60.0));
        let st = apply_push(&s0, &PushAction::push(r, c, 0).unwrap());
        assert_eq!(answer_oracle_visible(&s0, &s0, &q, 0.2), Answer::Count(1));
        assert_eq!(answer_oracle_visible(&s0, &st, &q, 0.2), Answer::Count(2));
        // The same instance seen in both frames counts once.
        assert_eq!(answer_oracle_visible(&st, &st, &q, 0.2), Answer::Count(2));
        let never = Question::counting(7, &cat);
        assert_eq!(
            answer_oracle_visible(&s0, &st, &never, 0.2),
            Answer::Count(0)
        );
        let exists = Question::new(QuestionType::Existence, 0, None, &cat).unwrap();
        assert_eq!(answer_oracle_visible(&s0, &st, &exists, 0.2), Answer::Yes);
        let logic = Question::new(QuestionType::Logic, 0, Some(7), &cat).unwrap();
        assert_eq!(answer_oracle_visible(&s0, &st, &logic, 0.2), Answer::No);
        let spatial = Question::new(QuestionType::Spatial, 0, Some(5), &cat).unwrap();
        assert_eq!(answer_oracle_visible(&s0, &s0, &spatial, 0.2), Answer::Yes);
        assert_eq!(answer_oracle_visible(&s0, &st, &spatial, 0.2), Answer::No);
    }

    #[test]
    fn oracle_visible_is_exact_when_everything_was_seen() {
        let cat = build_catalog(3);
        for seed in 0..6 {
            let s = generate_scene(&cat, Difficulty::Easy, seed).unwrap();
            for class in 0..20u8 {
                let ids = s.ids_of_class(class);
                let seen = visible_instances(&s, class, 0.2);
                if seen.len() == ids.len() {
                    let q = Question::counting(class, &cat);
                    assert_eq!(
                        answer_oracle_visible(&s, &s, &q, 0.2),
                        oracle_answer(&s, &q)
                    );
                }
            }
        }
    }

    fn examples(cat: &Catalog, n: usize) -> Vec<QaExample> {
        let mut out = Vec::new();
        let mut seed = 0;
        while out.len() < n {
            let s0 = generate_scene(cat, Difficulty::Easy, seed).unwrap();
            let st = apply_push(&s0, &PushAction::push(14, 14, (seed % 8) as u8).unwrap());
            let class = s0.objects[seed as usize % s0.objects.len()].class_id;
            let q = Question::counting(class, cat);
            out.push(QaExample {
                visual_0: encode_visual(&s0),
                visual_t: encode_visual(&st),
                answer: answer_oracle_visible(&s0, &st, &q, 0.2),
                question: q,
            });
            if seed % 3 == 0 {
                let yq =
                    Question::new(QuestionType::Existence, (seed % 20) as u8, None, cat).unwrap();
                out.push(QaExample {
                    visual_0: encode_visual(&s0),
                    visual_t: encode_visual(&st),
                    answer: oracle_answer(&s0, &yq),
                    question: yq,
                });
            }
            seed += 1;
        }
        out.truncate(n);
        out
    }

    #[test]
    fn outputs_are_distributions() {
        let cat = build_catalog(0);
        let model = QaModel::init(QaArch::default(), 1);
        for ex in examples(&cat, 6) {
            let o = answer_learned(&model, &ex.visual_0, &ex.visual_t, &ex.question).unwrap();
            assert!((o.distribution.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((o.attention[0] + o.attention[1] - 1.0).abs() < 1e-12);
            assert_eq!(o.distribution.len(), answer_domain(ex.question.qtype));
            let again = answer_learned(&model, &ex.visual_0, &ex.visual_t, &ex.question).unwrap();
            assert_eq!(o, again);
        }
        let bad = VisualGrid { data: vec![0.0; 5] };
        let ex = &examples(&cat, 1)[0];
        assert!(matches!(
            answer_learned(&model, &bad, &ex.visual_t, &ex.question),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cat = build_catalog(0);
        let model = QaModel::init(
            QaArch {
                enc1: 3,
                enc2: 4,
                hidden: 5,
            },
            2,
        );
        let data = examples(&cat, 4);
        let (loss, grad) = model.loss_and_gradient(&data, Exec::Serial).unwrap();
        let mean =
            |m: &QaModel| data.iter().map(|e| m.loss(e).unwrap()).sum::<f64>() / data.len() as f64;
        assert!((loss - mean(&model)).abs() < 1e-12);
        let flat = model.flat();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..flat.len() {
            let mut m = model.clone();
            let mut f = flat.clone();
            f[i] = flat[i] + h;
            m.set_flat(&f);
            let up = mean(&m);
            f[i] = flat[i] - h;
            m.set_flat(&f);
            let down = mean(&m);
            let fd = (up - down) / (2.0 * h);
            worst = worst.max((fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("qa.json");
        let m = QaModel::init(QaArch::default(), 9);
        m.save(&path).unwrap();
        assert_eq!(QaModel::load(&path).unwrap(), m);
    }
}
