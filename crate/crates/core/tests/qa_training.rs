use mqa_core::dataset::{
    build_dataset, Answer, Dataset, DatasetConfig, QuestionType, Split, MAX_COUNT,
};
use mqa_core::encoding::encode_visual;
use mqa_core::par::Exec;
use mqa_core::qa::{
    answer_oracle_visible, qa_accuracy, train_qa, QaArch, QaExample, QaModel, QaTrainConfig,
};
use mqa_core::world::{apply_push, PushAction};

fn dataset() -> Dataset {
    build_dataset(&DatasetConfig::default(), 0, Exec::Parallel).unwrap()
}

/// Counting examples of one split, with a single fixed push between frames.
fn counting_examples(ds: &Dataset, split: Split) -> Vec<QaExample> {
    let mut out = Vec::new();
    for id in ds.select(split, None) {
        let s0 = &ds.scenes[id as usize];
        let st = apply_push(s0, &PushAction::push(14, 14, (id % 8) as u8).unwrap());
        let (v0, vt) = (encode_visual(s0), encode_visual(&st));
        for p in ds.counting_pairs(id) {
            out.push(QaExample {
                visual_0: v0.clone(),
                visual_t: vt.clone(),
                question: p.question.clone(),
                answer: p.answer,
            });
        }
    }
    out
}

fn small_model(seed: u64) -> QaModel {
    QaModel::init(QaArch::default(), seed)
}

#[test]
fn overfits_fifty_tuples() {
    let ds = dataset();
    let mut data = Vec::new();
    for id in ds.select(Split::Train, None).into_iter().take(10) {
        let s0 = &ds.scenes[id as usize];
        let st = apply_push(s0, &PushAction::push(10, 17, 2).unwrap());
        for p in ds.qa[id as usize]
            .iter()
            .filter(|p| {
                matches!(
                    p.question.qtype,
                    QuestionType::Counting | QuestionType::Existence
                )
            })
            .take(5)
        {
            data.push(QaExample {
                visual_0: encode_visual(s0),
                visual_t: encode_visual(&st),
                answer: answer_oracle_visible(s0, &st, &p.question, 0.2),
                question: p.question.clone(),
            });
        }
    }
    assert_eq!(data.len(), 50);
    let cfg = QaTrainConfig {
        epochs: 150,
        batch_size: 10,
        lr: 3e-3,
        ..Default::default()
    };
    let (model, log) = train_qa(small_model(1), &data, &cfg, 4, Exec::Parallel).unwrap();
    let acc = qa_accuracy(&model, &data, Exec::Parallel).unwrap();
    assert!(
        acc >= 0.95,
        "training accuracy {acc}, last epoch {:?}",
        log.last()
    );
}

#[test]
fn full_batch_ema_loss_never_rises_and_training_is_deterministic() {
    let ds = dataset();
    let data: Vec<QaExample> = counting_examples(&ds, Split::Train)
        .into_iter()
        .step_by(7)
        .collect();
    let cfg = QaTrainConfig {
        epochs: 25,
        batch_size: data.len(),
        lr: 1e-3,
        ..Default::default()
    };
    let (a, log) = train_qa(small_model(2), &data, &cfg, 9, Exec::Parallel).unwrap();
    for w in log.windows(2) {
        assert!(
            w[1].ema_loss <= w[0].ema_loss,
            "EMA loss rose from {} to {} at epoch {}",
            w[0].ema_loss,
            w[1].ema_loss,
            w[1].epoch
        );
    }
    let (b, _) = train_qa(small_model(2), &data, &cfg, 9, Exec::Serial).unwrap();
    assert_eq!(a, b);
}

#[test]
fn held_out_counting_beats_the_majority_answer() {
    let ds = dataset();
    let train = counting_examples(&ds, Split::Train);
    let test = counting_examples(&ds, Split::Test);
    let mut hist = [0usize; MAX_COUNT as usize + 1];
    for ex in &train {
        let Answer::Count(c) = ex.answer else {
            panic!("counting answer expected")
        };
        hist[c as usize] += 1;
    }
    let majority = hist.iter().enumerate().max_by_key(|&(_, n)| *n).unwrap().0 as u8;
    let baseline = test
        .iter()
        .filter(|e| e.answer == Answer::Count(majority))
        .count() as f64
        / test.len() as f64;
    let (model, _) = train_qa(
        small_model(3),
        &train,
        &QaTrainConfig::default(),
        5,
        Exec::Parallel,
    )
    .unwrap();
    let acc = qa_accuracy(&model, &test, Exec::Parallel).unwrap();
    assert!(
        acc > baseline + 0.05,
        "held-out accuracy {acc:.3} vs majority baseline {baseline:.3}"
    );
}
