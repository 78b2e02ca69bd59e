use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mqa_core::agent::{td_gradient, Observation, QArch, QParams, ReplayMemory, Transition};
use mqa_core::dataset::{build_dataset, DatasetConfig};
use mqa_core::encoding::{CompactVisual, EmbeddingTable};
use mqa_core::geometry;
use mqa_core::harness::{evaluate, Answerer, EvalConfig, EvalSetup, Policy};
use mqa_core::par::Exec;
use mqa_core::reward::RewardConfig;

const MODES: [(&str, Exec); 2] = [("serial", Exec::Serial), ("parallel", Exec::Parallel)];

fn small_dataset() -> DatasetConfig {
    DatasetConfig {
        easy: 4,
        medium: 4,
        hard: 4,
        questions_per_type: 8,
        ..Default::default()
    }
}

fn dataset_generation(c: &mut Criterion) {
    let cfg = small_dataset();
    let mut group = c.benchmark_group("dataset_generation");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| build_dataset(&cfg, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn evaluation(c: &mut Criterion) {
    let ds = build_dataset(&small_dataset(), 1, Exec::Parallel).unwrap();
    let params = QParams::init(QArch::default(), 2);
    let config = EvalConfig::default();
    let reward = RewardConfig::default();
    let mut group = c.benchmark_group("evaluation");
    group.sample_size(10);
    for (name, exec) in MODES {
        for (policy_name, policy) in [
            ("random", Policy::Random),
            ("trained", Policy::Trained(&params)),
        ] {
            let setup = EvalSetup {
                policy,
                answerer: Answerer::OracleVisible,
                config: &config,
                reward: &reward,
                seed: 3,
            };
            group.bench_function(BenchmarkId::new(policy_name, name), |b| {
                b.iter(|| evaluate(&ds, &setup, None, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn td_batch(c: &mut Criterion) {
    let ds = build_dataset(&small_dataset(), 1, Exec::Parallel).unwrap();
    let params = QParams::init(QArch::default(), 4);
    let reward = RewardConfig::default();
    let setup = EvalSetup {
        policy: Policy::Random,
        answerer: Answerer::OracleVisible,
        config: &EvalConfig::default(),
        reward: &reward,
        seed: 5,
    };
    // Transitions from random rollouts stand in for a replay batch.
    let (_, records) = evaluate(&ds, &setup, None, Exec::Parallel).unwrap();
    let mut memory = ReplayMemory::new(4096);
    for r in &records {
        let rows = EmbeddingTable::row_indices(&r.trace.question).unwrap();
        let obs: Vec<Observation> = r
            .trace
            .replay()
            .iter()
            .map(|s| Observation {
                visual: Arc::new(CompactVisual::from_map(
                    s,
                    &geometry::rasterize(s, 224).unwrap(),
                )),
                rows,
            })
            .collect();
        for (i, a) in r.trace.actions.iter().enumerate() {
            memory.push(Transition {
                state: obs[i].clone(),
                action: *a,
                reward: r.trace.rewards[i].total,
                next_state: obs[i + 1].clone(),
                done: a.is_stop(),
            });
        }
    }
    let batch: Vec<Transition> = memory.iter().take(32).cloned().collect();
    let mut group = c.benchmark_group("td_gradient_batch32");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| td_gradient(&params, &params, &batch, 0.5, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, dataset_generation, evaluation, td_batch);
criterion_main!(benches);
