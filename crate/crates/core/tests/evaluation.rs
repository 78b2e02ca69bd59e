use mqa_core::dataset::{
    build_catalog, build_dataset, generate_scene, DatasetConfig, Difficulty, Question,
};
use mqa_core::harness::{evaluate, random_policy, Answerer, EvalConfig, EvalSetup, Policy};
use mqa_core::par::Exec;
use mqa_core::reward::RewardConfig;
use mqa_core::rng;
use mqa_core::world::{Bin, Scene};

#[test]
fn random_policy_pushes_half_the_budget_on_average() {
    let cat = build_catalog(0);
    let full = generate_scene(&cat, Difficulty::Easy, 1).unwrap();
    // One object keeps each step cheap; the push count does not depend on the scene.
    let scene = Scene {
        bin: Bin::default(),
        objects: full.objects[..1].to_vec(),
        seed: 0,
    };
    let q = Question::counting(scene.objects[0].class_id, &cat);
    let max_steps = 10;
    let n = 10_000;
    let mut g = rng::substream(8, "random-policy", 0);
    let mut sum = 0.0;
    for _ in 0..n {
        let t = random_policy(&scene, &q, max_steps, &RewardConfig::default(), &mut g).unwrap();
        assert!(t.actions.last().unwrap().is_stop());
        assert!(t.pushes() <= max_steps);
        sum += t.pushes() as f64;
    }
    let mean = sum / n as f64;
    // Uniform on 0..=10: mean 5, variance ((11² − 1) / 12) = 10.
    let sigma = (10.0f64 / n as f64).sqrt();
    assert!(
        (mean - max_steps as f64 / 2.0).abs() <= 3.0 * sigma,
        "mean pushes {mean}, 3σ = {}",
        3.0 * sigma
    );
}

#[test]
fn uniform_guessing_scores_a_quarter() {
    let ds = build_dataset(&DatasetConfig::default(), 0, Exec::Parallel).unwrap();
    let config = EvalConfig {
        max_steps: 0,
        ..Default::default()
    };
    let reward = RewardConfig::default();
    let (mut right, mut total) = (0, 0);
    for seed in 0..4 {
        let setup = EvalSetup {
            policy: Policy::Random,
            answerer: Answerer::UniformRandom,
            config: &config,
            reward: &reward,
            seed,
        };
        let (report, _) = evaluate(&ds, &setup, None, Exec::Parallel).unwrap();
        right += [report.easy, report.medium, report.hard]
            .iter()
            .map(|s| s.correct)
            .sum::<usize>();
        total += report.questions();
    }
    assert!(total >= 2000);
    let acc = right as f64 / total as f64;
    assert!(
        (acc - 0.25).abs() <= 0.03,
        "accuracy {acc} over {total} trials"
    );
}
