mod common;

use common::{central_diff, max_rel_err, random_matrix, rng, uniform_vec};
use fetrpo_core::advantage::{AdvantageBuffer, RolloutBatch, Transition};
use fetrpo_core::env::{EnvConfig, Environment, InterferenceEnv};
use fetrpo_core::linalg::Matrix;
use fetrpo_core::mlp::{self, MlpArchitecture, ParamVector};
use fetrpo_core::policy::{mixture_weights, LogStdMode, MixtureSpec, PolicySnapshot};
use fetrpo_core::trpo::{
    estimate_policy_gradient, fit_value, mean_kl, surrogate_objective, Algorithm, IterationMetrics, SurrogateData,
    TrainConfig, Trainer, ValueFitConfig,
};

fn small_env_cfg() -> EnvConfig {
    EnvConfig {
        num_users: 2,
        episode_len: 10,
        ..EnvConfig::default()
    }
}

fn small_cfg(algorithm: Algorithm, memory_size: usize) -> TrainConfig {
    TrainConfig {
        algorithm,
        memory_size,
        batch_size: 40,
        episode_len: 10,
        iterations: 6,
        policy_hidden: vec![8],
        value_hidden: vec![8],
        init_log_std: -0.5,
        ..TrainConfig::default()
    }
}

fn run(cfg: TrainConfig, seed: u64, mut each: impl FnMut(&Trainer)) -> (Trainer, Vec<IterationMetrics>) {
    let mut r = rng(seed);
    let mut env = InterferenceEnv::new(small_env_cfg(), &mut r).unwrap();
    let mut trainer = Trainer::new(cfg.clone(), env.observation_dim(), env.action_dim(), &mut r).unwrap();
    let mut metrics = Vec::new();
    for _ in 0..cfg.iterations {
        each(&trainer);
        metrics.push(trainer.iterate(&mut env, &mut r).unwrap());
    }
    (trainer, metrics)
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

#[test]
fn empty_memory_reproduces_trpo_bit_for_bit() {
    let (fe, fe_metrics) = run(small_cfg(Algorithm::FadedExperience, 0), 3, |_| {});
    let (trpo, trpo_metrics) = run(small_cfg(Algorithm::Trpo, 0), 3, |_| {});
    assert_eq!(bits(fe.policy().params()), bits(trpo.policy().params()));
    assert_eq!(bits(fe.value_params()), bits(trpo.value_params()));
    assert_eq!(format!("{fe_metrics:?}"), format!("{trpo_metrics:?}"));
}

#[test]
fn memory_slots_hold_past_policies() {
    let memory_size = 3;
    let mut history: Vec<ParamVector> = Vec::new();
    let (trainer, _) = run(small_cfg(Algorithm::FadedExperience, memory_size), 4, |t| {
        // after k iterations slot m must equal the policy current at k − m
        let k = history.len();
        for (m, slot) in t.memory().slots().iter().enumerate() {
            let source = k.saturating_sub(m + 1);
            assert_eq!(bits(slot.params()), bits(&history.get(source).cloned().unwrap_or_else(|| t.policy().params().clone())));
        }
        history.push(t.policy().params().clone());
    });
    let k = history.len();
    for (m, slot) in trainer.memory().slots().iter().enumerate() {
        assert_eq!(bits(slot.params()), bits(&history[k - 1 - m]));
    }
    // the run actually moved the policy, so the check is not vacuous
    assert_ne!(bits(&history[0]), bits(&history[k - 1]));
}

#[test]
fn training_is_deterministic() {
    for algorithm in [Algorithm::Trpo, Algorithm::FadedExperience] {
        let m = if algorithm == Algorithm::Trpo { 0 } else { 2 };
        let (a, ma) = run(small_cfg(algorithm, m), 5, |_| {});
        let (b, mb) = run(small_cfg(algorithm, m), 5, |_| {});
        assert_eq!(bits(a.policy().params()), bits(b.policy().params()));
        assert_eq!(format!("{ma:?}"), format!("{mb:?}"));
    }
}

#[test]
fn accepted_updates_respect_the_trust_region() {
    for (algorithm, m) in [(Algorithm::Trpo, 0), (Algorithm::FadedExperience, 4)] {
        let mut before = Vec::new();
        let (trainer, metrics) = run(small_cfg(algorithm, m), 6, |t| before.push(t.policy().params().clone()));
        before.push(trainer.policy().params().clone());
        for (i, rec) in metrics.iter().enumerate() {
            let r = rec.report;
            if r.accepted {
                assert!(r.kl_after <= 0.05 && r.surrogate_after > r.surrogate_before);
            } else {
                assert_eq!(bits(&before[i]), bits(&before[i + 1]));
            }
            assert!(r.value_loss_after <= r.value_loss_before);
        }
    }
}

fn toy_data(states: &Matrix, actions: &Matrix, behavior: Vec<f64>, advantages: Vec<f64>) -> SurrogateData {
    SurrogateData {
        states: states.clone(),
        raw_actions: actions.clone(),
        behavior_log_density: behavior,
        advantages,
    }
}

fn toy_policy(seed: u64) -> PolicySnapshot {
    PolicySnapshot::init(3, &[5], 2, LogStdMode::SharedVector, -0.2, &mut rng(seed)).unwrap()
}

#[test]
fn gradient_examples() {
    let p = toy_policy(1);
    let mut r = rng(2);
    let states = random_matrix(&mut r, 6, 3);
    let actions = random_matrix(&mut r, 6, 2);
    let behavior = p.batch(&states).unwrap().log_probs(&actions);
    let spec = MixtureSpec::current_only();

    let zero = estimate_policy_gradient(&toy_data(&states, &actions, behavior.clone(), vec![0.0; 6]), &p, &spec).unwrap();
    assert!(zero.iter().all(|&g| g == 0.0));

    let adv = uniform_vec(&mut r, 6, -1.0, 1.0);
    let g = estimate_policy_gradient(&toy_data(&states, &actions, behavior.clone(), adv.clone()), &p, &spec).unwrap();
    let scaled: Vec<f64> = adv.iter().map(|a| 4.0 * a).collect();
    let g4 = estimate_policy_gradient(&toy_data(&states, &actions, behavior.clone(), scaled), &p, &spec).unwrap();
    for (a, b) in g.iter().zip(g4.iter()) {
        assert_eq!(4.0 * a, *b);
    }

    // single transition, M = 0: Â · ∇ log π against finite differences
    let s1 = Matrix::row_vector(states.row(0));
    let a1 = Matrix::row_vector(actions.row(0));
    let g1 = estimate_policy_gradient(&toy_data(&s1, &a1, vec![behavior[0]], vec![0.7]), &p, &spec).unwrap();
    let fd = central_diff(p.params(), 1e-6, |q| {
        0.7 * p.with_params(ParamVector::from_vec(q.to_vec())).unwrap().log_prob(states.row(0), actions.row(0)).unwrap()
    });
    assert!(max_rel_err(&g1, &fd) < 1e-5);
}

#[test]
fn surrogate_examples() {
    let p = toy_policy(3);
    let mut r = rng(4);
    let states = random_matrix(&mut r, 5, 3);
    let actions = random_matrix(&mut r, 5, 2);
    let adv = uniform_vec(&mut r, 5, -1.0, 1.0);
    let behavior = p.batch(&states).unwrap().log_probs(&actions);
    let data = toy_data(&states, &actions, behavior, adv.clone());
    let mean_adv = adv.iter().sum::<f64>() / 5.0;
    assert_eq!(surrogate_objective(&p, &data).unwrap(), mean_adv);

    let zero = toy_data(&states, &actions, data.behavior_log_density.clone(), vec![0.0; 5]);
    assert_eq!(surrogate_objective(&toy_policy(9), &zero).unwrap(), 0.0);

    // one memory slot holding a copy of the current policy
    let spec = mixture_weights(1, 1.0).unwrap();
    let mix = fetrpo_core::policy::mixture_log_density_batch(&p, std::slice::from_ref(&p), &spec, &states, &actions).unwrap();
    let with_copy = toy_data(&states, &actions, mix, adv);
    assert!((surrogate_objective(&p, &with_copy).unwrap() - mean_adv).abs() < 1e-15);
}

#[test]
fn mean_kl_examples() {
    let p = toy_policy(5);
    let mut r = rng(6);
    let states = random_matrix(&mut r, 7, 3);
    assert_eq!(mean_kl(&p, &p, &states).unwrap(), 0.0);

    // zero network, σ = 1; shifting both mean biases by c gives B c²/2
    let arch = MlpArchitecture::tanh(vec![3, 5, 2]).unwrap();
    let zero = PolicySnapshot::new(arch.clone(), LogStdMode::SharedVector, ParamVector::zeros(arch.param_count() + 2)).unwrap();
    let c = 0.3;
    let mut shifted = ParamVector::zeros(arch.param_count() + 2);
    let n = arch.param_count();
    shifted[n - 2] = c;
    shifted[n - 1] = c;
    let moved = zero.with_params(shifted).unwrap();
    let kl = mean_kl(&zero, &moved, &states).unwrap();
    assert!((kl - 2.0 * c * c / 2.0).abs() < 1e-15);

    for k in 0..20 {
        let q: Vec<f64> = p.params().iter().map(|v| v + 0.1 * ((k as f64 + 1.0) * v).sin()).collect();
        let q = p.with_params(ParamVector::from_vec(q)).unwrap();
        assert!(mean_kl(&p, &q, &states).unwrap() >= 0.0);
    }
}

#[test]
fn value_fit_learns_a_teacher_network() {
    let arch = MlpArchitecture::tanh(vec![4, 16, 16, 1]).unwrap();
    let mut r = rng(7);
    let teacher = mlp::init_params(&arch, &mut r);
    let student = mlp::init_params(&arch, &mut r);
    let states = random_matrix(&mut r, 50, 4);
    let targets = mlp::forward(&arch, &teacher, &states).unwrap().into_vec();
    let cfg = ValueFitConfig {
        epochs: 200,
        ..ValueFitConfig::default()
    };
    let fit = fit_value(&arch, &student, &states, &targets, &cfg, &mut r).unwrap();
    assert!(fit.loss_after < 0.1 * fit.loss_before, "{} -> {}", fit.loss_before, fit.loss_after);
}

#[test]
fn rollout_batch_rejects_partial_episodes() {
    let tr = |done| Transition {
        state: vec![0.0],
        raw_action: vec![0.0],
        clipped_action: vec![0.0],
        reward: 1.0,
        done,
        next_state: vec![0.0],
        behavior_log_density: 0.0,
    };
    assert!(RolloutBatch::new(vec![tr(false), tr(true), tr(false)], 2).is_err());
    let batch = RolloutBatch::new(vec![tr(false), tr(true)], 2).unwrap();
    let buf = AdvantageBuffer {
        rewards_to_go: vec![0.0; 1],
        advantages: vec![0.0; 1],
        values: vec![0.0; 1],
    };
    assert!(SurrogateData::new(&batch, &buf).is_err());
}
