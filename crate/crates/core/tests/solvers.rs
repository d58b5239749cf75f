mod common;

use common::{dot, rng, uniform_vec};
use fetrpo_core::advantage::{compute_gae_from_values, RolloutBatch, Transition};
use fetrpo_core::mlp::ParamVector;
use fetrpo_core::policy::{kl_diag_gauss, DiagGaussian};
use fetrpo_core::trpo::conjugate_gradient;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_spd(r: &mut ChaCha8Rng, n: usize) -> Vec<Vec<f64>> {
    let b: Vec<Vec<f64>> = (0..n).map(|_| uniform_vec(r, n, -1.0, 1.0)).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let g: f64 = (0..n).map(|k| b[k][i] * b[k][j]).sum::<f64>() / n as f64;
                    g + if i == j { 0.5 } else { 0.0 }
                })
                .collect()
        })
        .collect()
}

fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| dot(row, x)).collect()
}

/// Cholesky factorization and two triangular solves.
fn dense_solve(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut l = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                l[i][i] = (a[i][i] - s).sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    x
}

fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

#[test]
fn cg_matches_dense_solves() {
    let mut r = rng(3);
    for trial in 0..40 {
        let n = r.random_range(5..=50);
        let a = random_spd(&mut r, n);
        let b = uniform_vec(&mut r, n, -1.0, 1.0);
        let sol = conjugate_gradient(|x| Ok(ParamVector::from_vec(matvec(&a, x))), &b, 4 * n, 1e-14).unwrap();
        let exact = dense_solve(&a, &b);
        let diff: Vec<f64> = sol.x.iter().zip(&exact).map(|(u, v)| u - v).collect();
        let rel = norm(&diff) / norm(&exact);
        assert!(rel < 1e-8, "trial {trial} (n = {n}): {rel}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // The residual 2-norm of CG is not monotone in general; the error in the
    // A-norm is, so that is what is checked here.
    #[test]
    fn cg_energy_error_is_non_increasing(seed in any::<u64>(), n in 2usize..30) {
        let mut r = rng(seed);
        let a = random_spd(&mut r, n);
        let b = uniform_vec(&mut r, n, -1.0, 1.0);
        let exact = dense_solve(&a, &b);
        let energy = |x: &[f64]| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(u, v)| u - v).collect();
            dot(&e, &matvec(&a, &e))
        };
        let mut prev = energy(&vec![0.0; n]);
        for iters in 1..=n {
            let sol = conjugate_gradient(|x| Ok(ParamVector::from_vec(matvec(&a, x))), &b, iters, 0.0).unwrap();
            let e = energy(&sol.x);
            prop_assert!(e <= prev * (1.0 + 1e-9) + 1e-24, "iteration {}: {} > {}", iters, e, prev);
            prev = e;
        }
    }
}

struct RandomBatch {
    batch: RolloutBatch,
    values: Vec<f64>,
    next_values: Vec<f64>,
}

fn random_batch(r: &mut ChaCha8Rng, episodes: usize, t_len: usize) -> RandomBatch {
    let n = episodes * t_len;
    let transitions = (0..n)
        .map(|t| Transition {
            state: vec![t as f64],
            raw_action: vec![0.0],
            clipped_action: vec![0.0],
            reward: r.random_range(-2.0..2.0),
            done: t % t_len == t_len - 1,
            next_state: vec![t as f64 + 1.0],
            behavior_log_density: 0.0,
        })
        .collect();
    RandomBatch {
        batch: RolloutBatch::new(transitions, t_len).unwrap(),
        values: uniform_vec(r, n, -3.0, 3.0),
        next_values: uniform_vec(r, n, -3.0, 3.0),
    }
}

#[test]
fn gae_matches_brute_force_sums() {
    let mut r = rng(4);
    for _ in 0..100 {
        let episodes = r.random_range(1..=4);
        let t_len = r.random_range(1..=100);
        let gamma = r.random_range(0.5..1.0);
        let lambda = r.random_range(0.5..1.0);
        let rb = random_batch(&mut r, episodes, t_len);
        let buf = compute_gae_from_values(&rb.batch, &rb.values, &rb.next_values, gamma, lambda).unwrap();
        let tr = rb.batch.transitions();
        for t in 0..rb.batch.len() {
            let end = (t / t_len + 1) * t_len;
            let mut ret = 0.0;
            let mut adv = 0.0;
            for (l, u) in (t..end).enumerate() {
                let bootstrap = if tr[u].done { 0.0 } else { gamma * rb.next_values[u] };
                let delta = tr[u].reward + bootstrap - rb.values[u];
                ret += gamma.powi(l as i32) * tr[u].reward;
                adv += (gamma * lambda).powi(l as i32) * delta;
            }
            assert!((buf.rewards_to_go[t] - ret).abs() <= 1e-10 * ret.abs().max(1.0));
            assert!((buf.advantages[t] - adv).abs() <= 1e-10 * adv.abs().max(1.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn unit_lambda_zero_values_gives_returns(seed in any::<u64>(), episodes in 1usize..4, t_len in 1usize..60, gamma in 0.1f64..1.0) {
        let mut r = rng(seed);
        let rb = random_batch(&mut r, episodes, t_len);
        let zeros = vec![0.0; rb.batch.len()];
        let buf = compute_gae_from_values(&rb.batch, &zeros, &zeros, gamma, 1.0).unwrap();
        prop_assert_eq!(buf.advantages, buf.rewards_to_go);
    }

    #[test]
    fn episodes_do_not_leak(seed in any::<u64>(), episodes in 2usize..5, t_len in 1usize..40, victim in 0usize..5) {
        let victim = victim % episodes;
        let mut r = rng(seed);
        let rb = random_batch(&mut r, episodes, t_len);
        let before = compute_gae_from_values(&rb.batch, &rb.values, &rb.next_values, 0.99, 0.94).unwrap();
        let mut transitions = rb.batch.transitions().to_vec();
        for tr in &mut transitions[victim * t_len..(victim + 1) * t_len] {
            tr.reward += r.random_range(-5.0..5.0);
        }
        let perturbed = RolloutBatch::new(transitions, t_len).unwrap();
        let after = compute_gae_from_values(&perturbed, &rb.values, &rb.next_values, 0.99, 0.94).unwrap();
        for t in 0..rb.batch.len() {
            if t / t_len != victim {
                prop_assert_eq!(before.rewards_to_go[t].to_bits(), after.rewards_to_go[t].to_bits());
                prop_assert_eq!(before.advantages[t].to_bits(), after.advantages[t].to_bits());
            }
        }
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let samples = 1_000_000;
    for pair in 0..20u64 {
        let mut r = rng(5_000 + pair);
        let d = r.random_range(1..=4);
        let p = DiagGaussian::new(uniform_vec(&mut r, d, -1.0, 1.0), uniform_vec(&mut r, d, -1.0, 0.5)).unwrap();
        let q = DiagGaussian::new(uniform_vec(&mut r, d, -1.0, 1.0), uniform_vec(&mut r, d, -1.0, 0.5)).unwrap();
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        let mut x = vec![0.0; d];
        for _ in 0..samples {
            for (xj, (m, ls)) in x.iter_mut().zip(p.mean().iter().zip(p.log_std())) {
                let z: f64 = StandardNormal.sample(&mut r);
                *xj = m + ls.exp() * z;
            }
            let v = p.log_prob(&x) - q.log_prob(&x);
            sum += v;
            sum_sq += v * v;
        }
        let n = samples as f64;
        let mean = sum / n;
        let se = ((sum_sq / n - mean * mean) / (n - 1.0)).sqrt();
        let kl = kl_diag_gauss(&p, &q);
        assert!((mean - kl).abs() <= 3.0 * se, "pair {pair}: closed form {kl}, estimate {mean} ± {se}");
        assert_eq!(kl_diag_gauss(&p, &p), 0.0);
    }
}
