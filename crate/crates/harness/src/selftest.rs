//! Oracle checks runnable from the command line: finite-difference
//! gradients, GAE against brute-force sums, WMMSE against a grid search.

use fetrpo_core::advantage::{compute_gae_from_values, RolloutBatch, Transition};
use fetrpo_core::baselines::{wmmse, WmmseConfig};
use fetrpo_core::env::sum_rate;
use fetrpo_core::linalg::Matrix;
use fetrpo_core::mlp::{forward, grad_params, init_params, MlpArchitecture, ParamVector};
use fetrpo_core::policy::{LogStdMode, PolicySnapshot};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, limit: f64) -> Check {
    Check {
        name,
        passed: value <= limit,
        detail: format!("{value:.3e} (limit {limit:.0e})"),
    }
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
    Matrix::from_vec(rows, cols, data).expect("dimensions match")
}

fn network_gradient(r: &mut ChaCha8Rng) -> Result<Check> {
    let arch = MlpArchitecture::tanh(vec![4, 6, 5, 3])?;
    let params = init_params(&arch, r);
    let inputs = random_matrix(r, 7, 4);
    let cot = random_matrix(r, 7, 3);
    let g = grad_params(&arch, &params, &inputs, &cot)?;
    let fd = central_diff(&params, 1e-6, |p| {
        let out = forward(&arch, p, &inputs).expect("valid shapes");
        out.as_slice().iter().zip(cot.as_slice()).map(|(a, b)| a * b).sum()
    });
    Ok(check("network gradient vs finite differences", max_rel_err(&g, &fd), 1e-5))
}

fn score_gradient(r: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst = 0.0f64;
    for mode in [LogStdMode::SharedVector, LogStdMode::Head] {
        let policy = PolicySnapshot::init(5, &[6], 2, mode, -0.3, r)?;
        let state: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let action = policy.distribution(&state)?.sample(r);
        let g = policy.grad_log_prob(&state, &action)?;
        let fd = central_diff(policy.params(), 1e-6, |p| {
            let q = policy.with_params(ParamVector::from_vec(p.to_vec())).expect("same length");
            q.log_prob(&state, &action).expect("valid shapes")
        });
        worst = worst.max(max_rel_err(&g, &fd));
    }
    Ok(check("log-density gradient vs finite differences", worst, 1e-5))
}

fn gae_brute_force(r: &mut ChaCha8Rng) -> Result<Check> {
    let (episodes, len, gamma, lambda) = (4, 6, 0.9, 0.8);
    let n = episodes * len;
    let rewards: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let values: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let next_values: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let transitions = (0..n)
        .map(|t| Transition {
            state: vec![t as f64],
            raw_action: vec![0.0],
            clipped_action: vec![0.0],
            reward: rewards[t],
            done: t % len == len - 1,
            next_state: vec![t as f64 + 1.0],
            behavior_log_density: 0.0,
        })
        .collect();
    let buf = compute_gae_from_values(&RolloutBatch::new(transitions, len)?, &values, &next_values, gamma, lambda)?;
    let mut worst = 0.0f64;
    for t in 0..n {
        let end = (t / len + 1) * len;
        let (mut adv, mut ret) = (0.0, 0.0);
        for (l, u) in (t..end).enumerate() {
            let bootstrap = if u == end - 1 { 0.0 } else { gamma * next_values[u] };
            let delta = rewards[u] + bootstrap - values[u];
            adv += (gamma * lambda).powi(l as i32) * delta;
            ret += gamma.powi(l as i32) * rewards[u];
        }
        worst = worst.max((adv - buf.advantages[t]).abs()).max((ret - buf.rewards_to_go[t]).abs());
    }
    Ok(check("GAE vs brute-force sums", worst, 1e-10))
}

fn grid_optimum(h: &Matrix, noise: f64) -> f64 {
    let mut best = 0.0f64;
    for i in 0..=200 {
        for j in 0..=200 {
            best = best.max(sum_rate(h, &[i as f64 / 200.0, j as f64 / 200.0], noise));
        }
    }
    best
}

fn wmmse_weak_interference() -> Result<Check> {
    let h = Matrix::from_rows(&[[1.0, 1e-6], [1e-6, 1.0]])?;
    let sol = wmmse(&h, 1e-3, &[1.0, 1.0], &WmmseConfig::default())?;
    let power_gap = sol.powers.iter().map(|p| (1.0 - p).abs()).fold(0.0, f64::max);
    let grid = grid_optimum(&h, 1e-3);
    let mut c = check("WMMSE weak interference at full power", power_gap, 1e-2);
    c.passed &= sol.sum_rate() >= 0.98 * grid;
    c.detail = format!("{} (sum rate {:.4}, grid {:.4})", c.detail, sol.sum_rate(), grid);
    Ok(c)
}

fn wmmse_monotone(r: &mut ChaCha8Rng) -> Result<Check> {
    let mut worst_drop = 0.0f64;
    for _ in 0..50 {
        let k = r.random_range(2..=4);
        let data = (0..k * k).map(|_| -r.random::<f64>().max(1e-300).ln()).collect();
        let h = Matrix::from_vec(k, k, data)?;
        let sol = wmmse(&h, 0.1, &vec![1.0; k], &WmmseConfig::default())?;
        for w in sol.sum_rate_trace.windows(2) {
            worst_drop = worst_drop.max(w[0] - w[1]);
        }
    }
    Ok(check("WMMSE sum-rate trace non-decreasing", worst_drop, 1e-9))
}

pub fn run_all() -> Result<Vec<Check>> {
    let mut r = ChaCha8Rng::seed_from_u64(0x5e1f);
    Ok(vec![
        network_gradient(&mut r)?,
        score_gradient(&mut r)?,
        gae_brute_force(&mut r)?,
        wmmse_weak_interference()?,
        wmmse_monotone(&mut r)?,
    ])
}
