//! Held-out comparison of a trained policy with the reference allocators.

use alloc::vec::Vec;

use rand::Rng;

use crate::baselines::{max_power, random_power, wmmse, WmmseConfig};
use crate::env::{sum_rate, Environment, InterferenceEnv};
use crate::policy::{clip_action, PolicySnapshot};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvaluationReport {
    pub draws: usize,
    /// Mean per-step sum rate (nats/s/Hz) of each allocator.
    pub policy: f64,
    pub wmmse: f64,
    pub random: f64,
    pub max_power: f64,
}

impl EvaluationReport {
    pub fn policy_to_wmmse(&self) -> f64 {
        self.policy / self.wmmse
    }
}

/// Runs the deterministic policy (clipped mean action) for `draws` steps on
/// a copy of `env`, in episodes of the environment's length, and scores
/// WMMSE, random and maximum power on the very same gain matrices.
pub fn evaluate_policy<R: Rng + ?Sized>(
    policy: &PolicySnapshot,
    env: &InterferenceEnv,
    draws: usize,
    wmmse_cfg: &WmmseConfig,
    rng: &mut R,
) -> Result<EvaluationReport> {
    let mut env = env.clone();
    let noise = env.noise_power_w();
    let p_max = env.p_max();
    let (low, high) = (env.action_low(), env.action_high());
    let mut totals = [0.0f64; 4];
    let mut obs = env.reset(rng);
    let mut steps_in_episode = 0;
    for _ in 0..draws {
        if steps_in_episode == env.episode_len() {
            obs = env.reset(rng);
            steps_in_episode = 0;
        }
        let gains = env.draw_gains(rng);
        let random: Vec<f64> = random_power(rng, &p_max);
        totals[1] += wmmse(&gains, noise, &p_max, wmmse_cfg)?.sum_rate();
        totals[2] += sum_rate(&gains, &random, noise);
        totals[3] += sum_rate(&gains, &max_power(&p_max), noise);
        let action = clip_action(policy.distribution(&obs)?.mean(), &low, &high);
        let rec = env.step_with_gains(&action, gains)?;
        totals[0] += rec.reward;
        obs = env.state().observation.clone();
        steps_in_episode += 1;
    }
    let n = draws.max(1) as f64;
    Ok(EvaluationReport {
        draws,
        policy: totals[0] / n,
        wmmse: totals[1] / n,
        random: totals[2] / n,
        max_power: totals[3] / n,
    })
}
