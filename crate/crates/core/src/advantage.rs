//! Rollout batches, rewards-to-go and generalized advantage estimation.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    /// Sampled action before clipping; all densities and gradients use it.
    pub raw_action: Vec<f64>,
    /// Action actually applied to the environment.
    pub clipped_action: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub next_state: Vec<f64>,
    /// `log π̃k(raw_action | state)` under the behavior mixture.
    pub behavior_log_density: f64,
}

/// `N` transitions made of `N / T` complete episodes.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    transitions: Vec<Transition>,
    episode_len: usize,
}

impl RolloutBatch {
    pub fn new(transitions: Vec<Transition>, episode_len: usize) -> Result<Self> {
        let n = transitions.len();
        if episode_len == 0 || !n.is_multiple_of(episode_len) {
            return Err(Error::InvalidConfig(alloc::format!(
                "batch of {n} transitions is not a whole number of {episode_len}-step episodes"
            )));
        }
        for (t, tr) in transitions.iter().enumerate() {
            if tr.done != (t % episode_len == episode_len - 1) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "transition {t}: done flag does not match the episode boundary"
                )));
            }
            if !tr.reward.is_finite() {
                return Err(Error::NonFinite("reward"));
            }
        }
        Ok(Self {
            transitions,
            episode_len,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn episode_len(&self) -> usize {
        self.episode_len
    }

    pub fn num_episodes(&self) -> usize {
        self.len() / self.episode_len
    }

    pub fn states(&self) -> Matrix {
        stack(self.transitions.iter().map(|t| t.state.as_slice()))
    }

    pub fn next_states(&self) -> Matrix {
        stack(self.transitions.iter().map(|t| t.next_state.as_slice()))
    }

    pub fn raw_actions(&self) -> Matrix {
        stack(self.transitions.iter().map(|t| t.raw_action.as_slice()))
    }

    pub fn behavior_log_densities(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.behavior_log_density).collect()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.transitions.iter().map(|t| t.reward).collect()
    }

    /// Undiscounted return of every episode, in order.
    pub fn episode_returns(&self) -> Vec<f64> {
        self.transitions
            .chunks(self.episode_len)
            .map(|ep| ep.iter().map(|t| t.reward).sum())
            .collect()
    }
}

fn stack<'a>(rows: impl Iterator<Item = &'a [f64]>) -> Matrix {
    let rows: Vec<&[f64]> = rows.collect();
    Matrix::from_rows(&rows).expect("transitions have uniform widths")
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBuffer {
    pub rewards_to_go: Vec<f64>,
    pub advantages: Vec<f64>,
    pub values: Vec<f64>,
}

/// Backward recursion over the batch:
///
/// ```text
/// R[t] = r_t + γ(1 − d_t) R[t+1]
/// δ    = r_t + γ(1 − d_t) V(s_{t+1}) − V(s_t)
/// A[t] = δ + γλ(1 − d_t) A[t+1]
/// ```
///
/// with `R[N] = A[N] = 0`. `values[t] = V(s_t)` and
/// `next_values[t] = V(s_{t+1})`.
pub fn compute_gae_from_values(
    batch: &RolloutBatch,
    values: &[f64],
    next_values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<AdvantageBuffer> {
    let n = batch.len();
    for (what, v) in [("values", values), ("next values", next_values)] {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                what,
                expected: n,
                found: v.len(),
            });
        }
    }
    let mut rewards_to_go = vec![0.0; n];
    let mut advantages = vec![0.0; n];
    let (mut next_r, mut next_a) = (0.0, 0.0);
    for t in (0..n).rev() {
        let tr = &batch.transitions[t];
        let live = if tr.done { 0.0 } else { 1.0 };
        let r = tr.reward + gamma * live * next_r;
        let delta = tr.reward + gamma * live * next_values[t] - values[t];
        let a = delta + gamma * lambda * live * next_a;
        rewards_to_go[t] = r;
        advantages[t] = a;
        next_r = r;
        next_a = a;
    }
    Ok(AdvantageBuffer {
        rewards_to_go,
        advantages,
        values: values.to_vec(),
    })
}

/// [`compute_gae_from_values`] with a per-state value function.
pub fn compute_gae<F>(batch: &RolloutBatch, mut value_fn: F, gamma: f64, lambda: f64) -> Result<AdvantageBuffer>
where
    F: FnMut(&[f64]) -> f64,
{
    let values: Vec<f64> = batch.transitions.iter().map(|t| value_fn(&t.state)).collect();
    let next_values: Vec<f64> = batch.transitions.iter().map(|t| value_fn(&t.next_state)).collect();
    compute_gae_from_values(batch, &values, &next_values, gamma, lambda)
}

/// Standardizes the advantages with the population standard deviation,
/// floored at `1e-8`.
pub fn normalize_advantages(mut buffer: AdvantageBuffer) -> Result<AdvantageBuffer> {
    let n = buffer.advantages.len();
    if n < 2 {
        return Err(Error::TooFewSamples {
            what: "advantage normalization",
            needed: 2,
            found: n,
        });
    }
    let mean = buffer.advantages.iter().sum::<f64>() / n as f64;
    let var = buffer
        .advantages
        .iter()
        .map(|a| (a - mean) * (a - mean))
        .sum::<f64>()
        / n as f64;
    let std = math::sqrt(var).max(1e-8);
    for a in &mut buffer.advantages {
        *a = (*a - mean) / std;
    }
    Ok(buffer)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn batch(rewards: &[f64], episode_len: usize) -> RolloutBatch {
        let transitions = rewards
            .iter()
            .enumerate()
            .map(|(t, &r)| Transition {
                state: vec![t as f64],
                raw_action: vec![0.0],
                clipped_action: vec![0.0],
                reward: r,
                done: t % episode_len == episode_len - 1,
                next_state: vec![t as f64 + 1.0],
                behavior_log_density: 0.0,
            })
            .collect();
        RolloutBatch::new(transitions, episode_len).unwrap()
    }

    #[test]
    fn terminal_single_step() {
        let b = compute_gae(&batch(&[1.0], 1), |_| 0.0, 0.99, 0.95).unwrap();
        assert_eq!(b.rewards_to_go, vec![1.0]);
        assert_eq!(b.advantages, vec![1.0]);
    }

    #[test]
    fn undiscounted_telescoping() {
        let b = compute_gae(&batch(&[1.0, 1.0, 1.0], 3), |_| 0.0, 1.0, 1.0).unwrap();
        assert_eq!(b.rewards_to_go, vec![3.0, 2.0, 1.0]);
        assert_eq!(b.advantages, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn hand_executed_recursion() {
        // V(s0) = 1, V(s1) = 2, V(s2) = 123 (never used: d1 = 1).
        let v = |s: &[f64]| [1.0, 2.0, 123.0][s[0] as usize];
        let b = compute_gae(&batch(&[1.0, 2.0], 2), v, 0.5, 0.5).unwrap();
        assert_eq!(b.advantages, vec![1.0, 0.0]);
        assert_eq!(b.rewards_to_go, vec![2.0, 2.0]);
        assert_eq!(b.values, vec![1.0, 2.0]);
    }

    #[test]
    fn batch_must_end_on_episode_boundary() {
        let mut trs = batch(&[1.0, 2.0, 3.0, 4.0], 2).transitions;
        trs.pop();
        assert!(RolloutBatch::new(trs.clone(), 2).is_err());
        trs[0].done = true;
        assert!(RolloutBatch::new(trs[..2].to_vec(), 2).is_err());
    }

    #[test]
    fn normalization_examples() {
        let buf = |a: Vec<f64>| AdvantageBuffer {
            rewards_to_go: vec![7.0; a.len()],
            values: vec![3.0; a.len()],
            advantages: a,
        };
        assert_eq!(normalize_advantages(buf(vec![1.0, -1.0])).unwrap().advantages, vec![1.0, -1.0]);
        assert_eq!(normalize_advantages(buf(vec![2.5, 2.5])).unwrap().advantages, vec![0.0, 0.0]);
        assert!(normalize_advantages(buf(vec![1.0])).is_err());

        let a: Vec<f64> = (0..100).map(|i| ((i * 37 % 101) as f64).sin() * 4.0 + 1.5).collect();
        let out = normalize_advantages(buf(a)).unwrap();
        let mean = out.advantages.iter().sum::<f64>() / 100.0;
        let std = (out.advantages.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 100.0).sqrt();
        assert!(mean.abs() < 1e-12);
        assert_relative_eq!(std, 1.0, epsilon = 1e-9);
        assert_eq!(out.rewards_to_go, vec![7.0; 100]);
        assert_eq!(out.values, vec![3.0; 100]);
    }

    #[test]
    fn episode_returns_per_episode() {
        assert_eq!(batch(&[1.0, 2.0, 3.0, 4.0], 2).episode_returns(), vec![3.0, 7.0]);
    }
}
