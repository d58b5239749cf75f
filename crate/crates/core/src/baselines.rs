//! Reference power allocators.

use alloc::vec::Vec;

use rand::Rng;

use crate::env::sum_rate;
use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WmmseConfig {
    pub max_iters: usize,
    /// Stop once the sum rate changes by less than this between iterations.
    pub convergence_tol: f64,
}

impl Default for WmmseConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            convergence_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WmmseSolution {
    pub powers: Vec<f64>,
    pub iterations: usize,
    /// Sum rate after each iteration.
    pub sum_rate_trace: Vec<f64>,
}

impl WmmseSolution {
    pub fn sum_rate(&self) -> f64 {
        self.sum_rate_trace.last().copied().unwrap_or(0.0)
    }
}

/// Scalar WMMSE for the SISO interference channel. `gains[j][k]` is the
/// gain from transmitter `j` to receiver `k`.
///
/// Starting from full power, each iteration updates the receive
/// coefficients `u`, the MSE weights `w` and the transmit amplitudes `v`:
///
/// ```text
/// u_k = √h_kk v_k / (σ² + Σ_j h_jk v_j²)
/// w_k = 1 / (1 − u_k √h_kk v_k)
/// v_k = clamp(w_k u_k √h_kk / Σ_j w_j u_j² h_kj, 0, √p_max_k)
/// ```
pub fn wmmse(gains: &Matrix, noise_w: f64, p_max: &[f64], cfg: &WmmseConfig) -> Result<WmmseSolution> {
    let k = p_max.len();
    if gains.rows() != k || gains.cols() != k {
        return Err(Error::LengthMismatch {
            what: "gain matrix",
            expected: k,
            found: gains.rows(),
        });
    }
    let v_max: Vec<f64> = p_max.iter().map(|&p| math::sqrt(p)).collect();
    let direct: Vec<f64> = (0..k).map(|i| math::sqrt(gains.get(i, i))).collect();
    let mut v = v_max.clone();
    let mut u = alloc::vec![0.0; k];
    let mut w = alloc::vec![0.0; k];
    let mut powers: Vec<f64> = p_max.to_vec();
    let mut last = sum_rate(gains, &powers, noise_w);
    let mut trace = Vec::new();
    let mut iterations = 0;

    while iterations < cfg.max_iters {
        iterations += 1;
        for rx in 0..k {
            let received: f64 = (0..k).map(|tx| gains.get(tx, rx) * v[tx] * v[tx]).sum();
            u[rx] = direct[rx] * v[rx] / (noise_w + received);
            w[rx] = 1.0 / (1.0 - u[rx] * direct[rx] * v[rx]);
        }
        for tx in 0..k {
            let leakage: f64 = (0..k).map(|rx| w[rx] * u[rx] * u[rx] * gains.get(tx, rx)).sum();
            v[tx] = if leakage < 1e-30 {
                v_max[tx]
            } else {
                (w[tx] * u[tx] * direct[tx] / leakage).clamp(0.0, v_max[tx])
            };
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("wmmse iterate"));
        }
        powers = v.iter().zip(p_max).map(|(x, &cap)| (x * x).min(cap)).collect();
        let rate = sum_rate(gains, &powers, noise_w);
        trace.push(rate);
        let converged = (rate - last).abs() < cfg.convergence_tol;
        last = rate;
        if converged {
            break;
        }
    }
    Ok(WmmseSolution {
        powers,
        iterations,
        sum_rate_trace: trace,
    })
}

/// Independent `Uniform(0, p_max_k)` powers.
pub fn random_power<R: Rng + ?Sized>(rng: &mut R, p_max: &[f64]) -> Vec<f64> {
    p_max.iter().map(|&p| p * rng.random::<f64>()).collect()
}

pub fn max_power(p_max: &[f64]) -> Vec<f64> {
    p_max.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_user_uses_full_power() {
        let h = Matrix::from_rows(&[[0.02]]).unwrap();
        let sol = wmmse(&h, 1e-3, &[1.0], &WmmseConfig::default()).unwrap();
        assert!((sol.powers[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weak_interference_keeps_both_users_near_full_power() {
        let h = Matrix::from_rows(&[[1.0, 1e-6], [1e-6, 1.0]]).unwrap();
        let sol = wmmse(&h, 1e-3, &[1.0, 1.0], &WmmseConfig::default()).unwrap();
        assert!(sol.powers.iter().all(|&p| p > 0.99));
    }

    #[test]
    fn max_power_examples() {
        assert_eq!(max_power(&[1.0; 3]), [1.0, 1.0, 1.0]);
        assert_eq!(max_power(&[0.5, 2.0]), max_power(&[0.5, 2.0]));
        let h = Matrix::from_rows(&[[1.0, 0.3], [0.2, 0.5]]).unwrap();
        assert!(sum_rate(&h, &max_power(&[1.0, 1.0]), 1e-2) >= sum_rate(&h, &[0.0, 0.0], 1e-2));
    }

    #[test]
    fn random_power_is_seeded_and_feasible() {
        let p = [1.0, 0.5, 2.0];
        let a = random_power(&mut ChaCha8Rng::seed_from_u64(1), &p);
        let b = random_power(&mut ChaCha8Rng::seed_from_u64(1), &p);
        assert_eq!(a, b);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let x = random_power(&mut rng, &p);
            assert!(x.iter().zip(&p).all(|(v, m)| (0.0..=*m).contains(v)));
        }
    }

    #[test]
    fn mismatched_gain_matrix_is_rejected() {
        let h = Matrix::from_rows(&[[1.0, 0.1], [0.1, 1.0]]).unwrap();
        assert!(wmmse(&h, 1e-3, &[1.0], &WmmseConfig::default()).is_err());
    }
}
