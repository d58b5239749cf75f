//! Diagonal-Gaussian policies over continuous actions.
//!
//! A [`PolicySnapshot`] maps a state to a [`DiagGaussian`]. The mean always
//! comes from the network; the log standard deviation comes either from a
//! state-independent block appended to the parameter vector
//! ([`LogStdMode::SharedVector`]) or from a second output head
//! ([`LogStdMode::Head`]). Log standard deviations are clamped to
//! [`LOG_STD_MIN`, `LOG_STD_MAX`]; clamped coordinates carry no gradient.
//!
//! The faded-experience behavior policy is a fixed-weight mixture of the
//! current snapshot (weight `w0`) and `M` memorized snapshots.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::linalg::Matrix;
use crate::math::{self, LN_2PI};
use crate::mlp::{self, Activation, ForwardTrace, MlpArchitecture, ParamVector};
use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    log_std: Vec<f64>,
}

impl DiagGaussian {
    /// `log_std` is clamped into the supported range.
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::LengthMismatch {
                what: "log_std",
                expected: mean.len(),
                found: log_std.len(),
            });
        }
        if mean.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters"));
        }
        let log_std = log_std.into_iter().map(clamp_log_std).collect();
        Ok(Self { mean, log_std })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_prob(&self, action: &[f64]) -> f64 {
        log_prob_parts(&self.mean, &self.log_std, action)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.log_std)
            .map(|(&mu, &ls)| {
                let eps: f64 = StandardNormal.sample(rng);
                mu + math::exp(ls) * eps
            })
            .collect()
    }
}

#[inline]
fn clamp_log_std(v: f64) -> f64 {
    v.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

#[inline]
fn log_std_is_live(raw: f64) -> bool {
    (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw)
}

fn log_prob_parts(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    debug_assert_eq!(mean.len(), action.len());
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((&mu, &ls), &a)| {
            let z = a - mu;
            -ls - 0.5 * LN_2PI - z * z / (2.0 * math::exp(2.0 * ls))
        })
        .sum()
}

/// Closed-form `KL(p || q)` between diagonal Gaussians.
///
/// Per coordinate this is `½(e^d − 1 − d) + (μp − μq)² / (2σq²)` with
/// `d = 2(log σp − log σq)`, which equals
/// `log(σq/σp) + (σp² + (μp − μq)²)/(2σq²) − ½` but stays non-negative in
/// floating point.
pub fn kl_diag_gauss(p: &DiagGaussian, q: &DiagGaussian) -> f64 {
    debug_assert_eq!(p.dim(), q.dim());
    kl_parts(&p.mean, &p.log_std, &q.mean, &q.log_std)
}

fn kl_parts(mp: &[f64], lp: &[f64], mq: &[f64], lq: &[f64]) -> f64 {
    let mut kl = 0.0;
    for i in 0..mp.len() {
        let d = 2.0 * (lp[i] - lq[i]);
        let dm = mp[i] - mq[i];
        kl += 0.5 * (math::expm1(d) - d) + dm * dm / (2.0 * math::exp(2.0 * lq[i]));
    }
    kl
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogStdMode {
    SharedVector,
    Head,
}

/// One frozen policy: network architecture, log-std mode and parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    arch: MlpArchitecture,
    mode: LogStdMode,
    params: ParamVector,
}

impl PolicySnapshot {
    pub fn new(arch: MlpArchitecture, mode: LogStdMode, params: ParamVector) -> Result<Self> {
        let expected = match mode {
            LogStdMode::SharedVector => {
                if arch.head_split().is_some() {
                    return Err(Error::InvalidArchitecture(
                        "shared log-std policies have a single output head".into(),
                    ));
                }
                arch.param_count() + arch.output_dim()
            }
            LogStdMode::Head => {
                let b = arch.output_dim() / 2;
                if arch.head_split() != Some((b, b)) || !arch.output_dim().is_multiple_of(2) {
                    return Err(Error::InvalidArchitecture(format!(
                        "log-std head policies need an equal head split, got {:?}",
                        arch.head_split()
                    )));
                }
                arch.param_count()
            }
        };
        if params.len() != expected {
            return Err(Error::LengthMismatch {
                what: "policy parameters",
                expected,
                found: params.len(),
            });
        }
        if !params.is_finite() {
            return Err(Error::NonFinite("policy parameters"));
        }
        Ok(Self { arch, mode, params })
    }

    /// The network `[obs_dim, hidden..., action_dim]`, with the output doubled
    /// and split into mean and log-std heads in [`LogStdMode::Head`].
    pub fn architecture(obs_dim: usize, hidden: &[usize], action_dim: usize, mode: LogStdMode) -> Result<MlpArchitecture> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim);
        dims.extend_from_slice(hidden);
        match mode {
            LogStdMode::SharedVector => {
                dims.push(action_dim);
                MlpArchitecture::new(dims, Activation::Tanh, None)
            }
            LogStdMode::Head => {
                dims.push(2 * action_dim);
                MlpArchitecture::new(dims, Activation::Tanh, Some((action_dim, action_dim)))
            }
        }
    }

    /// Builds [`architecture`](Self::architecture) and initializes it. The
    /// log-std block (or the log-std head's bias) starts at `init_log_std`.
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        hidden: &[usize],
        action_dim: usize,
        mode: LogStdMode,
        init_log_std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let arch = Self::architecture(obs_dim, hidden, action_dim, mode)?;
        let params = match mode {
            LogStdMode::SharedVector => mlp::init_params_with_tail(&arch, action_dim, init_log_std, rng),
            LogStdMode::Head => {
                let mut params = mlp::init_params(&arch, rng);
                let n = params.len();
                for v in &mut params[n - action_dim..] {
                    *v = init_log_std;
                }
                params
            }
        };
        Self::new(arch, mode, params)
    }

    /// Hidden widths of the network.
    pub fn hidden(&self) -> &[usize] {
        let dims = self.arch.layer_dims();
        &dims[1..dims.len() - 1]
    }

    pub fn arch(&self) -> &MlpArchitecture {
        &self.arch
    }

    pub fn mode(&self) -> LogStdMode {
        self.mode
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn obs_dim(&self) -> usize {
        self.arch.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        match self.mode {
            LogStdMode::SharedVector => self.arch.output_dim(),
            LogStdMode::Head => self.arch.output_dim() / 2,
        }
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture and mode with different parameters.
    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        Self::new(self.arch.clone(), self.mode, params)
    }

    fn net_params(&self) -> &[f64] {
        &self.params[..self.arch.param_count()]
    }

    fn shared_log_std(&self) -> &[f64] {
        &self.params[self.arch.param_count()..]
    }

    pub fn distribution(&self, state: &[f64]) -> Result<DiagGaussian> {
        let batch = self.batch(&Matrix::row_vector(state))?;
        Ok(batch.get(0))
    }

    /// Distributions for every row of `states`, keeping the forward trace.
    pub fn batch(&self, states: &Matrix) -> Result<BatchDistribution> {
        let trace = mlp::forward_trace(&self.arch, self.net_params(), states)?;
        let n = states.rows();
        let b = self.action_dim();
        let out = trace.output();
        let mut mean = Matrix::zeros(n, b);
        let mut log_std = Matrix::zeros(n, b);
        let mut live = vec![true; n * b];
        for i in 0..n {
            let row = out.row(i);
            mean.row_mut(i).copy_from_slice(&row[..b]);
            let raw = match self.mode {
                LogStdMode::SharedVector => self.shared_log_std(),
                LogStdMode::Head => &row[b..],
            };
            for j in 0..b {
                log_std.set(i, j, clamp_log_std(raw[j]));
                live[i * b + j] = log_std_is_live(raw[j]);
            }
        }
        if mean.as_slice().iter().any(|v| !v.is_finite()) || log_std.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("policy output"));
        }
        Ok(BatchDistribution {
            trace,
            mean,
            log_std,
            live,
        })
    }

    pub fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        check_action(self, action)?;
        Ok(self.distribution(state)?.log_prob(action))
    }

    /// Adds `Σ_t coefs[t] · ∇θ log π(actions[t] | states[t])` into `grad`.
    pub fn accumulate_score(
        &self,
        batch: &BatchDistribution,
        actions: &Matrix,
        coefs: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        let n = batch.len();
        let b = self.action_dim();
        if actions.rows() != n || actions.cols() != b || coefs.len() != n {
            return Err(Error::LengthMismatch {
                what: "score actions/coefficients",
                expected: n,
                found: actions.rows().min(coefs.len()),
            });
        }
        if grad.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "score gradient",
                expected: self.param_count(),
                found: grad.len(),
            });
        }
        let mut cot = Matrix::zeros(n, self.arch.output_dim());
        let net_len = self.arch.param_count();
        let (net_grad, tail_grad) = grad.split_at_mut(net_len);
        for (i, &c) in coefs.iter().enumerate() {
            let (mu, ls, a) = (batch.mean.row(i), batch.log_std.row(i), actions.row(i));
            for j in 0..b {
                let inv_var = 1.0 / math::exp(2.0 * ls[j]);
                let z = a[j] - mu[j];
                let d_mean = z * inv_var;
                let d_log_std = if batch.live[i * b + j] {
                    z * z * inv_var - 1.0
                } else {
                    0.0
                };
                cot.set(i, j, c * d_mean);
                match self.mode {
                    LogStdMode::SharedVector => tail_grad[j] += c * d_log_std,
                    LogStdMode::Head => cot.set(i, b + j, c * d_log_std),
                }
            }
        }
        mlp::backward_into(&self.arch, self.net_params(), &batch.trace, &cot, net_grad)
    }

    /// `∇θ log π(action | state)`.
    pub fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> Result<ParamVector> {
        check_action(self, action)?;
        let batch = self.batch(&Matrix::row_vector(state))?;
        let mut grad = ParamVector::zeros(self.param_count());
        self.accumulate_score(&batch, &Matrix::row_vector(action), &[1.0], &mut grad)?;
        Ok(grad)
    }

    /// Fisher operator of the mean KL over `states`, evaluated at this policy.
    pub fn fisher(&self, states: &Matrix) -> Result<FisherOperator<'_>> {
        let batch = self.batch(states)?;
        Ok(FisherOperator {
            policy: self,
            batch,
        })
    }
}

fn check_action(policy: &PolicySnapshot, action: &[f64]) -> Result<()> {
    if action.len() != policy.action_dim() {
        return Err(Error::LengthMismatch {
            what: "action",
            expected: policy.action_dim(),
            found: action.len(),
        });
    }
    Ok(())
}

/// Distributions for a batch of states plus the trace needed to
/// differentiate them.
#[derive(Debug, Clone)]
pub struct BatchDistribution {
    trace: ForwardTrace,
    mean: Matrix,
    log_std: Matrix,
    live: Vec<bool>,
}

impl BatchDistribution {
    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mean(&self) -> &Matrix {
        &self.mean
    }

    pub fn log_std(&self) -> &Matrix {
        &self.log_std
    }

    pub fn get(&self, i: usize) -> DiagGaussian {
        DiagGaussian {
            mean: self.mean.row(i).to_vec(),
            log_std: self.log_std.row(i).to_vec(),
        }
    }

    pub fn log_probs(&self, actions: &Matrix) -> Vec<f64> {
        (0..self.len())
            .map(|i| log_prob_parts(self.mean.row(i), self.log_std.row(i), actions.row(i)))
            .collect()
    }

    /// Row-wise `KL(self_i || other_i)`.
    pub fn kl_to(&self, other: &BatchDistribution) -> Vec<f64> {
        (0..self.len())
            .map(|i| {
                kl_parts(
                    self.mean.row(i),
                    self.log_std.row(i),
                    other.mean.row(i),
                    other.log_std.row(i),
                )
            })
            .collect()
    }
}

/// Matrix-free `F̂ x + damping·x`, where `F̂ = (1/N) Σ_s Jsᵀ G(s) Js`.
///
/// `Js` is the Jacobian of `(μ(s), log σ(s))` with respect to the policy
/// parameters and `G(s)` the Gaussian Fisher in those coordinates:
/// `1/σ²` on mean coordinates and `2` on log-std coordinates.
pub struct FisherOperator<'a> {
    policy: &'a PolicySnapshot,
    batch: BatchDistribution,
}

impl FisherOperator<'_> {
    pub fn dim(&self) -> usize {
        self.policy.param_count()
    }

    pub fn apply(&self, x: &[f64], damping: f64) -> Result<ParamVector> {
        let policy = self.policy;
        if x.len() != policy.param_count() {
            return Err(Error::LengthMismatch {
                what: "fisher direction",
                expected: policy.param_count(),
                found: x.len(),
            });
        }
        let arch = &policy.arch;
        let net_len = arch.param_count();
        let n = self.batch.len();
        let b = policy.action_dim();
        let (x_net, x_tail) = x.split_at(net_len);
        let dout = mlp::jvp_with_trace(arch, policy.net_params(), &self.batch.trace, x_net)?;

        let scale = 1.0 / n.max(1) as f64;
        let mut cot = Matrix::zeros(n, arch.output_dim());
        let mut out = ParamVector::zeros(policy.param_count());
        for i in 0..n {
            let ls = self.batch.log_std.row(i);
            for j in 0..b {
                let inv_var = 1.0 / math::exp(2.0 * ls[j]);
                cot.set(i, j, scale * inv_var * dout.get(i, j));
                let live = self.batch.live[i * b + j];
                match policy.mode {
                    LogStdMode::SharedVector => {
                        if live {
                            out[net_len + j] += scale * 2.0 * x_tail[j];
                        }
                    }
                    LogStdMode::Head => {
                        let d = if live { dout.get(i, b + j) } else { 0.0 };
                        cot.set(i, b + j, if live { scale * 2.0 * d } else { 0.0 });
                    }
                }
            }
        }
        mlp::backward_into(arch, policy.net_params(), &self.batch.trace, &cot, &mut out[..net_len])?;
        if damping != 0.0 {
            crate::linalg::axpy(damping, x, &mut out);
        }
        Ok(out)
    }
}

/// `F̂ x + damping·x` at `current` over `states`.
pub fn fisher_vector_product(
    current: &PolicySnapshot,
    states: &Matrix,
    x: &[f64],
    damping: f64,
) -> Result<ParamVector> {
    current.fisher(states)?.apply(x, damping)
}

/// Fixed behavior weights `w0..wM` of the faded-experience mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    decay: f64,
    weights: Vec<f64>,
}

impl MixtureSpec {
    /// Validates `w0 ∈ (0, 1]`, `wm ∈ [0, 1]`, `w0 ≥ wm` and `Σ w = 1`.
    pub fn from_weights(weights: Vec<f64>, decay: f64) -> Result<Self> {
        let Some(&w0) = weights.first() else {
            return Err(Error::InvalidConfig("mixture needs at least one weight".into()));
        };
        let sum: f64 = weights.iter().sum();
        if !(w0 > 0.0 && w0 <= 1.0)
            || weights.iter().any(|&w| !(0.0..=1.0).contains(&w) || w > w0)
            || (sum - 1.0).abs() > 1e-12
        {
            return Err(Error::InvalidConfig(format!("invalid mixture weights {weights:?}")));
        }
        Ok(Self { decay, weights })
    }

    /// The degenerate single-component mixture.
    pub fn current_only() -> Self {
        Self {
            decay: 1.0,
            weights: vec![1.0],
        }
    }

    pub fn memory_size(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn current_weight(&self) -> f64 {
        self.weights[0]
    }
}

/// Weights proportional to `1/(i+1)^z` for `i = 0..=M`.
pub fn mixture_weights(memory_size: usize, decay: f64) -> Result<MixtureSpec> {
    if !(decay.is_finite() && decay > 0.0) {
        return Err(Error::InvalidConfig(format!("decay exponent must be positive, got {decay}")));
    }
    let raw: Vec<f64> = (0..=memory_size)
        .map(|i| 1.0 / math::pow((i + 1) as f64, decay))
        .collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.into_iter().map(|w| w / total).collect();
    MixtureSpec::from_weights(weights, decay)
}

fn check_memory(memory: &[PolicySnapshot], spec: &MixtureSpec) -> Result<()> {
    if memory.len() != spec.memory_size() {
        return Err(Error::LengthMismatch {
            what: "experience memory",
            expected: spec.memory_size(),
            found: memory.len(),
        });
    }
    Ok(())
}

/// `log Σ_m w_m exp(lp_m)`, stable.
fn log_mix(weights: &[f64], log_probs: impl Iterator<Item = f64>) -> f64 {
    let terms: Vec<f64> = weights
        .iter()
        .zip(log_probs)
        .map(|(w, lp)| math::log(*w) + lp)
        .collect();
    let max = terms.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = terms.iter().map(|&t| math::exp(t - max)).sum();
    max + math::log(s)
}

/// `log π̃(a|s)` for the mixture of `current` and `memory`.
pub fn mixture_log_density(
    current: &PolicySnapshot,
    memory: &[PolicySnapshot],
    spec: &MixtureSpec,
    state: &[f64],
    action: &[f64],
) -> Result<f64> {
    check_memory(memory, spec)?;
    let mut lps = Vec::with_capacity(memory.len() + 1);
    for p in core::iter::once(current).chain(memory) {
        lps.push(p.log_prob(state, action)?);
    }
    Ok(log_mix(spec.weights(), lps.into_iter()))
}

/// `π̃(a|s) = w0 π_θ(a|s) + Σ_m w_m π_m(a|s)`.
pub fn mixture_density(
    current: &PolicySnapshot,
    memory: &[PolicySnapshot],
    spec: &MixtureSpec,
    state: &[f64],
    action: &[f64],
) -> Result<f64> {
    mixture_log_density(current, memory, spec, state, action).map(math::exp)
}

/// Mixture log densities for every `(states[t], actions[t])`.
pub fn mixture_log_density_batch(
    current: &PolicySnapshot,
    memory: &[PolicySnapshot],
    spec: &MixtureSpec,
    states: &Matrix,
    actions: &Matrix,
) -> Result<Vec<f64>> {
    check_memory(memory, spec)?;
    let mut per_component = Vec::with_capacity(memory.len() + 1);
    for p in core::iter::once(current).chain(memory) {
        per_component.push(p.batch(states)?.log_probs(actions));
    }
    Ok((0..states.rows())
        .map(|t| log_mix(spec.weights(), per_component.iter().map(|lp| lp[t])))
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSample {
    pub raw_action: Vec<f64>,
    pub clipped_action: Vec<f64>,
    pub component: usize,
}

/// Draws a component with probability `w_m`, then an action from it.
///
/// With an empty memory no component draw is made, so the random stream is
/// consumed exactly as when sampling the current policy alone.
#[allow(clippy::too_many_arguments)]
pub fn mixture_sample<R: Rng + ?Sized>(
    current: &PolicySnapshot,
    memory: &[PolicySnapshot],
    spec: &MixtureSpec,
    state: &[f64],
    action_low: &[f64],
    action_high: &[f64],
    rng: &mut R,
) -> Result<MixtureSample> {
    check_memory(memory, spec)?;
    let component = if memory.is_empty() {
        0
    } else {
        sample_component(spec.weights(), rng)
    };
    let policy = if component == 0 {
        current
    } else {
        &memory[component - 1]
    };
    let raw_action = policy.distribution(state)?.sample(rng);
    let clipped_action = clip_action(&raw_action, action_low, action_high);
    Ok(MixtureSample {
        raw_action,
        clipped_action,
        component,
    })
}

fn sample_component<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (m, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return m;
        }
    }
    // rounding left u above the cumulative sum
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

pub fn clip_action(raw: &[f64], low: &[f64], high: &[f64]) -> Vec<f64> {
    raw.iter()
        .zip(low.iter().zip(high))
        .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
        .collect()
}

/// `∇θ log π̃(a|s)` where only the current component depends on θ:
/// `w0 · π_θ(a|s)/π̃(a|s) · ∇θ log π_θ(a|s)`.
pub fn grad_log_mixture(
    current: &PolicySnapshot,
    memory: &[PolicySnapshot],
    spec: &MixtureSpec,
    state: &[f64],
    action: &[f64],
) -> Result<ParamVector> {
    let log_mixture = mixture_log_density(current, memory, spec, state, action)?;
    let log_current = current.log_prob(state, action)?;
    let coef = spec.current_weight() * math::exp(log_current - log_mixture);
    let batch = current.batch(&Matrix::row_vector(state))?;
    let mut grad = ParamVector::zeros(current.param_count());
    current.accumulate_score(&batch, &Matrix::row_vector(action), &[coef], &mut grad)?;
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gauss(mean: &[f64], log_std: &[f64]) -> DiagGaussian {
        DiagGaussian::new(mean.to_vec(), log_std.to_vec()).unwrap()
    }

    fn small_policy(mode: LogStdMode, seed: u64) -> PolicySnapshot {
        PolicySnapshot::init(3, &[5], 2, mode, -0.3, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn zero_network_gives_standard_normal() {
        let arch = MlpArchitecture::tanh(vec![3, 4, 2]).unwrap();
        let p = PolicySnapshot::new(arch.clone(), LogStdMode::SharedVector, ParamVector::zeros(arch.param_count() + 2))
            .unwrap();
        let d = p.distribution(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(d.mean(), &[0.0, 0.0]);
        assert_eq!(d.log_std(), &[0.0, 0.0]);
        assert_eq!(d, p.distribution(&[0.5, -1.0, 2.0]).unwrap());
    }

    #[test]
    fn constant_log_std_head() {
        let mut p = small_policy(LogStdMode::Head, 2);
        let arch = p.arch().clone();
        let n = p.params.len();
        let (din, dout) = (5, 4);
        // Zero the log-std head columns of the last weight block, bias -1.
        let w_start = n - dout - din * dout;
        for i in 0..din {
            for j in 2..4 {
                p.params[w_start + i * dout + j] = 0.0;
            }
        }
        p.params[n - 2] = -1.0;
        p.params[n - 1] = -1.0;
        assert_eq!(arch.head_split(), Some((2, 2)));
        for s in [[0.0, 0.0, 0.0], [1.0, -2.0, 3.0]] {
            assert_eq!(p.distribution(&s).unwrap().log_std(), &[-1.0, -1.0]);
        }
    }

    #[test]
    fn snapshot_validation() {
        let arch = MlpArchitecture::tanh(vec![3, 2]).unwrap();
        assert!(PolicySnapshot::new(arch.clone(), LogStdMode::SharedVector, ParamVector::zeros(8)).is_err());
        assert!(PolicySnapshot::new(arch.clone(), LogStdMode::Head, ParamVector::zeros(8)).is_err());
        let split = MlpArchitecture::new(vec![3, 2], Activation::Tanh, Some((1, 1))).unwrap();
        assert!(PolicySnapshot::new(split.clone(), LogStdMode::SharedVector, ParamVector::zeros(10)).is_err());
        assert!(PolicySnapshot::new(split, LogStdMode::Head, ParamVector::zeros(8)).is_ok());
    }

    #[test]
    fn log_prob_closed_form_values() {
        assert_relative_eq!(gauss(&[0.0], &[0.0]).log_prob(&[0.0]), -0.918_938_533_204_672_7, epsilon = 1e-15);
        assert_relative_eq!(gauss(&[0.0], &[0.0]).log_prob(&[1.0]), -1.418_938_533_204_672_7, epsilon = 1e-15);
        let d = gauss(&[0.3, -1.0], &[0.5, -0.25]);
        assert_relative_eq!(d.log_prob(&[0.3, -1.0]), -(0.5 - 0.25) - LN_2PI, epsilon = 1e-15);
    }

    #[test]
    fn log_std_is_clamped() {
        let d = gauss(&[0.0, 0.0], &[-50.0, 7.0]);
        assert_eq!(d.log_std(), &[LOG_STD_MIN, LOG_STD_MAX]);
    }

    #[test]
    fn kl_closed_form_values() {
        let p = gauss(&[0.3, 2.0], &[0.1, -0.7]);
        assert_eq!(kl_diag_gauss(&p, &p), 0.0);
        assert_relative_eq!(kl_diag_gauss(&gauss(&[0.0], &[0.0]), &gauss(&[1.0], &[0.0])), 0.5, epsilon = 1e-15);
        let two = core::f64::consts::LN_2;
        assert_relative_eq!(
            kl_diag_gauss(&gauss(&[0.0], &[0.0]), &gauss(&[0.0], &[two])),
            two + 0.125 - 0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn mixture_weight_examples() {
        assert_eq!(mixture_weights(0, 2.5).unwrap().weights(), &[1.0]);
        let w = mixture_weights(2, 1.0).unwrap();
        for (a, b) in w.weights().iter().zip([6.0 / 11.0, 3.0 / 11.0, 2.0 / 11.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        let w = mixture_weights(1, 3.0).unwrap();
        assert_relative_eq!(w.weights()[0], 8.0 / 9.0, epsilon = 1e-15);
        assert_relative_eq!(w.weights()[1], 1.0 / 9.0, epsilon = 1e-15);
        assert!(mixture_weights(2, 0.0).is_err());
    }

    #[test]
    fn weight_set_is_enforced() {
        assert!(MixtureSpec::from_weights(vec![0.4, 0.6], 1.0).is_err());
        assert!(MixtureSpec::from_weights(vec![0.5, 0.4], 1.0).is_err());
        assert!(MixtureSpec::from_weights(vec![], 1.0).is_err());
        assert!(MixtureSpec::from_weights(vec![0.5, 0.5], 1.0).is_ok());
    }

    #[test]
    fn degenerate_mixtures_equal_current_policy() {
        let cur = small_policy(LogStdMode::SharedVector, 4);
        let s = [0.2, -0.4, 1.0];
        let a = [0.5, 0.1];
        let lp = cur.log_prob(&s, &a).unwrap();
        let m0 = mixture_log_density(&cur, &[], &MixtureSpec::current_only(), &s, &a).unwrap();
        assert_eq!(m0.to_bits(), lp.to_bits());
        let spec = mixture_weights(3, 1.0).unwrap();
        let mem = vec![cur.clone(); 3];
        assert_relative_eq!(mixture_log_density(&cur, &mem, &spec, &s, &a).unwrap(), lp, epsilon = 1e-14);
        assert!(mixture_log_density(&cur, &mem[..2], &spec, &s, &a).is_err());
    }

    #[test]
    fn two_component_density_by_hand() {
        let cur = small_policy(LogStdMode::SharedVector, 5);
        let old = small_policy(LogStdMode::SharedVector, 6);
        let spec = MixtureSpec::from_weights(vec![2.0 / 3.0, 1.0 / 3.0], 1.0).unwrap();
        let s = [0.3, 0.3, -0.9];
        let a = [0.1, -0.2];
        let want = 2.0 / 3.0 * cur.log_prob(&s, &a).unwrap().exp() + 1.0 / 3.0 * old.log_prob(&s, &a).unwrap().exp();
        let got = mixture_density(&cur, &[old], &spec, &s, &a).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-12);
    }

    #[test]
    fn empty_memory_always_picks_current() {
        let cur = small_policy(LogStdMode::SharedVector, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let s = mixture_sample(&cur, &[], &MixtureSpec::current_only(), &[0.0; 3], &[0.0; 2], &[1.0; 2], &mut rng)
                .unwrap();
            assert_eq!(s.component, 0);
            assert!(s.clipped_action.iter().all(|&a| (0.0..=1.0).contains(&a)));
        }
    }

    #[test]
    fn tiny_std_concentrates_on_mean() {
        let d = gauss(&[0.4, -0.2], &[-10.0, -10.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10_000 {
            let a = d.sample(&mut rng);
            assert!((a[0] - 0.4).abs() < 1e-3 && (a[1] + 0.2).abs() < 1e-3);
        }
    }

    #[test]
    fn score_of_empty_memory_is_plain_score() {
        for mode in [LogStdMode::SharedVector, LogStdMode::Head] {
            let cur = small_policy(mode, 8);
            let s = [0.7, -0.1, 0.2];
            let a = [0.9, -1.3];
            let plain = cur.grad_log_prob(&s, &a).unwrap();
            let mixed = grad_log_mixture(&cur, &[], &MixtureSpec::current_only(), &s, &a).unwrap();
            assert!(plain.iter().zip(mixed.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));

            let spec = mixture_weights(2, 1.0).unwrap();
            let copies = vec![cur.clone(); 2];
            let scaled = grad_log_mixture(&cur, &copies, &spec, &s, &a).unwrap();
            for (x, y) in scaled.iter().zip(plain.iter()) {
                assert_relative_eq!(*x, spec.current_weight() * y, epsilon = 1e-12, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn fisher_of_zero_direction_is_zero() {
        let cur = small_policy(LogStdMode::Head, 9);
        let states = Matrix::from_rows(&[[0.1, 0.2, 0.3], [1.0, 0.0, -1.0]]).unwrap();
        let fx = fisher_vector_product(&cur, &states, &vec![0.0; cur.param_count()], 0.0).unwrap();
        assert!(fx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fisher_damping_on_dead_mean_path() {
        // Zero output layer: the mean does not depend on the hidden weights.
        let arch = MlpArchitecture::tanh(vec![2, 3, 1]).unwrap();
        let mut params = ParamVector::zeros(arch.param_count() + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for v in params[..6].iter_mut() {
            *v = rng.random::<f64>() - 0.5;
        }
        let p = PolicySnapshot::new(arch, LogStdMode::SharedVector, params).unwrap();
        let x: Vec<f64> = (0..p.param_count()).map(|i| 0.1 * i as f64 + 0.3).collect();
        let fx = fisher_vector_product(&p, &Matrix::row_vector(&[0.4, -0.8]), &x, 0.25).unwrap();
        for i in 0..9 {
            assert_relative_eq!(fx[i], 0.25 * x[i], epsilon = 1e-15);
        }
    }
}
