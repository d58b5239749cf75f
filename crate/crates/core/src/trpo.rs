//! Trust-region policy updates with a faded-experience behavior policy.
//!
//! One [`Trainer::iterate`] call is one outer iteration:
//!
//! 1. collect `N` transitions by running the mixture of the current policy
//!    and the memorized snapshots,
//! 2. compute rewards-to-go and GAE advantages with the value network,
//! 3. estimate the policy gradient and solve `(F̂ + λI) x = ĝ` by conjugate
//!    gradient,
//! 4. backtrack along `x` until the exact surrogate improves and the exact
//!    mean KL stays within `δ_KL`,
//! 5. push the pre-update policy into the memory and refit the value
//!    network.
//!
//! [`Algorithm::Trpo`] runs the same loop without any mixture machinery; a
//! faded-experience run with `M = 0` reproduces it bit for bit.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::advantage::{compute_gae_from_values, normalize_advantages, AdvantageBuffer, RolloutBatch, Transition};
use crate::env::Environment;
use crate::linalg::{axpy, dot, norm, Matrix};
use crate::math;
use crate::mlp::{self, MlpArchitecture, ParamVector};
use crate::policy::{self, clip_action, mixture_weights, LogStdMode, MixtureSpec, PolicySnapshot};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    /// Plain TRPO: the behavior policy is the current policy.
    Trpo,
    /// Faded-experience TRPO with `memory_size` memorized policies.
    FadedExperience,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueFitConfig {
    pub epochs: usize,
    pub minibatch: usize,
    pub step_size: f64,
}

impl Default for ValueFitConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            minibatch: 64,
            step_size: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub algorithm: Algorithm,
    pub gamma: f64,
    pub lambda: f64,
    pub delta_kl: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
    pub memory_size: usize,
    pub decay: f64,
    pub batch_size: usize,
    pub episode_len: usize,
    pub iterations: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub cg_damping: f64,
    pub value_fit: ValueFitConfig,
    pub normalize_adv: bool,
    pub seed: u64,
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    pub log_std_mode: LogStdMode,
    pub init_log_std: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::FadedExperience,
            gamma: 0.99,
            lambda: 0.94,
            delta_kl: 0.05,
            backtrack_coeff: 0.8,
            max_backtracks: 10,
            memory_size: 0,
            decay: 1.0,
            batch_size: 2000,
            episode_len: 200,
            iterations: 50,
            cg_iters: 10,
            cg_tol: 1e-8,
            cg_damping: 0.1,
            value_fit: ValueFitConfig::default(),
            normalize_adv: true,
            seed: 0,
            policy_hidden: vec![400, 300],
            value_hidden: vec![400, 300],
            log_std_mode: LogStdMode::SharedVector,
            init_log_std: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if !(self.delta_kl > 0.0 && self.delta_kl.is_finite()) {
            return fail(format!("delta_kl must be positive, got {}", self.delta_kl));
        }
        if !(self.backtrack_coeff > 0.0 && self.backtrack_coeff < 1.0) {
            return fail(format!("backtrack_coeff must lie in (0, 1), got {}", self.backtrack_coeff));
        }
        if self.max_backtracks < 1 {
            return fail("max_backtracks must be at least 1".into());
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return fail(format!("gamma and lambda must lie in (0, 1], got {} and {}", self.gamma, self.lambda));
        }
        if self.episode_len == 0 || self.batch_size == 0 || !self.batch_size.is_multiple_of(self.episode_len) {
            return fail(format!(
                "batch_size ({}) must be a positive multiple of episode_len ({})",
                self.batch_size, self.episode_len
            ));
        }
        if self.cg_iters < 1 || !(self.cg_tol >= 0.0) || !(self.cg_damping >= 0.0) {
            return fail("cg_iters must be >= 1 and cg_tol, cg_damping non-negative".into());
        }
        if self.value_fit.epochs == 0 || self.value_fit.minibatch == 0 || !(self.value_fit.step_size > 0.0) {
            return fail("value fit epochs, minibatch and step size must be positive".into());
        }
        if self.algorithm == Algorithm::Trpo && self.memory_size != 0 {
            return fail("plain TRPO has no experience memory; set memory_size = 0".into());
        }
        if !(self.init_log_std.is_finite()) {
            return fail("init_log_std must be finite".into());
        }
        if self.policy_hidden.iter().chain(&self.value_hidden).any(|&h| h == 0) {
            return fail("hidden widths must be positive".into());
        }
        self.mixture_spec().map(|_| ())
    }

    pub fn mixture_spec(&self) -> Result<MixtureSpec> {
        match self.algorithm {
            Algorithm::Trpo => Ok(MixtureSpec::current_only()),
            Algorithm::FadedExperience => mixture_weights(self.memory_size, self.decay),
        }
    }

    pub fn value_arch(&self, obs_dim: usize) -> Result<MlpArchitecture> {
        let mut dims = vec![obs_dim];
        dims.extend_from_slice(&self.value_hidden);
        dims.push(1);
        MlpArchitecture::tanh(dims)
    }
}

/// The `M` memorized policies, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperienceMemory {
    slots: Vec<PolicySnapshot>,
}

impl ExperienceMemory {
    /// Every slot starts as `initial`.
    pub fn new(initial: &PolicySnapshot, size: usize) -> Self {
        Self {
            slots: vec![initial.clone(); size],
        }
    }

    pub fn from_slots(slots: Vec<PolicySnapshot>) -> Self {
        Self { slots }
    }

    pub fn slots(&self) -> &[PolicySnapshot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Slot 1 becomes `theta_k`, slot `m` takes old slot `m − 1`, the
    /// oldest is dropped.
    pub fn shift(&mut self, theta_k: &PolicySnapshot) {
        if self.slots.is_empty() {
            return;
        }
        self.slots.pop();
        self.slots.insert(0, theta_k.clone());
    }
}

pub fn shift_memory(mut memory: ExperienceMemory, theta_k: &PolicySnapshot) -> ExperienceMemory {
    memory.shift(theta_k);
    memory
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateReport {
    pub surrogate_before: f64,
    pub surrogate_after: f64,
    pub kl_after: f64,
    pub backtrack_steps_used: usize,
    pub accepted: bool,
    pub grad_norm: f64,
    pub cg_residual: f64,
    pub value_loss_before: f64,
    pub value_loss_after: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CgSolution {
    pub x: ParamVector,
    pub iterations: usize,
    /// `‖b − A x‖ / max(‖b‖, 1e-12)` from the residual recurrence.
    pub relative_residual: f64,
    /// Recurrence residual norm before the first and after every iteration.
    pub residual_norms: Vec<f64>,
}

/// Conjugate gradient for `A x = b` from `x = 0`, with `A` given as a
/// matrix-free symmetric positive-definite operator.
pub fn conjugate_gradient<F>(mut apply: F, b: &[f64], iters: usize, tol: f64) -> Result<CgSolution>
where
    F: FnMut(&[f64]) -> Result<ParamVector>,
{
    let n = b.len();
    let mut x = ParamVector::zeros(n);
    let mut r = b.to_vec();
    let mut p = b.to_vec();
    let mut rs = dot(&r, &r);
    if !rs.is_finite() {
        return Err(Error::NonFinite("conjugate gradient right-hand side"));
    }
    let b_norm = math::sqrt(rs);
    let denom = b_norm.max(1e-12);
    let mut residual_norms = vec![b_norm];
    let mut iterations = 0;
    while iterations < iters && math::sqrt(rs) / denom > tol {
        let ap = apply(&p)?;
        let p_ap = dot(&p, &ap);
        if !p_ap.is_finite() {
            return Err(Error::NonFinite("conjugate gradient curvature"));
        }
        if p_ap <= 0.0 {
            break;
        }
        let alpha = rs / p_ap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rs_new = dot(&r, &r);
        if !rs_new.is_finite() || !x.is_finite() {
            return Err(Error::NonFinite("conjugate gradient iterate"));
        }
        let beta = rs_new / rs;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rs = rs_new;
        iterations += 1;
        residual_norms.push(math::sqrt(rs));
    }
    Ok(CgSolution {
        x,
        iterations,
        relative_residual: math::sqrt(rs) / denom,
        residual_norms,
    })
}

/// Per-batch quantities shared by the gradient, surrogate and line search.
#[derive(Debug, Clone)]
pub struct SurrogateData {
    pub states: Matrix,
    pub raw_actions: Matrix,
    pub behavior_log_density: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl SurrogateData {
    pub fn new(batch: &RolloutBatch, buffer: &AdvantageBuffer) -> Result<Self> {
        if buffer.advantages.len() != batch.len() {
            return Err(Error::LengthMismatch {
                what: "advantages",
                expected: batch.len(),
                found: buffer.advantages.len(),
            });
        }
        Ok(Self {
            states: batch.states(),
            raw_actions: batch.raw_actions(),
            behavior_log_density: batch.behavior_log_densities(),
            advantages: buffer.advantages.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

/// `ĝ = (1/N) Σ_t ∇θ log π̃k(a_t|s_t) Â[t]`, where only the current
/// component of the mixture depends on θ.
pub fn estimate_policy_gradient(data: &SurrogateData, current: &PolicySnapshot, spec: &MixtureSpec) -> Result<ParamVector> {
    let batch = current.batch(&data.states)?;
    let log_probs = batch.log_probs(&data.raw_actions);
    let n = data.len() as f64;
    let w0 = spec.current_weight();
    let coefs: Vec<f64> = (0..data.len())
        .map(|t| data.advantages[t] / n * (w0 * math::exp(log_probs[t] - data.behavior_log_density[t])))
        .collect();
    let mut grad = ParamVector::zeros(current.param_count());
    current.accumulate_score(&batch, &data.raw_actions, &coefs, &mut grad)?;
    Ok(grad)
}

/// Plain on-policy `ĝ = (1/N) Σ_t ∇θ log πθ(a_t|s_t) Â[t]`.
pub fn estimate_policy_gradient_on_policy(data: &SurrogateData, current: &PolicySnapshot) -> Result<ParamVector> {
    let batch = current.batch(&data.states)?;
    let n = data.len() as f64;
    let coefs: Vec<f64> = data.advantages.iter().map(|a| a / n).collect();
    let mut grad = ParamVector::zeros(current.param_count());
    current.accumulate_score(&batch, &data.raw_actions, &coefs, &mut grad)?;
    Ok(grad)
}

fn surrogate_from_log_probs(log_probs: &[f64], data: &SurrogateData) -> f64 {
    let total: f64 = (0..data.len())
        .map(|t| math::exp(log_probs[t] - data.behavior_log_density[t]) * data.advantages[t])
        .sum();
    total / data.len() as f64
}

/// `(1/N) Σ_t πθ(a_t|s_t) / π̃k(a_t|s_t) · Â[t]`, the denominator being the
/// behavior density recorded at collection time.
pub fn surrogate_objective(theta: &PolicySnapshot, data: &SurrogateData) -> Result<f64> {
    let lp = theta.batch(&data.states)?.log_probs(&data.raw_actions);
    Ok(surrogate_from_log_probs(&lp, data))
}

/// Mean over `states` of `KL(π_{θk}(·|s) || π_θ(·|s))`.
pub fn mean_kl(theta_k: &PolicySnapshot, theta: &PolicySnapshot, states: &Matrix) -> Result<f64> {
    let old = theta_k.batch(states)?;
    let new = theta.batch(states)?;
    let kl = old.kl_to(&new);
    Ok(kl.iter().sum::<f64>() / kl.len().max(1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchConfig {
    pub delta_kl: f64,
    pub backtrack_coeff: f64,
    pub max_backtracks: usize,
}

impl From<&TrainConfig> for LineSearchConfig {
    fn from(cfg: &TrainConfig) -> Self {
        Self {
            delta_kl: cfg.delta_kl,
            backtrack_coeff: cfg.backtrack_coeff,
            max_backtracks: cfg.max_backtracks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LineSearchOutcome {
    pub params: Vec<f64>,
    pub accepted: bool,
    pub backtrack_steps_used: usize,
    pub surrogate_after: f64,
    pub kl_after: f64,
}

/// Tries `θk + α^j √(2δ / x̂ᵀF̂x̂) x̂` for `j = 0..=n_B` and keeps the first
/// candidate whose KL is within `δ` and whose surrogate strictly exceeds
/// `surrogate_before`. `evaluate` returns `(surrogate, kl)` or `None` when
/// the candidate cannot be evaluated.
pub fn backtracking_line_search<F>(
    theta_k: &[f64],
    x_hat: &[f64],
    x_f_x: f64,
    surrogate_before: f64,
    cfg: &LineSearchConfig,
    mut evaluate: F,
) -> LineSearchOutcome
where
    F: FnMut(&[f64]) -> Option<(f64, f64)>,
{
    let rejected = |steps| LineSearchOutcome {
        params: theta_k.to_vec(),
        accepted: false,
        backtrack_steps_used: steps,
        surrogate_after: surrogate_before,
        kl_after: 0.0,
    };
    if !(x_f_x > 0.0 && x_f_x.is_finite()) || x_hat.iter().all(|&v| v == 0.0) {
        return rejected(0);
    }
    let full_step = math::sqrt(2.0 * cfg.delta_kl / x_f_x);
    let mut fraction = 1.0;
    for j in 0..=cfg.max_backtracks {
        let mut candidate = theta_k.to_vec();
        axpy(fraction * full_step, x_hat, &mut candidate);
        if let Some((surrogate, kl)) = evaluate(&candidate) {
            if surrogate.is_finite() && kl.is_finite() && kl <= cfg.delta_kl && surrogate > surrogate_before {
                return LineSearchOutcome {
                    params: candidate,
                    accepted: true,
                    backtrack_steps_used: j,
                    surrogate_after: surrogate,
                    kl_after: kl,
                };
            }
        }
        fraction *= cfg.backtrack_coeff;
    }
    rejected(cfg.max_backtracks + 1)
}

/// Policy line search: measures the exact surrogate and exact mean KL of
/// every candidate on the batch.
pub fn line_search(
    theta_k: &PolicySnapshot,
    x_hat: &[f64],
    x_f_x: f64,
    data: &SurrogateData,
    cfg: &LineSearchConfig,
) -> Result<(PolicySnapshot, UpdateReport)> {
    let old = theta_k.batch(&data.states)?;
    let surrogate_before = surrogate_from_log_probs(&old.log_probs(&data.raw_actions), data);
    let n = data.len().max(1) as f64;
    let outcome = backtracking_line_search(theta_k.params(), x_hat, x_f_x, surrogate_before, cfg, |params| {
        let candidate = theta_k.with_params(ParamVector::from_vec(params.to_vec())).ok()?;
        let new = candidate.batch(&data.states).ok()?;
        let surrogate = surrogate_from_log_probs(&new.log_probs(&data.raw_actions), data);
        let kl = old.kl_to(&new).iter().sum::<f64>() / n;
        Some((surrogate, kl))
    });
    let report = UpdateReport {
        surrogate_before,
        surrogate_after: outcome.surrogate_after,
        kl_after: outcome.kl_after,
        backtrack_steps_used: outcome.backtrack_steps_used,
        accepted: outcome.accepted,
        ..UpdateReport::default()
    };
    let next = if outcome.accepted {
        theta_k.with_params(ParamVector::from_vec(outcome.params))?
    } else {
        theta_k.clone()
    };
    Ok((next, report))
}

pub fn value_predict(arch: &MlpArchitecture, phi: &[f64], states: &Matrix) -> Result<Vec<f64>> {
    Ok(mlp::forward(arch, phi, states)?.into_vec())
}

fn mse(arch: &MlpArchitecture, phi: &[f64], states: &Matrix, targets: &[f64]) -> Result<f64> {
    let pred = value_predict(arch, phi, states)?;
    let loss = pred.iter().zip(targets).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / targets.len().max(1) as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("value loss"));
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueFit {
    pub params: ParamVector,
    pub loss_before: f64,
    pub loss_after: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - libm::pow(Self::BETA1, self.t as f64);
        let c2 = 1.0 - libm::pow(Self::BETA2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (math::sqrt(v_hat) + Self::EPS);
        }
    }
}

/// Minibatch Adam on the mean-squared error to `targets`; returns the
/// iterate with the lowest full-batch loss seen (checked after every
/// epoch, the starting point included).
pub fn fit_value<R: Rng + ?Sized>(
    arch: &MlpArchitecture,
    phi: &ParamVector,
    states: &Matrix,
    targets: &[f64],
    cfg: &ValueFitConfig,
    rng: &mut R,
) -> Result<ValueFit> {
    let n = states.rows();
    if targets.len() != n {
        return Err(Error::LengthMismatch {
            what: "value targets",
            expected: n,
            found: targets.len(),
        });
    }
    let loss_before = mse(arch, phi, states, targets)?;
    let mut best = (loss_before, phi.clone());
    let mut current = phi.clone();
    let mut adam = Adam::new(phi.len(), cfg.step_size);
    let mut order: Vec<usize> = (0..n).collect();
    let mut grad = vec![0.0; phi.len()];
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let x = states.select_rows(chunk);
            let trace = mlp::forward_trace(arch, &current, &x)?;
            let pred = trace.output();
            let scale = 2.0 / chunk.len() as f64;
            let cot: Vec<f64> = chunk
                .iter()
                .enumerate()
                .map(|(i, &t)| scale * (pred.get(i, 0) - targets[t]))
                .collect();
            let cot = Matrix::from_vec(chunk.len(), 1, cot)?;
            grad.iter_mut().for_each(|g| *g = 0.0);
            mlp::backward_into(arch, &current, &trace, &cot, &mut grad)?;
            adam.step(&mut current, &grad);
        }
        let loss = mse(arch, &current, states, targets)?;
        if loss < best.0 {
            best = (loss, current.clone());
        }
    }
    Ok(ValueFit {
        params: best.1,
        loss_before,
        loss_after: best.0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Environment steps collected so far, this iteration included.
    pub env_steps: usize,
    pub mean_return: f64,
    pub report: UpdateReport,
}

/// Policy, value network and memory of one training run.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: TrainConfig,
    spec: MixtureSpec,
    policy: PolicySnapshot,
    value_arch: MlpArchitecture,
    value_params: ParamVector,
    memory: ExperienceMemory,
    iteration: usize,
    env_steps: usize,
}

impl Trainer {
    /// Initializes θ0 and φ0 from `rng` and fills the memory with θ0.
    pub fn new<R: Rng + ?Sized>(cfg: TrainConfig, obs_dim: usize, action_dim: usize, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.mixture_spec()?;
        let policy = PolicySnapshot::init(obs_dim, &cfg.policy_hidden, action_dim, cfg.log_std_mode, cfg.init_log_std, rng)?;
        let value_arch = cfg.value_arch(obs_dim)?;
        let value_params = mlp::init_params(&value_arch, rng);
        let memory = ExperienceMemory::new(&policy, cfg.memory_size);
        Ok(Self {
            cfg,
            spec,
            policy,
            value_arch,
            value_params,
            memory,
            iteration: 0,
            env_steps: 0,
        })
    }

    /// Resumes from saved state.
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        cfg: TrainConfig,
        policy: PolicySnapshot,
        value_params: ParamVector,
        memory: ExperienceMemory,
        iteration: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.mixture_spec()?;
        let value_arch = cfg.value_arch(policy.obs_dim())?;
        if value_params.len() != value_arch.param_count() {
            return Err(Error::LengthMismatch {
                what: "value parameters",
                expected: value_arch.param_count(),
                found: value_params.len(),
            });
        }
        if memory.len() != spec.memory_size() {
            return Err(Error::LengthMismatch {
                what: "experience memory",
                expected: spec.memory_size(),
                found: memory.len(),
            });
        }
        Ok(Self {
            env_steps: iteration * cfg.batch_size,
            cfg,
            spec,
            policy,
            value_arch,
            value_params,
            memory,
            iteration,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn policy(&self) -> &PolicySnapshot {
        &self.policy
    }

    pub fn value_arch(&self) -> &MlpArchitecture {
        &self.value_arch
    }

    pub fn value_params(&self) -> &ParamVector {
        &self.value_params
    }

    pub fn memory(&self) -> &ExperienceMemory {
        &self.memory
    }

    pub fn mixture_spec(&self) -> &MixtureSpec {
        &self.spec
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Runs `N / T` episodes with the behavior policy.
    pub fn collect<E: Environment, R: Rng + ?Sized>(&self, env: &mut E, rng: &mut R) -> Result<RolloutBatch> {
        let t_len = self.cfg.episode_len;
        if env.episode_len() != t_len {
            return Err(Error::InvalidConfig(format!(
                "environment episodes last {} steps, trainer expects {}",
                env.episode_len(),
                t_len
            )));
        }
        let (low, high) = (env.action_low(), env.action_high());
        let mut transitions = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size / t_len {
            let mut obs = env.reset(rng);
            for _ in 0..t_len {
                let (raw_action, clipped_action) = match self.cfg.algorithm {
                    Algorithm::Trpo => {
                        let raw = self.policy.distribution(&obs)?.sample(rng);
                        let clipped = clip_action(&raw, &low, &high);
                        (raw, clipped)
                    }
                    Algorithm::FadedExperience => {
                        let s = policy::mixture_sample(&self.policy, self.memory.slots(), &self.spec, &obs, &low, &high, rng)?;
                        (s.raw_action, s.clipped_action)
                    }
                };
                let step = env.step(&clipped_action, rng)?;
                let next = step.observation;
                transitions.push(Transition {
                    state: core::mem::replace(&mut obs, next.clone()),
                    raw_action,
                    clipped_action,
                    reward: step.reward,
                    done: step.done,
                    next_state: next,
                    behavior_log_density: 0.0,
                });
            }
        }
        let states = Matrix::from_rows(&transitions.iter().map(|t| t.state.as_slice()).collect::<Vec<_>>())?;
        let actions = Matrix::from_rows(&transitions.iter().map(|t| t.raw_action.as_slice()).collect::<Vec<_>>())?;
        let behavior = match self.cfg.algorithm {
            Algorithm::Trpo => self.policy.batch(&states)?.log_probs(&actions),
            Algorithm::FadedExperience => {
                policy::mixture_log_density_batch(&self.policy, self.memory.slots(), &self.spec, &states, &actions)?
            }
        };
        for (t, lb) in transitions.iter_mut().zip(behavior) {
            t.behavior_log_density = lb;
        }
        RolloutBatch::new(transitions, t_len)
    }

    /// One full outer iteration.
    pub fn iterate<E: Environment, R: Rng + ?Sized>(&mut self, env: &mut E, rng: &mut R) -> Result<IterationMetrics> {
        let batch = self.collect(env, rng)?;
        let returns = batch.episode_returns();
        let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;

        let states = batch.states();
        let values = value_predict(&self.value_arch, &self.value_params, &states)?;
        let next_values = value_predict(&self.value_arch, &self.value_params, &batch.next_states())?;
        let mut buffer = compute_gae_from_values(&batch, &values, &next_values, self.cfg.gamma, self.cfg.lambda)?;
        let rewards_to_go = buffer.rewards_to_go.clone();
        if self.cfg.normalize_adv {
            buffer = normalize_advantages(buffer)?;
        }
        let data = SurrogateData::new(&batch, &buffer)?;

        let theta_k = self.policy.clone();
        let grad = match self.cfg.algorithm {
            Algorithm::Trpo => estimate_policy_gradient_on_policy(&data, &theta_k)?,
            Algorithm::FadedExperience => estimate_policy_gradient(&data, &theta_k, &self.spec)?,
        };
        let fisher = theta_k.fisher(&states)?;
        let damping = self.cfg.cg_damping;
        let cg = conjugate_gradient(|x| fisher.apply(x, damping), &grad, self.cfg.cg_iters, self.cfg.cg_tol)?;
        let x_f_x = dot(&cg.x, &fisher.apply(&cg.x, damping)?);
        let (theta_next, mut report) = line_search(&theta_k, &cg.x, x_f_x, &data, &LineSearchConfig::from(&self.cfg))?;
        report.grad_norm = norm(&grad);
        report.cg_residual = cg.relative_residual;

        self.memory.shift(&theta_k);

        let fit = fit_value(&self.value_arch, &self.value_params, &states, &rewards_to_go, &self.cfg.value_fit, rng)?;
        report.value_loss_before = fit.loss_before;
        report.value_loss_after = fit.loss_after;
        self.value_params = fit.params;
        self.policy = theta_next;
        self.iteration += 1;
        self.env_steps += batch.len();
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_return,
            report,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: PolicySnapshot,
    pub value_params: ParamVector,
    pub memory: ExperienceMemory,
    pub metrics: Vec<IterationMetrics>,
}

/// Runs `cfg.iterations` iterations, reporting each one to `on_iteration`.
pub fn train<E, R, F>(env: &mut E, cfg: TrainConfig, rng: &mut R, mut on_iteration: F) -> Result<TrainOutcome>
where
    E: Environment,
    R: Rng + ?Sized,
    F: FnMut(&Trainer, &IterationMetrics),
{
    let iterations = cfg.iterations;
    let mut trainer = Trainer::new(cfg, env.observation_dim(), env.action_dim(), rng)?;
    let mut metrics = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let m = trainer.iterate(env, rng)?;
        on_iteration(&trainer, &m);
        metrics.push(m);
    }
    Ok(TrainOutcome {
        policy: trainer.policy,
        value_params: trainer.value_params,
        memory: trainer.memory,
        metrics,
    })
}
