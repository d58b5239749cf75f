//! K-user interference channel with noisy-distance observations.
//!
//! Transmitter `j` and receiver `k` are separated by `‖X_jk‖`. Every link is
//! LOS with probability [`los_probability`] and its power gain is
//! `h_jk = ‖X_jk‖^{-α} · 10^{X/10} · f`, with the exponent, shadowing spread
//! and fading law chosen by the link mode. Matrices are indexed
//! `[transmitter][receiver]`.
//!
//! Within an episode positions, LOS modes, shadowing and the distance
//! perturbation stay fixed; fading is redrawn on every step. At reset every
//! node moves a random distance of up to `mobility_max_m` and the
//! large-scale quantities are redrawn.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};

use crate::linalg::Matrix;
use crate::math;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct EnvConfig {
    pub num_users: usize,
    pub area_radius: f64,
    /// Maximum transmit power per user, watts.
    pub p_max: f64,
    pub noise_psd_dbm_hz: f64,
    pub bandwidth_hz: f64,
    pub mobility_max_m: f64,
    pub perturb_lo: f64,
    pub perturb_hi: f64,
    pub alpha_los: f64,
    pub alpha_nlos: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub nakagami_m: f64,
    pub shadow_std_los_db: f64,
    pub shadow_std_nlos_db: f64,
    /// Receiver-to-own-transmitter distance range.
    pub pair_dist_lo: f64,
    pub pair_dist_hi: f64,
    pub min_distance_m: f64,
    pub episode_len: usize,
    pub history_frames: usize,
    /// Rates are divided by this before entering the observation.
    pub rate_scale: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_users: 3,
            area_radius: 60.0,
            p_max: 1.0,
            noise_psd_dbm_hz: -173.0,
            bandwidth_hz: 10e6,
            mobility_max_m: 5.0,
            perturb_lo: 0.9,
            perturb_hi: 1.1,
            alpha_los: 2.4,
            alpha_nlos: 3.78,
            d0_m: 18.0,
            d1_m: 36.0,
            nakagami_m: 10.0,
            shadow_std_los_db: 5.0,
            shadow_std_nlos_db: 8.6,
            pair_dist_lo: 2.0,
            pair_dist_hi: 20.0,
            min_distance_m: 1.0,
            episode_len: 200,
            history_frames: 4,
            rate_scale: 10.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("area_radius", self.area_radius),
            ("p_max", self.p_max),
            ("bandwidth_hz", self.bandwidth_hz),
            ("perturb_lo", self.perturb_lo),
            ("alpha_los", self.alpha_los),
            ("d0_m", self.d0_m),
            ("d1_m", self.d1_m),
            ("nakagami_m", self.nakagami_m),
            ("pair_dist_lo", self.pair_dist_lo),
            ("min_distance_m", self.min_distance_m),
            ("rate_scale", self.rate_scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("mobility_max_m", self.mobility_max_m),
            ("shadow_std_los_db", self.shadow_std_los_db),
            ("shadow_std_nlos_db", self.shadow_std_nlos_db),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            return Err(Error::InvalidConfig("noise_psd_dbm_hz must be finite".into()));
        }
        if self.num_users == 0 || self.episode_len == 0 || self.history_frames == 0 {
            return Err(Error::InvalidConfig(
                "num_users, episode_len and history_frames must be positive".into(),
            ));
        }
        if self.perturb_lo >= self.perturb_hi {
            return Err(Error::InvalidConfig("perturb_lo must be below perturb_hi".into()));
        }
        if self.alpha_nlos <= self.alpha_los {
            return Err(Error::InvalidConfig("alpha_nlos must exceed alpha_los".into()));
        }
        if self.pair_dist_lo > self.pair_dist_hi || self.pair_dist_hi >= self.area_radius {
            return Err(Error::InvalidConfig(
                "pair distances need pair_dist_lo <= pair_dist_hi < area_radius".into(),
            ));
        }
        Ok(())
    }

    /// Thermal noise power over the configured bandwidth, watts.
    pub fn noise_power_w(&self) -> f64 {
        let dbm = self.noise_psd_dbm_hz + 10.0 * math::log10(self.bandwidth_hz);
        math::pow(10.0, dbm / 10.0) * 1e-3
    }

    pub fn observation_dim(&self) -> usize {
        let k = self.num_users;
        self.history_frames * (k * k + k)
    }

    fn frame_len(&self) -> usize {
        self.num_users * self.num_users + self.num_users
    }

    pub fn los_probability(&self, d: f64) -> Result<f64> {
        los_probability(d, self.d0_m, self.d1_m)
    }
}

/// ITU-R UMi line-of-sight probability
/// `min(D0/d, 1)(1 − e^{−d/D1}) + e^{−d/D1}`.
pub fn los_probability(d: f64, d0: f64, d1: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::InvalidDistance(d));
    }
    let near = (d0 / d).min(1.0);
    let e = math::exp(-d / d1);
    Ok(near * (1.0 - e) + e)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Geometry {
    pub tx_positions: Vec<[f64; 2]>,
    pub rx_positions: Vec<[f64; 2]>,
    /// `distances[j][k]`: transmitter `j` to receiver `k`, floored.
    pub distances: Matrix,
}

impl Geometry {
    pub fn from_positions(tx: Vec<[f64; 2]>, rx: Vec<[f64; 2]>, min_distance: f64) -> Self {
        let k = tx.len();
        let mut distances = Matrix::zeros(k, k);
        for (j, t) in tx.iter().enumerate() {
            for (i, r) in rx.iter().enumerate() {
                distances.set(j, i, euclid(t, r).max(min_distance));
            }
        }
        Self {
            tx_positions: tx,
            rx_positions: rx,
            distances,
        }
    }

    pub fn num_users(&self) -> usize {
        self.tx_positions.len()
    }
}

fn euclid(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    math::sqrt(dx * dx + dy * dy)
}

fn radius(p: &[f64; 2]) -> f64 {
    math::sqrt(p[0] * p[0] + p[1] * p[1])
}

fn uniform_in_disk<R: Rng + ?Sized>(r: f64, rng: &mut R) -> [f64; 2] {
    let rho = r * math::sqrt(rng.random::<f64>());
    let phi = 2.0 * PI * rng.random::<f64>();
    [rho * math::cos(phi), rho * math::sin(phi)]
}

fn clamp_to_disk(p: [f64; 2], r: f64) -> [f64; 2] {
    let rho = radius(&p);
    if rho <= r {
        p
    } else {
        [p[0] * r / rho, p[1] * r / rho]
    }
}

/// Transmitters uniform in the disk; each receiver at a uniform angle and a
/// `Uniform(pair_dist_lo, pair_dist_hi)` distance from its transmitter,
/// resampled until it lands inside the disk.
pub fn place_nodes<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Geometry {
    let k = cfg.num_users;
    let r = cfg.area_radius;
    let mut tx = Vec::with_capacity(k);
    let mut rx = Vec::with_capacity(k);
    for _ in 0..k {
        let t = uniform_in_disk(r, rng);
        let recv = loop {
            let d = cfg.pair_dist_lo + (cfg.pair_dist_hi - cfg.pair_dist_lo) * rng.random::<f64>();
            let phi = 2.0 * PI * rng.random::<f64>();
            let p = [t[0] + d * math::cos(phi), t[1] + d * math::sin(phi)];
            if radius(&p) <= r {
                break p;
            }
        };
        tx.push(t);
        rx.push(recv);
    }
    Geometry::from_positions(tx, rx, cfg.min_distance_m)
}

/// Moves every node `Uniform(0, max_step)` metres in a uniform direction,
/// projecting back onto the disk when it leaves.
pub fn move_nodes<R: Rng + ?Sized>(geometry: &Geometry, cfg: &EnvConfig, rng: &mut R) -> Geometry {
    let mut step = |p: &[f64; 2]| {
        let d = cfg.mobility_max_m * rng.random::<f64>();
        let phi = 2.0 * PI * rng.random::<f64>();
        clamp_to_disk([p[0] + d * math::cos(phi), p[1] + d * math::sin(phi)], cfg.area_radius)
    };
    let tx = geometry.tx_positions.iter().map(&mut step).collect();
    let rx = geometry.rx_positions.iter().map(&mut step).collect();
    Geometry::from_positions(tx, rx, cfg.min_distance_m)
}

/// Per-link LOS mode, pathloss and shadowing; fixed for an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScale {
    pub los_mode: Vec<bool>,
    pub pathloss: Matrix,
    pub shadow_linear: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelDraw {
    /// Row-major `K x K`, `[transmitter][receiver]`.
    pub los_mode: Vec<bool>,
    pub pathloss: Matrix,
    pub shadow_linear: Matrix,
    pub fading: Matrix,
    pub gains: Matrix,
}

pub fn draw_large_scale<R: Rng + ?Sized>(geometry: &Geometry, cfg: &EnvConfig, rng: &mut R) -> LargeScale {
    let k = geometry.num_users();
    let mut los_mode = vec![false; k * k];
    let mut pathloss = Matrix::zeros(k, k);
    let mut shadow_linear = Matrix::zeros(k, k);
    for j in 0..k {
        for i in 0..k {
            let d = geometry.distances.get(j, i);
            let p_los = los_probability(d, cfg.d0_m, cfg.d1_m).expect("distances are floored");
            let los = rng.random::<f64>() < p_los;
            let (alpha, std_db) = if los {
                (cfg.alpha_los, cfg.shadow_std_los_db)
            } else {
                (cfg.alpha_nlos, cfg.shadow_std_nlos_db)
            };
            let x: f64 = StandardNormal.sample(rng);
            los_mode[j * k + i] = los;
            pathloss.set(j, i, math::pow(d, -alpha));
            shadow_linear.set(j, i, math::pow(10.0, std_db * x / 10.0));
        }
    }
    LargeScale {
        los_mode,
        pathloss,
        shadow_linear,
    }
}

/// Unit-mean fading power: Gamma(m, 1/m) (Nakagami-m) under LOS,
/// Exp(1) under NLOS.
pub fn draw_fading<R: Rng + ?Sized>(los_mode: &[bool], k: usize, cfg: &EnvConfig, rng: &mut R) -> Matrix {
    let gamma = Gamma::new(cfg.nakagami_m, 1.0 / cfg.nakagami_m).expect("validated nakagami m");
    let mut fading = Matrix::zeros(k, k);
    for (idx, &los) in los_mode.iter().enumerate() {
        let f = if los { gamma.sample(rng) } else { Exp1.sample(rng) };
        fading.as_mut_slice()[idx] = f;
    }
    fading
}

fn combine(large: &LargeScale, fading: Matrix) -> ChannelDraw {
    let mut gains = large.pathloss.clone();
    for ((g, s), f) in gains
        .as_mut_slice()
        .iter_mut()
        .zip(large.shadow_linear.as_slice())
        .zip(fading.as_slice())
    {
        *g *= s * f;
    }
    ChannelDraw {
        los_mode: large.los_mode.clone(),
        pathloss: large.pathloss.clone(),
        shadow_linear: large.shadow_linear.clone(),
        fading,
        gains,
    }
}

/// Full independent channel realization for `geometry`.
pub fn draw_channel<R: Rng + ?Sized>(geometry: &Geometry, cfg: &EnvConfig, rng: &mut R) -> ChannelDraw {
    let large = draw_large_scale(geometry, cfg, rng);
    let fading = draw_fading(&large.los_mode, geometry.num_users(), cfg, rng);
    combine(&large, fading)
}

/// `SINR_k = h_kk P_k / (σ² + Σ_{j≠k} h_jk P_j)`.
pub fn sinr(gains: &Matrix, powers: &[f64], noise_w: f64) -> Vec<f64> {
    let k = powers.len();
    (0..k)
        .map(|rx| {
            let interference: f64 = (0..k)
                .filter(|&tx| tx != rx)
                .map(|tx| gains.get(tx, rx) * powers[tx])
                .sum();
            gains.get(rx, rx) * powers[rx] / (noise_w + interference)
        })
        .collect()
}

/// Per-user rates `ln(1 + SINR_k)` in nats.
pub fn rates(gains: &Matrix, powers: &[f64], noise_w: f64) -> Vec<f64> {
    sinr(gains, powers, noise_w)
        .into_iter()
        .map(libm::log1p)
        .collect()
}

pub fn sum_rate(gains: &Matrix, powers: &[f64], noise_w: f64) -> f64 {
    rates(gains, powers, noise_w).iter().sum()
}

/// Minimal episodic environment interface used by the trainer.
pub trait Environment {
    fn observation_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn action_low(&self) -> Vec<f64>;
    fn action_high(&self) -> Vec<f64>;
    fn episode_len(&self) -> usize;
    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64>;
    fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Step>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Everything drawn or computed during one interference-channel step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step_index: usize,
    pub gains: Matrix,
    pub powers: Vec<f64>,
    pub rates: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// `history_frames` frames, newest first. A frame holds the `K²`
    /// perturbed distances (row-major, over the area radius) followed by
    /// the `K` rates of the step that produced it (over `rate_scale`).
    pub observation: Vec<f64>,
    pub step_index: usize,
    pub perturb: Matrix,
    pub geometry: Geometry,
    pub large_scale: LargeScale,
}

#[derive(Debug, Clone)]
pub struct InterferenceEnv {
    cfg: EnvConfig,
    noise_w: f64,
    state: EnvState,
}

impl InterferenceEnv {
    /// Places the nodes and draws the first episode's large-scale state.
    pub fn new<R: Rng + ?Sized>(cfg: EnvConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let geometry = place_nodes(&cfg, rng);
        let large_scale = draw_large_scale(&geometry, &cfg, rng);
        let perturb = draw_perturbation(&cfg, rng);
        let k = cfg.num_users;
        let state = EnvState {
            observation: vec![0.0; cfg.observation_dim()],
            step_index: 0,
            perturb,
            geometry,
            large_scale,
        };
        let mut env = Self {
            noise_w: cfg.noise_power_w(),
            cfg,
            state,
        };
        env.fill_history(&vec![0.0; k]);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn noise_power_w(&self) -> f64 {
        self.noise_w
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn geometry(&self) -> &Geometry {
        &self.state.geometry
    }

    pub fn p_max(&self) -> Vec<f64> {
        vec![self.cfg.p_max; self.cfg.num_users]
    }

    fn distance_frame(&self) -> Vec<f64> {
        let d = self.state.geometry.distances.as_slice();
        d.iter()
            .zip(self.state.perturb.as_slice())
            .map(|(d, p)| d * p / self.cfg.area_radius)
            .collect()
    }

    fn fill_history(&mut self, rates: &[f64]) {
        let frame = self.make_frame(rates);
        for chunk in self.state.observation.chunks_exact_mut(frame.len()) {
            chunk.copy_from_slice(&frame);
        }
    }

    fn make_frame(&self, rates: &[f64]) -> Vec<f64> {
        let mut frame = self.distance_frame();
        frame.extend(rates.iter().map(|r| r / self.cfg.rate_scale));
        frame
    }

    /// Starts a new episode: mobility, then fresh LOS modes, shadowing and
    /// distance perturbation.
    pub fn reset_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &EnvState {
        let geometry = move_nodes(&self.state.geometry, &self.cfg, rng);
        self.state.large_scale = draw_large_scale(&geometry, &self.cfg, rng);
        self.state.geometry = geometry;
        self.state.perturb = draw_perturbation(&self.cfg, rng);
        self.state.step_index = 0;
        self.fill_history(&vec![0.0; self.cfg.num_users]);
        &self.state
    }

    /// Applies `action` (clamped to `[0, p_max]`) under a fresh fading draw.
    pub fn step_detailed<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<StepRecord> {
        self.check_step(action)?;
        let gains = self.draw_gains(rng);
        self.step_with_gains(action, gains)
    }

    fn check_step(&self, action: &[f64]) -> Result<()> {
        let k = self.cfg.num_users;
        if action.len() != k {
            return Err(Error::LengthMismatch {
                what: "action",
                expected: k,
                found: action.len(),
            });
        }
        if self.state.step_index >= self.cfg.episode_len {
            return Err(Error::InvalidConfig("step called on a finished episode".into()));
        }
        Ok(())
    }

    /// Like [`step_detailed`](Self::step_detailed) with caller-supplied
    /// gains, e.g. a draw shared with baseline allocators.
    pub fn step_with_gains(&mut self, action: &[f64], gains: Matrix) -> Result<StepRecord> {
        self.check_step(action)?;
        let k = self.cfg.num_users;
        if gains.rows() != k || gains.cols() != k {
            return Err(Error::LengthMismatch {
                what: "gain matrix",
                expected: k * k,
                found: gains.rows() * gains.cols(),
            });
        }
        let powers: Vec<f64> = action
            .iter()
            .map(|a| if a.is_nan() { 0.0 } else { a.clamp(0.0, self.cfg.p_max) })
            .collect();
        let rates = rates(&gains, &powers, self.noise_w);
        let reward: f64 = rates.iter().sum();

        let frame = self.make_frame(&rates);
        let fl = self.cfg.frame_len();
        self.state.observation.copy_within(0..fl * (self.cfg.history_frames - 1), fl);
        self.state.observation[..fl].copy_from_slice(&frame);

        let step_index = self.state.step_index;
        self.state.step_index += 1;
        let done = self.state.step_index == self.cfg.episode_len;
        Ok(StepRecord {
            step_index,
            gains,
            powers,
            rates,
            reward,
            done,
        })
    }

    /// A fresh small-scale realization on top of the episode's large-scale
    /// state.
    pub fn draw_gains<R: Rng + ?Sized>(&self, rng: &mut R) -> Matrix {
        let k = self.cfg.num_users;
        let fading = draw_fading(&self.state.large_scale.los_mode, k, &self.cfg, rng);
        combine(&self.state.large_scale, fading).gains
    }
}

fn draw_perturbation<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Matrix {
    let k = cfg.num_users;
    let mut m = Matrix::zeros(k, k);
    for v in m.as_mut_slice() {
        *v = cfg.perturb_lo + (cfg.perturb_hi - cfg.perturb_lo) * rng.random::<f64>();
    }
    m
}

impl Environment for InterferenceEnv {
    fn observation_dim(&self) -> usize {
        self.cfg.observation_dim()
    }

    fn action_dim(&self) -> usize {
        self.cfg.num_users
    }

    fn action_low(&self) -> Vec<f64> {
        vec![0.0; self.cfg.num_users]
    }

    fn action_high(&self) -> Vec<f64> {
        self.p_max()
    }

    fn episode_len(&self) -> usize {
        self.cfg.episode_len
    }

    fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<f64> {
        self.reset_episode(rng).observation.clone()
    }

    fn step<R: Rng + ?Sized>(&mut self, action: &[f64], rng: &mut R) -> Result<Step> {
        let rec = self.step_detailed(action, rng)?;
        Ok(Step {
            observation: self.state.observation.clone(),
            reward: rec.reward,
            done: rec.done,
        })
    }
}
