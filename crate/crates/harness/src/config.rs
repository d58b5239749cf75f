//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fetrpo_core::baselines::WmmseConfig;
use fetrpo_core::env::EnvConfig;
use fetrpo_core::policy::LogStdMode;
use fetrpo_core::trpo::{Algorithm, TrainConfig};

use crate::error::{io_err, HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub env: EnvConfig,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Evaluation runs this many episodes of `episode_len` steps each.
    pub eval_episodes: usize,
    pub long_run: bool,
    pub wmmse: WmmseConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            env: EnvConfig::default(),
            seeds: vec![0, 1, 2, 3, 4, 5],
            output_dir: PathBuf::from("runs"),
            eval_episodes: 1,
            long_run: false,
            wmmse: WmmseConfig::default(),
        }
    }
}

type Setter = fn(&mut ExperimentConfig, &str) -> std::result::Result<(), String>;

/// Every accepted key with its help line.
pub const KEYS: &[(&str, &str, Setter)] = &[
    ("algorithm", "fe | trpo", |c, v| {
        c.train.algorithm = match v {
            "fe" | "fe-trpo" => Algorithm::FadedExperience,
            "trpo" => Algorithm::Trpo,
            _ => return Err("expected `fe` or `trpo`".into()),
        };
        Ok(())
    }),
    ("memory_size", "M, memorized policies", |c, v| set(&mut c.train.memory_size, v)),
    ("decay", "z, mixture weights 1/(m+1)^z", |c, v| set(&mut c.train.decay, v)),
    ("gamma", "discount factor", |c, v| set(&mut c.train.gamma, v)),
    ("lambda", "GAE lambda", |c, v| set(&mut c.train.lambda, v)),
    ("delta_kl", "trust-region radius", |c, v| set(&mut c.train.delta_kl, v)),
    ("backtrack_coeff", "line-search shrink factor alpha", |c, v| set(&mut c.train.backtrack_coeff, v)),
    ("max_backtracks", "n_B", |c, v| set(&mut c.train.max_backtracks, v)),
    ("batch_size", "N, transitions per iteration", |c, v| set(&mut c.train.batch_size, v)),
    ("episode_len", "T, steps per episode", |c, v| {
        set(&mut c.train.episode_len, v)?;
        c.env.episode_len = c.train.episode_len;
        Ok(())
    }),
    ("iterations", "L, outer iterations", |c, v| set(&mut c.train.iterations, v)),
    ("cg_iters", "conjugate-gradient iterations", |c, v| set(&mut c.train.cg_iters, v)),
    ("cg_tol", "conjugate-gradient relative residual tolerance", |c, v| set(&mut c.train.cg_tol, v)),
    ("cg_damping", "damping added to the Fisher operator", |c, v| set(&mut c.train.cg_damping, v)),
    ("value_epochs", "value-fit epochs per iteration", |c, v| set(&mut c.train.value_fit.epochs, v)),
    ("value_minibatch", "value-fit minibatch size", |c, v| set(&mut c.train.value_fit.minibatch, v)),
    ("value_step_size", "value-fit Adam step size", |c, v| set(&mut c.train.value_fit.step_size, v)),
    ("normalize_adv", "true | false", |c, v| set(&mut c.train.normalize_adv, v)),
    ("policy_hidden", "hidden widths, e.g. 400,300", |c, v| set_list(&mut c.train.policy_hidden, v)),
    ("value_hidden", "hidden widths, e.g. 400,300", |c, v| set_list(&mut c.train.value_hidden, v)),
    ("log_std_mode", "shared | head", |c, v| {
        c.train.log_std_mode = match v {
            "shared" => LogStdMode::SharedVector,
            "head" => LogStdMode::Head,
            _ => return Err("expected `shared` or `head`".into()),
        };
        Ok(())
    }),
    ("init_log_std", "initial policy log standard deviation", |c, v| set(&mut c.train.init_log_std, v)),
    ("num_users", "K, transceiver pairs", |c, v| set(&mut c.env.num_users, v)),
    ("area_radius", "disk radius, m", |c, v| set(&mut c.env.area_radius, v)),
    ("p_max", "per-user power limit, W", |c, v| set(&mut c.env.p_max, v)),
    ("noise_psd_dbm_hz", "noise spectral density, dBm/Hz", |c, v| set(&mut c.env.noise_psd_dbm_hz, v)),
    ("bandwidth_hz", "bandwidth, Hz", |c, v| set(&mut c.env.bandwidth_hz, v)),
    ("mobility_max_m", "per-reset node displacement bound, m", |c, v| set(&mut c.env.mobility_max_m, v)),
    ("perturb_lo", "distance noise factor lower bound", |c, v| set(&mut c.env.perturb_lo, v)),
    ("perturb_hi", "distance noise factor upper bound", |c, v| set(&mut c.env.perturb_hi, v)),
    ("alpha_los", "LOS pathloss exponent", |c, v| set(&mut c.env.alpha_los, v)),
    ("alpha_nlos", "NLOS pathloss exponent", |c, v| set(&mut c.env.alpha_nlos, v)),
    ("d0_m", "LOS model D0, m", |c, v| set(&mut c.env.d0_m, v)),
    ("d1_m", "LOS model D1, m", |c, v| set(&mut c.env.d1_m, v)),
    ("nakagami_m", "LOS Nakagami m", |c, v| set(&mut c.env.nakagami_m, v)),
    ("shadow_std_los_db", "LOS shadowing std, dB", |c, v| set(&mut c.env.shadow_std_los_db, v)),
    ("shadow_std_nlos_db", "NLOS shadowing std, dB", |c, v| set(&mut c.env.shadow_std_nlos_db, v)),
    ("pair_dist_lo", "receiver distance to own transmitter, lower, m", |c, v| set(&mut c.env.pair_dist_lo, v)),
    ("pair_dist_hi", "receiver distance to own transmitter, upper, m", |c, v| set(&mut c.env.pair_dist_hi, v)),
    ("min_distance_m", "distance floor, m", |c, v| set(&mut c.env.min_distance_m, v)),
    ("history_frames", "observation frames", |c, v| set(&mut c.env.history_frames, v)),
    ("rate_scale", "rate normalization in observations, nats", |c, v| set(&mut c.env.rate_scale, v)),
    ("seeds", "comma-separated seeds", |c, v| set_list(&mut c.seeds, v)),
    ("output_dir", "directory for CSVs and checkpoints", |c, v| {
        c.output_dir = PathBuf::from(v);
        Ok(())
    }),
    ("eval_episodes", "held-out evaluation episodes", |c, v| set(&mut c.eval_episodes, v)),
    ("wmmse_max_iters", "WMMSE iteration cap", |c, v| set(&mut c.wmmse.max_iters, v)),
    ("wmmse_tol", "WMMSE sum-rate change tolerance", |c, v| set(&mut c.wmmse.convergence_tol, v)),
];

fn set<T: FromStr>(slot: &mut T, v: &str) -> std::result::Result<(), String>
where
    T::Err: std::fmt::Display,
{
    *slot = v.parse().map_err(|e: T::Err| e.to_string())?;
    Ok(())
}

fn set_list<T: FromStr>(slot: &mut Vec<T>, v: &str) -> std::result::Result<(), String>
where
    T::Err: std::fmt::Display,
{
    *slot = v
        .split(',')
        .map(|s| s.trim().parse().map_err(|e: T::Err| format!("`{}`: {e}", s.trim())))
        .collect::<std::result::Result<_, _>>()?;
    Ok(())
}

fn fmt_list<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (_, _, setter) = KEYS
            .iter()
            .find(|(k, _, _)| *k == key)
            .ok_or_else(|| HarnessError::UnknownKey(key.to_string()))?;
        setter(self, value.trim()).map_err(|message| HarnessError::BadValue {
            key: key.to_string(),
            message,
        })
    }

    /// Applies `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| HarnessError::BadValue {
            key: pair.to_string(),
            message: "expected key=value".into(),
        })?;
        self.set(k.trim(), v)
    }

    /// Applies every line of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| HarnessError::ConfigSyntax {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        self.apply_text(&text)
    }

    /// Full-length run: L = 1300, N = 10000, T = 500.
    pub fn apply_long_run(&mut self) {
        self.long_run = true;
        self.train.iterations = 1300;
        self.train.batch_size = 10_000;
        self.train.episode_len = 500;
        self.env.episode_len = 500;
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(HarnessError::InvalidConfig("seeds must not be empty".into()));
        }
        if self.eval_episodes == 0 {
            return Err(HarnessError::InvalidConfig("eval_episodes must be positive".into()));
        }
        if self.train.episode_len != self.env.episode_len {
            return Err(HarnessError::InvalidConfig("episode_len differs between trainer and environment".into()));
        }
        if self.wmmse.max_iters == 0 || self.wmmse.convergence_tol.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(HarnessError::InvalidConfig("wmmse_max_iters and wmmse_tol must be positive".into()));
        }
        self.train.validate()?;
        self.env.validate()?;
        Ok(())
    }

    pub fn eval_draws(&self) -> usize {
        self.eval_episodes * self.env.episode_len
    }

    /// The effective configuration in the file format.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let e = &self.env;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv(
            "algorithm",
            match t.algorithm {
                Algorithm::Trpo => "trpo".into(),
                Algorithm::FadedExperience => "fe".into(),
            },
        );
        kv("memory_size", t.memory_size.to_string());
        kv("decay", t.decay.to_string());
        kv("gamma", t.gamma.to_string());
        kv("lambda", t.lambda.to_string());
        kv("delta_kl", t.delta_kl.to_string());
        kv("backtrack_coeff", t.backtrack_coeff.to_string());
        kv("max_backtracks", t.max_backtracks.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("episode_len", t.episode_len.to_string());
        kv("iterations", t.iterations.to_string());
        kv("cg_iters", t.cg_iters.to_string());
        kv("cg_tol", t.cg_tol.to_string());
        kv("cg_damping", t.cg_damping.to_string());
        kv("value_epochs", t.value_fit.epochs.to_string());
        kv("value_minibatch", t.value_fit.minibatch.to_string());
        kv("value_step_size", t.value_fit.step_size.to_string());
        kv("normalize_adv", t.normalize_adv.to_string());
        kv("policy_hidden", fmt_list(&t.policy_hidden));
        kv("value_hidden", fmt_list(&t.value_hidden));
        kv(
            "log_std_mode",
            match t.log_std_mode {
                LogStdMode::SharedVector => "shared".into(),
                LogStdMode::Head => "head".into(),
            },
        );
        kv("init_log_std", t.init_log_std.to_string());
        kv("num_users", e.num_users.to_string());
        kv("area_radius", e.area_radius.to_string());
        kv("p_max", e.p_max.to_string());
        kv("noise_psd_dbm_hz", e.noise_psd_dbm_hz.to_string());
        kv("bandwidth_hz", e.bandwidth_hz.to_string());
        kv("mobility_max_m", e.mobility_max_m.to_string());
        kv("perturb_lo", e.perturb_lo.to_string());
        kv("perturb_hi", e.perturb_hi.to_string());
        kv("alpha_los", e.alpha_los.to_string());
        kv("alpha_nlos", e.alpha_nlos.to_string());
        kv("d0_m", e.d0_m.to_string());
        kv("d1_m", e.d1_m.to_string());
        kv("nakagami_m", e.nakagami_m.to_string());
        kv("shadow_std_los_db", e.shadow_std_los_db.to_string());
        kv("shadow_std_nlos_db", e.shadow_std_nlos_db.to_string());
        kv("pair_dist_lo", e.pair_dist_lo.to_string());
        kv("pair_dist_hi", e.pair_dist_hi.to_string());
        kv("min_distance_m", e.min_distance_m.to_string());
        kv("history_frames", e.history_frames.to_string());
        kv("rate_scale", e.rate_scale.to_string());
        kv("seeds", fmt_list(&self.seeds));
        kv("output_dir", self.output_dir.display().to_string());
        kv("eval_episodes", self.eval_episodes.to_string());
        kv("wmmse_max_iters", self.wmmse.max_iters.to_string());
        kv("wmmse_tol", self.wmmse.convergence_tol.to_string());
        s
    }

    /// One line per key, for `--help`.
    pub fn key_help() -> String {
        let width = KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
        KEYS.iter()
            .map(|(k, h, _)| format!("  {k:width$}  {h}"))
            .collect::<Vec<_>>()
            .join("\n")
    }
}
