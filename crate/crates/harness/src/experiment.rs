//! Multi-seed training runs and their output files.
//!
//! For an output directory `out` and seeds `s`:
//!
//! * `out/seed_{s}.csv`: one row per iteration
//! * `out/averaged.csv`: mean return across seeds plus baseline references
//! * `out/seed_{s}.ckpt`: final checkpoint
//! * `out/evaluation.txt`: held-out sum rates per seed
//! * `out/config.cfg`: the effective configuration

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fetrpo_core::baselines::{max_power, random_power, wmmse};
use fetrpo_core::env::{sum_rate, Environment, InterferenceEnv};
use fetrpo_core::evaluation::{evaluate_policy, EvaluationReport};
use fetrpo_core::policy::PolicySnapshot;
use fetrpo_core::trpo::{IterationMetrics, TrainConfig, Trainer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::error::{io_err, HarnessError, Result};

pub const SEED_COLUMNS: [&str; 9] = [
    "iteration",
    "env_steps",
    "mean_return",
    "kl_after",
    "surrogate_improvement",
    "backtrack_steps",
    "accepted",
    "value_loss_after",
    "wall_seconds",
];

pub const THREADS_VAR: &str = "FETRPO_THREADS";

/// Training stream of a seed.
pub fn train_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Held-out evaluation stream of a seed, disjoint from the training stream.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: Vec<IterationMetrics>,
    /// Seconds since the start of the run, after each iteration.
    pub wall_seconds: Vec<f64>,
    pub evaluation: EvaluationReport,
    pub checkpoint: Checkpoint,
}

impl SeedRun {
    pub fn mean_returns(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.mean_return).collect()
    }
}

/// Trains one seed and evaluates the final policy on held-out draws.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    run_seed_observed(cfg, seed, |_, _, _| {})
}

/// [`run_seed`], calling `observe(policy_before, trainer_after, metrics)`
/// after every iteration.
pub fn run_seed_observed<F>(cfg: &ExperimentConfig, seed: u64, mut observe: F) -> Result<SeedRun>
where
    F: FnMut(&PolicySnapshot, &Trainer, &IterationMetrics),
{
    let mut rng = train_rng(seed);
    let mut env = InterferenceEnv::new(cfg.env.clone(), &mut rng)?;
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(train_cfg, env.observation_dim(), env.action_dim(), &mut rng)?;
    let start = Instant::now();
    let mut metrics = Vec::with_capacity(cfg.train.iterations);
    let mut wall_seconds = Vec::with_capacity(cfg.train.iterations);
    for _ in 0..cfg.train.iterations {
        let before = trainer.policy().clone();
        let m = trainer.iterate(&mut env, &mut rng)?;
        wall_seconds.push(start.elapsed().as_secs_f64());
        observe(&before, &trainer, &m);
        metrics.push(m);
    }
    let evaluation = evaluate(trainer.policy(), &env, cfg, seed)?;
    Ok(SeedRun {
        seed,
        metrics,
        wall_seconds,
        evaluation,
        checkpoint: Checkpoint::from_trainer(&trainer, &rng),
    })
}

/// Scores `policy` on `cfg.eval_draws()` held-out channel draws of `env`.
pub fn evaluate(policy: &PolicySnapshot, env: &InterferenceEnv, cfg: &ExperimentConfig, seed: u64) -> Result<EvaluationReport> {
    Ok(evaluate_policy(policy, env, cfg.eval_draws(), &cfg.wmmse, &mut eval_rng(seed))?)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<SeedRun>,
    /// Mean return across seeds, per iteration.
    pub averaged: Vec<f64>,
}

impl ExperimentOutcome {
    /// Mean over seeds of a per-step evaluation statistic, scaled to
    /// episode-return units.
    pub fn reference(&self, episode_len: usize, stat: impl Fn(&EvaluationReport) -> f64) -> f64 {
        let n = self.runs.len() as f64;
        self.runs.iter().map(|r| stat(&r.evaluation)).sum::<f64>() / n * episode_len as f64
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_VAR) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| HarnessError::InvalidConfig(format!("{THREADS_VAR} must be a positive integer, got `{v}`")))?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| HarnessError::InvalidConfig(format!("thread pool: {e}")))
}

/// Trains every seed (in parallel), then writes all output files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let runs = thread_pool()?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, s))
            .collect::<Result<Vec<_>>>()
    })?;
    let iterations = cfg.train.iterations;
    let averaged = (0..iterations)
        .map(|i| runs.iter().map(|r| r.metrics[i].mean_return).sum::<f64>() / runs.len() as f64)
        .collect();
    let outcome = ExperimentOutcome { runs, averaged };
    write_outputs(cfg, &outcome)?;
    Ok(outcome)
}

pub fn seed_csv_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.csv"))
}

pub fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("seed_{seed}.ckpt"))
}

pub fn averaged_csv_path(dir: &Path) -> PathBuf {
    dir.join("averaged.csv")
}

fn csv_err(path: &Path) -> impl FnOnce(csv::Error) -> HarnessError + '_ {
    move |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for row in rows {
        w.write_record(&row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_seed_csv(path: &Path, run: &SeedRun) -> Result<()> {
    let header: Vec<String> = SEED_COLUMNS.iter().map(|c| c.to_string()).collect();
    let rows = run.metrics.iter().zip(&run.wall_seconds).map(|(m, wall)| {
        let r = &m.report;
        vec![
            m.iteration.to_string(),
            m.env_steps.to_string(),
            m.mean_return.to_string(),
            r.kl_after.to_string(),
            (r.surrogate_after - r.surrogate_before).to_string(),
            r.backtrack_steps_used.to_string(),
            r.accepted.to_string(),
            r.value_loss_after.to_string(),
            wall.to_string(),
        ]
    });
    write_rows(path, &header, rows)
}

pub fn write_averaged_csv(path: &Path, cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    let mut header = vec!["iteration".to_string(), "env_steps".into(), "mean_return".into()];
    header.extend(outcome.runs.iter().map(|r| format!("mean_return_seed_{}", r.seed)));
    header.extend(["wmmse_reference".into(), "random_reference".into(), "max_power_reference".into()]);
    let t = cfg.env.episode_len;
    let refs = [
        outcome.reference(t, |e| e.wmmse),
        outcome.reference(t, |e| e.random),
        outcome.reference(t, |e| e.max_power),
    ];
    let rows = outcome.averaged.iter().enumerate().map(|(i, avg)| {
        let mut row = vec![(i + 1).to_string(), ((i + 1) * cfg.train.batch_size).to_string(), avg.to_string()];
        row.extend(outcome.runs.iter().map(|r| r.metrics[i].mean_return.to_string()));
        row.extend(refs.iter().map(f64::to_string));
        row
    });
    write_rows(path, &header, rows)
}

pub fn evaluation_text(outcome: &ExperimentOutcome) -> String {
    let mut s = String::from("seed draws policy wmmse random max_power policy_to_wmmse\n");
    for r in &outcome.runs {
        let e = &r.evaluation;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            r.seed,
            e.draws,
            e.policy,
            e.wmmse,
            e.random,
            e.max_power,
            e.policy_to_wmmse()
        );
    }
    s
}

fn write_outputs(cfg: &ExperimentConfig, outcome: &ExperimentOutcome) -> Result<()> {
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    for run in &outcome.runs {
        write_seed_csv(&seed_csv_path(dir, run.seed), run)?;
        run.checkpoint.save(&checkpoint_path(dir, run.seed))?;
    }
    write_averaged_csv(&averaged_csv_path(dir), cfg, outcome)?;
    let eval = dir.join("evaluation.txt");
    std::fs::write(&eval, evaluation_text(outcome)).map_err(io_err(&eval))?;
    let cfg_path = dir.join("config.cfg");
    std::fs::write(&cfg_path, cfg.to_text()).map_err(io_err(&cfg_path))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineDraw {
    pub wmmse: f64,
    pub wmmse_iterations: usize,
    pub random: f64,
    pub max_power: f64,
}

/// Scores the three allocators on `draws` fresh channel draws of a new
/// environment built from `seed`.
pub fn baseline_sweep(cfg: &ExperimentConfig, seed: u64, draws: usize) -> Result<Vec<BaselineDraw>> {
    let mut rng = train_rng(seed);
    let mut env = InterferenceEnv::new(cfg.env.clone(), &mut rng)?;
    let noise = env.noise_power_w();
    let p_max = env.p_max();
    let mut out = Vec::with_capacity(draws);
    for i in 0..draws {
        if i > 0 && i % cfg.env.episode_len == 0 {
            env.reset(&mut rng);
        }
        let gains = env.draw_gains(&mut rng);
        let sol = wmmse(&gains, noise, &p_max, &cfg.wmmse)?;
        let random = random_power(&mut rng, &p_max);
        out.push(BaselineDraw {
            wmmse: sol.sum_rate(),
            wmmse_iterations: sol.iterations,
            random: sum_rate(&gains, &random, noise),
            max_power: sum_rate(&gains, &max_power(&p_max), noise),
        });
    }
    Ok(out)
}

pub fn write_baseline_csv(path: &Path, draws: &[BaselineDraw]) -> Result<()> {
    let header: Vec<String> = ["draw", "wmmse", "wmmse_iterations", "random", "max_power"]
        .iter()
        .map(|c| c.to_string())
        .collect();
    let rows = draws.iter().enumerate().map(|(i, d)| {
        vec![
            i.to_string(),
            d.wmmse.to_string(),
            d.wmmse_iterations.to_string(),
            d.random.to_string(),
            d.max_power.to_string(),
        ]
    });
    write_rows(path, &header, rows)
}
