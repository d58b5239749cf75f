//! Plain-text checkpoints.
//!
//! ```text
//! fetrpo-ckpt v1
//! policy 48 400 300 3
//! log_std_mode shared
//! value 48 400 300 1
//! memory 2
//! iteration 17
//! THETA
//! <one value per line>
//! PHI
//! ...
//! MEM1
//! ...
//! MEM2
//! ...
//! RNG
//! seed <64 hex digits>
//! stream <u64>
//! word_pos <u128>
//! ```
//!
//! Values are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use fetrpo_core::mlp::{MlpArchitecture, ParamVector};
use fetrpo_core::policy::{LogStdMode, PolicySnapshot};
use fetrpo_core::trpo::{ExperienceMemory, TrainConfig, Trainer};
use rand_chacha::ChaCha8Rng;

use crate::error::{io_err, HarnessError, Result};

pub const HEADER: &str = "fetrpo-ckpt v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// `[obs_dim, hidden..., action_dim]`.
    pub policy_dims: Vec<usize>,
    pub log_std_mode: LogStdMode,
    /// `[obs_dim, hidden..., 1]`.
    pub value_dims: Vec<usize>,
    pub iteration: usize,
    pub theta: ParamVector,
    pub phi: ParamVector,
    pub memory: Vec<ParamVector>,
    pub rng: RngState,
}

fn policy_arch(dims: &[usize], mode: LogStdMode) -> Result<MlpArchitecture> {
    if dims.len() < 2 {
        return Err(HarnessError::CheckpointParse {
            line: 2,
            message: "policy needs at least input and output widths".into(),
        });
    }
    Ok(PolicySnapshot::architecture(dims[0], &dims[1..dims.len() - 1], dims[dims.len() - 1], mode)?)
}

fn policy_len(dims: &[usize], mode: LogStdMode) -> Result<usize> {
    let arch = policy_arch(dims, mode)?;
    Ok(match mode {
        LogStdMode::SharedVector => arch.param_count() + arch.output_dim(),
        LogStdMode::Head => arch.param_count(),
    })
}

fn is_section(line: &str) -> bool {
    matches!(line, "THETA" | "PHI" | "RNG")
        || line
            .strip_prefix("MEM")
            .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer, rng: &ChaCha8Rng) -> Self {
        let p = trainer.policy();
        let mut policy_dims = vec![p.obs_dim()];
        policy_dims.extend_from_slice(p.hidden());
        policy_dims.push(p.action_dim());
        Self {
            policy_dims,
            log_std_mode: p.mode(),
            value_dims: trainer.value_arch().layer_dims().to_vec(),
            iteration: trainer.iteration(),
            theta: p.params().clone(),
            phi: trainer.value_params().clone(),
            memory: trainer.memory().slots().iter().map(|s| s.params().clone()).collect(),
            rng: RngState::capture(rng),
        }
    }

    pub fn policy(&self) -> Result<PolicySnapshot> {
        let arch = policy_arch(&self.policy_dims, self.log_std_mode)?;
        Ok(PolicySnapshot::new(arch, self.log_std_mode, self.theta.clone())?)
    }

    /// Rebuilds a trainer; `cfg` must describe the same networks and `M`.
    pub fn trainer(&self, cfg: TrainConfig) -> Result<Trainer> {
        let policy = self.policy()?;
        let slots = self
            .memory
            .iter()
            .map(|m| policy.with_params(m.clone()))
            .collect::<fetrpo_core::Result<Vec<_>>>()?;
        if cfg.value_arch(policy.obs_dim())?.layer_dims() != self.value_dims.as_slice() {
            return Err(HarnessError::InvalidConfig("value network in checkpoint differs from the configuration".into()));
        }
        if cfg.policy_hidden != policy.hidden() || cfg.log_std_mode != policy.mode() {
            return Err(HarnessError::InvalidConfig("policy network in checkpoint differs from the configuration".into()));
        }
        Ok(Trainer::from_parts(cfg, policy, self.phi.clone(), ExperienceMemory::from_slots(slots), self.iteration)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let dims = |d: &[usize]| d.iter().map(usize::to_string).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "policy {}", dims(&self.policy_dims));
        let _ = writeln!(
            s,
            "log_std_mode {}",
            match self.log_std_mode {
                LogStdMode::SharedVector => "shared",
                LogStdMode::Head => "head",
            }
        );
        let _ = writeln!(s, "value {}", dims(&self.value_dims));
        let _ = writeln!(s, "memory {}", self.memory.len());
        let _ = writeln!(s, "iteration {}", self.iteration);
        let mut section = |name: &str, values: &[f64]| {
            let _ = writeln!(s, "{name}");
            for v in values {
                let _ = writeln!(s, "{v:?}");
            }
        };
        section("THETA", &self.theta);
        section("PHI", &self.phi);
        for (m, slot) in self.memory.iter().enumerate() {
            section(&format!("MEM{}", m + 1), slot);
        }
        let _ = writeln!(s, "RNG");
        let hex: String = self.rng.seed.iter().map(|b| format!("{b:02x}")).collect();
        let _ = writeln!(s, "seed {hex}");
        let _ = writeln!(s, "stream {}", self.rng.stream);
        let _ = writeln!(s, "word_pos {}", self.rng.word_pos);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).peekable();
        let first = lines.next().map(|(_, l)| l).unwrap_or("");
        if first != HEADER {
            return Err(HarnessError::CheckpointVersion { found: first.to_string() });
        }
        let mut field = |name: &str| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, l)) => match l.split_once(' ') {
                    Some((k, v)) if k == name => Ok((n, v.to_string())),
                    _ => Err(HarnessError::CheckpointParse {
                        line: n,
                        message: format!("expected `{name} ...`"),
                    }),
                },
                None => Err(HarnessError::CheckpointCount {
                    section: "header".into(),
                    expected: 1,
                    found: 0,
                }),
            }
        };
        let parse_usize = |n: usize, v: &str| {
            v.parse::<usize>().map_err(|e| HarnessError::CheckpointParse {
                line: n,
                message: format!("`{v}`: {e}"),
            })
        };
        let parse_dims = |n: usize, v: &str| v.split_whitespace().map(|d| parse_usize(n, d)).collect::<Result<Vec<_>>>();
        let (n, v) = field("policy")?;
        let policy_dims = parse_dims(n, &v)?;
        let (n, v) = field("log_std_mode")?;
        let log_std_mode = match v.as_str() {
            "shared" => LogStdMode::SharedVector,
            "head" => LogStdMode::Head,
            other => {
                return Err(HarnessError::CheckpointParse {
                    line: n,
                    message: format!("unknown log_std_mode `{other}`"),
                })
            }
        };
        let (n, v) = field("value")?;
        let value_dims = parse_dims(n, &v)?;
        let (n, v) = field("memory")?;
        let memory_size = parse_usize(n, &v)?;
        let (n, v) = field("iteration")?;
        let iteration = parse_usize(n, &v)?;

        let theta_len = policy_len(&policy_dims, log_std_mode)?;
        let value_len = MlpArchitecture::tanh(value_dims.clone())?.param_count();

        let mut section = |name: &str, expected: usize| -> Result<ParamVector> {
            match lines.next() {
                Some((_, l)) if l == name => {}
                Some((n, l)) => {
                    return Err(HarnessError::CheckpointParse {
                        line: n,
                        message: format!("expected section {name}, found `{l}`"),
                    })
                }
                None => {
                    return Err(HarnessError::CheckpointCount {
                        section: name.into(),
                        expected,
                        found: 0,
                    })
                }
            }
            let mut values = Vec::with_capacity(expected);
            while let Some(&(n, l)) = lines.peek() {
                if is_section(l) {
                    break;
                }
                lines.next();
                values.push(l.parse::<f64>().map_err(|e| HarnessError::CheckpointParse {
                    line: n,
                    message: format!("`{l}`: {e}"),
                })?);
            }
            if values.len() != expected {
                return Err(HarnessError::CheckpointCount {
                    section: name.into(),
                    expected,
                    found: values.len(),
                });
            }
            Ok(ParamVector::from_vec(values))
        };
        let theta = section("THETA", theta_len)?;
        let phi = section("PHI", value_len)?;
        let memory = (1..=memory_size)
            .map(|m| section(&format!("MEM{m}"), theta_len))
            .collect::<Result<Vec<_>>>()?;

        match lines.next() {
            Some((_, "RNG")) => {}
            Some((n, l)) => {
                return Err(HarnessError::CheckpointParse {
                    line: n,
                    message: format!("expected section RNG, found `{l}`"),
                })
            }
            None => {
                return Err(HarnessError::CheckpointCount {
                    section: "RNG".into(),
                    expected: 3,
                    found: 0,
                })
            }
        }
        let mut rng_field = |name: &str, found: usize| -> Result<(usize, String)> {
            match lines.next() {
                Some((n, l)) => match l.split_once(' ') {
                    Some((k, v)) if k == name => Ok((n, v.to_string())),
                    _ => Err(HarnessError::CheckpointParse {
                        line: n,
                        message: format!("expected `{name} ...`"),
                    }),
                },
                None => Err(HarnessError::CheckpointCount {
                    section: "RNG".into(),
                    expected: 3,
                    found,
                }),
            }
        };
        let (n, hex) = rng_field("seed", 0)?;
        let bad_seed = || HarnessError::CheckpointParse {
            line: n,
            message: "seed must be 64 hex digits".into(),
        };
        if hex.len() != 64 || !hex.is_ascii() {
            return Err(bad_seed());
        }
        let mut seed = [0u8; 32];
        for (i, b) in seed.iter_mut().enumerate() {
            *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).map_err(|_| bad_seed())?;
        }
        let (n, v) = rng_field("stream", 1)?;
        let stream = v.parse().map_err(|e| HarnessError::CheckpointParse {
            line: n,
            message: format!("`{v}`: {e}"),
        })?;
        let (n, v) = rng_field("word_pos", 2)?;
        let word_pos = v.parse().map_err(|e| HarnessError::CheckpointParse {
            line: n,
            message: format!("`{v}`: {e}"),
        })?;
        if let Some((n, l)) = lines.find(|(_, l)| !l.is_empty()) {
            return Err(HarnessError::CheckpointParse {
                line: n,
                message: format!("trailing content `{l}`"),
            });
        }
        Ok(Self {
            policy_dims,
            log_std_mode,
            value_dims,
            iteration,
            theta,
            phi,
            memory,
            rng: RngState { seed, stream, word_pos },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text)
    }
}
