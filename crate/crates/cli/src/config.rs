//! Experiment configuration: built-in per-benchmark defaults, TOML files
//! that override any subset of them, and derived seeds.

use std::path::Path;

use fpsrl_core::dynamics::{BenchmarkId, ExplorationKind};
use fpsrl_core::seed::derive_seed;
use fpsrl_core::swarm::{DEFAULT_ACCELERATION, DEFAULT_INERTIA};
use fpsrl_core::worldmodel::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub benchmark: BenchmarkId,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub swarm: SwarmSettings,
    pub policy: PolicyConfig,
    pub evaluation: EvaluationConfig,
    pub seeds: Seeds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub size: usize,
    pub episode_len: usize,
    pub exploration: ExplorationKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Hidden-layer counts tried for every network.
    pub depths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay: f64,
    pub patience: usize,
    pub min_learning_rate: f64,
    pub epoch_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmSettings {
    pub particles: usize,
    pub iterations: usize,
    pub radius: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub rules: usize,
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub horizon: usize,
    /// Weight of the last reward inside the horizon; sets the discount.
    pub q: f64,
    /// Start states the swarm scores candidates on.
    pub train_states: usize,
    /// Start states for reporting.
    pub test_states: usize,
    /// Final steps a trajectory must spend in the goal region to count as a
    /// success (swing-up only).
    pub success_window: usize,
    /// `evaluate` exits with status 3 below either bar.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_fitness: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_success_rate: Option<f64>,
}

/// The master seed and optional explicit per-stage seeds. Unset stage seeds
/// are derived from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub master: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swarm: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolvedSeeds {
    pub master: u64,
    pub data: u64,
    pub model: u64,
    pub swarm: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn resolve(&self) -> ResolvedSeeds {
        let m = self.master;
        ResolvedSeeds {
            master: m,
            data: self.data.unwrap_or_else(|| derive_seed(m, &[1])),
            model: self.model.unwrap_or_else(|| derive_seed(m, &[2])),
            swarm: self.swarm.unwrap_or_else(|| derive_seed(m, &[3])),
            eval: self.eval.unwrap_or_else(|| derive_seed(m, &[4])),
        }
    }
}

impl ExperimentConfig {
    /// The experimental setup table's row for `benchmark`.
    pub fn defaults(benchmark: BenchmarkId) -> Self {
        let spec = benchmark.spec();
        let train = TrainConfig::default();
        let (particles, rules, symmetric, train_states, test_states) = match benchmark {
            BenchmarkId::MountainCar => (100, 2, false, 100, 100),
            BenchmarkId::CartPoleBalance => (100, 2, true, 100, 1000),
            BenchmarkId::CartPoleSwingUp => (1000, 4, true, 50, 1000),
        };
        ExperimentConfig {
            benchmark,
            data: DataConfig {
                size: 10_000,
                episode_len: spec.episode_len,
                exploration: spec.exploration,
            },
            model: ModelConfig {
                depths: vec![1, 2, 3],
                epochs: train.epochs,
                batch_size: train.batch_size,
                learning_rate: train.learning_rate,
                decay: train.decay,
                patience: train.patience,
                min_learning_rate: train.min_learning_rate,
                epoch_samples: train.epoch_samples,
            },
            swarm: SwarmSettings {
                particles,
                iterations: 1000,
                radius: 1,
                inertia: DEFAULT_INERTIA,
                cognitive: DEFAULT_ACCELERATION,
                social: DEFAULT_ACCELERATION,
            },
            policy: PolicyConfig { rules, symmetric },
            evaluation: EvaluationConfig {
                horizon: spec.horizon,
                q: 0.05,
                train_states,
                test_states,
                success_window: 50,
                min_fitness: None,
                min_success_rate: None,
            },
            seeds: Seeds {
                master: 0,
                data: None,
                model: None,
                swarm: None,
                eval: None,
            },
        }
    }

    /// Defaults for the benchmark, overridden by whatever `text` sets.
    /// `benchmark` wins over a benchmark named in the text.
    pub fn from_toml(text: &str, benchmark: Option<BenchmarkId>) -> Result<Self, CliError> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {e}")))?;
        let named = match user.get("benchmark") {
            Some(toml::Value::String(s)) => Some(
                s.parse::<BenchmarkId>()
                    .map_err(|e| CliError::Usage(format!("config: {e}")))?,
            ),
            Some(_) => return Err(CliError::Usage("config: `benchmark` must be a string".into())),
            None => None,
        };
        let id = benchmark
            .or(named)
            .ok_or_else(|| CliError::Usage("no benchmark given (use --benchmark or set it in the config)".into()))?;
        let mut merged = toml::Table::try_from(Self::defaults(id)).expect("defaults serialize");
        merge(&mut merged, user);
        merged.insert("benchmark".into(), toml::Value::String(id.as_str().into()));
        let config: ExperimentConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Usage(format!("config: {}", e.message())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path, benchmark: Option<BenchmarkId>) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text, benchmark)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the emitted TOML, hex encoded.
    pub fn hash(&self) -> String {
        hex_digest(self.to_toml().as_bytes())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Usage(format!("config: {m}")));
        if self.data.size == 0 || self.data.episode_len == 0 {
            return bad("data.size and data.episode_len must be positive");
        }
        if self.model.depths.is_empty() || self.model.depths.iter().any(|&d| d == 0 || d > 5) {
            return bad("model.depths must list hidden-layer counts between 1 and 5");
        }
        if self.model.batch_size == 0 || self.model.epochs == 0 || !(self.model.learning_rate > 0.0) {
            return bad("model.epochs, model.batch_size and model.learning_rate must be positive");
        }
        if self.swarm.particles == 0 {
            return bad("swarm.particles must be positive");
        }
        if self.policy.rules == 0 || (self.policy.symmetric && self.policy.rules % 2 == 1) {
            return bad("policy.rules must be positive, and even for symmetric policies");
        }
        if self.evaluation.horizon < 2 || !(0.0..=1.0).contains(&self.evaluation.q) {
            return bad("evaluation.horizon must exceed 1 and evaluation.q must lie in [0, 1]");
        }
        if self.evaluation.train_states == 0 || self.evaluation.test_states == 0 {
            return bad("evaluation.train_states and evaluation.test_states must be positive");
        }
        Ok(())
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let m = &self.model;
        TrainConfig {
            epochs: m.epochs,
            batch_size: m.batch_size,
            learning_rate: m.learning_rate,
            decay: m.decay,
            patience: m.patience,
            min_learning_rate: m.min_learning_rate,
            epoch_samples: m.epoch_samples,
            seed,
        }
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (key, value) in over {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
