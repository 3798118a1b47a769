//! On-disk artifacts of a run and where they live.

use std::fs;
use std::path::{Path, PathBuf};

use fpsrl_core::dynamics::BenchmarkId;
use fpsrl_core::fuzzy::{FuzzyPolicyParams, RuleLayout};
use fpsrl_core::swarm::IterationRecord;
use fpsrl_core::{Error, State};
use serde::{Deserialize, Serialize};

use crate::config::{hex_digest, ResolvedSeeds};

pub const POLICY_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const STATES_FORMAT_VERSION: u32 = 1;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "FPSRL_OUT";
pub const DEFAULT_OUT: &str = "fpsrl-out";

/// File names inside one output directory.
#[derive(Debug, Clone)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Paths { root: root.into() }
    }

    /// `--out` if given, else `$FPSRL_OUT`, else `./fpsrl-out`.
    pub fn resolve(out: Option<&Path>) -> Self {
        match out {
            Some(p) => Self::new(p),
            None => Self::new(std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_OUT.into())),
        }
    }

    pub fn ensure(&self) -> std::io::Result<()> {
        fs::create_dir_all(&self.root)
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn batch(&self) -> PathBuf {
        self.root.join("batch.jsonl")
    }
    pub fn model(&self) -> PathBuf {
        self.root.join("model.json")
    }
    pub fn policy(&self) -> PathBuf {
        self.root.join("policy.json")
    }
    pub fn snapshot(&self, iteration: usize) -> PathBuf {
        self.root.join(format!("policy-iter{iteration}.json"))
    }
    pub fn history(&self) -> PathBuf {
        self.root.join("history.jsonl")
    }
    pub fn test_states(&self) -> PathBuf {
        self.root.join("test_states.json")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval_report.jsonl")
    }
    pub fn render_svg(&self) -> PathBuf {
        self.root.join("render.svg")
    }
    pub fn render_text(&self) -> PathBuf {
        self.root.join("render.txt")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }
}

/// A trained policy: the swarm's search vector together with the full rule
/// set it decodes to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyFile {
    pub format_version: u32,
    pub benchmark: BenchmarkId,
    pub layout: RuleLayout,
    /// Free parameters as searched by the swarm.
    pub search_vector: Vec<f64>,
    /// Model-based fitness the swarm assigned to `search_vector`.
    pub model_fitness: f64,
    pub iteration: usize,
    pub policy: FuzzyPolicyParams,
}

impl PolicyFile {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_json(path, self)
    }

    /// Loads and checks that the stored rules are what the search vector
    /// decodes to.
    pub fn load(path: &Path) -> Result<Self, Error> {
        let file: PolicyFile = read_json(path)?;
        if file.format_version != POLICY_FORMAT_VERSION {
            return Err(Error::Version {
                expected: POLICY_FORMAT_VERSION,
                found: file.format_version,
            });
        }
        let spec = file.benchmark.spec();
        if file.layout.dim != spec.dim {
            return Err(Error::Dimension {
                expected: spec.dim,
                found: file.layout.dim,
            });
        }
        let decoded = file.layout.decode(&file.search_vector, file.policy.scale)?;
        if decoded != file.policy {
            return Err(Error::Contract(format!(
                "{}: rules do not match the stored search vector",
                path.display()
            )));
        }
        Ok(file)
    }
}

/// Persisted evaluation start states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSet {
    pub format_version: u32,
    pub benchmark: BenchmarkId,
    pub seed: u64,
    pub states: Vec<State>,
}

impl StateSet {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let set: StateSet = read_json(path)?;
        if set.format_version != STATES_FORMAT_VERSION {
            return Err(Error::Version {
                expected: STATES_FORMAT_VERSION,
                found: set.format_version,
            });
        }
        let dim = set.benchmark.spec().dim;
        if let Some(s) = set.states.iter().find(|s| s.dim() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                found: s.dim(),
            });
        }
        Ok(set)
    }
}

/// Ties the artifacts of a `reproduce` run to its configuration and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub benchmark: BenchmarkId,
    pub batch_size: usize,
    pub seeds: ResolvedSeeds,
    pub config_sha256: String,
    /// `(file name, SHA-256)` in pipeline order.
    pub artifacts: Vec<(String, String)>,
    pub true_fitness: f64,
    pub success_rate: f64,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_json_pretty(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let m: Manifest = read_json(path)?;
        if m.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Version {
                expected: MANIFEST_FORMAT_VERSION,
                found: m.format_version,
            });
        }
        Ok(m)
    }
}

pub fn file_digest(path: &Path) -> Result<String, Error> {
    Ok(hex_digest(&fs::read(path)?))
}

pub fn write_history(path: &Path, history: &[IterationRecord]) -> Result<(), Error> {
    write_lines(path, history)
}

pub fn read_history(path: &Path) -> Result<Vec<IterationRecord>, Error> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_lines<T: Serialize>(path: &Path, records: &[T]) -> Result<(), Error> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r)?);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_json_pretty<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}
