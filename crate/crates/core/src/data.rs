//! Transition batches: generation by exploration on the true plant, and
//! JSON Lines persistence.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{sample_box, BenchmarkId, BenchmarkSpec, ExplorationKind};
use crate::error::{Error, Result};
use crate::seed::derive_seed;
use crate::state::State;

pub const BATCH_FORMAT_VERSION: u32 = 1;

/// Random-walk increments are uniform in this fraction of the action range.
pub const RANDOM_WALK_STEP: f64 = 0.2;

/// One observed `(s, a, s', r)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub traj: u64,
    pub step: u32,
    pub s: State,
    pub a: f64,
    pub s_next: State,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchHeader {
    pub format_version: u32,
    pub benchmark: BenchmarkId,
    pub seed: u64,
    pub policy_kind: ExplorationKind,
    pub episode_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub benchmark: BenchmarkId,
    pub seed: u64,
    pub policy_kind: ExplorationKind,
    pub episode_len: usize,
    pub transitions: Vec<Transition>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn header(&self) -> BatchHeader {
        BatchHeader {
            format_version: BATCH_FORMAT_VERSION,
            benchmark: self.benchmark,
            seed: self.seed,
            policy_kind: self.policy_kind,
            episode_len: self.episode_len,
        }
    }

    pub fn trajectory_count(&self) -> usize {
        let mut ids: Vec<u64> = self.transitions.iter().map(|t| t.traj).collect();
        ids.dedup();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Count of transitions per distinct reward value, keyed by its
    /// shortest decimal form.
    pub fn reward_histogram(&self) -> BTreeMap<String, usize> {
        let mut hist = BTreeMap::new();
        for t in &self.transitions {
            *hist.entry(format!("{}", t.r)).or_insert(0) += 1;
        }
        hist
    }
}

/// Rolls the exploration policy out on the true plant from random start
/// states until exactly `size` transitions are recorded.
///
/// Each trajectory draws from its own seeded stream. Mountain-car episodes
/// end early when the goal is reached.
pub fn generate_batch(
    spec: &BenchmarkSpec,
    size: usize,
    episode_len: usize,
    kind: ExplorationKind,
    seed: u64,
) -> Result<Batch> {
    if size == 0 || episode_len == 0 {
        return Err(Error::Config("batch size and episode length must be positive".into()));
    }
    let mut transitions = Vec::with_capacity(size);
    let max = spec.max_action;
    let mut traj = 0u64;
    while transitions.len() < size {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[traj]));
        let mut s = sample_box(&spec.start_region, &mut rng);
        let mut a = 0.0;
        for step in 0..episode_len {
            if transitions.len() == size {
                break;
            }
            a = match kind {
                ExplorationKind::UniformRandom => rng.gen_range(-max..=max),
                ExplorationKind::RandomWalk => {
                    let delta = RANDOM_WALK_STEP * 2.0 * max;
                    (a + rng.gen_range(-delta..=delta)).clamp(-max, max)
                }
            };
            let (next, r) = spec.step(&s, a)?;
            transitions.push(Transition {
                traj,
                step: step as u32,
                s,
                a,
                s_next: next,
                r,
            });
            s = next;
            if spec.id == BenchmarkId::MountainCar && spec.is_absorbing(&s) {
                break;
            }
        }
        traj += 1;
    }
    Ok(Batch {
        benchmark: spec.id,
        seed,
        policy_kind: kind,
        episode_len,
        transitions,
    })
}

/// Checks that every stored transition is reproduced exactly by the plant.
/// Returns the index of the first mismatch.
pub fn validate_batch(batch: &Batch, spec: &BenchmarkSpec) -> Result<(), usize> {
    for (i, t) in batch.transitions.iter().enumerate() {
        match spec.step(&t.s, t.a) {
            Ok((next, r)) if next == t.s_next && r.to_bits() == t.r.to_bits() => {}
            _ => return Err(i),
        }
    }
    Ok(())
}

pub fn save_batch(batch: &Batch, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &batch.header())?;
    w.write_all(b"\n")?;
    for t in &batch.transitions {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_batch(path: &Path) -> Result<Batch> {
    let reader = BufReader::new(File::open(path)?);
    let where_ = path.display().to_string();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: where_.clone(),
        line,
        message,
    };
    let mut lines = reader.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file, missing header".into()))??;
    let header: BatchHeader =
        serde_json::from_str(&header_line).map_err(|e| parse_err(1, format!("bad header: {e}")))?;
    if header.format_version != BATCH_FORMAT_VERSION {
        return Err(Error::Version {
            expected: BATCH_FORMAT_VERSION,
            found: header.format_version,
        });
    }
    let dim = header.benchmark.spec().dim;
    let mut transitions = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition =
            serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("bad transition: {e}")))?;
        if t.s.dim() != dim || t.s_next.dim() != dim {
            return Err(parse_err(lineno, format!("state dimension differs from {dim}")));
        }
        transitions.push(t);
    }
    if transitions.is_empty() {
        return Err(parse_err(1, "batch has no transitions".into()));
    }
    Ok(Batch {
        benchmark: header.benchmark,
        seed: header.seed,
        policy_kind: header.policy_kind,
        episode_len: header.episode_len,
        transitions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_size_and_episode_length() {
        let spec = BenchmarkId::CartPoleSwingUp.spec();
        let batch = generate_batch(&spec, 1_234, 500, ExplorationKind::RandomWalk, 3).unwrap();
        assert_eq!(batch.len(), 1_234);
        assert!(batch.transitions.iter().all(|t| (t.step as usize) < 500));
        assert_eq!(batch.trajectory_count(), 3);
    }

    #[test]
    fn same_seed_same_batch() {
        let spec = BenchmarkId::MountainCar.spec();
        let a = generate_batch(&spec, 1_000, 200, ExplorationKind::UniformRandom, 8).unwrap();
        let b = generate_batch(&spec, 1_000, 200, ExplorationKind::UniformRandom, 8).unwrap();
        assert_eq!(a, b);
        let c = generate_batch(&spec, 1_000, 200, ExplorationKind::UniformRandom, 9).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_transition_is_reproduced_by_the_plant() {
        for id in BenchmarkId::ALL {
            let spec = id.spec();
            let batch = generate_batch(&spec, 2_000, spec.episode_len, spec.exploration, 1).unwrap();
            assert_eq!(validate_batch(&batch, &spec), Ok(()), "{id}");
            let mut broken = batch.clone();
            broken.transitions[17].r += 0.5;
            assert_eq!(validate_batch(&broken, &spec), Err(17));
        }
    }

    #[test]
    fn random_walk_stays_in_bounds() {
        let spec = BenchmarkId::CartPoleBalance.spec();
        let batch = generate_batch(&spec, 5_000, 100, ExplorationKind::RandomWalk, 4).unwrap();
        assert!(batch.transitions.iter().all(|t| t.a.abs() <= spec.max_action));
        // consecutive actions within one trajectory differ by at most the step
        for w in batch.transitions.windows(2) {
            if w[0].traj == w[1].traj {
                assert!((w[1].a - w[0].a).abs() <= RANDOM_WALK_STEP * 2.0 * spec.max_action + 1e-12);
            }
        }
    }

    #[test]
    fn mc_episodes_stop_at_goal() {
        let spec = BenchmarkId::MountainCar.spec();
        let batch = generate_batch(&spec, 20_000, 200, ExplorationKind::UniformRandom, 5).unwrap();
        for w in batch.transitions.windows(2) {
            if w[0].traj == w[1].traj {
                assert!(w[0].s_next[0] < 0.6);
            }
        }
        assert!(batch.reward_histogram().contains_key("0"));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.jsonl");
        let spec = BenchmarkId::CartPoleBalance.spec();
        let batch = generate_batch(&spec, 1_000, 100, ExplorationKind::RandomWalk, 12).unwrap();
        save_batch(&batch, &path).unwrap();
        let back = load_batch(&path).unwrap();
        assert_eq!(back, batch);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with(
            r#"{"format_version":1,"benchmark":"cpb","seed":12,"policy_kind":"random-walk","episode_len":100}"#
        ));
        assert!(text.lines().nth(1).unwrap().starts_with(r#"{"traj":0,"step":0,"s":["#));
    }

    #[test]
    fn truncated_file_names_the_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.jsonl");
        let spec = BenchmarkId::MountainCar.spec();
        let batch = generate_batch(&spec, 50, 200, ExplorationKind::UniformRandom, 1).unwrap();
        save_batch(&batch, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        std::fs::write(&path, &text[..text.len() - 20]).unwrap();
        match load_batch(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 51),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.jsonl");
        std::fs::write(
            &path,
            "{\"format_version\":7,\"benchmark\":\"mc\",\"seed\":1,\"policy_kind\":\"uniform-random\",\"episode_len\":200}\n",
        )
        .unwrap();
        assert!(matches!(load_batch(&path), Err(Error::Version { found: 7, .. })));
    }
}
