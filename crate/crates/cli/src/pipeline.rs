//! The pipeline stages behind the subcommands. Each stage is a plain
//! function of the resolved configuration so tests can chain them without
//! going through files.

use std::path::Path;

use fpsrl_core::data::{generate_batch, save_batch, Batch};
use fpsrl_core::dynamics::{sample_start_states, BenchmarkId, BenchmarkSpec, Region};
use fpsrl_core::fuzzy::{render_rules, Axis, Rendering, RuleLayout};
use fpsrl_core::rl_eval::{fitness, holds_goal, rollout_trajectory, Environment, EvaluationSpec, Trajectory};
use fpsrl_core::seed::derive_seed;
use fpsrl_core::swarm::{global_best, pso_optimize, IterationRecord, SwarmConfig};
use fpsrl_core::worldmodel::{train_world_model, WorldModel};
use fpsrl_core::{Error, State};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    file_digest, write_history, write_lines, Manifest, Paths, PolicyFile, StateSet, MANIFEST_FORMAT_VERSION,
    POLICY_FORMAT_VERSION, STATES_FORMAT_VERSION,
};
use crate::config::ExperimentConfig;

pub fn gen_data(config: &ExperimentConfig) -> Result<Batch, Error> {
    let spec = config.benchmark.spec();
    let d = &config.data;
    generate_batch(&spec, d.size, d.episode_len, d.exploration, config.seeds.resolve().data)
}

pub fn train_model(config: &ExperimentConfig, batch: &Batch) -> Result<WorldModel, Error> {
    let spec = config.benchmark.spec();
    let seed = config.seeds.resolve().model;
    train_world_model(batch, &spec, &config.model.depths, &config.train_config(seed))
}

/// Start states the swarm scores candidates on; fixed for the whole run.
pub fn train_states(config: &ExperimentConfig) -> Result<Vec<State>, Error> {
    let spec = config.benchmark.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seeds.resolve().swarm, &[0]));
    sample_start_states(&spec, Region::Test, config.evaluation.train_states, &mut rng)
}

pub fn test_states(config: &ExperimentConfig) -> Result<StateSet, Error> {
    let spec = config.benchmark.spec();
    let seed = config.seeds.resolve().eval;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(StateSet {
        format_version: STATES_FORMAT_VERSION,
        benchmark: config.benchmark,
        seed,
        states: sample_start_states(&spec, Region::Test, config.evaluation.test_states, &mut rng)?,
    })
}

pub fn layout(config: &ExperimentConfig) -> Result<RuleLayout, Error> {
    RuleLayout::new(config.benchmark.spec().dim, config.policy.rules, config.policy.symmetric)
}

pub fn swarm_config(config: &ExperimentConfig) -> Result<SwarmConfig, Error> {
    let spec = config.benchmark.spec();
    let (lower, upper) = layout(config)?.search_bounds(&spec.state_bounds)?;
    let s = &config.swarm;
    let mut sc = SwarmConfig::new(lower, upper, s.particles, s.iterations, config.seeds.resolve().swarm);
    sc.radius = s.radius;
    sc.inertia = s.inertia;
    sc.cognitive = s.cognitive;
    sc.social = s.social;
    sc.validate()?;
    Ok(sc)
}

#[derive(Debug, Clone)]
pub struct PolicyRun {
    pub best: PolicyFile,
    pub history: Vec<IterationRecord>,
    /// Best policy so far at each requested iteration, in request order.
    pub snapshots: Vec<PolicyFile>,
}

/// Runs the swarm against `model`. `snapshots` lists iterations after
/// which the best policy so far is also kept; `progress` sees every
/// iteration record.
pub fn train_policy(
    config: &ExperimentConfig,
    model: &WorldModel,
    snapshots: &[usize],
    mut progress: impl FnMut(&IterationRecord),
) -> Result<PolicyRun, Error> {
    let spec = config.benchmark.spec();
    if model.benchmark != config.benchmark {
        return Err(Error::Contract(format!(
            "model is for {}, configuration is for {}",
            model.benchmark, config.benchmark
        )));
    }
    let layout = layout(config)?;
    let sc = swarm_config(config)?;
    let eval = EvaluationSpec::uniform(config.evaluation.horizon, config.evaluation.q, train_states(config)?)?;
    let scale = spec.max_action;
    let make = |x: &[f64], f: f64, iteration: usize| -> Result<PolicyFile, Error> {
        Ok(PolicyFile {
            format_version: POLICY_FORMAT_VERSION,
            benchmark: config.benchmark,
            layout,
            search_vector: x.to_vec(),
            model_fitness: f,
            iteration,
            policy: layout.decode(x, scale)?,
        })
    };
    let mut kept: Vec<Option<(Vec<f64>, f64, usize)>> = vec![None; snapshots.len()];
    let result = pso_optimize(
        |x| fitness(x, &layout, scale, model, &eval),
        &sc,
        |record, particles| {
            progress(record);
            for (slot, &at) in kept.iter_mut().zip(snapshots) {
                if record.iteration == at {
                    let p = &particles[global_best(particles)];
                    *slot = Some((p.best_position.clone(), p.best_fitness, at));
                }
            }
        },
    )?;
    let snapshots = kept
        .into_iter()
        .zip(snapshots)
        .map(|(slot, &at)| match slot {
            Some((x, f, it)) => make(&x, f, it),
            None => Err(Error::Config(format!(
                "snapshot iteration {at} exceeds the {} configured iterations",
                sc.iterations
            ))),
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PolicyRun {
        best: make(&result.best_position, result.best_fitness, sc.iterations)?,
        history: result.history,
        snapshots,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Model,
    True,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Model => "model",
            Target::True => "true",
        }
    }
}

/// Summary of one policy on one set of start states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub target: Target,
    pub benchmark: BenchmarkId,
    pub states: usize,
    pub horizon: usize,
    pub gamma: f64,
    /// Mean discounted return, the fitness `F` (or `F̃` on the model).
    pub fitness: f64,
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub success_rate: f64,
}

/// Whether a trajectory solves the task: mountain car ends at the goal,
/// balancing never fails, swing-up spends its final `window` steps upright
/// and centered.
pub fn succeeded(spec: &BenchmarkSpec, traj: &Trajectory, window: usize) -> bool {
    match spec.id {
        BenchmarkId::MountainCar => traj.states.last().is_some_and(|s| spec.in_goal(s)),
        BenchmarkId::CartPoleBalance => !traj.states.iter().any(|s| spec.is_absorbing(s)),
        BenchmarkId::CartPoleSwingUp => holds_goal(spec, traj, window),
    }
}

/// Nearest-rank quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

pub fn evaluate_policy<E: Environment + ?Sized>(
    env: &E,
    target: Target,
    config: &ExperimentConfig,
    policy: &PolicyFile,
    states: &[State],
) -> Result<EvalRecord, Error> {
    let spec = config.benchmark.spec();
    let ev = &config.evaluation;
    let eval = EvaluationSpec::uniform(ev.horizon, ev.q, states.to_vec())?;
    let outcomes: Vec<(f64, bool)> = states
        .par_iter()
        .map(|s| {
            let traj = rollout_trajectory(env, &policy.policy, s, ev.horizon)?;
            // same accumulation order as the fitness function
            let (mut ret, mut weight) = (0.0, 1.0);
            for r in &traj.rewards {
                ret += weight * r;
                weight *= eval.gamma;
            }
            Ok((ret, succeeded(&spec, &traj, ev.success_window)))
        })
        .collect::<Result<_, Error>>()?;
    let fitness: f64 = outcomes.iter().zip(&eval.weights).map(|((r, _), w)| w * r).sum();
    let mut sorted: Vec<f64> = outcomes.iter().map(|(r, _)| *r).collect();
    sorted.sort_by(f64::total_cmp);
    let hits = outcomes.iter().filter(|(_, ok)| *ok).count();
    Ok(EvalRecord {
        target,
        benchmark: config.benchmark,
        states: states.len(),
        horizon: ev.horizon,
        gamma: eval.gamma,
        fitness,
        min: sorted[0],
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
        max: sorted[sorted.len() - 1],
        success_rate: hits as f64 / states.len() as f64,
    })
}

/// Rule plots with three example states taken from a true-plant rollout of
/// the policy from the first start state.
pub fn render(policy: &PolicyFile, start: &State, horizon: usize) -> Result<Rendering, Error> {
    let spec = policy.benchmark.spec();
    let axes: Vec<Axis> = spec
        .labels
        .iter()
        .zip(&spec.state_bounds)
        .map(|(l, &range)| Axis {
            name: l.name.to_string(),
            unit: l.unit.to_string(),
            range,
        })
        .collect();
    let traj = rollout_trajectory(&spec, &policy.policy, start, horizon)?;
    let samples: Vec<State> = [0, horizon / 4, horizon / 2].iter().map(|&k| traj.states[k]).collect();
    render_rules(&policy.policy, &axes, &samples)
}

/// Result of a full `reproduce` run.
#[derive(Debug, Clone)]
pub struct Reproduction {
    pub manifest: Manifest,
    pub model: WorldModel,
    pub run: PolicyRun,
    pub records: Vec<EvalRecord>,
    pub states: StateSet,
}

/// gen-data → train-model → train-policy → evaluate (model and true) →
/// render, writing every artifact and a manifest into `paths`.
pub fn reproduce(
    config: &ExperimentConfig,
    paths: &Paths,
    snapshots: &[usize],
    progress: impl FnMut(&IterationRecord),
) -> Result<Reproduction, Error> {
    paths.ensure()?;
    std::fs::write(paths.config(), config.to_toml())?;
    let batch = gen_data(config)?;
    save_batch(&batch, &paths.batch())?;
    log::info!("generated {} transitions", batch.len());
    let model = train_model(config, &batch)?;
    model.save(&paths.model())?;
    log::info!("trained world model");
    let states = test_states(config)?;
    states.save(&paths.test_states())?;
    let run = train_policy(config, &model, snapshots, progress)?;
    run.best.save(&paths.policy())?;
    for snap in &run.snapshots {
        snap.save(&paths.snapshot(snap.iteration))?;
    }
    write_history(&paths.history(), &run.history)?;
    let spec = config.benchmark.spec();
    let records = vec![
        evaluate_policy(&model, Target::Model, config, &run.best, &states.states)?,
        evaluate_policy(&spec, Target::True, config, &run.best, &states.states)?,
    ];
    write_lines(&paths.eval_report(), &records)?;
    let rendering = render(&run.best, &states.states[0], config.evaluation.horizon)?;
    std::fs::write(paths.render_svg(), &rendering.svg)?;
    std::fs::write(paths.render_text(), &rendering.text)?;

    let mut artifacts = Vec::new();
    for path in [
        paths.config(),
        paths.batch(),
        paths.model(),
        paths.test_states(),
        paths.policy(),
        paths.history(),
        paths.eval_report(),
        paths.render_svg(),
        paths.render_text(),
    ] {
        artifacts.push((file_name(&path), file_digest(&path)?));
    }
    let manifest = Manifest {
        format_version: MANIFEST_FORMAT_VERSION,
        benchmark: config.benchmark,
        batch_size: config.data.size,
        seeds: config.seeds.resolve(),
        config_sha256: config.hash(),
        artifacts,
        true_fitness: records[1].fitness,
        success_rate: records[1].success_rate,
    };
    manifest.save(&paths.manifest())?;
    Ok(Reproduction {
        manifest,
        model,
        run,
        records,
        states,
    })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Human-readable evaluation table, one row per record.
pub fn eval_table(records: &[EvalRecord]) -> String {
    let mut out = format!(
        "{:<7}{:>7}{:>11}{:>10}{:>10}{:>10}{:>10}{:>10}{:>9}\n",
        "target", "states", "fitness", "min", "q25", "median", "q75", "max", "success"
    );
    for r in records {
        out.push_str(&format!(
            "{:<7}{:>7}{:>11.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>10.3}{:>9.3}\n",
            r.target.as_str(),
            r.states,
            r.fitness,
            r.min,
            r.q25,
            r.median,
            r.q75,
            r.max,
            r.success_rate
        ));
    }
    out
}
