//! Argument parsing and subcommand dispatch.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use fpsrl_core::data::{load_batch, save_batch, validate_batch};
use fpsrl_core::dynamics::BenchmarkId;
use fpsrl_core::worldmodel::WorldModel;

use crate::artifacts::{write_history, write_lines, Paths, PolicyFile, StateSet};
use crate::config::ExperimentConfig;
use crate::pipeline::{self, EvalRecord, Target};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "fpsrl", version, about = "Fuzzy particle swarm reinforcement learning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BenchmarkArg {
    Mc,
    Cpb,
    Cpsu,
}

impl From<BenchmarkArg> for BenchmarkId {
    fn from(b: BenchmarkArg) -> Self {
        match b {
            BenchmarkArg::Mc => BenchmarkId::MountainCar,
            BenchmarkArg::Cpb => BenchmarkId::CartPoleBalance,
            BenchmarkArg::Cpsu => BenchmarkId::CartPoleSwingUp,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    #[arg(long, global = true, value_enum)]
    pub benchmark: Option<BenchmarkArg>,
    /// TOML file overriding the benchmark defaults.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Output directory [default: $FPSRL_OUT or ./fpsrl-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
}

/// Per-run overrides of individual configuration values.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Transitions in the batch.
    #[arg(long)]
    pub size: Option<usize>,
    /// Hidden-layer counts to try, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub depths: Option<Vec<usize>>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub rules: Option<usize>,
    #[arg(long)]
    pub train_states: Option<usize>,
    #[arg(long)]
    pub test_states: Option<usize>,
    /// `evaluate` and `reproduce` exit with status 3 below this fitness.
    #[arg(long, allow_negative_numbers = true)]
    pub min_fitness: Option<f64>,
    /// `evaluate` and `reproduce` exit with status 3 below this rate.
    #[arg(long)]
    pub min_success_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TargetArg {
    Model,
    True,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a batch of exploration transitions on the true plant.
    GenData {
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Fit the world model to a batch.
    TrainModel {
        #[arg(long, value_name = "PATH")]
        batch: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Search a fuzzy policy on the world model.
    TrainPolicy {
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Also keep the best policy after this iteration.
        #[arg(long, value_name = "N")]
        snapshot: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score a policy on the model, the true plant or both.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "true")]
        target: TargetArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw the rules of a policy.
    Render {
        #[arg(long, value_name = "PATH")]
        policy: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run every stage and write a manifest of the artifacts.
    Reproduce {
        #[arg(long, value_name = "N")]
        snapshot: Vec<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

impl Command {
    fn overrides(&self) -> &Overrides {
        match self {
            Command::GenData { overrides }
            | Command::TrainModel { overrides, .. }
            | Command::TrainPolicy { overrides, .. }
            | Command::Evaluate { overrides, .. }
            | Command::Render { overrides, .. }
            | Command::Reproduce { overrides, .. } => overrides,
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Reports go to `out`, errors to stderr.
pub fn run(args: &[String], out: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Builds the effective configuration: `--config` or the benchmark
/// defaults, then `--seed` and the per-run overrides.
pub fn resolve_config(common: &Common, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let flag = common.benchmark.map(BenchmarkId::from);
    let mut config = match (&common.config, flag) {
        (Some(path), _) => ExperimentConfig::load(path, flag)?,
        (None, Some(id)) => ExperimentConfig::defaults(id),
        (None, None) => return Err(CliError::Usage("--benchmark or --config is required".into())),
    };
    if let Some(seed) = common.seed {
        config.seeds.master = seed;
    }
    let o = overrides;
    if let Some(v) = o.size {
        config.data.size = v;
    }
    if let Some(v) = &o.depths {
        config.model.depths = v.clone();
    }
    if let Some(v) = o.epochs {
        config.model.epochs = v;
    }
    if let Some(v) = o.particles {
        config.swarm.particles = v;
    }
    if let Some(v) = o.iters {
        config.swarm.iterations = v;
    }
    if let Some(v) = o.rules {
        config.policy.rules = v;
    }
    if let Some(v) = o.train_states {
        config.evaluation.train_states = v;
    }
    if let Some(v) = o.test_states {
        config.evaluation.test_states = v;
    }
    if o.min_fitness.is_some() {
        config.evaluation.min_fitness = o.min_fitness;
    }
    if o.min_success_rate.is_some() {
        config.evaluation.min_success_rate = o.min_success_rate;
    }
    config.validate()?;
    Ok(config)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        // fails only if a pool already exists, as in repeated in-process runs
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let config = resolve_config(&cli.common, cli.command.overrides())?;
    let paths = Paths::resolve(cli.common.out.as_deref());
    paths.ensure()?;
    let spec = config.benchmark.spec();

    match &cli.command {
        Command::GenData { .. } => {
            std::fs::write(paths.config(), config.to_toml())?;
            let batch = pipeline::gen_data(&config)?;
            save_batch(&batch, &paths.batch())?;
            writeln!(
                out,
                "{}: {} transitions in {} trajectories -> {}",
                config.benchmark,
                batch.len(),
                batch.trajectory_count(),
                paths.batch().display()
            )?;
            writeln!(out, "reward  count")?;
            for (r, n) in batch.reward_histogram() {
                writeln!(out, "{r:>6}  {n}")?;
            }
        }
        Command::TrainModel { batch, .. } => {
            let path = batch.clone().unwrap_or_else(|| paths.batch());
            let batch = load_batch(&path)?;
            check_benchmark(batch.benchmark, &config, &path)?;
            if let Err(i) = validate_batch(&batch, &spec) {
                return Err(contract(format!(
                    "{}: transition {i} is not reproduced by the plant",
                    path.display()
                )));
            }
            let model = pipeline::train_model(&config, &batch)?;
            model.save(&paths.model())?;
            write!(out, "{}", model.report.table())?;
            writeln!(out, "model -> {}", paths.model().display())?;
        }
        Command::TrainPolicy { model, snapshot, .. } => {
            let path = model.clone().unwrap_or_else(|| paths.model());
            let model = WorldModel::load(&path)?;
            check_benchmark(model.benchmark, &config, &path)?;
            let run = pipeline::train_policy(&config, &model, snapshot, log_progress)?;
            run.best.save(&paths.policy())?;
            for snap in &run.snapshots {
                snap.save(&paths.snapshot(snap.iteration))?;
                writeln!(out, "iteration {}: model fitness {:.4}", snap.iteration, snap.model_fitness)?;
            }
            write_history(&paths.history(), &run.history)?;
            writeln!(
                out,
                "iteration {}: model fitness {:.4} -> {}",
                run.best.iteration,
                run.best.model_fitness,
                paths.policy().display()
            )?;
        }
        Command::Evaluate {
            policy, model, target, ..
        } => {
            let policy = load_policy(policy.as_deref(), &paths, &config)?;
            let states = load_or_create_states(&paths, &config)?;
            let mut records = Vec::new();
            if matches!(target, TargetArg::Model | TargetArg::Both) {
                let path = model.clone().unwrap_or_else(|| paths.model());
                let model = WorldModel::load(&path)?;
                check_benchmark(model.benchmark, &config, &path)?;
                records.push(pipeline::evaluate_policy(
                    &model,
                    Target::Model,
                    &config,
                    &policy,
                    &states.states,
                )?);
            }
            if matches!(target, TargetArg::True | TargetArg::Both) {
                records.push(pipeline::evaluate_policy(
                    &spec,
                    Target::True,
                    &config,
                    &policy,
                    &states.states,
                )?);
            }
            write_lines(&paths.eval_report(), &records)?;
            write!(out, "{}", pipeline::eval_table(&records))?;
            check_thresholds(&config, records.last().expect("at least one target"))?;
        }
        Command::Render { policy, .. } => {
            let policy = load_policy(policy.as_deref(), &paths, &config)?;
            let states = load_or_create_states(&paths, &config)?;
            let rendering = pipeline::render(&policy, &states.states[0], config.evaluation.horizon)?;
            std::fs::write(paths.render_svg(), &rendering.svg)?;
            std::fs::write(paths.render_text(), &rendering.text)?;
            write!(out, "{}", rendering.text)?;
        }
        Command::Reproduce { snapshot, .. } => {
            let rep = pipeline::reproduce(&config, &paths, snapshot, log_progress)?;
            write!(out, "{}", rep.model.report.table())?;
            write!(out, "{}", pipeline::eval_table(&rep.records))?;
            writeln!(out, "manifest -> {}", paths.manifest().display())?;
            check_thresholds(&config, &rep.records[1])?;
        }
    }
    Ok(())
}

fn log_progress(record: &fpsrl_core::swarm::IterationRecord) {
    if record.iteration.is_multiple_of(50) {
        log::info!(
            "iteration {:>5}  best {:>10.4}  mean {:>10.4}",
            record.iteration,
            record.best_fitness,
            record.mean_fitness
        );
    }
}

fn contract(message: String) -> CliError {
    CliError::Data(fpsrl_core::Error::Contract(message))
}

fn check_benchmark(found: BenchmarkId, config: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    if found != config.benchmark {
        return Err(contract(format!(
            "{} is for {found}, not {}",
            path.display(),
            config.benchmark
        )));
    }
    Ok(())
}

fn load_policy(path: Option<&Path>, paths: &Paths, config: &ExperimentConfig) -> Result<PolicyFile, CliError> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| paths.policy());
    let policy = PolicyFile::load(&path)?;
    check_benchmark(policy.benchmark, config, &path)?;
    Ok(policy)
}

/// Reuses persisted test states when they match the configuration, so
/// every evaluation of a run sees the same start states.
fn load_or_create_states(paths: &Paths, config: &ExperimentConfig) -> Result<StateSet, CliError> {
    let path = paths.test_states();
    let fresh = pipeline::test_states(config)?;
    if path.exists() {
        let stored = StateSet::load(&path)?;
        if stored != fresh {
            return Err(contract(format!(
                "{} does not match the configured benchmark, seed and count",
                path.display()
            )));
        }
        return Ok(stored);
    }
    fresh.save(&path)?;
    Ok(fresh)
}

fn check_thresholds(config: &ExperimentConfig, record: &EvalRecord) -> Result<(), CliError> {
    let ev = &config.evaluation;
    if let Some(bar) = ev.min_fitness {
        if record.fitness < bar {
            return Err(CliError::Threshold(format!(
                "{} fitness {:.4} below {bar}",
                record.target.as_str(),
                record.fitness
            )));
        }
    }
    if let Some(bar) = ev.min_success_rate {
        if record.success_rate < bar {
            return Err(CliError::Threshold(format!(
                "{} success rate {:.3} below {bar}",
                record.target.as_str(),
                record.success_rate
            )));
        }
    }
    Ok(())
}
