use fpsrl_cli::artifacts::{Paths, PolicyFile, POLICY_FORMAT_VERSION};
use fpsrl_cli::config::ExperimentConfig;
use fpsrl_cli::pipeline::{self, succeeded, Target};
use fpsrl_core::dynamics::BenchmarkId;
use fpsrl_core::fuzzy::{FuzzyPolicyParams, FuzzyRule, RuleLayout};
use fpsrl_core::rl_eval::{policy_fitness, rollout_trajectory, EvaluationSpec};
use fpsrl_core::State;

fn tiny(id: BenchmarkId) -> ExperimentConfig {
    let mut c = ExperimentConfig::defaults(id);
    c.data.size = 600;
    c.model.depths = vec![1];
    c.model.epochs = 25;
    c.swarm.particles = 8;
    c.swarm.iterations = 6;
    c.evaluation.train_states = 6;
    c.evaluation.test_states = 10;
    c.seeds.master = 21;
    c
}

#[test]
fn snapshot_equals_a_shorter_run() {
    let long = tiny(BenchmarkId::MountainCar);
    let model = pipeline::train_model(&long, &pipeline::gen_data(&long).unwrap()).unwrap();
    let run = pipeline::train_policy(&long, &model, &[2, 4], |_| {}).unwrap();
    for (snap, k) in run.snapshots.iter().zip([2, 4]) {
        let mut short = long.clone();
        short.swarm.iterations = k;
        let direct = pipeline::train_policy(&short, &model, &[], |_| {}).unwrap();
        assert_eq!(snap.search_vector, direct.best.search_vector);
        assert_eq!(snap.model_fitness.to_bits(), direct.best.model_fitness.to_bits());
        assert_eq!(&run.history[..=k], &direct.history[..]);
    }
}

#[test]
fn snapshot_past_the_end_is_an_error() {
    let c = tiny(BenchmarkId::MountainCar);
    let model = pipeline::train_model(&c, &pipeline::gen_data(&c).unwrap()).unwrap();
    assert!(pipeline::train_policy(&c, &model, &[7], |_| {}).is_err());
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let c = tiny(BenchmarkId::CartPoleBalance);
    let go = || {
        let batch = pipeline::gen_data(&c).unwrap();
        let model = pipeline::train_model(&c, &batch).unwrap();
        let run = pipeline::train_policy(&c, &model, &[], |_| {}).unwrap();
        (serde_json::to_string(&model).unwrap(), run.best, run.history)
    };
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(go);
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(go);
    assert_eq!(one, three);
}

#[test]
fn evaluation_fitness_matches_the_swarm_objective() {
    let c = tiny(BenchmarkId::MountainCar);
    let model = pipeline::train_model(&c, &pipeline::gen_data(&c).unwrap()).unwrap();
    let run = pipeline::train_policy(&c, &model, &[], |_| {}).unwrap();
    let states = pipeline::test_states(&c).unwrap().states;
    let spec = c.benchmark.spec();
    let eval = EvaluationSpec::uniform(c.evaluation.horizon, c.evaluation.q, states.clone()).unwrap();
    let on_model = pipeline::evaluate_policy(&model, Target::Model, &c, &run.best, &states).unwrap();
    let on_plant = pipeline::evaluate_policy(&spec, Target::True, &c, &run.best, &states).unwrap();
    assert_eq!(on_model.fitness, policy_fitness(&model, &run.best.policy, &eval).unwrap());
    assert_eq!(on_plant.fitness, policy_fitness(&spec, &run.best.policy, &eval).unwrap());
    assert!(on_plant.min <= on_plant.q25 && on_plant.q25 <= on_plant.median);
    assert!(on_plant.median <= on_plant.q75 && on_plant.q75 <= on_plant.max);
}

#[test]
fn swarm_training_states_differ_from_test_states() {
    let c = tiny(BenchmarkId::CartPoleSwingUp);
    let train = pipeline::train_states(&c).unwrap();
    let test = pipeline::test_states(&c).unwrap().states;
    assert_eq!((train.len(), test.len()), (6, 10));
    assert!(train.iter().all(|s| !test.contains(s)));
    // both come from the test region
    assert!(test.iter().chain(&train).all(|s| s[1] == 0.0 && s[3] == 0.0 && s[2].abs() <= 0.5));
}

fn constant_policy(dim: usize, scale: f64, output: f64) -> FuzzyPolicyParams {
    FuzzyPolicyParams {
        rules: vec![FuzzyRule {
            centers: vec![0.0; dim],
            widths: vec![1.0; dim],
            output,
        }],
        slope: 1.0,
        scale,
    }
}

#[test]
fn success_predicates() {
    let mc = BenchmarkId::MountainCar.spec();
    let idle = constant_policy(2, mc.max_action, 0.0);
    let t = rollout_trajectory(&mc, &idle, &State::from_slice(&[-0.5, 0.0]), 200).unwrap();
    assert!(!succeeded(&mc, &t, 50));
    let t = rollout_trajectory(&mc, &idle, &State::from_slice(&[0.6, 0.0]), 200).unwrap();
    assert!(succeeded(&mc, &t, 50));

    let cpb = BenchmarkId::CartPoleBalance.spec();
    let idle = constant_policy(4, cpb.max_action, 0.0);
    let t = rollout_trajectory(&cpb, &idle, &State::from_slice(&[0.0; 4]), 100).unwrap();
    assert!(succeeded(&cpb, &t, 50), "upright pole at rest stays up");
    let t = rollout_trajectory(&cpb, &idle, &State::from_slice(&[0.3, 0.0, 0.0, 0.0]), 100).unwrap();
    assert!(!succeeded(&cpb, &t, 50));

    let cpsu = BenchmarkId::CartPoleSwingUp.spec();
    let idle = constant_policy(4, cpsu.max_action, 0.0);
    let t = rollout_trajectory(&cpsu, &idle, &State::from_slice(&[3.0, 0.0, 0.0, 0.0]), 500).unwrap();
    assert!(!succeeded(&cpsu, &t, 50));
    let t = rollout_trajectory(&cpsu, &idle, &State::from_slice(&[0.0; 4]), 500).unwrap();
    assert!(succeeded(&cpsu, &t, 50));
}

fn golden_policy() -> PolicyFile {
    let layout = RuleLayout::new(2, 2, false).unwrap();
    let x = vec![-0.5, -0.8, 1.0, 0.6, -1.0, -0.5, 0.8, 1.0, 0.6, 1.0, 4.0];
    PolicyFile {
        format_version: POLICY_FORMAT_VERSION,
        benchmark: BenchmarkId::MountainCar,
        layout,
        policy: layout.decode(&x, 1.0).unwrap(),
        search_vector: x,
        model_fitness: -40.0,
        iteration: 0,
    }
}

#[test]
fn render_matches_golden_text() {
    let p = golden_policy();
    let r = pipeline::render(&p, &State::from_slice(&[-0.9, 0.0]), 200).unwrap();
    let golden = include_str!("golden/render_mc.txt");
    assert_eq!(r.text, golden);
    let again = pipeline::render(&p, &State::from_slice(&[-0.9, 0.0]), 200).unwrap();
    assert_eq!(r, again);
    assert!(r.svg.starts_with("<svg") && r.svg.trim_end().ends_with("</svg>"));
    assert_eq!(r.svg.matches("rule ").count(), 2);
}

#[test]
fn policy_file_round_trip_and_tamper_check() {
    let dir = tempfile::tempdir().unwrap();
    let paths = Paths::new(dir.path());
    let p = golden_policy();
    p.save(&paths.policy()).unwrap();
    assert_eq!(PolicyFile::load(&paths.policy()).unwrap(), p);

    let mut bad = p.clone();
    bad.policy.rules[0].output = 0.25;
    bad.save(&paths.policy()).unwrap();
    assert!(PolicyFile::load(&paths.policy()).is_err());

    let mut bad = p;
    bad.format_version = 99;
    bad.save(&paths.policy()).unwrap();
    assert!(PolicyFile::load(&paths.policy()).is_err());
}
