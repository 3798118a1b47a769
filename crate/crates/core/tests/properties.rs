//! Randomized properties of the public API, one fixed seed per property.

use fpsrl_core::dynamics::{rk4_step, cp_derivative, BenchmarkId, Physics};
use fpsrl_core::fuzzy::{membership, FuzzyPolicyParams, RuleLayout, SIGMA_MIN};
use fpsrl_core::rl_eval::{discount_from_q, geometric_sum, rollout_return, Environment, Policy};
use fpsrl_core::swarm::{pso_optimize, SwarmConfig};
use fpsrl_core::worldmodel::{gradient_check, Mlp};
use fpsrl_core::State;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_policy(r: &mut ChaCha8Rng, id: BenchmarkId, rules: usize, symmetric: bool) -> (RuleLayout, Vec<f64>, FuzzyPolicyParams) {
    let spec = id.spec();
    let layout = RuleLayout::new(spec.dim, rules, symmetric).unwrap();
    let (lo, hi) = layout.search_bounds(&spec.state_bounds).unwrap();
    let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| r.gen_range(*a..=*b)).collect();
    let p = layout.decode(&x, spec.max_action).unwrap();
    (layout, x, p)
}

fn random_state(r: &mut ChaCha8Rng, bounds: &[(f64, f64)]) -> State {
    let v: Vec<f64> = bounds.iter().map(|&(a, b)| r.gen_range(a..=b)).collect();
    State::from_slice(&v)
}

#[test]
fn membership_in_unit_interval_and_one_only_at_center() {
    let mut r = rng(1);
    for id in BenchmarkId::ALL {
        let spec = id.spec();
        for _ in 0..200 {
            let (_, _, p) = random_policy(&mut r, id, 2, false);
            let rule = &p.rules[0];
            let s = random_state(&mut r, &spec.state_bounds);
            let m = membership(rule, &s).unwrap();
            assert!((0.0..=1.0).contains(&m));
            let c = State::from_slice(&rule.centers);
            assert_eq!(membership(rule, &c).unwrap(), 1.0);
            if s != c && m == 1.0 {
                // only possible when the offset vanishes in floating point
                let tiny = rule.centers.iter().zip(&rule.widths).zip(s.as_slice()).all(|((c, w), x)| ((c - x) / w).powi(2) < 1e-16);
                assert!(tiny);
            }
        }
    }
}

#[test]
fn membership_is_strictly_positive_near_wide_rules() {
    let mut r = rng(2);
    let spec = BenchmarkId::CartPoleBalance.spec();
    for _ in 0..500 {
        let (_, _, mut p) = random_policy(&mut r, BenchmarkId::CartPoleBalance, 2, false);
        let rule = &mut p.rules[0];
        for (w, (a, b)) in rule.widths.iter_mut().zip(&spec.state_bounds) {
            *w = w.max(0.1 * (b - a));
        }
        let s = random_state(&mut r, &spec.state_bounds);
        assert!(membership(rule, &s).unwrap() > 0.0);
    }
}

#[test]
fn policy_output_stays_inside_the_action_range() {
    let mut r = rng(3);
    for id in BenchmarkId::ALL {
        let spec = id.spec();
        for _ in 0..300 {
            let (_, _, p) = random_policy(&mut r, id, 4, false);
            let s = random_state(&mut r, &spec.state_bounds);
            let a = p.action(&s);
            assert!(a.abs() <= spec.max_action && a.is_finite());
        }
    }
}

#[test]
fn symmetric_policies_are_odd() {
    let mut r = rng(4);
    for id in [BenchmarkId::CartPoleBalance, BenchmarkId::CartPoleSwingUp] {
        let spec = id.spec();
        for _ in 0..300 {
            let (_, _, p) = random_policy(&mut r, id, 4, true);
            let s = random_state(&mut r, &spec.state_bounds);
            let gap = (p.action(&s) + p.action(&s.neg())).abs();
            assert!(gap <= 1e-12, "{gap}");
        }
    }
}

#[test]
fn encode_decode_round_trip() {
    let mut r = rng(5);
    for id in BenchmarkId::ALL {
        for rules in 1..=4 {
            let (_, _, p) = random_policy(&mut r, id, rules, false);
            let x = p.encode();
            let back = FuzzyPolicyParams::decode(&x, p.dim(), rules, p.scale).unwrap();
            assert_eq!(back, p);
            assert!(back.rules.iter().all(|rule| rule.widths.iter().all(|&w| w >= SIGMA_MIN)));
        }
    }
}

#[test]
fn swarm_stays_in_box_and_best_never_worsens() {
    for seed in 0..5 {
        let lower = vec![-2.0, 0.0, -10.0];
        let upper = vec![3.0, 1.0, -5.0];
        let config = SwarmConfig::new(lower.clone(), upper.clone(), 12, 40, seed);
        let mut last = f64::NEG_INFINITY;
        pso_optimize(
            |x| -(x[0] - 5.0).powi(2) - x[1].sin() - x[2].abs(),
            &config,
            |rec, particles| {
                assert!(rec.best_fitness >= last);
                last = rec.best_fitness;
                for p in particles {
                    for (j, x) in p.position.iter().enumerate() {
                        assert!(*x >= lower[j] && *x <= upper[j]);
                    }
                }
            },
        )
        .unwrap();
    }
}

struct Constant(f64);

impl Environment for Constant {
    fn dim(&self) -> usize {
        1
    }
    fn step(&self, s: &State, _a: f64) -> fpsrl_core::Result<(State, f64)> {
        Ok((*s, self.0))
    }
}

struct Zero;

impl Policy for Zero {
    fn action(&self, _s: &State) -> f64 {
        0.0
    }
}

#[test]
fn constant_reward_return_is_a_geometric_series() {
    for (q, t) in [(0.05, 200), (0.05, 100), (0.05, 500), (0.5, 17), (1.0, 30)] {
        let gamma = discount_from_q(q, t).unwrap();
        for r in [-1.0, -0.1, 0.7] {
            let ret = rollout_return(&Constant(r), &Zero, &State::from_slice(&[0.0]), t, gamma).unwrap();
            let closed = if gamma == 1.0 { t as f64 } else { (1.0 - gamma.powi(t as i32)) / (1.0 - gamma) };
            assert!((ret - r * closed).abs() <= 1e-10, "q={q} T={t}");
            assert!((geometric_sum(gamma, t) - closed).abs() <= 1e-10);
        }
    }
}

#[test]
fn gradients_match_finite_differences() {
    let mut r = rng(6);
    for depth in 1..=3 {
        for inputs in [3, 5, 9] {
            let net = Mlp::random(&Mlp::layout(inputs, depth), &mut r).unwrap();
            let xs: Vec<Vec<f64>> = (0..10).map(|_| (0..inputs).map(|_| r.gen_range(-2.0..2.0)).collect()).collect();
            let report = gradient_check(&net, &xs, 1e-4).unwrap();
            assert!(report.passed, "depth {depth}: {report:?}");
        }
    }
}

#[test]
fn rk4_is_fourth_order_on_the_cart_pole() {
    let spec = BenchmarkId::CartPoleSwingUp.spec();
    let Physics::CartPole(p) = spec.physics else { panic!("cart-pole physics") };
    let f = |x: &State, u: f64| cp_derivative(&p, x, u);
    let s = State::from_slice(&[2.0, -1.5, 0.3, 0.8]);
    let a = 7.0;
    let reference = |dt: f64| {
        let mut x = s;
        for _ in 0..100 {
            x = rk4_step(f, &x, a, dt / 100.0).unwrap();
        }
        x
    };
    let err = |dt: f64| {
        let once = rk4_step(f, &s, a, dt).unwrap();
        let r = reference(dt);
        (0..4).map(|i| (once[i] - r[i]).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(0.1), err(0.05));
    assert!(coarse / fine >= 8.0, "ratio {}", coarse / fine);
}

#[test]
fn cart_pole_dynamics_are_mirror_symmetric() {
    let mut r = rng(7);
    for id in [BenchmarkId::CartPoleBalance, BenchmarkId::CartPoleSwingUp] {
        let spec = id.spec();
        let mut checked = 0;
        while checked < 500 {
            let s = random_state(&mut r, &spec.state_bounds);
            if spec.is_absorbing(&s) || s[0].abs() > 3.0 {
                continue;
            }
            let a = r.gen_range(-spec.max_action..=spec.max_action);
            let (n1, r1) = spec.step(&s, a).unwrap();
            let (n2, r2) = spec.step(&s.neg(), -a).unwrap();
            for i in 0..4 {
                assert!((n1[i] + n2[i]).abs() <= 1e-9, "{id}: {s:?}");
            }
            assert_eq!(r1, r2);
            checked += 1;
        }
    }
}
