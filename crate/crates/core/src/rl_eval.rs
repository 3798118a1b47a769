//! Policy evaluation: discounted finite-horizon returns and start-state
//! averaged fitness, against either the true plant or a world model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::BenchmarkSpec;
use crate::error::{Error, Result};
use crate::fuzzy::RuleLayout;
use crate::state::State;

/// Anything that maps a state to an action.
pub trait Policy: Sync {
    fn action(&self, s: &State) -> f64;
}

impl<F> Policy for F
where
    F: Fn(&State) -> f64 + Sync,
{
    fn action(&self, s: &State) -> f64 {
        self(s)
    }
}

/// A deterministic transition-and-reward function.
pub trait Environment: Sync {
    fn dim(&self) -> usize;
    fn step(&self, s: &State, a: f64) -> Result<(State, f64)>;

    /// Steps every `states[k]` with `actions[k]`. Must agree with `step`.
    fn step_many(&self, states: &[State], actions: &[f64], next: &mut [State], rewards: &mut [f64]) -> Result<()> {
        for k in 0..states.len() {
            let (s, r) = self.step(&states[k], actions[k])?;
            next[k] = s;
            rewards[k] = r;
        }
        Ok(())
    }
}

impl Environment for BenchmarkSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn step(&self, s: &State, a: f64) -> Result<(State, f64)> {
        BenchmarkSpec::step(self, s, a)
    }
}

/// `γ = q^(1/(T−1))`: the reward at the end of the horizon is weighted by `q`.
pub fn discount_from_q(q: f64, horizon: usize) -> Result<f64> {
    if horizon <= 1 {
        return Err(Error::Contract(format!("horizon must exceed 1, got {horizon}")));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Contract(format!("terminal weight must lie in [0, 1], got {q}")));
    }
    Ok(q.powf(1.0 / (horizon - 1) as f64))
}

/// Discounted sum of `horizon` rewards starting from `s0`.
pub fn rollout_return<E, P>(env: &E, policy: &P, s0: &State, horizon: usize, gamma: f64) -> Result<f64>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let mut s = *s0;
    let mut ret = 0.0;
    let mut weight = 1.0;
    for step in 0..horizon {
        let a = policy.action(&s);
        let (next, r) = env.step(&s, a).map_err(|e| Error::Rollout {
            step,
            source: Box::new(e),
        })?;
        ret += weight * r;
        weight *= gamma;
        s = next;
    }
    Ok(ret)
}

/// One rollout with every visited state and reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `horizon + 1` states, starting with the start state.
    pub states: Vec<State>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
}

pub fn rollout_trajectory<E, P>(env: &E, policy: &P, s0: &State, horizon: usize) -> Result<Trajectory>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    let mut traj = Trajectory {
        states: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
    };
    let mut s = *s0;
    traj.states.push(s);
    for step in 0..horizon {
        let a = policy.action(&s);
        let (next, r) = env.step(&s, a).map_err(|e| Error::Rollout {
            step,
            source: Box::new(e),
        })?;
        traj.actions.push(a);
        traj.rewards.push(r);
        traj.states.push(next);
        s = next;
    }
    Ok(traj)
}

/// Horizon, discount and weighted start states of a fitness function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSpec {
    pub horizon: usize,
    pub q: f64,
    pub gamma: f64,
    pub start_states: Vec<State>,
    pub weights: Vec<f64>,
}

impl EvaluationSpec {
    /// Uniform weights over `start_states`.
    pub fn uniform(horizon: usize, q: f64, start_states: Vec<State>) -> Result<Self> {
        if start_states.is_empty() {
            return Err(Error::Config("evaluation needs at least one start state".into()));
        }
        let gamma = discount_from_q(q, horizon)?;
        let w = 1.0 / start_states.len() as f64;
        Ok(EvaluationSpec {
            horizon,
            q,
            gamma,
            weights: vec![w; start_states.len()],
            start_states,
        })
    }

    /// Explicit weights; must be nonnegative and sum to one.
    pub fn weighted(horizon: usize, q: f64, start_states: Vec<State>, weights: Vec<f64>) -> Result<Self> {
        if start_states.is_empty() || weights.len() != start_states.len() {
            return Err(Error::Config("one weight per start state is required".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("weights must be nonnegative and sum to 1".into()));
        }
        Ok(EvaluationSpec {
            horizon,
            q,
            gamma: discount_from_q(q, horizon)?,
            start_states,
            weights,
        })
    }

    /// Worst-to-best return interval for per-step rewards in `[lo, hi]`.
    pub fn return_bounds(&self, reward_lo: f64, reward_hi: f64) -> (f64, f64) {
        let sum = geometric_sum(self.gamma, self.horizon);
        (reward_lo * sum, reward_hi * sum)
    }
}

/// `Σ_{k<T} γᵏ`
pub fn geometric_sum(gamma: f64, horizon: usize) -> f64 {
    if gamma == 1.0 {
        horizon as f64
    } else {
        (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma)
    }
}

/// Per-start-state returns, in start-state order.
pub fn returns<E, P>(env: &E, policy: &P, spec: &EvaluationSpec) -> Result<Vec<f64>>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    spec.start_states
        .par_iter()
        .map(|s| rollout_return(env, policy, s, spec.horizon, spec.gamma))
        .collect()
}

/// Weighted mean return of a policy.
pub fn policy_fitness<E, P>(env: &E, policy: &P, spec: &EvaluationSpec) -> Result<f64>
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
{
    // All start states advance in lockstep so batched environments can
    // share work across them; each return accumulates exactly as in
    // `rollout_return`.
    let n = spec.start_states.len();
    let mut states = spec.start_states.clone();
    let mut next = states.clone();
    let mut actions = vec![0.0; n];
    let mut rewards = vec![0.0; n];
    let mut totals = vec![0.0; n];
    let mut weight = 1.0;
    for step in 0..spec.horizon {
        for (a, s) in actions.iter_mut().zip(&states) {
            *a = policy.action(s);
        }
        env.step_many(&states, &actions, &mut next, &mut rewards)
            .map_err(|e| Error::Rollout {
                step,
                source: Box::new(e),
            })?;
        for (t, r) in totals.iter_mut().zip(&rewards) {
            *t += weight * r;
        }
        weight *= spec.gamma;
        std::mem::swap(&mut states, &mut next);
    }
    Ok(totals.iter().zip(&spec.weights).map(|(t, w)| w * t).sum())
}

/// Fitness of a search vector: decode (mirroring rules if the layout is
/// symmetric), then average the returns. Any failure yields `-∞`.
pub fn fitness<E>(x: &[f64], layout: &RuleLayout, scale: f64, env: &E, spec: &EvaluationSpec) -> f64
where
    E: Environment + ?Sized,
{
    match layout.decode(x, scale) {
        Ok(policy) => match policy_fitness(env, &policy, spec) {
            Ok(f) if !f.is_nan() => f,
            _ => f64::NEG_INFINITY,
        },
        Err(_) => f64::NEG_INFINITY,
    }
}

/// Fraction of start states whose trajectory satisfies `predicate`.
pub fn success_rate<E, P, Q>(env: &E, policy: &P, spec: &EvaluationSpec, predicate: Q) -> f64
where
    E: Environment + ?Sized,
    P: Policy + ?Sized,
    Q: Fn(&Trajectory) -> bool + Sync,
{
    let hits: usize = spec
        .start_states
        .par_iter()
        .map(|s| match rollout_trajectory(env, policy, s, spec.horizon) {
            Ok(t) if predicate(&t) => 1,
            _ => 0,
        })
        .sum();
    hits as f64 / spec.start_states.len() as f64
}

/// Final states of `traj` all lie in the goal region of `bench`.
pub fn holds_goal(bench: &BenchmarkSpec, traj: &Trajectory, final_steps: usize) -> bool {
    let n = traj.states.len();
    n > final_steps && traj.states[n - final_steps..].iter().all(|s| bench.in_goal(s))
}
