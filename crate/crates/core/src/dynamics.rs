//! Benchmark plants: mountain car, cart-pole balancing and cart-pole swing-up.
//!
//! Every plant is a deterministic step function integrated with a classic
//! fourth-order Runge-Kutta scheme. The action is held constant over one
//! control interval.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::State;

/// Identifier of one of the three benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BenchmarkId {
    #[serde(rename = "mc")]
    MountainCar,
    #[serde(rename = "cpb")]
    CartPoleBalance,
    #[serde(rename = "cpsu")]
    CartPoleSwingUp,
}

impl BenchmarkId {
    pub const ALL: [BenchmarkId; 3] = [
        BenchmarkId::MountainCar,
        BenchmarkId::CartPoleBalance,
        BenchmarkId::CartPoleSwingUp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BenchmarkId::MountainCar => "mc",
            BenchmarkId::CartPoleBalance => "cpb",
            BenchmarkId::CartPoleSwingUp => "cpsu",
        }
    }

    pub fn spec(self) -> BenchmarkSpec {
        BenchmarkSpec::new(self)
    }
}

impl fmt::Display for BenchmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BenchmarkId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mc" => Ok(BenchmarkId::MountainCar),
            "cpb" => Ok(BenchmarkId::CartPoleBalance),
            "cpsu" => Ok(BenchmarkId::CartPoleSwingUp),
            other => Err(Error::Config(format!("unknown benchmark `{other}`"))),
        }
    }
}

/// Which start-state distribution to sample from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    /// Distribution used when generating the transition batch.
    Start,
    /// Distribution used for policy training and evaluation.
    Test,
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "start" => Ok(Region::Start),
            "test" => Ok(Region::Test),
            other => Err(Error::Config(format!("unknown start-state region `{other}`"))),
        }
    }
}

/// Exploration policy used for batch generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationKind {
    UniformRandom,
    RandomWalk,
}

impl fmt::Display for ExplorationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ExplorationKind::UniformRandom => "uniform-random",
            ExplorationKind::RandomWalk => "random-walk",
        })
    }
}

impl FromStr for ExplorationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform-random" => Ok(ExplorationKind::UniformRandom),
            "random-walk" => Ok(ExplorationKind::RandomWalk),
            other => Err(Error::Config(format!("unknown exploration policy `{other}`"))),
        }
    }
}

/// Hill-climbing car on the valley `height = sin(3ρ)/3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MountainCarPhysics {
    /// Acceleration produced by a full-scale action, m/s².
    pub engine: f64,
    /// Gravity term scaling the slope force `-gravity·cos(3ρ)`, m/s².
    pub gravity: f64,
    pub min_position: f64,
    pub goal_position: f64,
    /// RK4 substeps per control interval.
    pub substeps: usize,
}

/// Frictionless cart with a hinged pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartPolePhysics {
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Distance from hinge to the pole's center of mass.
    pub half_length: f64,
    pub gravity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physics {
    MountainCar(MountainCarPhysics),
    CartPole(CartPolePhysics),
}

/// Human-readable description of one state dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DimensionLabel {
    pub name: &'static str,
    pub unit: &'static str,
}

/// Complete description of a benchmark: dimensions, bounds, physics and
/// sampling regions.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSpec {
    pub id: BenchmarkId,
    pub dim: usize,
    pub max_action: f64,
    /// Control interval in seconds.
    pub dt: f64,
    pub horizon: usize,
    /// Default episode length for batch generation.
    pub episode_len: usize,
    pub exploration: ExplorationKind,
    pub physics: Physics,
    pub start_region: Vec<(f64, f64)>,
    pub test_region: Vec<(f64, f64)>,
    /// Nominal operating box. Used to size the policy search space and
    /// plot axes; states may leave it.
    pub state_bounds: Vec<(f64, f64)>,
    /// Dimensions that are angles wrapped to `[-π, π)`.
    pub angular: Vec<bool>,
    pub labels: Vec<DimensionLabel>,
}

const MC_PHYSICS: MountainCarPhysics = MountainCarPhysics {
    engine: 2.0,
    gravity: 5.0,
    min_position: -1.2,
    goal_position: 0.6,
    substeps: 4,
};

const CP_PHYSICS: CartPolePhysics = CartPolePhysics {
    cart_mass: 1.0,
    pole_mass: 0.1,
    half_length: 0.5,
    gravity: 9.8,
};

/// CPB failure limits and goal region.
const CPB_ANGLE_LIMIT: f64 = 0.7;
const CPB_POSITION_LIMIT: f64 = 2.4;
const CPB_GOAL_ANGLE: f64 = 0.25;
const CPB_GOAL_POSITION: f64 = 0.5;
/// CPSU goal region.
const CPSU_GOAL_ANGLE: f64 = 0.5;
const CPSU_GOAL_POSITION: f64 = 0.5;

const CP_DT: f64 = 0.025;

impl BenchmarkSpec {
    pub fn new(id: BenchmarkId) -> Self {
        let mc_labels = vec![
            DimensionLabel { name: "position", unit: "" },
            DimensionLabel { name: "velocity", unit: "1/s" },
        ];
        let cp_labels = vec![
            DimensionLabel { name: "angle", unit: "rad" },
            DimensionLabel { name: "angular velocity", unit: "rad/s" },
            DimensionLabel { name: "cart position", unit: "m" },
            DimensionLabel { name: "cart velocity", unit: "m/s" },
        ];
        match id {
            BenchmarkId::MountainCar => BenchmarkSpec {
                id,
                dim: 2,
                max_action: 1.0,
                dt: 0.025,
                horizon: 200,
                episode_len: 200,
                exploration: ExplorationKind::UniformRandom,
                physics: Physics::MountainCar(MC_PHYSICS),
                start_region: vec![(-1.2, 0.6), (0.0, 0.0)],
                test_region: vec![(-1.2, 0.6), (0.0, 0.0)],
                state_bounds: vec![(-1.2, 0.6), (-3.5, 3.5)],
                angular: vec![false, false],
                labels: mc_labels,
            },
            BenchmarkId::CartPoleBalance => BenchmarkSpec {
                id,
                dim: 4,
                max_action: 10.0,
                dt: CP_DT,
                horizon: 100,
                episode_len: 100,
                exploration: ExplorationKind::RandomWalk,
                physics: Physics::CartPole(CP_PHYSICS),
                start_region: vec![(-0.7, 0.7), (0.0, 0.0), (-2.4, 2.4), (0.0, 0.0)],
                test_region: vec![(-0.5, 0.5), (0.0, 0.0), (-0.5, 0.5), (0.0, 0.0)],
                state_bounds: vec![(-0.7, 0.7), (-4.0, 4.0), (-2.4, 2.4), (-3.0, 3.0)],
                angular: vec![false; 4],
                labels: cp_labels,
            },
            BenchmarkId::CartPoleSwingUp => BenchmarkSpec {
                id,
                dim: 4,
                max_action: 30.0,
                dt: CP_DT,
                horizon: 500,
                episode_len: 500,
                exploration: ExplorationKind::RandomWalk,
                physics: Physics::CartPole(CP_PHYSICS),
                start_region: vec![(-PI, PI), (0.0, 0.0), (0.0, 0.0), (0.0, 0.0)],
                test_region: vec![(-PI, PI), (0.0, 0.0), (-0.5, 0.5), (0.0, 0.0)],
                state_bounds: vec![(-PI, PI), (-12.0, 12.0), (-2.4, 2.4), (-5.0, 5.0)],
                angular: vec![true, false, false, false],
                labels: cp_labels,
            },
        }
    }

    pub fn region(&self, region: Region) -> &[(f64, f64)] {
        match region {
            Region::Start => &self.start_region,
            Region::Test => &self.test_region,
        }
    }

    /// Rewards the plant can emit.
    pub fn reward_codomain(&self) -> &'static [f64] {
        match self.id {
            BenchmarkId::MountainCar | BenchmarkId::CartPoleSwingUp => &[0.0, -1.0],
            BenchmarkId::CartPoleBalance => &[0.0, -0.1, -1.0],
        }
    }

    /// `(worst, best)` single-step reward.
    pub fn reward_range(&self) -> (f64, f64) {
        (-1.0, 0.0)
    }

    /// One control interval of the true dynamics.
    pub fn step(&self, s: &State, a: f64) -> Result<(State, f64)> {
        if s.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                found: s.dim(),
            });
        }
        let a = clamp_action(a, self.max_action);
        match (self.id, &self.physics) {
            (BenchmarkId::MountainCar, Physics::MountainCar(p)) => mc_step(p, s, a, self.dt),
            (BenchmarkId::CartPoleBalance, Physics::CartPole(p)) => {
                cp_step(p, s, a, self.dt, CartPoleVariant::Balance).map(|(s, r, _)| (s, r))
            }
            (BenchmarkId::CartPoleSwingUp, Physics::CartPole(p)) => {
                cp_step(p, s, a, self.dt, CartPoleVariant::SwingUp).map(|(s, r, _)| (s, r))
            }
            _ => Err(Error::Config(format!("{} has mismatched physics", self.id))),
        }
    }

    /// Whether `s` is an absorbing state of this benchmark.
    pub fn is_absorbing(&self, s: &State) -> bool {
        match self.id {
            BenchmarkId::MountainCar => s[0] >= MC_PHYSICS.goal_position,
            BenchmarkId::CartPoleBalance => cpb_failed(s),
            BenchmarkId::CartPoleSwingUp => false,
        }
    }

    /// Whether `s` lies in the zero-reward goal region.
    pub fn in_goal(&self, s: &State) -> bool {
        match self.id {
            BenchmarkId::MountainCar => s[0] >= MC_PHYSICS.goal_position,
            BenchmarkId::CartPoleBalance => {
                s[0].abs() < CPB_GOAL_ANGLE && s[2].abs() < CPB_GOAL_POSITION
            }
            BenchmarkId::CartPoleSwingUp => {
                s[0].abs() < CPSU_GOAL_ANGLE && s[2].abs() < CPSU_GOAL_POSITION
            }
        }
    }

    /// Wraps angular dimensions into `[-π, π)`.
    pub fn wrap(&self, s: &mut State) {
        for (j, &angular) in self.angular.iter().enumerate() {
            if angular {
                s[j] = wrap_angle(s[j]);
            }
        }
    }
}

/// Draws `n` i.i.d. start states uniformly from the chosen region.
pub fn sample_start_states<R: Rng + ?Sized>(
    spec: &BenchmarkSpec,
    region: Region,
    n: usize,
    rng: &mut R,
) -> Result<Vec<State>> {
    if n == 0 {
        return Err(Error::Config("start-state count must be at least 1".into()));
    }
    let bounds = spec.region(region);
    Ok((0..n).map(|_| sample_box(bounds, rng)).collect())
}

pub(crate) fn sample_box<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> State {
    let mut s = State::zeros(bounds.len());
    for (j, &(lo, hi)) in bounds.iter().enumerate() {
        s[j] = if hi > lo { rng.gen_range(lo..hi) } else { lo };
    }
    s
}

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn clamp_action(a: f64, max_action: f64) -> f64 {
    if a.abs() > max_action {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("action {a} outside [-{max_action}, {max_action}], clamping");
        }
        a.clamp(-max_action, max_action)
    } else {
        a
    }
}

/// Maps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let wrapped = theta - two_pi * ((theta + PI) / two_pi).floor();
    // floor rounding can land exactly on +π
    if wrapped >= PI {
        wrapped - two_pi
    } else {
        wrapped
    }
}

/// One classic RK4 step with the action held constant.
pub fn rk4_step<F>(derivative: F, s: &State, a: f64, dt: f64) -> Result<State>
where
    F: Fn(&State, f64) -> State,
{
    if !(dt > 0.0) {
        return Err(Error::Contract(format!("integration step must be positive, got {dt}")));
    }
    let k1 = derivative(s, a);
    let k2 = derivative(&s.axpy(0.5 * dt, &k1), a);
    let k3 = derivative(&s.axpy(0.5 * dt, &k2), a);
    let k4 = derivative(&s.axpy(dt, &k3), a);
    for k in [&k1, &k2, &k3, &k4] {
        if !k.is_finite() {
            return Err(Error::Integration(format!(
                "non-finite derivative at state {:?}",
                s.as_slice()
            )));
        }
    }
    let mut next = *s;
    for j in 0..s.dim() {
        next[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
    }
    Ok(next)
}

pub fn mc_derivative(p: &MountainCarPhysics, s: &State, a: f64) -> State {
    State::from_slice(&[s[1], p.engine * a - p.gravity * (3.0 * s[0]).cos()])
}

/// Mountain car transition. The goal is absorbing: position is held,
/// velocity is zero and the reward is 0.
pub fn mc_step(p: &MountainCarPhysics, s: &State, a: f64, dt: f64) -> Result<(State, f64)> {
    if s[0] >= p.goal_position {
        return Ok((State::from_slice(&[s[0], 0.0]), 0.0));
    }
    let h = dt / p.substeps as f64;
    let mut next = *s;
    for _ in 0..p.substeps {
        next = rk4_step(|x, u| mc_derivative(p, x, u), &next, a, h)?;
    }
    if next[0] <= p.min_position {
        // inelastic stop at the left wall
        next[0] = p.min_position;
        next[1] = 0.0;
    }
    if next[0] >= p.goal_position {
        next[0] = p.goal_position;
        next[1] = 0.0;
        return Ok((next, 0.0));
    }
    Ok((next, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CartPoleVariant {
    Balance,
    SwingUp,
}

/// Cart-pole accelerations for state `(θ, θ̇, ρ, ρ̇)` and force `a`.
pub fn cp_derivative(p: &CartPolePhysics, s: &State, a: f64) -> State {
    let (theta, theta_dot, rho_dot) = (s[0], s[1], s[3]);
    let (sin, cos) = theta.sin_cos();
    let total = p.cart_mass + p.pole_mass;
    let pole_ml = p.pole_mass * p.half_length;
    let temp = (a + pole_ml * theta_dot * theta_dot * sin) / total;
    let theta_acc = (p.gravity * sin - cos * temp)
        / (p.half_length * (4.0 / 3.0 - p.pole_mass * cos * cos / total));
    let rho_acc = temp - pole_ml * theta_acc * cos / total;
    State::from_slice(&[theta_dot, theta_acc, rho_dot, rho_acc])
}

fn cpb_failed(s: &State) -> bool {
    s[0].abs() > CPB_ANGLE_LIMIT || s[2].abs() > CPB_POSITION_LIMIT
}

/// Cart-pole transition. Returns `(s', reward, failed)`.
///
/// Balancing: leaving `|θ| ≤ 0.7`, `|ρ| ≤ 2.4` freezes the pose with zero
/// velocities from that step on. Swing-up: no failure state and θ wraps.
pub fn cp_step(
    p: &CartPolePhysics,
    s: &State,
    a: f64,
    dt: f64,
    variant: CartPoleVariant,
) -> Result<(State, f64, bool)> {
    match variant {
        CartPoleVariant::Balance => {
            if cpb_failed(s) {
                return Ok((State::from_slice(&[s[0], 0.0, s[2], 0.0]), -1.0, true));
            }
            let mut next = rk4_step(|x, u| cp_derivative(p, x, u), s, a, dt)?;
            if cpb_failed(&next) {
                next[1] = 0.0;
                next[3] = 0.0;
                return Ok((next, -1.0, true));
            }
            let r = if next[0].abs() < CPB_GOAL_ANGLE && next[2].abs() < CPB_GOAL_POSITION {
                0.0
            } else {
                -0.1
            };
            Ok((next, r, false))
        }
        CartPoleVariant::SwingUp => {
            let mut next = rk4_step(|x, u| cp_derivative(p, x, u), s, a, dt)?;
            next[0] = wrap_angle(next[0]);
            let r = if next[0].abs() < CPSU_GOAL_ANGLE && next[2].abs() < CPSU_GOAL_POSITION {
                0.0
            } else {
                -1.0
            };
            Ok((next, r, false))
        }
    }
}
