//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Policies are passed as flat parameter vectors in the core encoding:
//! per rule the centers, then the widths, then the output, and the slope
//! last. Mountain car has two state dimensions, so `C` rules take
//! `5C + 1` values.

use fpsrl_core::dynamics::BenchmarkId;
use fpsrl_core::fuzzy::FuzzyPolicyParams;
use fpsrl_core::swarm::{global_best, pso_optimize, SwarmConfig};
use fpsrl_core::State;
use wasm_bindgen::prelude::*;

const MC_DIM: usize = 2;

fn mc_policy(x: &[f64]) -> Result<FuzzyPolicyParams, String> {
    let per_rule = 2 * MC_DIM + 1;
    if x.len() < per_rule + 1 || !(x.len() - 1).is_multiple_of(per_rule) {
        return Err(format!("expected 5C + 1 parameters, got {}", x.len()));
    }
    let spec = BenchmarkId::MountainCar.spec();
    FuzzyPolicyParams::decode(x, MC_DIM, (x.len() - 1) / per_rule, spec.max_action).map_err(|e| e.to_string())
}

/// Actions of the policy on an `nx × ny` grid over position (columns) and
/// velocity (rows), row-major, lowest velocity first.
pub fn policy_surface(x: &[f64], nx: usize, ny: usize) -> Result<Vec<f64>, String> {
    let policy = mc_policy(x)?;
    let spec = BenchmarkId::MountainCar.spec();
    let (p, v) = (spec.state_bounds[0], spec.state_bounds[1]);
    let at = |(lo, hi): (f64, f64), i: usize, n: usize| lo + (hi - lo) * (i as f64 + 0.5) / n as f64;
    let mut out = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let s = State::from_slice(&[at(p, i, nx), at(v, j, ny)]);
            out.push(policy.output(&s));
        }
    }
    Ok(out)
}

/// Mountain-car rollout from rest at `position`. Returns `(position,
/// velocity, action)` triples, one per step, ending early at the goal.
pub fn rollout(x: &[f64], position: f64, steps: usize) -> Result<Vec<f64>, String> {
    let policy = mc_policy(x)?;
    let spec = BenchmarkId::MountainCar.spec();
    let mut s = State::from_slice(&[position, 0.0]);
    let mut out = Vec::with_capacity(3 * (steps + 1));
    for _ in 0..steps {
        let a = policy.output(&s);
        out.extend_from_slice(&[s[0], s[1], a]);
        if spec.in_goal(&s) {
            return Ok(out);
        }
        s = spec.step(&s, a).map_err(|e| e.to_string())?.0;
    }
    out.extend_from_slice(&[s[0], s[1], 0.0]);
    Ok(out)
}

/// 2-D test functions, as costs to minimize.
pub fn test_function(name: &str, x: f64, y: f64) -> Result<f64, String> {
    use std::f64::consts::PI;
    match name {
        "sphere" => Ok(x * x + y * y),
        "rastrigin" => Ok(20.0 + x * x - 10.0 * (2.0 * PI * x).cos() + y * y - 10.0 * (2.0 * PI * y).cos()),
        "rosenbrock" => Ok((1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2)),
        _ => Err(format!("unknown function {name:?}")),
    }
}

/// Swarm search on `[-5, 5]²`. Per iteration, after initialization and
/// after every update: best cost, best x, best y, then `(x, y)` of every
/// particle.
pub fn swarm_trace(name: &str, particles: usize, iterations: usize, seed: u64) -> Result<Vec<f64>, String> {
    test_function(name, 0.0, 0.0)?;
    let config = SwarmConfig::new(vec![-5.0; 2], vec![5.0; 2], particles, iterations, seed);
    let mut trace = Vec::with_capacity((iterations + 1) * (3 + 2 * particles));
    pso_optimize(
        |p| -test_function(name, p[0], p[1]).unwrap_or(f64::INFINITY),
        &config,
        |record, swarm| {
            let best = &swarm[global_best(swarm)].best_position;
            trace.extend_from_slice(&[-record.best_fitness, best[0], best[1]]);
            for p in swarm {
                trace.extend_from_slice(&p.position);
            }
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(trace)
}

#[wasm_bindgen(js_name = policySurface)]
pub fn policy_surface_js(x: &[f64], nx: usize, ny: usize) -> Result<Vec<f64>, JsError> {
    policy_surface(x, nx, ny).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = mountainCarRollout)]
pub fn rollout_js(x: &[f64], position: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    rollout(x, position, steps).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = swarmTrace)]
pub fn swarm_trace_js(name: &str, particles: usize, iterations: usize, seed: u64) -> Result<Vec<f64>, JsError> {
    swarm_trace(name, particles, iterations, seed).map_err(|e| JsError::new(&e))
}
