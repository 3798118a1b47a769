//! Particle swarm optimization with a ring topology.
//!
//! The optimizer maximizes. Each iteration first computes every particle's
//! neighborhood best from the personal bests of the previous iteration, then
//! moves all particles and re-evaluates them. Velocities and positions are
//! truncated to their boxes after every update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::derive_seed;

/// Constricted-PSO inertia weight.
pub const DEFAULT_INERTIA: f64 = 0.7298;
/// Constricted-PSO acceleration constant, used for both terms.
pub const DEFAULT_ACCELERATION: f64 = 1.49618;
/// Velocity box half-width as a fraction of the search box extent.
pub const VELOCITY_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwarmConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Ring neighborhood radius `k`: particle `i` sees `i-k ..= i+k`.
    pub radius: usize,
    pub seed: u64,
}

impl SwarmConfig {
    /// Default coefficients on the box `[lower, upper]`.
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, particles: usize, iterations: usize, seed: u64) -> Self {
        SwarmConfig {
            particles,
            iterations,
            inertia: DEFAULT_INERTIA,
            cognitive: DEFAULT_ACCELERATION,
            social: DEFAULT_ACCELERATION,
            lower,
            upper,
            radius: 1,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::Config("swarm needs at least one particle".into()));
        }
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return Err(Error::Config("search box bounds must be nonempty and equally long".into()));
        }
        if let Some(j) = (0..self.dim()).find(|&j| !(self.lower[j] < self.upper[j])) {
            return Err(Error::Config(format!(
                "search box dimension {j} is empty: [{}, {}]",
                self.lower[j], self.upper[j]
            )));
        }
        if !(self.cognitive >= 0.0 && self.social >= 0.0) {
            return Err(Error::Config("acceleration constants must be nonnegative".into()));
        }
        Ok(())
    }

    /// `v_max = 0.1·(x_max − x_min)`; `v_min = −v_max`.
    pub fn velocity_bound(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| VELOCITY_FRACTION * (hi - lo))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
}

/// Per-iteration progress record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub best_fitness: f64,
    /// Mean fitness of the current positions, over finite values.
    pub mean_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PsoResult {
    pub best_position: Vec<f64>,
    pub best_fitness: f64,
    pub history: Vec<IterationRecord>,
}

/// Treats NaN and failed evaluations as the worst possible fitness.
fn sanitize(f: f64) -> f64 {
    if f.is_nan() {
        f64::NEG_INFINITY
    } else {
        f
    }
}

/// Index of the best personal best among the ring neighbors of `i`,
/// including `i`. Ties go to the lowest index.
pub fn neighborhood_best(particles: &[Particle], i: usize, radius: usize) -> usize {
    let n = particles.len();
    let k = radius.min(n / 2);
    let mut best = i;
    for offset in 0..=2 * k {
        let j = (i + n - k + offset) % n;
        let (fj, fb) = (particles[j].best_fitness, particles[best].best_fitness);
        if fj > fb || (fj == fb && j < best) {
            best = j;
        }
    }
    best
}

/// New velocity `w·v + c₁r₁(y − x) + c₂r₂(ŷ − x)`, truncated to
/// `[-v_max, v_max]`. `draw` supplies the uniform factors, `r₁` then `r₂`
/// per dimension.
pub fn velocity_update(
    particle: &Particle,
    neighborhood_best: &[f64],
    config: &SwarmConfig,
    v_max: &[f64],
    mut draw: impl FnMut() -> f64,
) -> Vec<f64> {
    (0..particle.position.len())
        .map(|j| {
            let x = particle.position[j];
            let r1 = draw();
            let r2 = draw();
            let v = config.inertia * particle.velocity[j]
                + config.cognitive * r1 * (particle.best_position[j] - x)
                + config.social * r2 * (neighborhood_best[j] - x);
            v.clamp(-v_max[j], v_max[j])
        })
        .collect()
}

/// `clamp(x + v, x_min, x_max)`
pub fn position_update(position: &[f64], velocity: &[f64], config: &SwarmConfig) -> Vec<f64> {
    position
        .iter()
        .zip(velocity)
        .enumerate()
        .map(|(j, (x, v))| (x + v).clamp(config.lower[j], config.upper[j]))
        .collect()
}

/// Replaces the personal best iff `fitness` is strictly better.
pub fn personal_best_update(particle: &mut Particle, fitness: f64) {
    let fitness = sanitize(fitness);
    if fitness > particle.best_fitness {
        particle.best_position.clone_from(&particle.position);
        particle.best_fitness = fitness;
    }
}

/// Index of the best personal best in the whole swarm, lowest index on ties.
pub fn global_best(particles: &[Particle]) -> usize {
    let mut best = 0;
    for (j, p) in particles.iter().enumerate().skip(1) {
        if p.best_fitness > particles[best].best_fitness {
            best = j;
        }
    }
    best
}

/// Stream for the initial positions.
const INIT_STREAM: u64 = u64::MAX;

fn particle_rng(seed: u64, iteration: u64, particle: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, &[iteration, particle as u64]))
}

/// A swarm in flight. Use [`pso_optimize`] unless you need to observe or
/// drive the iterations yourself.
pub struct Swarm<'a, F> {
    pub particles: Vec<Particle>,
    config: &'a SwarmConfig,
    v_max: Vec<f64>,
    fitness: F,
    iteration: usize,
    last_fitness: Vec<f64>,
}

impl<'a, F> Swarm<'a, F>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    /// Draws `x_i ~ U(x_min, x_max)`, sets `y_i = x_i`, `v_i = 0`, and
    /// evaluates every particle once.
    pub fn new(config: &'a SwarmConfig, fitness: F) -> Result<Self> {
        config.validate()?;
        let particles: Vec<Particle> = (0..config.particles)
            .map(|i| {
                let mut rng = particle_rng(config.seed, INIT_STREAM, i);
                let position: Vec<f64> = config
                    .lower
                    .iter()
                    .zip(&config.upper)
                    .map(|(&lo, &hi)| rng.gen_range(lo..hi))
                    .collect();
                Particle {
                    velocity: vec![0.0; position.len()],
                    best_position: position.clone(),
                    best_fitness: f64::NEG_INFINITY,
                    position,
                }
            })
            .collect();
        let mut swarm = Swarm {
            particles,
            config,
            v_max: config.velocity_bound(),
            fitness,
            iteration: 0,
            last_fitness: Vec::new(),
        };
        let scores = swarm.evaluate_all();
        for (p, f) in swarm.particles.iter_mut().zip(&scores) {
            p.best_fitness = sanitize(*f);
        }
        swarm.last_fitness = scores;
        Ok(swarm)
    }

    fn evaluate_all(&self) -> Vec<f64> {
        let fitness = &self.fitness;
        self.particles
            .par_iter()
            .map(|p| sanitize(fitness(&p.position)))
            .collect()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn record(&self) -> IterationRecord {
        let finite: Vec<f64> = self.last_fitness.iter().copied().filter(|f| f.is_finite()).collect();
        let mean_fitness = if finite.is_empty() {
            f64::NEG_INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        IterationRecord {
            iteration: self.iteration,
            best_fitness: self.particles[global_best(&self.particles)].best_fitness,
            mean_fitness,
        }
    }

    /// One synchronous iteration.
    pub fn step(&mut self) {
        self.iteration += 1;
        let targets: Vec<Vec<f64>> = (0..self.particles.len())
            .map(|i| {
                let j = neighborhood_best(&self.particles, i, self.config.radius);
                self.particles[j].best_position.clone()
            })
            .collect();
        for (i, (p, target)) in self.particles.iter_mut().zip(&targets).enumerate() {
            let mut rng = particle_rng(self.config.seed, self.iteration as u64, i);
            p.velocity = velocity_update(p, target, self.config, &self.v_max, || rng.gen::<f64>());
            p.position = position_update(&p.position, &p.velocity, self.config);
        }
        let scores = self.evaluate_all();
        for (p, f) in self.particles.iter_mut().zip(&scores) {
            personal_best_update(p, *f);
        }
        self.last_fitness = scores;
    }

    pub fn best(&self) -> (&[f64], f64) {
        let p = &self.particles[global_best(&self.particles)];
        (&p.best_position, p.best_fitness)
    }
}

/// Runs the configured number of iterations and returns the best personal
/// best found. `observer` sees the swarm after initialization (iteration 0)
/// and after every iteration.
pub fn pso_optimize<F>(
    fitness: F,
    config: &SwarmConfig,
    mut observer: impl FnMut(&IterationRecord, &[Particle]),
) -> Result<PsoResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut swarm = Swarm::new(config, fitness)?;
    let mut history = Vec::with_capacity(config.iterations + 1);
    let record = swarm.record();
    observer(&record, &swarm.particles);
    history.push(record);
    for _ in 0..config.iterations {
        swarm.step();
        let record = swarm.record();
        observer(&record, &swarm.particles);
        history.push(record);
    }
    let (position, fitness) = swarm.best();
    Ok(PsoResult {
        best_position: position.to_vec(),
        best_fitness: fitness,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn particle(x: &[f64], v: &[f64], y: &[f64], f: f64) -> Particle {
        Particle {
            position: x.to_vec(),
            velocity: v.to_vec(),
            best_position: y.to_vec(),
            best_fitness: f,
        }
    }

    fn config_1d() -> SwarmConfig {
        SwarmConfig::new(vec![0.0], vec![1.0], 4, 10, 0)
    }

    #[test]
    fn neighborhood_examples() {
        let single = vec![particle(&[0.5], &[0.0], &[0.2], 1.0)];
        assert_eq!(neighborhood_best(&single, 0, 1), 0);

        // ring k=1 around particle 0 is {3, 0, 1}
        let swarm: Vec<Particle> = [3.0, 9.0, 1.0, 5.0]
            .iter()
            .enumerate()
            .map(|(i, &f)| particle(&[0.0], &[0.0], &[i as f64], f))
            .collect();
        assert_eq!(neighborhood_best(&swarm, 0, 1), 1);
        assert_eq!(neighborhood_best(&swarm, 2, 1), 1);
        assert_eq!(neighborhood_best(&swarm, 3, 1), 3);

        let flat: Vec<Particle> = (0..5).map(|_| particle(&[0.0], &[0.0], &[0.0], 2.0)).collect();
        assert_eq!(neighborhood_best(&flat, 0, 1), 0);
        assert_eq!(neighborhood_best(&flat, 3, 1), 2);
        assert_eq!(neighborhood_best(&flat, 4, 1), 0);
    }

    #[test]
    fn velocity_inertia_only() {
        let mut cfg = SwarmConfig::new(vec![-10.0], vec![10.0], 1, 1, 0);
        cfg.inertia = 1.0;
        cfg.cognitive = 0.0;
        cfg.social = 0.0;
        let p = particle(&[0.3], &[0.7], &[5.0], 0.0);
        assert_eq!(velocity_update(&p, &[-4.0], &cfg, &[2.0], || 0.5), vec![0.7]);
    }

    #[test]
    fn velocity_without_attraction_scales_by_inertia() {
        let mut cfg = SwarmConfig::new(vec![-10.0], vec![10.0], 1, 1, 0);
        cfg.inertia = 0.5;
        let p = particle(&[1.0], &[1.2], &[1.0], 0.0);
        assert_eq!(velocity_update(&p, &[1.0], &cfg, &[2.0], || 0.9), vec![0.6]);
    }

    #[test]
    fn velocity_hand_evaluation_then_truncation() {
        let mut cfg = SwarmConfig::new(vec![-100.0], vec![100.0], 1, 1, 0);
        cfg.inertia = 0.5;
        cfg.cognitive = 1.0;
        cfg.social = 1.0;
        let p = particle(&[0.0], &[2.0], &[1.0], 0.0);
        // 0.5·2 + 1·1·1 + 1·1·3 = 5
        assert_eq!(velocity_update(&p, &[3.0], &cfg, &[20.0], || 1.0), vec![5.0]);
        assert_eq!(velocity_update(&p, &[3.0], &cfg, &cfg.velocity_bound(), || 1.0), vec![5.0]);
        assert_eq!(velocity_update(&p, &[3.0], &cfg, &[4.0], || 1.0), vec![4.0]);
    }

    #[test]
    fn position_examples() {
        let cfg = config_1d();
        assert_eq!(position_update(&[0.4], &[0.0], &cfg), vec![0.4]);
        assert_eq!(position_update(&[1.0], &[0.05], &cfg), vec![1.0]);
        assert_eq!(position_update(&[0.2], &[0.3], &cfg), vec![0.5]);
    }

    #[test]
    fn personal_best_is_strict() {
        let mut p = particle(&[0.5], &[0.0], &[0.1], 2.0);
        personal_best_update(&mut p, 2.0);
        assert_eq!(p.best_position, vec![0.1]);
        personal_best_update(&mut p, f64::NAN);
        assert_eq!(p.best_fitness, 2.0);
        personal_best_update(&mut p, 3.0);
        assert_eq!((p.best_position.clone(), p.best_fitness), (vec![0.5], 3.0));
    }

    #[test]
    fn initial_personal_best_is_initial_position() {
        let cfg = SwarmConfig::new(vec![-1.0; 3], vec![1.0; 3], 6, 0, 9);
        let swarm = Swarm::new(&cfg, |x: &[f64]| -x[0]).unwrap();
        for p in &swarm.particles {
            assert_eq!(p.position, p.best_position);
            assert_eq!(p.best_fitness, -p.position[0]);
            assert!(p.velocity.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn constant_fitness_returns_an_initial_position() {
        let cfg = SwarmConfig::new(vec![-1.0; 2], vec![1.0; 2], 5, 20, 1);
        let init = Swarm::new(&cfg, |_: &[f64]| 4.0).unwrap();
        let result = pso_optimize(|_: &[f64]| 4.0, &cfg, |_, _| {}).unwrap();
        assert_eq!(result.best_fitness, 4.0);
        assert_eq!(result.best_position, init.particles[0].position);
    }

    #[test]
    fn sphere_optimum_is_found() {
        let target = [1.5, -2.0, 0.25, 3.0, -4.5];
        let f = |x: &[f64]| -x.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let cfg = SwarmConfig::new(vec![-5.0; 5], vec![5.0; 5], 50, 200, 17);
        let result = pso_optimize(f, &cfg, |_, _| {}).unwrap();
        for (x, t) in result.best_position.iter().zip(&target) {
            assert!((x - t).abs() < 1e-2, "{x} vs {t}");
        }
        assert_eq!(result.history.len(), 201);
    }

    #[test]
    fn failing_fitness_scores_negative_infinity() {
        let cfg = SwarmConfig::new(vec![-1.0], vec![1.0], 8, 10, 2);
        let f = |x: &[f64]| if x[0] > 0.0 { f64::NAN } else { x[0] };
        let result = pso_optimize(f, &cfg, |_, _| {}).unwrap();
        assert!(result.best_position[0] <= 0.0);
        assert!(result.best_fitness.is_finite());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = SwarmConfig::new(vec![0.0], vec![0.0], 2, 1, 0);
        assert!(cfg.validate().is_err());
        cfg.upper = vec![1.0];
        cfg.particles = 0;
        assert!(cfg.validate().is_err());
        cfg.particles = 2;
        cfg.social = -1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let f = |x: &[f64]| -(x[0] - 0.3).powi(2) - (x[1] + 0.1).abs();
        let cfg = SwarmConfig::new(vec![-1.0; 2], vec![1.0; 2], 12, 30, 5);
        let a = pso_optimize(f, &cfg, |_, _| {}).unwrap();
        let b = pso_optimize(f, &cfg, |_, _| {}).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn swarm_stays_in_bounds_and_best_is_monotone(
            dim in 1usize..5,
            particles in 1usize..12,
            seed in any::<u64>(),
            width in 0.1f64..10.0,
            inertia in 0.0f64..1.2,
        ) {
            let mut cfg = SwarmConfig::new(vec![-width; dim], vec![width * 0.5; dim], particles, 15, seed);
            cfg.inertia = inertia;
            let v_max = cfg.velocity_bound();
            let f = |x: &[f64]| x.iter().map(|v| (3.0 * v).sin() - v * v).sum::<f64>();
            let mut last = f64::NEG_INFINITY;
            let mut ok = true;
            pso_optimize(f, &cfg, |rec, ps| {
                ok &= rec.best_fitness >= last;
                last = rec.best_fitness;
                for p in ps {
                    for j in 0..dim {
                        ok &= p.position[j] >= cfg.lower[j] && p.position[j] <= cfg.upper[j];
                        ok &= p.velocity[j].abs() <= v_max[j];
                    }
                }
            }).unwrap();
            prop_assert!(ok);
        }

        #[test]
        fn neighborhood_best_dominates(fits in prop::collection::vec(-10.0f64..10.0, 1..20), radius in 0usize..4) {
            let swarm: Vec<Particle> = fits.iter().map(|&f| particle(&[0.0], &[0.0], &[0.0], f)).collect();
            let n = swarm.len();
            for i in 0..n {
                let b = neighborhood_best(&swarm, i, radius);
                let k = radius.min(n / 2) as isize;
                for off in -k..=k {
                    let j = (i as isize + off).rem_euclid(n as isize) as usize;
                    prop_assert!(swarm[b].best_fitness >= swarm[j].best_fitness);
                }
            }
        }

        #[test]
        fn increasing_transform_preserves_the_search(seed in any::<u64>()) {
            let f = |x: &[f64]| -(x[0] - 0.2).powi(2) - (x[1] - 0.7).powi(2);
            // scaling by a power of two is exact, so no two values collapse
            let g = |x: &[f64]| 4.0 * f(x);
            let cfg = SwarmConfig::new(vec![-1.0; 2], vec![1.0; 2], 6, 20, seed);
            let a = pso_optimize(f, &cfg, |_, _| {}).unwrap();
            let b = pso_optimize(g, &cfg, |_, _| {}).unwrap();
            prop_assert_eq!(a.best_position, b.best_position);
        }
    }
}
