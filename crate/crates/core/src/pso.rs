//! Particle swarm optimization over box-bounded domains.
//!
//! Inertia decays linearly from `omega_max` to `omega_min` over the run.
//! Positions that leave the box are clamped and the offending velocity
//! component is zeroed. Each agent owns a random stream keyed by
//! `(seed, run, agent)`, so objective evaluations may run in parallel
//! without affecting results.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    #[default]
    Maximize,
    Minimize,
}

impl Direction {
    fn sign(self) -> f64 {
        match self {
            Direction::Maximize => 1.0,
            Direction::Minimize => -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwarmConfig {
    pub n_agents: usize,
    pub n_iters: usize,
    pub n_runs: usize,
    /// Inclusive `[lo, hi]` per dimension.
    pub bounds: Vec<(f64, f64)>,
    pub c1: f64,
    pub c2: f64,
    pub omega_max: f64,
    pub omega_min: f64,
    pub seed: u64,
    pub direction: Direction,
}

impl Default for SwarmConfig {
    fn default() -> Self {
        SwarmConfig {
            n_agents: 20,
            n_iters: 30,
            n_runs: 5,
            bounds: Vec::new(),
            c1: 2.0,
            c2: 2.0,
            omega_max: 0.9,
            omega_min: 0.4,
            seed: 0,
            direction: Direction::Maximize,
        }
    }
}

impl SwarmConfig {
    pub fn with_bounds(bounds: Vec<(f64, f64)>) -> Self {
        SwarmConfig {
            bounds,
            ..SwarmConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::invalid("swarm needs at least two agents"));
        }
        if self.n_runs == 0 {
            return Err(Error::invalid("swarm needs at least one run"));
        }
        if self.bounds.is_empty() {
            return Err(Error::invalid("swarm needs at least one dimension"));
        }
        if let Some((lo, hi)) = self.bounds.iter().find(|(lo, hi)| !(lo < hi)) {
            return Err(Error::invalid(format!("bad bound [{lo}, {hi}]")));
        }
        if !(self.omega_min <= self.omega_max) {
            return Err(Error::invalid("omega_min exceeds omega_max"));
        }
        Ok(())
    }
}

/// Linear inertia schedule; `iter` is 1-based. A single-iteration schedule
/// uses `omega_min`.
pub fn inertia_weight(iter: usize, itermax: usize, omega_max: f64, omega_min: f64) -> f64 {
    if itermax <= 1 {
        return omega_min;
    }
    let frac = (itermax as f64 - iter as f64) / (itermax as f64 - 1.0);
    frac * (omega_max - omega_min) + omega_min
}

/// One run's swarm. Values are stored in the maximization sense; non-finite
/// objective values rank as worst possible.
#[derive(Debug, Clone)]
pub struct SwarmState {
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub pbest: Vec<Vec<f64>>,
    pub pbest_fitness: Vec<f64>,
    pub gbest: Vec<f64>,
    pub gbest_fitness: f64,
    pub iter: usize,
    rngs: Vec<StreamRng>,
}

fn fitness(value: f64, direction: Direction) -> f64 {
    let f = direction.sign() * value;
    if f.is_finite() {
        f
    } else {
        f64::NEG_INFINITY
    }
}

fn evaluate<F>(positions: &[Vec<f64>], objective: &F, direction: Direction) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    positions.par_iter().map(|p| fitness(objective(p), direction)).collect()
}

impl SwarmState {
    /// Uniform positions over the box, zero velocities.
    pub fn init<F>(cfg: &SwarmConfig, run: usize, objective: &F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let mut rngs: Vec<StreamRng> = (0..cfg.n_agents)
            .map(|a| stream(cfg.seed, &[run as u64, a as u64]))
            .collect();
        let positions: Vec<Vec<f64>> = rngs
            .iter_mut()
            .map(|rng| cfg.bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
            .collect();
        let velocities = vec![vec![0.0; cfg.bounds.len()]; cfg.n_agents];
        Self::from_parts(positions, velocities, rngs, cfg, objective)
    }

    /// Starts a swarm at explicit positions and velocities.
    pub fn from_positions<F>(
        cfg: &SwarmConfig,
        run: usize,
        positions: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
        objective: &F,
    ) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let rngs = (0..positions.len())
            .map(|a| stream(cfg.seed, &[run as u64, a as u64]))
            .collect();
        Self::from_parts(positions, velocities, rngs, cfg, objective)
    }

    fn from_parts<F>(
        positions: Vec<Vec<f64>>,
        velocities: Vec<Vec<f64>>,
        rngs: Vec<StreamRng>,
        cfg: &SwarmConfig,
        objective: &F,
    ) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let fit = evaluate(&positions, objective, cfg.direction);
        let mut state = SwarmState {
            pbest: positions.clone(),
            pbest_fitness: fit,
            gbest: positions[0].clone(),
            gbest_fitness: f64::NEG_INFINITY,
            positions,
            velocities,
            iter: 0,
            rngs,
        };
        state.refresh_gbest();
        state
    }

    fn refresh_gbest(&mut self) {
        for (p, &f) in self.pbest.iter().zip(&self.pbest_fitness) {
            if f > self.gbest_fitness {
                self.gbest_fitness = f;
                self.gbest.clone_from(p);
            }
        }
    }

    /// One velocity/position update followed by evaluation and best
    /// tracking. `r1`, `r2` are drawn per agent per dimension.
    pub fn step<F>(&mut self, cfg: &SwarmConfig, objective: &F)
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        self.iter += 1;
        let omega = inertia_weight(self.iter, cfg.n_iters, cfg.omega_max, cfg.omega_min);
        let gbest = &self.gbest;
        for (a, rng) in self.rngs.iter_mut().enumerate() {
            let (pos, vel, pb) = (&mut self.positions[a], &mut self.velocities[a], &self.pbest[a]);
            for d in 0..pos.len() {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                vel[d] = omega * vel[d] + cfg.c1 * r1 * (pb[d] - pos[d]) + cfg.c2 * r2 * (gbest[d] - pos[d]);
                pos[d] += vel[d];
                let (lo, hi) = cfg.bounds[d];
                if pos[d] < lo || pos[d] > hi {
                    pos[d] = pos[d].clamp(lo, hi);
                    vel[d] = 0.0;
                }
            }
        }
        let fit = evaluate(&self.positions, objective, cfg.direction);
        for (a, f) in fit.into_iter().enumerate() {
            if f > self.pbest_fitness[a] {
                self.pbest_fitness[a] = f;
                self.pbest[a].clone_from(&self.positions[a]);
            }
        }
        self.refresh_gbest();
    }

    /// Global best in the objective's own sign.
    pub fn gbest_value(&self, direction: Direction) -> f64 {
        direction.sign() * self.gbest_fitness
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    /// Global best value after each iteration, one row per run.
    pub histories: Vec<Vec<f64>>,
    pub run_bests: Vec<Vec<f64>>,
}

/// Runs `n_runs` independent swarms and keeps the best result.
pub fn optimize<F>(objective: F, cfg: &SwarmConfig) -> Result<OptimizeResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let mut histories = Vec::with_capacity(cfg.n_runs);
    let mut run_bests = Vec::with_capacity(cfg.n_runs);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for run in 0..cfg.n_runs {
        let mut swarm = SwarmState::init(cfg, run, &objective);
        let mut history = Vec::with_capacity(cfg.n_iters);
        for _ in 0..cfg.n_iters {
            swarm.step(cfg, &objective);
            history.push(swarm.gbest_value(cfg.direction));
        }
        if best.as_ref().is_none_or(|(_, f)| swarm.gbest_fitness > *f) {
            best = Some((swarm.gbest.clone(), swarm.gbest_fitness));
        }
        run_bests.push(swarm.gbest.clone());
        histories.push(history);
    }
    let (best_position, best_fitness) = best.expect("at least one run");
    Ok(OptimizeResult {
        best_position,
        best_value: cfg.direction.sign() * best_fitness,
        histories,
        run_bests,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inertia_schedule() {
        assert_eq!(inertia_weight(1, 30, 0.9, 0.4), 0.9);
        assert!((inertia_weight(30, 30, 0.9, 0.4) - 0.4).abs() < 1e-15);
        assert!((inertia_weight(6, 11, 0.9, 0.4) - 0.65).abs() < 1e-15);
        assert_eq!(inertia_weight(1, 1, 0.9, 0.4), 0.4);
    }

    #[test]
    fn ballistic_drift_without_attraction() {
        let cfg = SwarmConfig {
            c1: 0.0,
            c2: 0.0,
            omega_max: 1.0,
            omega_min: 1.0,
            n_agents: 3,
            bounds: vec![(-100.0, 100.0); 2],
            ..SwarmConfig::default()
        };
        let f = |x: &[f64]| -x[0].abs();
        let pos = vec![vec![0.0, 0.0], vec![1.0, -1.0], vec![5.0, 2.0]];
        let vel = vec![vec![0.5, 0.25], vec![-1.0, 2.0], vec![0.0, -3.0]];
        let mut s = SwarmState::from_positions(&cfg, 0, pos.clone(), vel.clone(), &f);
        for k in 1..=4 {
            s.step(&cfg, &f);
            for a in 0..3 {
                for d in 0..2 {
                    assert_eq!(s.positions[a][d], pos[a][d] + k as f64 * vel[a][d]);
                }
            }
        }
    }

    #[test]
    fn agents_at_optimum_never_worsen() {
        let cfg = SwarmConfig::with_bounds(vec![(0.0, 1.0)]);
        let f = |x: &[f64]| -(x[0] - 0.5).powi(2);
        let n = cfg.n_agents;
        let mut s = SwarmState::from_positions(&cfg, 0, vec![vec![0.5]; n], vec![vec![0.0]; n], &f);
        for _ in 0..cfg.n_iters {
            s.step(&cfg, &f);
            assert_eq!(s.gbest_value(cfg.direction), 0.0);
            assert_eq!(s.gbest, vec![0.5]);
        }
    }

    #[test]
    fn non_finite_objective_is_worst() {
        let cfg = SwarmConfig {
            n_runs: 1,
            ..SwarmConfig::with_bounds(vec![(-1.0, 1.0)])
        };
        let r = optimize(|x: &[f64]| if x[0] < 0.0 { f64::NAN } else { x[0] }, &cfg).unwrap();
        assert!(r.best_position[0] >= 0.0);
        assert!(r.best_value > 0.99);
    }

    #[test]
    fn minimize_reports_objective_sign() {
        let cfg = SwarmConfig {
            direction: Direction::Minimize,
            n_runs: 2,
            ..SwarmConfig::with_bounds(vec![(-2.0, 2.0)])
        };
        let r = optimize(|x: &[f64]| (x[0] - 1.0).powi(2) + 3.0, &cfg).unwrap();
        assert!((r.best_value - 3.0).abs() < 1e-6);
        for h in &r.histories {
            assert!(h.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn constant_objective() {
        let cfg = SwarmConfig::with_bounds(vec![(2.0, 3.0), (-1.0, 0.0)]);
        let r = optimize(|_: &[f64]| 4.5, &cfg).unwrap();
        assert_eq!(r.best_value, 4.5);
        assert!((2.0..=3.0).contains(&r.best_position[0]));
        assert!((-1.0..=0.0).contains(&r.best_position[1]));
    }

    #[test]
    fn config_errors() {
        assert!(SwarmConfig::default().validate().is_err());
        let mut cfg = SwarmConfig::with_bounds(vec![(1.0, 1.0)]);
        assert!(cfg.validate().is_err());
        cfg.bounds = vec![(0.0, 1.0)];
        cfg.n_agents = 1;
        assert!(cfg.validate().is_err());
    }
}
