use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::QuboMatrix;

use super::{improves, CompiledQubo, Deadline, FlipState, SolveResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    #[default]
    Geometric,
    Linear,
}

/// Acceptance probability of a mean-sized uphill move at the first sweep.
const INITIAL_ACCEPTANCE: f64 = 0.8;
/// Acceptance probability of a mean-sized uphill move at the last sweep.
const FINAL_ACCEPTANCE: f64 = 1e-4;
const BETA_SAMPLES: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub sweeps: usize,
    /// `None` derives β from the mean |ΔE| of random flips.
    pub beta_initial: Option<f64>,
    pub beta_final: Option<f64>,
    pub schedule: BetaSchedule,
    pub seed: u64,
    pub restarts: usize,
    pub time_limit_s: Option<f64>,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        Self {
            sweeps: 1000,
            beta_initial: None,
            beta_final: None,
            schedule: BetaSchedule::Geometric,
            seed: 0,
            restarts: 10,
            time_limit_s: None,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.restarts == 0 {
            return Err(Error::InvalidConfig(
                "sweeps and restarts must be positive".into(),
            ));
        }
        for b in [self.beta_initial, self.beta_final].into_iter().flatten() {
            if !(b.is_finite() && b > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "beta must be positive, got {b}"
                )));
            }
        }
        if let (Some(b0), Some(b1)) = (self.beta_initial, self.beta_final) {
            if b1 <= b0 {
                return Err(Error::InvalidConfig(format!(
                    "beta_final {b1} must exceed beta_initial {b0}"
                )));
            }
        }
        Ok(())
    }

    pub fn betas(&self, b0: f64, b1: f64) -> Vec<f64> {
        let last = (self.sweeps.max(2) - 1) as f64;
        (0..self.sweeps)
            .map(|k| {
                let t = k as f64 / last;
                match self.schedule {
                    BetaSchedule::Geometric => b0 * (b1 / b0).powf(t),
                    BetaSchedule::Linear => b0 + (b1 - b0) * t,
                }
            })
            .collect()
    }
}

/// Mean |ΔE| over a short random walk of single flips.
fn mean_abs_delta(q: &CompiledQubo, rng: &mut ChaCha8Rng) -> f64 {
    let dim = q.dim();
    let mut state = FlipState::new(q, (0..dim).map(|_| rng.random()).collect());
    let mut total = 0.0;
    for _ in 0..BETA_SAMPLES {
        let i = rng.random_range(0..dim);
        total += state.delta(i).abs();
        state.flip(i);
    }
    total / BETA_SAMPLES as f64
}

fn resolve_betas(config: &AnnealConfig, q: &CompiledQubo, rng: &mut ChaCha8Rng) -> (f64, f64) {
    if let (Some(b0), Some(b1)) = (config.beta_initial, config.beta_final) {
        return (b0, b1);
    }
    let m = mean_abs_delta(q, rng);
    let scale = if m > 0.0 { m } else { 1.0 };
    let b0 = config
        .beta_initial
        .unwrap_or(-INITIAL_ACCEPTANCE.ln() / scale);
    let b1 = config
        .beta_final
        .unwrap_or(-FINAL_ACCEPTANCE.ln() / scale)
        .max(b0 * (1.0 + 1e-12));
    (b0, b1)
}

/// Single-flip Metropolis annealing with random sweep order.
pub fn solve_sa(q: &QuboMatrix, config: &AnnealConfig) -> Result<SolveResult> {
    config.validate()?;
    let started = Instant::now();
    let deadline = Deadline::after(config.time_limit_s);
    let compiled = CompiledQubo::new(q);
    let dim = compiled.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    if dim == 0 {
        return Ok(SolveResult::finish(
            "sa",
            config.seed,
            q,
            Vec::new(),
            vec![(0, q.offset())],
            0,
            started,
            0.0,
            false,
        ));
    }
    let (b0, b1) = resolve_betas(config, &compiled, &mut rng);
    let betas = config.betas(b0, b1);

    let mut best_bits = vec![false; dim];
    let mut best_e = f64::INFINITY;
    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let mut max_drift = 0.0f64;
    let mut order: Vec<usize> = (0..dim).collect();
    let mut timed_out = false;

    'restarts: for r in 0..config.restarts {
        let mut state = FlipState::new(&compiled, (0..dim).map(|_| rng.random()).collect());
        evaluations += 1;
        if improves(state.energy(), state.bits(), best_e, &best_bits) {
            best_e = state.energy();
            best_bits.copy_from_slice(state.bits());
            trace.push(((r * config.sweeps) as u64, best_e));
        }
        for (k, &beta) in betas.iter().enumerate() {
            order.shuffle(&mut rng);
            for &i in &order {
                let d = state.delta(i);
                evaluations += 1;
                if d <= 0.0 || rng.random::<f64>() < (-beta * d).exp() {
                    state.flip(i);
                    if d <= 0.0 && improves(state.energy(), state.bits(), best_e, &best_bits) {
                        best_e = state.energy();
                        best_bits.copy_from_slice(state.bits());
                        trace.push(((r * config.sweeps + k) as u64, best_e));
                    }
                }
            }
            if deadline.passed() {
                timed_out = true;
                max_drift = max_drift.max(state.drift());
                break 'restarts;
            }
        }
        max_drift = max_drift.max(state.drift());
    }
    Ok(SolveResult::finish(
        "sa",
        config.seed,
        q,
        best_bits,
        trace,
        evaluations,
        started,
        max_drift,
        timed_out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qubo::qubo_energy;
    use crate::solvers::solve_qubo_bruteforce;
    use crate::solvers::tests::random_qubo;

    #[test]
    fn deterministic_per_seed() {
        let q = random_qubo(16, 4);
        let cfg = AnnealConfig {
            seed: 9,
            sweeps: 200,
            restarts: 3,
            ..AnnealConfig::default()
        };
        let mut a = solve_sa(&q, &cfg).unwrap();
        let mut b = solve_sa(&q, &cfg).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn trace_is_monotone_and_energy_recomputed() {
        let q = random_qubo(20, 5);
        let r = solve_sa(
            &q,
            &AnnealConfig {
                sweeps: 100,
                ..AnnealConfig::default()
            },
        )
        .unwrap();
        assert!(r
            .energy_trace
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 && w[1].0 >= w[0].0));
        let e = qubo_energy(&q, &r.bits).unwrap();
        assert!((e - r.energy).abs() <= 1e-9 * (1.0 + e.abs()));
        assert_eq!(r.evaluations, 10 * (1 + 100 * 20));
    }

    #[test]
    fn schedules_hit_their_endpoints() {
        let cfg = AnnealConfig {
            sweeps: 5,
            ..AnnealConfig::default()
        };
        let g = cfg.betas(0.1, 10.0);
        assert!((g[0] - 0.1).abs() < 1e-15 && (g[4] - 10.0).abs() < 1e-12);
        assert!((g[2] - 1.0).abs() < 1e-12);
        let l = AnnealConfig {
            schedule: BetaSchedule::Linear,
            ..cfg
        }
        .betas(1.0, 3.0);
        assert_eq!(l, vec![1.0, 1.5, 2.0, 2.5, 3.0]);
    }

    #[test]
    fn rejects_inverted_betas() {
        let cfg = AnnealConfig {
            beta_initial: Some(2.0),
            beta_final: Some(1.0),
            ..AnnealConfig::default()
        };
        assert!(solve_sa(&random_qubo(3, 0), &cfg).is_err());
    }

    #[test]
    fn finds_ground_states_of_small_random_qubos() {
        let mut hits = 0;
        for seed in 0..100 {
            let q = random_qubo(16, 1000 + seed);
            let (_, opt) = solve_qubo_bruteforce(&q).unwrap();
            let r = solve_sa(
                &q,
                &AnnealConfig {
                    seed,
                    ..AnnealConfig::default()
                },
            )
            .unwrap();
            if r.energy <= opt + 1e-9 * (1.0 + opt.abs()) {
                hits += 1;
            }
        }
        assert!(hits >= 95, "ground state hit in {hits}/100");
    }

    #[test]
    fn hot_walk_keeps_incremental_energy_exact() {
        // β tiny: nearly every proposal is accepted.
        let q = random_qubo(50, 77);
        let cfg = AnnealConfig {
            sweeps: 20,
            restarts: 1,
            beta_initial: Some(1e-9),
            beta_final: Some(2e-9),
            ..AnnealConfig::default()
        };
        let r = solve_sa(&q, &cfg).unwrap();
        assert!(r.max_drift <= 1e-9, "drift {}", r.max_drift);
    }
}
