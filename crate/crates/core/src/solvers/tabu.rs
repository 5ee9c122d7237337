use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::QuboMatrix;

use super::{improves, tie_tol, CompiledQubo, Deadline, FlipState, SolveResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TabuConfig {
    /// `None` means `max(7, dim / 10)`.
    pub tenure: Option<usize>,
    /// `None` means `50 · dim`.
    pub max_iterations: Option<usize>,
    pub seed: u64,
    /// The first restart always starts from all zeros.
    pub restarts: usize,
    pub time_limit_s: Option<f64>,
}

impl Default for TabuConfig {
    fn default() -> Self {
        Self {
            tenure: None,
            max_iterations: None,
            seed: 0,
            restarts: 5,
            time_limit_s: None,
        }
    }
}

impl TabuConfig {
    pub fn tenure_for(&self, dim: usize) -> usize {
        self.tenure.unwrap_or_else(|| (dim / 10).max(7))
    }

    pub fn iterations_for(&self, dim: usize) -> usize {
        self.max_iterations.unwrap_or(50 * dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 || self.tenure == Some(0) || self.max_iterations == Some(0) {
            return Err(Error::InvalidConfig(
                "tenure, max_iterations and restarts must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Steepest single-flip descent with a recency tabu list and aspiration on
/// the best-ever energy.
pub fn solve_tabu(q: &QuboMatrix, config: &TabuConfig) -> Result<SolveResult> {
    config.validate()?;
    let started = Instant::now();
    let deadline = Deadline::after(config.time_limit_s);
    let compiled = CompiledQubo::new(q);
    let dim = compiled.dim();
    if dim == 0 {
        return Ok(SolveResult::finish(
            "tabu",
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
    let tenure = config.tenure_for(dim);
    if tenure >= dim {
        log::warn!("tabu tenure {tenure} is not below the problem dimension {dim}");
    }
    let iterations = config.iterations_for(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best_bits = vec![false; dim];
    let mut best_e = f64::INFINITY;
    let mut trace = Vec::new();
    let mut evaluations = 0u64;
    let mut max_drift = 0.0f64;
    let mut timed_out = false;
    let mut tabu_until = vec![0usize; dim];

    'restarts: for r in 0..config.restarts {
        let start = if r == 0 {
            vec![false; dim]
        } else {
            (0..dim).map(|_| rng.random()).collect()
        };
        let mut state = FlipState::new(&compiled, start);
        evaluations += 1;
        let base = (r * iterations) as u64;
        if improves(state.energy(), state.bits(), best_e, &best_bits) {
            best_e = state.energy();
            best_bits.copy_from_slice(state.bits());
            trace.push((base, best_e));
        }
        tabu_until.iter_mut().for_each(|t| *t = 0);
        for it in 0..iterations {
            let aspiration = best_e - tie_tol(best_e);
            let mut chosen: Option<(usize, f64)> = None;
            let mut fallback: Option<(usize, f64)> = None;
            for i in 0..dim {
                let d = state.delta(i);
                evaluations += 1;
                if fallback.is_none_or(|(_, fd)| d < fd) {
                    fallback = Some((i, d));
                }
                let admissible = tabu_until[i] <= it || state.energy() + d < aspiration;
                if admissible && chosen.is_none_or(|(_, cd)| d < cd) {
                    chosen = Some((i, d));
                }
            }
            // Everything tabu and nothing aspirating: take the best move anyway.
            let (i, _) = chosen.or(fallback).expect("dim > 0");
            state.flip(i);
            tabu_until[i] = it + 1 + tenure;
            if improves(state.energy(), state.bits(), best_e, &best_bits) {
                best_e = state.energy();
                best_bits.copy_from_slice(state.bits());
                trace.push((base + it as u64 + 1, best_e));
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
        "tabu",
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
        let q = random_qubo(14, 8);
        let cfg = TabuConfig {
            seed: 5,
            ..TabuConfig::default()
        };
        let mut a = solve_tabu(&q, &cfg).unwrap();
        let mut b = solve_tabu(&q, &cfg).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn never_worse_than_all_zeros() {
        for seed in 0..20 {
            let q = random_qubo(12, 200 + seed);
            let r = solve_tabu(
                &q,
                &TabuConfig {
                    seed,
                    restarts: 1,
                    max_iterations: Some(3),
                    ..TabuConfig::default()
                },
            )
            .unwrap();
            assert!(r.energy <= qubo_energy(&q, &vec![false; 12]).unwrap());
        }
    }

    #[test]
    fn finds_ground_states_of_small_random_qubos() {
        let mut hits = 0;
        for seed in 0..100 {
            let q = random_qubo(14, 3000 + seed);
            let (_, opt) = solve_qubo_bruteforce(&q).unwrap();
            let r = solve_tabu(
                &q,
                &TabuConfig {
                    seed,
                    ..TabuConfig::default()
                },
            )
            .unwrap();
            if r.energy <= opt + 1e-9 * (1.0 + opt.abs()) {
                hits += 1;
            }
        }
        assert!(hits >= 90, "ground state hit in {hits}/100");
    }

    #[test]
    fn trace_monotone_and_drift_small() {
        let q = random_qubo(50, 12);
        let r = solve_tabu(
            &q,
            &TabuConfig {
                max_iterations: Some(1000),
                restarts: 1,
                ..TabuConfig::default()
            },
        )
        .unwrap();
        assert!(r.energy_trace.windows(2).all(|w| w[1].1 <= w[0].1));
        assert!(r.max_drift <= 1e-9);
    }

    #[test]
    fn defaults_scale_with_dimension() {
        let c = TabuConfig::default();
        assert_eq!(c.tenure_for(20), 7);
        assert_eq!(c.tenure_for(200), 20);
        assert_eq!(c.iterations_for(30), 1500);
    }
}
