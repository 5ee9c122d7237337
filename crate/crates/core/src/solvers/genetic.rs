use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::QuboMatrix;

use super::{improves, CompiledQubo, Deadline, SolveResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-bit flip probability; `None` means `1 / dim`.
    pub mutation_rate: Option<f64>,
    pub tournament_size: usize,
    pub elitism_count: usize,
    pub seed: u64,
    pub time_limit_s: Option<f64>,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population: 100,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: None,
            tournament_size: 3,
            elitism_count: 2,
            seed: 0,
            time_limit_s: None,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.population == 0 || !self.population.is_multiple_of(2) {
            return bad(format!(
                "population must be positive and even, got {}",
                self.population
            ));
        }
        if self.generations == 0 {
            return bad("generations must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) {
            return bad(format!(
                "crossover_rate {} outside [0, 1]",
                self.crossover_rate
            ));
        }
        if let Some(m) = self.mutation_rate {
            if !(0.0..=1.0).contains(&m) {
                return bad(format!("mutation_rate {m} outside [0, 1]"));
            }
        }
        if self.tournament_size < 2 {
            return bad("tournament_size must be at least 2".into());
        }
        if self.elitism_count >= self.population {
            return bad("elitism_count must be below population".into());
        }
        Ok(())
    }
}

struct Individual {
    bits: Vec<bool>,
    energy: f64,
}

fn tournament<'p>(pop: &'p [Individual], size: usize, rng: &mut ChaCha8Rng) -> &'p Individual {
    let mut winner = &pop[rng.random_range(0..pop.len())];
    for _ in 1..size {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.energy < winner.energy {
            winner = c;
        }
    }
    winner
}

/// Generational GA on the penalised QUBO with fitness `−energy`.
pub fn solve_ga(q: &QuboMatrix, config: &GaConfig) -> Result<SolveResult> {
    config.validate()?;
    let started = Instant::now();
    let deadline = Deadline::after(config.time_limit_s);
    let compiled = CompiledQubo::new(q);
    let dim = compiled.dim();
    if dim == 0 {
        return Ok(SolveResult::finish(
            "ga",
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
    let mutation = config.mutation_rate.unwrap_or(1.0 / dim as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut pop: Vec<Individual> = (0..config.population)
        .map(|_| {
            let bits: Vec<bool> = (0..dim).map(|_| rng.random()).collect();
            Individual {
                energy: compiled.energy(&bits),
                bits,
            }
        })
        .collect();
    let mut evaluations = config.population as u64;

    let mut best_bits = vec![false; dim];
    let mut best_e = f64::INFINITY;
    let mut trace = Vec::new();
    let mut record =
        |gen: usize, pop: &[Individual], best_e: &mut f64, best_bits: &mut Vec<bool>| {
            for ind in pop {
                if improves(ind.energy, &ind.bits, *best_e, best_bits) {
                    *best_e = ind.energy;
                    best_bits.copy_from_slice(&ind.bits);
                    if trace.last().is_some_and(|&(g, _)| g == gen as u64) {
                        trace.pop();
                    }
                    trace.push((gen as u64, *best_e));
                }
            }
        };
    record(0, &pop, &mut best_e, &mut best_bits);

    let mut timed_out = false;
    for gen in 1..=config.generations {
        if deadline.passed() {
            timed_out = true;
            break;
        }
        pop.sort_by(|a, b| {
            a.energy
                .total_cmp(&b.energy)
                .then_with(|| a.bits.cmp(&b.bits))
        });
        let mut next: Vec<Individual> = pop[..config.elitism_count]
            .iter()
            .map(|ind| Individual {
                bits: ind.bits.clone(),
                energy: ind.energy,
            })
            .collect();
        while next.len() < config.population {
            let p1 = tournament(&pop, config.tournament_size, &mut rng);
            let p2 = tournament(&pop, config.tournament_size, &mut rng);
            let (mut c1, mut c2) = (p1.bits.clone(), p2.bits.clone());
            if rng.random::<f64>() < config.crossover_rate {
                for k in 0..dim {
                    if rng.random::<bool>() {
                        std::mem::swap(&mut c1[k], &mut c2[k]);
                    }
                }
            }
            for child in [c1, c2] {
                if next.len() == config.population {
                    break;
                }
                let mut child = child;
                if mutation > 0.0 {
                    for b in child.iter_mut() {
                        if rng.random::<f64>() < mutation {
                            *b = !*b;
                        }
                    }
                }
                evaluations += 1;
                next.push(Individual {
                    energy: compiled.energy(&child),
                    bits: child,
                });
            }
        }
        pop = next;
        record(gen, &pop, &mut best_e, &mut best_bits);
    }
    Ok(SolveResult::finish(
        "ga",
        config.seed,
        q,
        best_bits,
        trace,
        evaluations,
        started,
        0.0,
        timed_out,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::tests::random_qubo;

    #[test]
    fn deterministic_per_seed() {
        let q = random_qubo(12, 3);
        let cfg = GaConfig {
            seed: 4,
            generations: 30,
            ..GaConfig::default()
        };
        let mut a = solve_ga(&q, &cfg).unwrap();
        let mut b = solve_ga(&q, &cfg).unwrap();
        a.wall_time_s = 0.0;
        b.wall_time_s = 0.0;
        assert_eq!(a, b);
    }

    #[test]
    fn no_variation_keeps_best_constant() {
        let q = random_qubo(12, 6);
        let cfg = GaConfig {
            population: 10,
            generations: 50,
            crossover_rate: 0.0,
            mutation_rate: Some(0.0),
            elitism_count: 9,
            ..GaConfig::default()
        };
        let r = solve_ga(&q, &cfg).unwrap();
        assert_eq!(r.energy_trace.len(), 1);
        assert_eq!(r.energy_trace[0].0, 0);
    }

    #[test]
    fn best_trace_is_monotone() {
        let q = random_qubo(20, 7);
        let r = solve_ga(&q, &GaConfig::default()).unwrap();
        assert!(r
            .energy_trace
            .windows(2)
            .all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
        assert_eq!(r.evaluations, 100 + 200 * 98);
    }

    #[test]
    fn config_validation() {
        assert!(GaConfig {
            population: 7,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            elitism_count: 100,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            tournament_size: 1,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig {
            crossover_rate: 1.5,
            ..GaConfig::default()
        }
        .validate()
        .is_err());
        assert!(GaConfig::default().validate().is_ok());
    }
}
