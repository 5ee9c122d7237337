//! QUBO solvers: simulated annealing, tabu search, a genetic algorithm and
//! two exhaustive oracles.
//!
//! Every stochastic solver draws from a `ChaCha8Rng` seeded with the run's
//! seed, so `(matrix, config, seed)` fully determines the result including
//! traces and evaluation counts.

mod anneal;
mod exact;
mod genetic;
mod tabu;

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{qubo_energy, QuboMatrix};

pub use anneal::{solve_sa, AnnealConfig, BetaSchedule};
pub(crate) use exact::binomial_capped;
pub use exact::{
    solve_exhaustive_subsets, solve_qubo_bruteforce, BRUTEFORCE_MAX_DIM, SUBSET_LIMIT,
};
pub use genetic::{solve_ga, GaConfig};
pub use tabu::{solve_tabu, TabuConfig};

/// Relative tolerance under which two energies count as tied.
pub const ENERGY_TIE_TOL: f64 = 1e-9;

#[inline]
pub(crate) fn tie_tol(e: f64) -> f64 {
    if e.is_finite() {
        ENERGY_TIE_TOL * (1.0 + e.abs())
    } else {
        0.0
    }
}

/// `true` when `(e, bits)` should replace the incumbent `(best, best_bits)`:
/// strictly lower energy, or a tie broken towards the lexicographically
/// smaller bit vector.
#[inline]
pub(crate) fn improves(e: f64, bits: &[bool], best: f64, best_bits: &[bool]) -> bool {
    let tol = tie_tol(best);
    e < best - tol || (e <= best + tol && bits < best_bits)
}

/// Dense symmetric form of a QUBO: `offset + Σ lᵢxᵢ + Σ_{i<j} cᵢⱼ xᵢ xⱼ`.
#[derive(Debug, Clone)]
pub struct CompiledQubo {
    dim: usize,
    linear: Vec<f64>,
    coupling: Vec<f64>,
    offset: f64,
}

impl CompiledQubo {
    pub fn new(q: &QuboMatrix) -> Self {
        let dim = q.dim();
        let mut linear = vec![0.0; dim];
        let mut coupling = vec![0.0; dim * dim];
        for (i, j, v) in q.iter() {
            if i == j {
                linear[i] += v;
            } else {
                coupling[i * dim + j] += v;
                coupling[j * dim + i] += v;
            }
        }
        Self {
            dim,
            linear,
            coupling,
            offset: q.offset(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.coupling[i * self.dim..(i + 1) * self.dim]
    }

    pub fn energy(&self, x: &[bool]) -> f64 {
        let mut e = self.offset;
        for i in 0..self.dim {
            if x[i] {
                e += self.linear[i];
                let row = self.row(i);
                for j in (i + 1)..self.dim {
                    if x[j] {
                        e += row[j];
                    }
                }
            }
        }
        e
    }
}

/// Bit assignment with incrementally maintained local fields, giving O(1)
/// flip gains and O(dim) flips.
#[derive(Debug, Clone)]
pub struct FlipState<'a> {
    q: &'a CompiledQubo,
    bits: Vec<bool>,
    field: Vec<f64>,
    energy: f64,
}

impl<'a> FlipState<'a> {
    pub fn new(q: &'a CompiledQubo, bits: Vec<bool>) -> Self {
        assert_eq!(
            bits.len(),
            q.dim,
            "bit vector length must equal QUBO dimension"
        );
        let mut s = Self {
            q,
            field: vec![0.0; q.dim],
            energy: 0.0,
            bits,
        };
        s.resync();
        s
    }

    /// Recomputes fields and energy from scratch.
    pub fn resync(&mut self) {
        let dim = self.q.dim;
        for i in 0..dim {
            let row = self.q.row(i);
            self.field[i] = (0..dim).filter(|&j| self.bits[j]).map(|j| row[j]).sum();
        }
        self.energy = self.q.energy(&self.bits);
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Energy change of flipping bit `i`.
    #[inline]
    pub fn delta(&self, i: usize) -> f64 {
        let g = self.q.linear[i] + self.field[i];
        if self.bits[i] {
            -g
        } else {
            g
        }
    }

    pub fn flip(&mut self, i: usize) {
        self.energy += self.delta(i);
        self.bits[i] = !self.bits[i];
        let sign = if self.bits[i] { 1.0 } else { -1.0 };
        let row = self.q.row(i);
        for (f, c) in self.field.iter_mut().zip(row) {
            *f += sign * c;
        }
    }

    /// `|tracked − recomputed|` relative to `1 + |recomputed|`.
    pub fn drift(&self) -> f64 {
        let exact = self.q.energy(&self.bits);
        (self.energy - exact).abs() / (1.0 + exact.abs())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub solver: String,
    pub seed: u64,
    pub bits: Vec<bool>,
    /// `qubo_energy` recomputed on `bits`.
    pub energy: f64,
    /// `(iteration, best energy so far)` at every improvement.
    pub energy_trace: Vec<(u64, f64)>,
    pub evaluations: u64,
    pub wall_time_s: f64,
    /// Largest relative gap between tracked and recomputed energy seen at
    /// the end of each restart.
    pub max_drift: f64,
    pub timed_out: bool,
}

impl SolveResult {
    pub(crate) fn finish(
        solver: &str,
        seed: u64,
        q: &QuboMatrix,
        bits: Vec<bool>,
        trace: Vec<(u64, f64)>,
        evaluations: u64,
        started: Instant,
        max_drift: f64,
        timed_out: bool,
    ) -> Self {
        let energy = qubo_energy(q, &bits).expect("solver bits match QUBO dimension");
        Self {
            solver: solver.to_string(),
            seed,
            bits,
            energy,
            energy_trace: trace,
            evaluations,
            wall_time_s: started.elapsed().as_secs_f64(),
            max_drift,
            timed_out,
        }
    }

    /// Energy trace as `iteration,energy` CSV.
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("iteration,energy\n");
        for (it, e) in &self.energy_trace {
            out.push_str(&format!("{it},{}\n", crate::numfmt::fmt_f64(*e)));
        }
        out
    }
}

/// Cooperative deadline checked between sweeps, iterations or generations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Deadline(Option<Instant>);

impl Deadline {
    pub(crate) fn after(limit_s: Option<f64>) -> Self {
        Self(limit_s.map(|s| Instant::now() + Duration::from_secs_f64(s.max(0.0))))
    }

    pub(crate) fn passed(&self) -> bool {
        self.0.is_some_and(|d| Instant::now() >= d)
    }
}

pub trait QuboSolver: Sync {
    fn name(&self) -> String;

    /// Solves `q` with `seed` overriding any seed in the solver's own config.
    fn solve(&self, q: &QuboMatrix, seed: u64) -> Result<SolveResult>;
}

/// A solver together with its configuration, as written in plan files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SolverConfig {
    Sa(AnnealConfig),
    Tabu(TabuConfig),
    Ga(GaConfig),
    /// Full enumeration of the QUBO.
    Exact,
}

impl SolverConfig {
    pub fn sa() -> Self {
        SolverConfig::Sa(AnnealConfig::default())
    }

    pub fn tabu() -> Self {
        SolverConfig::Tabu(TabuConfig::default())
    }

    pub fn ga() -> Self {
        SolverConfig::Ga(GaConfig::default())
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sa" => Some(Self::sa()),
            "tabu" => Some(Self::tabu()),
            "ga" => Some(Self::ga()),
            "exact" => Some(SolverConfig::Exact),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SolverConfig::Sa(_) => "sa",
            SolverConfig::Tabu(_) => "tabu",
            SolverConfig::Ga(_) => "ga",
            SolverConfig::Exact => "exact",
        }
    }

    pub fn set_time_limit(&mut self, limit_s: Option<f64>) {
        match self {
            SolverConfig::Sa(c) => c.time_limit_s = limit_s,
            SolverConfig::Tabu(c) => c.time_limit_s = limit_s,
            SolverConfig::Ga(c) => c.time_limit_s = limit_s,
            SolverConfig::Exact => {}
        }
    }

    pub fn set_restarts(&mut self, restarts: usize) {
        match self {
            SolverConfig::Sa(c) => c.restarts = restarts,
            SolverConfig::Tabu(c) => c.restarts = restarts,
            SolverConfig::Ga(_) | SolverConfig::Exact => {}
        }
    }
}

impl QuboSolver for SolverConfig {
    fn name(&self) -> String {
        self.kind().to_string()
    }

    fn solve(&self, q: &QuboMatrix, seed: u64) -> Result<SolveResult> {
        match self {
            SolverConfig::Sa(c) => solve_sa(q, &AnnealConfig { seed, ..c.clone() }),
            SolverConfig::Tabu(c) => solve_tabu(q, &TabuConfig { seed, ..c.clone() }),
            SolverConfig::Ga(c) => solve_ga(q, &GaConfig { seed, ..c.clone() }),
            SolverConfig::Exact => {
                let started = Instant::now();
                let (bits, _) = solve_qubo_bruteforce(q)?;
                let evaluations = 1u64 << q.dim();
                let mut r = SolveResult::finish(
                    "exact",
                    seed,
                    q,
                    bits,
                    Vec::new(),
                    evaluations,
                    started,
                    0.0,
                    false,
                );
                r.energy_trace.push((0, r.energy));
                Ok(r)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub best: SolveResult,
    /// One result per seed, in the order the seeds were given.
    pub runs: Vec<SolveResult>,
}

/// Runs `solver` once per seed (concurrently) and keeps the lowest energy,
/// ties going to the smaller seed.
pub fn run_restarts<S: QuboSolver + ?Sized>(
    solver: &S,
    q: &QuboMatrix,
    seeds: &[u64],
) -> Result<RestartSummary> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "run_restarts needs at least one seed".into(),
        ));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            solver.solve(q, seed).map_err(|e| Error::SolverRun {
                seed,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = runs
        .iter()
        .min_by(|a, b| a.energy.total_cmp(&b.energy).then(a.seed.cmp(&b.seed)))
        .cloned()
        .expect("nonempty");
    Ok(RestartSummary { best, runs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_qubo(dim: usize, seed: u64) -> QuboMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut triples = Vec::new();
        for i in 0..dim {
            for j in i..dim {
                triples.push((i, j, rng.random_range(-10.0..10.0)));
            }
        }
        QuboMatrix::from_triples(dim, triples, rng.random_range(-5.0..5.0)).unwrap()
    }

    #[test]
    fn incremental_energy_tracks_recomputation() {
        let q = random_qubo(50, 3);
        let c = CompiledQubo::new(&q);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut s = FlipState::new(&c, (0..50).map(|_| rng.random()).collect());
        for _ in 0..1000 {
            let i = rng.random_range(0..50);
            let before = s.energy();
            let d = s.delta(i);
            s.flip(i);
            assert!((s.energy() - before - d).abs() < 1e-12 * (1.0 + before.abs()));
        }
        let exact = qubo_energy(&q, s.bits()).unwrap();
        assert!((s.energy() - exact).abs() <= 1e-9 * (1.0 + exact.abs()));
        assert!(s.drift() <= 1e-9);
    }

    #[test]
    fn compiled_energy_matches_sparse_energy() {
        let q = random_qubo(12, 9);
        let c = CompiledQubo::new(&q);
        for v in 0..(1u32 << 12) {
            let x: Vec<bool> = (0..12).map(|i| (v >> i) & 1 == 1).collect();
            let a = c.energy(&x);
            let b = qubo_energy(&q, &x).unwrap();
            assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn improves_prefers_lexicographically_smaller_ties() {
        assert!(improves(1.0, &[false, true], 1.0, &[true, false]));
        assert!(!improves(1.0, &[true, false], 1.0, &[false, true]));
        assert!(improves(0.5, &[true, true], 1.0, &[false, false]));
        assert!(!improves(1.5, &[false, false], 1.0, &[true, true]));
    }

    #[test]
    fn restarts_single_seed_equals_direct_call() {
        let q = random_qubo(10, 1);
        let sa = SolverConfig::sa();
        let direct = sa.solve(&q, 42).unwrap();
        let r = run_restarts(&sa, &q, &[42]).unwrap();
        assert_eq!(r.best.bits, direct.bits);
        assert_eq!(r.best.energy, direct.energy);
        assert_eq!(r.best.evaluations, direct.evaluations);
    }

    #[test]
    fn restarts_are_order_independent_and_dominate_each_run() {
        let q = random_qubo(16, 2);
        let tabu = SolverConfig::Tabu(TabuConfig {
            restarts: 1,
            max_iterations: Some(40),
            ..TabuConfig::default()
        });
        let a = run_restarts(&tabu, &q, &[1, 2, 3, 4, 5]).unwrap();
        let b = run_restarts(&tabu, &q, &[5, 4, 3, 2, 1]).unwrap();
        assert_eq!(a.best.bits, b.best.bits);
        assert_eq!(a.best.seed, b.best.seed);
        for run in &a.runs {
            assert!(a.best.energy <= run.energy);
        }
        assert!(run_restarts(&tabu, &q, &[]).is_err());
    }

    #[test]
    fn restart_errors_carry_the_seed() {
        let q = random_qubo(BRUTEFORCE_MAX_DIM + 1, 0);
        let err = run_restarts(&SolverConfig::Exact, &q, &[7]).unwrap_err();
        assert!(matches!(err, Error::SolverRun { seed: 7, .. }));
    }

    #[test]
    fn solver_config_round_trips_through_json() {
        let cfgs = vec![
            SolverConfig::sa(),
            SolverConfig::tabu(),
            SolverConfig::ga(),
            SolverConfig::Exact,
        ];
        let text = serde_json::to_string(&cfgs).unwrap();
        let back: Vec<SolverConfig> = serde_json::from_str(&text).unwrap();
        assert_eq!(back, cfgs);
        let parsed: SolverConfig = serde_json::from_str(r#"{"kind":"sa","sweeps":50}"#).unwrap();
        assert!(matches!(
            parsed,
            SolverConfig::Sa(AnnealConfig { sweeps: 50, .. })
        ));
    }
}
