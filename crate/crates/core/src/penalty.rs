//! Penalty coefficient heuristics and tuning.
//!
//! `λ̂₁` bounds the risk a single asset can save by breaking the cardinality
//! constraint: for each asset `i`, `Sᵢ` is the sum of the `n` smallest
//! entries of row `i` of Σ, and `λ̂₁ = maxᵢ Sᵢ`.
//!
//! `λ̂₂ = A1 / A2` relates a typical risk step to a typical return step:
//! `A1` is the mean gap between the `n` smallest `Sᵢ` and `A2` the mean
//! positive return difference among the assets attaining them. Which `n`
//! assets to use is not pinned down by the optimum (which is unknown), so the
//! data-only choice of the smallest `Sᵢ` is used.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_feasible, PortfolioInstance, ReturnMode, Solution};
use crate::numfmt::fmt_f64;
use crate::qubo::{build_qubo, decode, PenaltyParams, SlackEncoding};
use crate::solvers::QuboSolver;

/// Caveat printed next to `λ̂₂`.
pub const LAMBDA2_NOTE: &str =
    "lambda2_hat uses the n assets with the smallest S_i, not the (unknown) optimal selection";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapAverage {
    /// Mean gap between consecutive sorted values: `(max − min)/(n − 1)`.
    #[default]
    Consecutive,
    /// Mean absolute difference over all pairs.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaEstimate {
    pub lambda1_hat: f64,
    pub lambda2_hat: f64,
    /// `Sᵢ` for every asset.
    pub row_sums: Vec<f64>,
    /// Assets with the `n` smallest `Sᵢ`, ascending by `Sᵢ`.
    pub chosen: Vec<usize>,
    pub a1: f64,
    pub a2: f64,
}

/// `Sᵢ`: sum of the `n` smallest entries of each covariance row, diagonal
/// included.
pub fn smallest_row_sums(instance: &PortfolioInstance) -> Vec<f64> {
    let sigma = instance.sigma();
    let n = instance.n();
    (0..instance.num_assets())
        .map(|i| {
            let mut row = sigma.row(i).to_vec();
            row.sort_by(f64::total_cmp);
            row[..n].iter().sum()
        })
        .collect()
}

pub fn estimate_lambda1(instance: &PortfolioInstance) -> f64 {
    smallest_row_sums(instance).into_iter().fold(0.0, f64::max)
}

/// Any `λ₁` strictly above this value makes every global minimiser of the
/// cardinality-only encoding (`λ₂ = 0`) select exactly `n` assets.
///
/// From a selection of size `m < n` some asset can be added for at most
/// `σᵢᵢ + 2·(n − 1 largest positive σᵢⱼ, j ≠ i)` extra risk; from `m > n` the
/// average removal saves at least `−max σᵢᵢ` because risk is nonnegative.
/// Either step lowers the penalty by at least `λ₁`.
pub fn cardinality_penalty_bound(instance: &PortfolioInstance) -> f64 {
    let sigma = instance.sigma();
    let n = instance.n();
    (0..instance.num_assets())
        .map(|i| {
            let mut off: Vec<f64> = sigma
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, &v)| j != i && v > 0.0)
                .map(|(_, &v)| v)
                .collect();
            off.sort_by(|a, b| b.total_cmp(a));
            sigma.get(i, i) + 2.0 * off.iter().take(n - 1).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

pub fn estimate_lambda2(instance: &PortfolioInstance) -> Result<f64> {
    Ok(estimate_lambdas_with(instance, GapAverage::Consecutive)?.lambda2_hat)
}

pub fn estimate_lambdas(instance: &PortfolioInstance) -> Result<LambdaEstimate> {
    estimate_lambdas_with(instance, GapAverage::Consecutive)
}

pub fn estimate_lambdas_with(
    instance: &PortfolioInstance,
    gaps: GapAverage,
) -> Result<LambdaEstimate> {
    let n = instance.n();
    let row_sums = smallest_row_sums(instance);
    let lambda1_hat = row_sums.iter().copied().fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..row_sums.len()).collect();
    order.sort_by(|&a, &b| row_sums[a].total_cmp(&row_sums[b]).then(a.cmp(&b)));
    order.truncate(n);

    let mut est = LambdaEstimate {
        lambda1_hat,
        lambda2_hat: 0.0,
        row_sums,
        chosen: order,
        a1: 0.0,
        a2: 0.0,
    };
    if instance.return_mode() == ReturnMode::None {
        return Ok(est);
    }
    if n < 2 {
        return Err(Error::Lambda2NeedsTwoAssets(n));
    }
    let s: Vec<f64> = est.chosen.iter().map(|&i| est.row_sums[i]).collect();
    est.a1 = match gaps {
        GapAverage::Consecutive => (s[n - 1] - s[0]) / (n - 1) as f64,
        GapAverage::Pairwise => mean_abs_pairwise(&s),
    };
    let mu = instance.mu();
    let mut diffs = Vec::new();
    for (k, &i) in est.chosen.iter().enumerate() {
        for &j in &est.chosen[k + 1..] {
            let d = (mu[i] - mu[j]).abs();
            if d > 0.0 {
                diffs.push(d);
            }
        }
    }
    if !diffs.is_empty() {
        est.a2 = diffs.iter().sum::<f64>() / diffs.len() as f64;
        est.lambda2_hat = est.a1 / est.a2;
    }
    Ok(est)
}

fn mean_abs_pairwise(v: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, a) in v.iter().enumerate() {
        for b in &v[k + 1..] {
            total += (a - b).abs();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// Multiples of an estimate used when no explicit grid is given.
pub const DEFAULT_GRID_FACTORS: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];
pub const DEFAULT_REPEATS: usize = 5;

/// `factors × estimate`, deduplicated (a zero estimate collapses to `[0]`).
pub fn default_grid(estimate: f64, factors: &[f64]) -> Vec<f64> {
    let mut g: Vec<f64> = factors.iter().map(|f| f * estimate).collect();
    g.dedup();
    g
}

/// Outcome of one seeded solve at fixed penalties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyRun {
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    pub energy: f64,
    pub risk: f64,
    pub feasible: bool,
    /// Constraint violation of the decoded selection.
    pub violation: f64,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

impl PenaltyRun {
    fn failed(lambda1: f64, lambda2: f64, seed: u64, err: &Error) -> Self {
        Self {
            lambda1,
            lambda2,
            seed,
            energy: f64::NAN,
            risk: f64::NAN,
            feasible: false,
            violation: f64::INFINITY,
            wall_time_s: 0.0,
            error: Some(err.to_string()),
        }
    }
}

/// Builds, solves and decodes one QUBO.
pub fn solve_with_penalties<S: QuboSolver + ?Sized>(
    instance: &PortfolioInstance,
    solver: &S,
    params: &PenaltyParams,
    encoding: SlackEncoding,
    seed: u64,
) -> Result<(Solution, usize)> {
    let (q, layout) = build_qubo(instance, params, encoding)?;
    let started = Instant::now();
    let result = solver.solve(&q, seed)?;
    let wall = started.elapsed().as_secs_f64();
    let mut sol = decode(instance, &layout, &result.bits)?.with_energy(result.energy);
    sol.provenance.solver = solver.name();
    sol.provenance.seed = Some(seed);
    sol.provenance.wall_time_s = wall;
    Ok((sol, q.dim()))
}

fn run_point<S: QuboSolver + ?Sized>(
    instance: &PortfolioInstance,
    solver: &S,
    params: PenaltyParams,
    encoding: SlackEncoding,
    seed: u64,
) -> PenaltyRun {
    match solve_with_penalties(instance, solver, &params, encoding, seed) {
        Ok((sol, _)) => {
            let feas = check_feasible(instance, &sol.x).expect("decoded length matches instance");
            PenaltyRun {
                lambda1: params.lambda1,
                lambda2: params.lambda2,
                seed,
                energy: sol.energy,
                risk: sol.risk,
                feasible: sol.feasible,
                violation: feas.total_violation(instance.return_mode()),
                wall_time_s: sol.provenance.wall_time_s,
                error: None,
            }
        }
        Err(e) => PenaltyRun::failed(params.lambda1, params.lambda2, seed, &e),
    }
}

/// Solves the instance once per `λ₁` value, keeping `λ₀` and `λ₂` from
/// `base`. Output order follows `lambda1_values`.
pub fn lambda_sweep<S: QuboSolver + ?Sized>(
    instance: &PortfolioInstance,
    solver: &S,
    lambda1_values: &[f64],
    base: &PenaltyParams,
    encoding: SlackEncoding,
    seed: u64,
) -> Result<Vec<PenaltyRun>> {
    if lambda1_values.is_empty() {
        return Err(Error::InvalidConfig(
            "sweep needs at least one lambda1 value".into(),
        ));
    }
    Ok(lambda1_values
        .par_iter()
        .map(|&l1| {
            run_point(
                instance,
                solver,
                PenaltyParams {
                    lambda1: l1,
                    ..*base
                },
                encoding,
                seed,
            )
        })
        .collect())
}

/// `points` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![from],
        _ => (0..points)
            .map(|k| from + (to - from) * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub lambda1: f64,
    pub lambda2: f64,
    pub runs: Vec<PenaltyRun>,
}

impl GridCell {
    pub fn best_feasible_risk(&self) -> Option<f64> {
        self.runs
            .iter()
            .filter(|r| r.feasible)
            .map(|r| r.risk)
            .min_by(f64::total_cmp)
    }

    pub fn min_violation(&self) -> f64 {
        self.runs
            .iter()
            .map(|r| r.violation)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub best: PenaltyParams,
    /// `false` when no cell produced a feasible selection; `best` is then
    /// the cell with the smallest constraint violation.
    pub feasible: bool,
    pub best_risk: Option<f64>,
    pub cells: Vec<GridCell>,
}

/// Exhaustive `(λ₁, λ₂)` grid with one run per seed in every cell.
pub fn grid_search<S: QuboSolver + ?Sized>(
    instance: &PortfolioInstance,
    solver: &S,
    grid1: &[f64],
    grid2: &[f64],
    seeds: &[u64],
    encoding: SlackEncoding,
) -> Result<GridResult> {
    if grid1.is_empty() || grid2.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidConfig(
            "grid search needs nonempty grids and at least one seed".into(),
        ));
    }
    let pairs: Vec<(f64, f64)> = grid1
        .iter()
        .flat_map(|&a| grid2.iter().map(move |&b| (a, b)))
        .collect();
    let cells: Vec<GridCell> = pairs
        .par_iter()
        .map(|&(l1, l2)| {
            let params = PenaltyParams {
                lambda0: 1.0,
                lambda1: l1,
                lambda2: l2,
            };
            let runs = seeds
                .iter()
                .map(|&s| run_point(instance, solver, params, encoding, s))
                .collect();
            GridCell {
                lambda1: l1,
                lambda2: l2,
                runs,
            }
        })
        .collect();

    let tie = |a: &GridCell, b: &GridCell| {
        (a.lambda1 + a.lambda2)
            .total_cmp(&(b.lambda1 + b.lambda2))
            .then(a.lambda1.total_cmp(&b.lambda1))
            .then(a.lambda2.total_cmp(&b.lambda2))
    };
    let feasible_best = cells
        .iter()
        .filter_map(|c| c.best_feasible_risk().map(|r| (r, c)))
        .min_by(|(ra, a), (rb, b)| ra.total_cmp(rb).then_with(|| tie(a, b)));
    let (best_cell, feasible, best_risk) = match feasible_best {
        Some((r, c)) => (c, true, Some(r)),
        None => {
            let c = cells
                .iter()
                .min_by(|a, b| {
                    a.min_violation()
                        .total_cmp(&b.min_violation())
                        .then_with(|| tie(a, b))
                })
                .expect("nonempty grid");
            (c, false, None)
        }
    };
    let best = PenaltyParams {
        lambda0: 1.0,
        lambda1: best_cell.lambda1,
        lambda2: best_cell.lambda2,
    };
    Ok(GridResult {
        best,
        feasible,
        best_risk,
        cells,
    })
}

/// `lambda1,lambda2,seed,energy,risk,feasible,wall_time_s` rows.
pub fn runs_csv<'a>(runs: impl IntoIterator<Item = &'a PenaltyRun>) -> String {
    let mut out = String::from("lambda1,lambda2,seed,energy,risk,feasible,wall_time_s\n");
    for r in runs {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            fmt_f64(r.lambda1),
            fmt_f64(r.lambda2),
            r.seed,
            fmt_f64(r.energy),
            fmt_f64(r.risk),
            r.feasible,
            fmt_f64(r.wall_time_s)
        ));
    }
    out
}

/// Result of doubling penalties until the QUBO optimum satisfies every
/// constraint with zero penalty.
#[derive(Debug, Clone, PartialEq)]
pub struct Escalation {
    pub params: PenaltyParams,
    pub doublings: usize,
    pub solution: Solution,
    pub settled: bool,
}

/// Starting from `start`, doubles `λ₁` and `λ₂` until the solver's decoded
/// optimum is feasible and its energy equals `λ₀·risk` (all penalty terms
/// vanish), or `max_doublings` is reached. Zero starting values are lifted
/// to 1 so that doubling has an effect.
pub fn escalate_penalties<S: QuboSolver + ?Sized>(
    instance: &PortfolioInstance,
    solver: &S,
    start: PenaltyParams,
    max_doublings: usize,
    encoding: SlackEncoding,
    seed: u64,
) -> Result<Escalation> {
    let lift = |v: f64| if v > 0.0 { v } else { 1.0 };
    let mut params = PenaltyParams {
        lambda1: lift(start.lambda1),
        ..start
    };
    params.lambda2 = match instance.return_mode() {
        ReturnMode::None => 0.0,
        _ => lift(start.lambda2),
    };
    let mut doublings = 0;
    loop {
        let (solution, _) = solve_with_penalties(instance, solver, &params, encoding, seed)?;
        let target = params.lambda0 * solution.risk;
        let settled =
            solution.feasible && (solution.energy - target).abs() <= 1e-9 * (1.0 + target.abs());
        if settled || doublings == max_doublings {
            return Ok(Escalation {
                params,
                doublings,
                solution,
                settled,
            });
        }
        params.lambda1 *= 2.0;
        params.lambda2 *= 2.0;
        doublings += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssetUniverse, SquareMatrix};
    use crate::solvers::SolverConfig;

    fn instance(
        mu: &[f64],
        rows: Vec<Vec<f64>>,
        n: usize,
        r_star: f64,
        mode: ReturnMode,
    ) -> PortfolioInstance {
        let symbols = (0..mu.len()).map(|i| format!("A{i}")).collect();
        let u = AssetUniverse::new(symbols, mu.to_vec(), SquareMatrix::from_rows(rows).unwrap())
            .unwrap();
        PortfolioInstance::new(u, n, r_star, mode).unwrap()
    }

    fn example3(mu: &[f64], n: usize, mode: ReturnMode) -> PortfolioInstance {
        let rows = vec![
            vec![4.0, 1.0, 2.0],
            vec![1.0, 9.0, 3.0],
            vec![2.0, 3.0, 16.0],
        ];
        instance(mu, rows, n, 0.0, mode)
    }

    #[test]
    fn lambda1_examples() {
        let eye = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ];
        assert_eq!(
            estimate_lambda1(&instance(&[1.0; 3], eye, 1, 0.0, ReturnMode::None)),
            0.0
        );
        let inst = example3(&[1.0; 3], 2, ReturnMode::None);
        assert_eq!(smallest_row_sums(&inst), vec![3.0, 4.0, 5.0]);
        assert_eq!(estimate_lambda1(&inst), 5.0);
    }

    #[test]
    fn lambda1_floored_at_zero() {
        let rows = vec![vec![1.0, -2.0], vec![-2.0, 5.0]];
        let inst = instance(&[1.0, 1.0], rows, 1, 0.0, ReturnMode::None);
        assert_eq!(estimate_lambda1(&inst), 0.0);
    }

    #[test]
    fn lambda2_hand_trace() {
        // S = (3, 4, 5); the two smallest belong to assets 0 and 1.
        let inst = example3(&[1.0, 3.0, 10.0], 2, ReturnMode::AtLeast);
        let est = estimate_lambdas(&inst).unwrap();
        assert_eq!(est.chosen, vec![0, 1]);
        assert_eq!(est.a1, 1.0);
        assert_eq!(est.a2, 2.0);
        assert_eq!(est.lambda2_hat, 0.5);
    }

    #[test]
    fn lambda2_degenerate_cases() {
        assert_eq!(
            estimate_lambda2(&example3(&[2.0; 3], 2, ReturnMode::AtLeast)).unwrap(),
            0.0
        );
        assert_eq!(
            estimate_lambda2(&example3(&[1.0, 3.0, 10.0], 2, ReturnMode::None)).unwrap(),
            0.0
        );
        assert!(matches!(
            estimate_lambda2(&example3(&[1.0, 3.0, 10.0], 1, ReturnMode::Equality)),
            Err(Error::Lambda2NeedsTwoAssets(1))
        ));
    }

    #[test]
    fn pairwise_gap_option() {
        let inst = example3(&[1.0, 3.0, 10.0], 3, ReturnMode::AtLeast);
        // S with n = 3: (7, 13, 21).
        let c = estimate_lambdas_with(&inst, GapAverage::Consecutive).unwrap();
        let p = estimate_lambdas_with(&inst, GapAverage::Pairwise).unwrap();
        assert_eq!(c.a1, 7.0);
        assert!((p.a1 - 28.0 / 3.0).abs() < 1e-12);
        assert!((c.a2 - 6.0).abs() < 1e-12);
    }

    #[test]
    fn grids() {
        assert_eq!(
            default_grid(2.0, &DEFAULT_GRID_FACTORS),
            vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0]
        );
        assert_eq!(default_grid(0.0, &DEFAULT_GRID_FACTORS), vec![0.0]);
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(linspace(2.0, 5.0, 1), vec![2.0]);
    }

    #[test]
    fn sweep_at_zero_penalty_selects_nothing() {
        let inst = example3(&[1.0; 3], 2, ReturnMode::None);
        let pts = lambda_sweep(
            &inst,
            &SolverConfig::Exact,
            &[0.0],
            &PenaltyParams::new(1.0, 0.0, 0.0).unwrap(),
            SlackEncoding::ZeroBased,
            0,
        )
        .unwrap();
        assert_eq!(pts[0].risk, 0.0);
        assert!(!pts[0].feasible);
    }

    #[test]
    fn sweep_records_errors_and_continues() {
        let inst = example3(&[1.0; 3], 2, ReturnMode::None);
        let base = PenaltyParams {
            lambda0: 1.0,
            lambda1: 0.0,
            lambda2: 1.0,
        };
        let pts = lambda_sweep(
            &inst,
            &SolverConfig::Exact,
            &[1.0, 2.0],
            &base,
            SlackEncoding::ZeroBased,
            0,
        )
        .unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts.iter().all(|p| p.error.is_some()));
        assert!(lambda_sweep(
            &inst,
            &SolverConfig::Exact,
            &[],
            &base,
            SlackEncoding::ZeroBased,
            0
        )
        .is_err());
    }

    #[test]
    fn grid_single_cell_and_threshold() {
        let inst = example3(&[1.0; 3], 2, ReturnMode::None);
        let g = grid_search(
            &inst,
            &SolverConfig::Exact,
            &[3.0],
            &[0.0],
            &[0],
            SlackEncoding::ZeroBased,
        )
        .unwrap();
        assert_eq!(g.best.lambda1, 3.0);
        assert_eq!(g.cells.len(), 1);

        let l1 = estimate_lambda1(&inst);
        let g = grid_search(
            &inst,
            &SolverConfig::Exact,
            &[0.0, 10.0 * l1],
            &[0.0],
            &[0, 1],
            SlackEncoding::ZeroBased,
        )
        .unwrap();
        assert!(g.feasible);
        assert_eq!(g.best.lambda1, 10.0 * l1);
        assert!(g.cells[0].best_feasible_risk().is_none());
    }

    #[test]
    fn grid_without_feasible_cell_reports_least_violation() {
        let inst = example3(&[1.0; 3], 2, ReturnMode::None);
        let g = grid_search(
            &inst,
            &SolverConfig::Exact,
            &[0.0, 0.1],
            &[0.0],
            &[0],
            SlackEncoding::ZeroBased,
        )
        .unwrap();
        assert!(!g.feasible);
        assert_eq!(g.best_risk, None);
    }

    #[test]
    fn runs_csv_header() {
        let csv = runs_csv(&[]);
        assert_eq!(
            csv,
            "lambda1,lambda2,seed,energy,risk,feasible,wall_time_s\n"
        );
    }
}
