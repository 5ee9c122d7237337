//! Instance × solver × seed benchmark runs and their CSV/Markdown reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{generate_synthetic, load_instance, SyntheticSpec};
use crate::model::{PortfolioInstance, ReturnMode};
use crate::numfmt::fmt_f64;
use crate::penalty::{
    default_grid, estimate_lambdas, grid_search, solve_with_penalties, DEFAULT_GRID_FACTORS,
};
use crate::qubo::{PenaltyParams, SlackEncoding};
use crate::solvers::{binomial_capped, solve_exhaustive_subsets, SolverConfig};

/// Worker-count override for [`run_benchmark`].
pub const WORKERS_ENV: &str = "PORTQUBO_WORKERS";
/// The subset oracle joins a run when `C(N, n)` is at most this.
pub const ORACLE_LIMIT: u128 = 1_000_000;
pub const ORACLE_SOLVER: &str = "exact-subsets";

pub const CSV_HEADER: [&str; 15] = [
    "instance",
    "N",
    "n",
    "r_star",
    "qubo_dim",
    "lambda1",
    "lambda2",
    "solver",
    "seed",
    "energy",
    "risk",
    "return",
    "feasible",
    "gap_percent",
    "wall_time_s",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSource {
    File {
        path: PathBuf,
        #[serde(default)]
        id: Option<String>,
    },
    Synthetic {
        synthetic: SyntheticSpec,
        n: usize,
        #[serde(default)]
        r_star: f64,
        return_mode: ReturnMode,
        #[serde(default)]
        id: Option<String>,
    },
}

impl InstanceSource {
    fn id(&self, index: usize) -> String {
        match self {
            InstanceSource::File { id: Some(id), .. }
            | InstanceSource::Synthetic { id: Some(id), .. } => id.clone(),
            InstanceSource::File { path, .. } => path.file_stem().map_or_else(
                || format!("instance{index}"),
                |s| s.to_string_lossy().into_owned(),
            ),
            InstanceSource::Synthetic { synthetic, n, .. } => {
                format!("synth-N{}-n{}-s{}", synthetic.n_assets, n, synthetic.seed)
            }
        }
    }

    fn load(&self, base_dir: Option<&Path>) -> Result<PortfolioInstance> {
        match self {
            InstanceSource::File { path, .. } => match base_dir {
                Some(dir) if path.is_relative() => load_instance(dir.join(path)),
                _ => load_instance(path),
            },
            InstanceSource::Synthetic {
                synthetic,
                n,
                r_star,
                return_mode,
                ..
            } => PortfolioInstance::new(generate_synthetic(synthetic)?, *n, *r_star, *return_mode),
        }
    }
}

/// A solver in a plan: either a bare name (`"sa"`) or a labelled config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SolverEntry {
    Name(String),
    Config {
        #[serde(default)]
        name: Option<String>,
        config: SolverConfig,
    },
}

impl SolverEntry {
    fn resolve(&self) -> Result<(String, SolverConfig)> {
        match self {
            SolverEntry::Name(name) => SolverConfig::by_name(name)
                .map(|c| (name.clone(), c))
                .ok_or_else(|| Error::InvalidConfig(format!("unknown solver '{name}'"))),
            SolverEntry::Config { name, config } => Ok((
                name.clone().unwrap_or_else(|| config.kind().to_string()),
                config.clone(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PenaltyPolicy {
    /// `λ = scale · λ̂`.
    Estimate {
        #[serde(default = "one")]
        scale: f64,
    },
    /// Grid search per (instance, solver) over multiples of `λ̂`, one run
    /// per plan seed in every cell.
    Grid {
        #[serde(default)]
        factors: Option<Vec<f64>>,
    },
    Explicit {
        lambda1: f64,
        lambda2: f64,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for PenaltyPolicy {
    fn default() -> Self {
        PenaltyPolicy::Estimate { scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchPlan {
    pub instances: Vec<InstanceSource>,
    pub solvers: Vec<SolverEntry>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub penalty_policy: PenaltyPolicy,
    #[serde(default)]
    pub time_limit_s: Option<f64>,
    #[serde(default)]
    pub slack_encoding: SlackEncoding,
}

impl BenchPlan {
    pub fn from_json(text: &str) -> Result<Self> {
        let plan: BenchPlan = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.instances.is_empty() || self.solvers.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidConfig(
                "a plan needs at least one instance, solver and seed".into(),
            ));
        }
        let mut labels = std::collections::HashSet::new();
        for entry in &self.solvers {
            let (label, _) = entry.resolve()?;
            if label == ORACLE_SOLVER || !labels.insert(label.clone()) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate or reserved solver label '{label}'"
                )));
            }
        }
        let mut ids = std::collections::HashSet::new();
        for (k, src) in self.instances.iter().enumerate() {
            if !ids.insert(src.id(k)) {
                return Err(Error::InvalidConfig(format!(
                    "duplicate instance id '{}'",
                    src.id(k)
                )));
            }
        }
        Ok(())
    }
}

pub fn load_plan(path: impl AsRef<Path>) -> Result<BenchPlan> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BenchPlan::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub instance: String,
    pub n_assets: usize,
    pub n: usize,
    pub r_star: f64,
    pub qubo_dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub solver: String,
    pub seed: u64,
    /// Missing when the run failed.
    pub energy: Option<f64>,
    pub risk: Option<f64>,
    pub ret: Option<f64>,
    pub feasible: bool,
    /// Only set for feasible rows.
    pub gap_percent: Option<f64>,
    pub wall_time_s: f64,
    /// Failure message; not part of the CSV.
    #[serde(default)]
    pub error: Option<String>,
}

impl BenchRow {
    pub fn is_oracle(&self) -> bool {
        self.solver == ORACLE_SOLVER
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub instance: String,
    pub n_assets: usize,
    pub n: usize,
    pub r_star: f64,
    /// Largest QUBO dimension among solver rows.
    pub qubo_dim: usize,
    pub best_risk: Option<f64>,
    /// The best value comes from a feasible subset-oracle row.
    pub proven_optimal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summaries: Vec<InstanceSummary>,
}

impl BenchReport {
    /// Computes gaps and per-instance summaries from the rows alone, keeping
    /// the instance order of first appearance.
    pub fn from_rows(mut rows: Vec<BenchRow>) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut best: BTreeMap<String, f64> = BTreeMap::new();
        for r in &rows {
            if !order.contains(&r.instance) {
                order.push(r.instance.clone());
            }
            if let (true, Some(risk)) = (r.feasible, r.risk) {
                let b = best.entry(r.instance.clone()).or_insert(risk);
                *b = b.min(risk);
            }
        }
        for r in &mut rows {
            r.gap_percent = match (r.feasible, r.risk, best.get(&r.instance)) {
                (true, Some(risk), Some(&b)) => Some(gap(risk, b)),
                _ => None,
            };
        }
        let summaries = order
            .iter()
            .map(|id| {
                let mine: Vec<&BenchRow> = rows.iter().filter(|r| &r.instance == id).collect();
                let first = mine[0];
                InstanceSummary {
                    instance: id.clone(),
                    n_assets: first.n_assets,
                    n: first.n,
                    r_star: first.r_star,
                    qubo_dim: mine
                        .iter()
                        .filter(|r| !r.is_oracle())
                        .map(|r| r.qubo_dim)
                        .max()
                        .unwrap_or(first.qubo_dim),
                    best_risk: best.get(id).copied(),
                    proven_optimal: mine.iter().any(|r| r.is_oracle() && r.feasible),
                }
            })
            .collect();
        Self { rows, summaries }
    }

    /// Zeroes every wall time, for byte-stable output.
    pub fn without_timing(mut self) -> Self {
        self.rows.iter_mut().for_each(|r| r.wall_time_s = 0.0);
        self
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Csv => render_csv(self),
            ReportFormat::Markdown => render_markdown(self, &[]),
        }
    }
}

fn gap(risk: f64, best: f64) -> f64 {
    if risk == best {
        0.0
    } else {
        (risk - best) / best * 100.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

struct Cell {
    instance: usize,
    solver: usize,
    seed: u64,
}

struct Prepared {
    id: String,
    instance: PortfolioInstance,
    /// Penalties per solver, or the reason they could not be resolved.
    penalties: Vec<std::result::Result<PenaltyParams, String>>,
}

fn resolve_penalties(
    plan: &BenchPlan,
    instance: &PortfolioInstance,
    solver: &SolverConfig,
) -> Result<PenaltyParams> {
    let mode = instance.return_mode();
    let l2 = |v: f64| if mode == ReturnMode::None { 0.0 } else { v };
    match &plan.penalty_policy {
        PenaltyPolicy::Explicit { lambda1, lambda2 } => {
            PenaltyParams::new(1.0, *lambda1, l2(*lambda2))
        }
        PenaltyPolicy::Estimate { scale } => {
            let est = estimate_lambdas(instance)?;
            PenaltyParams::new(1.0, scale * est.lambda1_hat, l2(scale * est.lambda2_hat))
        }
        PenaltyPolicy::Grid { factors } => {
            let est = estimate_lambdas(instance)?;
            let factors = factors.as_deref().unwrap_or(&DEFAULT_GRID_FACTORS);
            let g1 = default_grid(est.lambda1_hat, factors);
            let g2 = if mode == ReturnMode::None {
                vec![0.0]
            } else {
                default_grid(est.lambda2_hat, factors)
            };
            Ok(grid_search(instance, solver, &g1, &g2, &plan.seeds, plan.slack_encoding)?.best)
        }
    }
}

fn solver_row(
    prep: &Prepared,
    label: &str,
    solver: &SolverConfig,
    cell: &Cell,
    plan: &BenchPlan,
) -> BenchRow {
    let inst = &prep.instance;
    let mut row = BenchRow {
        instance: prep.id.clone(),
        n_assets: inst.num_assets(),
        n: inst.n(),
        r_star: inst.r_star(),
        qubo_dim: 0,
        lambda1: 0.0,
        lambda2: 0.0,
        solver: label.to_string(),
        seed: cell.seed,
        energy: None,
        risk: None,
        ret: None,
        feasible: false,
        gap_percent: None,
        wall_time_s: 0.0,
        error: None,
    };
    let params = match &prep.penalties[cell.solver] {
        Ok(p) => *p,
        Err(e) => {
            row.error = Some(e.clone());
            return row;
        }
    };
    row.lambda1 = params.lambda1;
    row.lambda2 = params.lambda2;
    match solve_with_penalties(inst, solver, &params, plan.slack_encoding, cell.seed) {
        Ok((sol, dim)) => {
            row.qubo_dim = dim;
            row.energy = Some(sol.energy);
            row.risk = Some(sol.risk);
            row.ret = Some(sol.ret);
            row.feasible = sol.feasible;
            row.wall_time_s = sol.provenance.wall_time_s;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn oracle_row(prep: &Prepared) -> Option<BenchRow> {
    let inst = &prep.instance;
    if binomial_capped(inst.num_assets(), inst.n(), ORACLE_LIMIT) > ORACLE_LIMIT {
        return None;
    }
    let mut row = BenchRow {
        instance: prep.id.clone(),
        n_assets: inst.num_assets(),
        n: inst.n(),
        r_star: inst.r_star(),
        qubo_dim: inst.num_assets(),
        lambda1: 0.0,
        lambda2: 0.0,
        solver: ORACLE_SOLVER.to_string(),
        seed: 0,
        energy: None,
        risk: None,
        ret: None,
        feasible: false,
        gap_percent: None,
        wall_time_s: 0.0,
        error: None,
    };
    match solve_exhaustive_subsets(inst) {
        Ok(sol) => {
            row.energy = Some(sol.energy);
            row.risk = Some(sol.risk);
            row.ret = Some(sol.ret);
            row.feasible = sol.feasible;
            row.wall_time_s = sol.provenance.wall_time_s;
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    Some(row)
}

/// Worker count from [`WORKERS_ENV`], if set to a positive integer.
pub fn workers_from_env() -> Option<usize> {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&w| w > 0)
}

/// Runs every (instance, solver, seed) cell plus the subset oracle where it
/// is cheap. Relative instance paths resolve against `base_dir`.
pub fn run_benchmark(plan: &BenchPlan, base_dir: Option<&Path>) -> Result<BenchReport> {
    run_benchmark_with_workers(plan, base_dir, workers_from_env())
}

pub fn run_benchmark_with_workers(
    plan: &BenchPlan,
    base_dir: Option<&Path>,
    workers: Option<usize>,
) -> Result<BenchReport> {
    plan.validate()?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        pool = pool.num_threads(w);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(plan, base_dir))
}

fn run_in_pool(plan: &BenchPlan, base_dir: Option<&Path>) -> Result<BenchReport> {
    let solvers: Vec<(String, SolverConfig)> = plan
        .solvers
        .iter()
        .map(|s| {
            let (label, mut config) = s.resolve()?;
            if plan.time_limit_s.is_some() {
                config.set_time_limit(plan.time_limit_s);
            }
            Ok((label, config))
        })
        .collect::<Result<_>>()?;

    let mut prepared = Vec::with_capacity(plan.instances.len());
    for (k, src) in plan.instances.iter().enumerate() {
        let instance = src.load(base_dir)?;
        let penalties = solvers
            .iter()
            .map(|(_, config)| {
                resolve_penalties(plan, &instance, config).map_err(|e| e.to_string())
            })
            .collect();
        prepared.push(Prepared {
            id: src.id(k),
            instance,
            penalties,
        });
    }

    let cells: Vec<Cell> = (0..prepared.len())
        .flat_map(|i| {
            (0..solvers.len()).flat_map(move |s| {
                plan.seeds.iter().map(move |&seed| Cell {
                    instance: i,
                    solver: s,
                    seed,
                })
            })
        })
        .collect();
    let mut keyed: Vec<((usize, String, u64), BenchRow)> = cells
        .par_iter()
        .map(|cell| {
            let (label, config) = &solvers[cell.solver];
            let row = solver_row(&prepared[cell.instance], label, config, cell, plan);
            ((cell.instance, label.clone(), cell.seed), row)
        })
        .collect();
    let oracles: Vec<Option<BenchRow>> = prepared.par_iter().map(oracle_row).collect();
    for (i, row) in oracles.into_iter().enumerate() {
        if let Some(row) = row {
            keyed.push(((i, row.solver.clone(), row.seed), row));
        }
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(BenchReport::from_rows(
        keyed.into_iter().map(|(_, r)| r).collect(),
    ))
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

pub fn render_csv(report: &BenchReport) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for r in &report.rows {
        w.write_record([
            r.instance.clone(),
            r.n_assets.to_string(),
            r.n.to_string(),
            fmt_f64(r.r_star),
            r.qubo_dim.to_string(),
            fmt_f64(r.lambda1),
            fmt_f64(r.lambda2),
            r.solver.clone(),
            r.seed.to_string(),
            opt(r.energy),
            opt(r.risk),
            opt(r.ret),
            r.feasible.to_string(),
            opt(r.gap_percent),
            fmt_f64(r.wall_time_s),
        ])?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Reads a report CSV back; gaps and summaries are recomputed.
pub fn parse_report_csv(text: &str) -> Result<BenchReport> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidField {
            field: "header",
            reason: format!("expected {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let rec = record?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |field: &'static str| Error::InvalidField {
            field,
            reason: format!("unparsable on line {line}"),
        };
        let num = |k: usize, field: &'static str| rec[k].parse::<f64>().map_err(|_| bad(field));
        let opt_num = |k: usize, field: &'static str| -> Result<Option<f64>> {
            if rec[k].is_empty() {
                Ok(None)
            } else {
                num(k, field).map(Some)
            }
        };
        let int = |k: usize, field: &'static str| rec[k].parse::<u64>().map_err(|_| bad(field));
        rows.push(BenchRow {
            instance: rec[0].to_string(),
            n_assets: int(1, "N")? as usize,
            n: int(2, "n")? as usize,
            r_star: num(3, "r_star")?,
            qubo_dim: int(4, "qubo_dim")? as usize,
            lambda1: num(5, "lambda1")?,
            lambda2: num(6, "lambda2")?,
            solver: rec[7].to_string(),
            seed: int(8, "seed")?,
            energy: opt_num(9, "energy")?,
            risk: opt_num(10, "risk")?,
            ret: opt_num(11, "return")?,
            feasible: rec[12].parse().map_err(|_| bad("feasible"))?,
            gap_percent: None,
            wall_time_s: num(14, "wall_time_s")?,
            error: None,
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(BenchReport::from_rows(rows))
}

/// A best-known value produced outside this toolkit (e.g. by a licensed
/// solver), shown with a `†`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResult {
    pub instance: String,
    pub solver: String,
    pub risk: f64,
}

/// Reads `instance,solver,risk` rows.
pub fn parse_external_csv(text: &str) -> Result<Vec<ExternalResult>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for r in reader.deserialize() {
        out.push(r?);
    }
    Ok(out)
}

fn md_num(v: f64) -> String {
    format!("{v:.4}")
}

/// One row per instance and one column per solver (best feasible risk over
/// seeds), external results marked `†`, best-known last with `*` when the
/// subset oracle proved it. A second table lists mean solver times.
pub fn render_markdown(report: &BenchReport, external: &[ExternalResult]) -> Result<String> {
    if report.rows.is_empty() {
        return Err(Error::EmptyReport);
    }
    let mut solvers: Vec<&str> = Vec::new();
    for r in report.rows.iter().filter(|r| !r.is_oracle()) {
        if !solvers.contains(&r.solver.as_str()) {
            solvers.push(&r.solver);
        }
    }
    let mut ext_solvers: Vec<&str> = Vec::new();
    for e in external {
        if !ext_solvers.contains(&e.solver.as_str()) {
            ext_solvers.push(&e.solver);
        }
    }

    let mut out = String::new();
    let mut header = vec!["Instance", "N", "n", "R*", "Size(Q)"]
        .into_iter()
        .map(str::to_string)
        .collect::<Vec<_>>();
    header.extend(solvers.iter().map(|s| s.to_string()));
    header.extend(ext_solvers.iter().map(|s| format!("{s} †")));
    header.push("Best".into());
    push_md_row(&mut out, &header);
    push_md_row(&mut out, &vec!["---".to_string(); header.len()]);
    for s in &report.summaries {
        let mut cells = vec![
            s.instance.clone(),
            s.n_assets.to_string(),
            s.n.to_string(),
            md_num(s.r_star),
            s.qubo_dim.to_string(),
        ];
        for solver in &solvers {
            let best = report
                .rows
                .iter()
                .filter(|r| r.instance == s.instance && r.solver == *solver && r.feasible)
                .filter_map(|r| r.risk)
                .min_by(f64::total_cmp);
            cells.push(best.map_or_else(|| "infeasible".to_string(), md_num));
        }
        for solver in &ext_solvers {
            let v = external
                .iter()
                .find(|e| e.instance == s.instance && e.solver == *solver);
            cells.push(v.map_or_else(|| "-".to_string(), |e| format!("{}†", md_num(e.risk))));
        }
        cells.push(match s.best_risk {
            Some(b) if s.proven_optimal => format!("{}*", md_num(b)),
            Some(b) => md_num(b),
            None => "-".into(),
        });
        push_md_row(&mut out, &cells);
    }
    out.push('\n');
    out.push_str("Values marked with * are proven optimal; values marked with † come from external solvers.\n\n");

    let has_oracle = report.rows.iter().any(BenchRow::is_oracle);
    let mut header = vec!["Instance".to_string()];
    header.extend(solvers.iter().map(|s| s.to_string()));
    if has_oracle {
        header.push(ORACLE_SOLVER.into());
    }
    push_md_row(&mut out, &header);
    push_md_row(&mut out, &vec!["---".to_string(); header.len()]);
    for s in &report.summaries {
        let mut cells = vec![s.instance.clone()];
        let mean_time = |solver: &str| {
            let t: Vec<f64> = report
                .rows
                .iter()
                .filter(|r| r.instance == s.instance && r.solver == solver)
                .map(|r| r.wall_time_s)
                .collect();
            if t.is_empty() {
                "-".to_string()
            } else {
                format!("{:.3}", t.iter().sum::<f64>() / t.len() as f64)
            }
        };
        cells.extend(solvers.iter().map(|s| mean_time(s)));
        if has_oracle {
            cells.push(mean_time(ORACLE_SOLVER));
        }
        push_md_row(&mut out, &cells);
    }
    out.push('\n');
    out.push_str("Mean solver wall time in seconds (QUBO construction excluded).\n");
    Ok(out)
}

fn push_md_row(out: &mut String, cells: &[String]) {
    out.push_str("| ");
    out.push_str(&cells.join(" | "));
    out.push_str(" |\n");
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::{AnnealConfig, GaConfig, TabuConfig};

    fn synth(seed: u64, n_assets: usize, n: usize) -> InstanceSource {
        InstanceSource::Synthetic {
            synthetic: SyntheticSpec::new(n_assets, 2, seed),
            n,
            r_star: 0.0,
            return_mode: ReturnMode::None,
            id: None,
        }
    }

    fn small_plan() -> BenchPlan {
        BenchPlan {
            instances: vec![synth(1, 10, 3)],
            solvers: vec![
                SolverEntry::Config {
                    name: None,
                    config: SolverConfig::Sa(AnnealConfig {
                        sweeps: 100,
                        restarts: 2,
                        ..AnnealConfig::default()
                    }),
                },
                SolverEntry::Config {
                    name: None,
                    config: SolverConfig::Tabu(TabuConfig {
                        restarts: 2,
                        ..TabuConfig::default()
                    }),
                },
                SolverEntry::Config {
                    name: None,
                    config: SolverConfig::Ga(GaConfig {
                        generations: 20,
                        population: 20,
                        ..GaConfig::default()
                    }),
                },
            ],
            seeds: vec![0, 1],
            penalty_policy: PenaltyPolicy::Explicit {
                lambda1: 50.0,
                lambda2: 0.0,
            },
            time_limit_s: None,
            slack_encoding: SlackEncoding::ZeroBased,
        }
    }

    #[test]
    fn row_count_sorting_and_gaps() {
        let report = run_benchmark_with_workers(&small_plan(), None, Some(2)).unwrap();
        assert_eq!(report.rows.len(), 3 * 2 + 1);
        let keys: Vec<(&str, u64)> = report
            .rows
            .iter()
            .map(|r| (r.solver.as_str(), r.seed))
            .collect();
        assert_eq!(
            keys,
            vec![
                ("exact-subsets", 0),
                ("ga", 0),
                ("ga", 1),
                ("sa", 0),
                ("sa", 1),
                ("tabu", 0),
                ("tabu", 1)
            ]
        );
        let oracle = report.rows.iter().find(|r| r.is_oracle()).unwrap();
        assert_eq!(oracle.gap_percent, Some(0.0));
        for r in report.rows.iter().filter(|r| r.feasible) {
            assert!(r.gap_percent.unwrap() >= 0.0);
            assert!(r.risk.unwrap() >= oracle.risk.unwrap() - 1e-9);
        }
        assert!(report.summaries[0].proven_optimal);
    }

    #[test]
    fn csv_round_trip_and_determinism() {
        let a = run_benchmark_with_workers(&small_plan(), None, Some(1))
            .unwrap()
            .without_timing();
        let b = run_benchmark_with_workers(&small_plan(), None, Some(3))
            .unwrap()
            .without_timing();
        let csv_a = render_csv(&a).unwrap();
        assert_eq!(csv_a, render_csv(&b).unwrap());
        let parsed = parse_report_csv(&csv_a).unwrap();
        assert_eq!(render_csv(&parsed).unwrap(), csv_a);
        assert!(csv_a.starts_with(&CSV_HEADER.join(",")));
        assert!(!csv_a.contains('\r'));
    }

    #[test]
    fn single_row_and_empty_reports() {
        let mut plan = small_plan();
        plan.instances = vec![synth(1, 40, 20)];
        plan.solvers.truncate(1);
        plan.seeds = vec![7];
        let report = run_benchmark_with_workers(&plan, None, Some(1)).unwrap();
        assert_eq!(report.rows.len(), 1);
        let csv = render_csv(&report).unwrap();
        assert_eq!(csv.lines().count(), 2);
        assert!(!report.summaries[0].proven_optimal);

        let empty = BenchReport {
            rows: vec![],
            summaries: vec![],
        };
        assert!(matches!(render_csv(&empty), Err(Error::EmptyReport)));
        assert!(matches!(
            render_markdown(&empty, &[]),
            Err(Error::EmptyReport)
        ));
        assert!(matches!(
            "html".parse::<ReportFormat>(),
            Err(Error::UnknownFormat(_))
        ));
    }

    #[test]
    fn failures_are_recorded_in_row() {
        let mut plan = small_plan();
        plan.instances = vec![InstanceSource::Synthetic {
            synthetic: SyntheticSpec::new(8, 2, 3),
            n: 1,
            r_star: 10.0,
            return_mode: ReturnMode::AtLeast,
            id: Some("one".into()),
        }];
        plan.penalty_policy = PenaltyPolicy::Estimate { scale: 1.0 };
        let report = run_benchmark_with_workers(&plan, None, Some(1)).unwrap();
        let failed: Vec<&BenchRow> = report.rows.iter().filter(|r| !r.is_oracle()).collect();
        assert_eq!(failed.len(), 6);
        assert!(failed
            .iter()
            .all(|r| r.error.as_deref().is_some_and(|e| e.contains("n ≥ 2")) && !r.feasible));
        let csv = render_csv(&report).unwrap();
        assert!(csv
            .lines()
            .find(|l| l.contains(",sa,"))
            .unwrap()
            .contains(",,,false,,"));
    }

    #[test]
    fn markdown_layout() {
        let report = run_benchmark_with_workers(&small_plan(), None, Some(1)).unwrap();
        let ext = vec![ExternalResult {
            instance: report.rows[0].instance.clone(),
            solver: "gurobi".into(),
            risk: 1.5,
        }];
        let md = render_markdown(&report, &ext).unwrap();
        let first = md.lines().next().unwrap();
        assert_eq!(
            first,
            "| Instance | N | n | R* | Size(Q) | ga | sa | tabu | gurobi † | Best |"
        );
        let row = md.lines().nth(2).unwrap();
        assert!(row.ends_with("* |"), "{row}");
        assert!(row.contains("1.5000†"));
    }

    #[test]
    fn plan_json_forms() {
        let text = r#"{
            "instances": [{"synthetic": {"n_assets": 6, "n_factors": 2, "idiosyncratic_floor": 1.0,
                            "return_range": [1.0, 10.0], "seed": 3}, "n": 2, "return_mode": "none"},
                          {"path": "inst.json", "id": "file"}],
            "solvers": ["sa", {"name": "short-tabu", "config": {"kind": "tabu", "restarts": 1}}],
            "seeds": [1, 2],
            "penalty_policy": {"policy": "explicit", "lambda1": 10.0, "lambda2": 0.0}
        }"#;
        let plan = BenchPlan::from_json(text).unwrap();
        assert_eq!(plan.instances.len(), 2);
        assert!(matches!(plan.instances[1], InstanceSource::File { .. }));
        assert_eq!(plan.solvers[1].resolve().unwrap().0, "short-tabu");

        let bad = r#"{"instances": [], "solvers": ["sa"], "seeds": [1]}"#;
        assert!(BenchPlan::from_json(bad).is_err());
        let unknown =
            r#"{"instances": [{"path": "x.json"}], "solvers": ["annealer"], "seeds": [1]}"#;
        assert!(matches!(
            BenchPlan::from_json(unknown),
            Err(Error::InvalidConfig(_))
        ));
    }
}
