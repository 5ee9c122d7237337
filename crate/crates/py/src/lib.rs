//! Python bindings: instances, QUBO construction, solvers, penalty
//! estimation and the benchmark harness.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use portqubo::bench::{run_benchmark, BenchPlan, ReportFormat};
use portqubo::ingest::{self, SyntheticSpec};
use portqubo::penalty::{escalate_penalties, lambda_sweep};
use portqubo::qubo::{read_qubo, write_qubo};
use portqubo::solvers::QuboSolver;
use portqubo::{
    AssetUniverse, PenaltyParams, PortfolioInstance, QuboMatrix, ReturnMode, SlackEncoding,
    SolverConfig, SquareMatrix, VariableLayout,
};

create_exception!(portqubo_py, PortquboError, PyException);

fn err(e: portqubo::Error) -> PyErr {
    PortquboError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<ReturnMode> {
    mode.parse().map_err(err)
}

fn encoding(literal_slack: bool) -> SlackEncoding {
    if literal_slack {
        SlackEncoding::Literal
    } else {
        SlackEncoding::ZeroBased
    }
}

fn solver_config(
    name: &str,
    restarts: Option<usize>,
    time_limit: Option<f64>,
) -> PyResult<SolverConfig> {
    let mut config = SolverConfig::by_name(name)
        .ok_or_else(|| PortquboError::new_err(format!("unknown solver '{name}'")))?;
    if let Some(r) = restarts {
        config.set_restarts(r);
    }
    config.set_time_limit(time_limit);
    Ok(config)
}

/// A decoded selection.
#[pyclass(
    name = "Solution",
    module = "portqubo_py",
    get_all,
    frozen,
    skip_from_py_object
)]
#[derive(Clone)]
struct PySolution {
    x: Vec<bool>,
    risk: f64,
    ret: f64,
    cardinality: usize,
    feasible: bool,
    energy: f64,
}

impl From<portqubo::Solution> for PySolution {
    fn from(s: portqubo::Solution) -> Self {
        Self {
            x: s.x,
            risk: s.risk,
            ret: s.ret,
            cardinality: s.cardinality,
            feasible: s.feasible,
            energy: s.energy,
        }
    }
}

#[pymethods]
impl PySolution {
    fn selected(&self) -> Vec<usize> {
        (0..self.x.len()).filter(|&i| self.x[i]).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Solution(selected={:?}, risk={}, return={}, feasible={})",
            self.selected(),
            self.risk,
            self.ret,
            self.feasible
        )
    }
}

/// Raw output of one QUBO solver run.
#[pyclass(name = "SolveResult", module = "portqubo_py", get_all, frozen)]
struct PySolveResult {
    solver: String,
    seed: u64,
    bits: Vec<bool>,
    energy: f64,
    trace: Vec<(u64, f64)>,
    evaluations: u64,
    wall_time_s: f64,
    timed_out: bool,
}

impl From<portqubo::SolveResult> for PySolveResult {
    fn from(r: portqubo::SolveResult) -> Self {
        Self {
            solver: r.solver,
            seed: r.seed,
            bits: r.bits,
            energy: r.energy,
            trace: r.energy_trace,
            evaluations: r.evaluations,
            wall_time_s: r.wall_time_s,
            timed_out: r.timed_out,
        }
    }
}

#[pymethods]
impl PySolveResult {
    fn __repr__(&self) -> String {
        format!(
            "SolveResult(solver={:?}, seed={}, energy={})",
            self.solver, self.seed, self.energy
        )
    }
}

#[pyclass(name = "Instance", module = "portqubo_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyInstance {
    inner: PortfolioInstance,
}

#[pymethods]
impl PyInstance {
    #[new]
    #[pyo3(signature = (symbols, mu, sigma, n, r_star = 0.0, return_mode = "none"))]
    fn new(
        symbols: Vec<String>,
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        n: usize,
        r_star: f64,
        return_mode: &str,
    ) -> PyResult<Self> {
        let sigma = SquareMatrix::from_rows(sigma).map_err(err)?;
        let universe = AssetUniverse::new(symbols, mu, sigma).map_err(err)?;
        let inner =
            PortfolioInstance::new(universe, n, r_star, parse_mode(return_mode)?).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ingest::load_instance(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ingest::instance_from_json(text).map_err(err)?,
        })
    }

    /// Factor-model universe; see `SyntheticSpec` in the Rust crate.
    #[staticmethod]
    #[pyo3(signature = (n_assets, n_factors, seed, n, r_star = 0.0, return_mode = "none", floor = 1.0,
                        return_range = (0.0, 100.0), integer_returns = false, loading_mean = 0.0))]
    #[allow(clippy::too_many_arguments)]
    fn synthetic(
        n_assets: usize,
        n_factors: usize,
        seed: u64,
        n: usize,
        r_star: f64,
        return_mode: &str,
        floor: f64,
        return_range: (f64, f64),
        integer_returns: bool,
        loading_mean: f64,
    ) -> PyResult<Self> {
        let spec = SyntheticSpec {
            idiosyncratic_floor: floor,
            return_range,
            integer_returns,
            loading_mean,
            ..SyntheticSpec::new(n_assets, n_factors, seed)
        };
        let universe = ingest::generate_synthetic(&spec).map_err(err)?;
        let inner =
            PortfolioInstance::new(universe, n, r_star, parse_mode(return_mode)?).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        ingest::instance_to_json(&self.inner)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        ingest::save_instance(&self.inner, path).map_err(err)
    }

    #[getter]
    fn symbols(&self) -> Vec<String> {
        self.inner.universe().symbols().to_vec()
    }

    #[getter]
    fn mu(&self) -> Vec<f64> {
        self.inner.mu().to_vec()
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        self.inner.sigma().to_rows()
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.n()
    }

    #[getter]
    fn r_star(&self) -> f64 {
        self.inner.r_star()
    }

    #[getter]
    fn return_mode(&self) -> &'static str {
        self.inner.return_mode().as_str()
    }

    fn __len__(&self) -> usize {
        self.inner.num_assets()
    }

    fn risk(&self, x: Vec<bool>) -> PyResult<f64> {
        portqubo::portfolio_risk(self.inner.sigma(), &x).map_err(err)
    }

    fn portfolio_return(&self, x: Vec<bool>) -> PyResult<f64> {
        portqubo::portfolio_return(self.inner.mu(), &x).map_err(err)
    }

    fn is_feasible(&self, x: Vec<bool>) -> PyResult<bool> {
        Ok(portqubo::check_feasible(&self.inner, &x)
            .map_err(err)?
            .is_feasible())
    }

    /// `(lambda1_hat, lambda2_hat)`; the second is 0 in mode `none`.
    fn estimate_lambdas(&self) -> PyResult<(f64, f64)> {
        let l1 = portqubo::estimate_lambda1(&self.inner);
        let l2 = match self.inner.return_mode() {
            ReturnMode::None => 0.0,
            _ => portqubo::estimate_lambda2(&self.inner).map_err(err)?,
        };
        Ok((l1, l2))
    }

    /// Encodes the instance. Penalties left as `None` take their estimates.
    #[pyo3(signature = (lambda1 = None, lambda2 = None, lambda0 = 1.0, literal_slack = false))]
    fn build_qubo(
        &self,
        lambda1: Option<f64>,
        lambda2: Option<f64>,
        lambda0: f64,
        literal_slack: bool,
    ) -> PyResult<PyQubo> {
        let params = self.params(lambda1, lambda2, lambda0)?;
        let (q, layout) =
            portqubo::build_qubo(&self.inner, &params, encoding(literal_slack)).map_err(err)?;
        Ok(PyQubo {
            q,
            layout: Some(layout),
        })
    }

    fn decode(&self, qubo: &PyQubo, bits: Vec<bool>) -> PyResult<PySolution> {
        let layout = qubo
            .layout
            .clone()
            .unwrap_or_else(|| VariableLayout::assets_only(qubo.q.dim()));
        Ok(portqubo::decode(&self.inner, &layout, &bits)
            .map_err(err)?
            .into())
    }

    /// Minimum-risk feasible subset by enumeration.
    fn solve_exact(&self) -> PyResult<PySolution> {
        Ok(portqubo::solve_exhaustive_subsets(&self.inner)
            .map_err(err)?
            .into())
    }

    /// Builds, solves with the named solver and decodes.
    #[pyo3(signature = (solver = "sa", seed = 0, lambda1 = None, lambda2 = None, restarts = None, literal_slack = false))]
    #[allow(clippy::too_many_arguments)]
    fn solve(
        &self,
        py: Python<'_>,
        solver: &str,
        seed: u64,
        lambda1: Option<f64>,
        lambda2: Option<f64>,
        restarts: Option<usize>,
        literal_slack: bool,
    ) -> PyResult<PySolution> {
        let config = solver_config(solver, restarts, None)?;
        let params = self.params(lambda1, lambda2, 1.0)?;
        let enc = encoding(literal_slack);
        let (sol, _) = py
            .detach(|| {
                portqubo::penalty::solve_with_penalties(&self.inner, &config, &params, enc, seed)
            })
            .map_err(err)?;
        Ok(sol.into())
    }

    /// Doubles the penalties from their estimates until the exact QUBO
    /// optimum is feasible. Returns `(lambda1, lambda2, doublings, solution)`.
    #[pyo3(signature = (max_doublings = 20, literal_slack = false))]
    fn escalate(
        &self,
        py: Python<'_>,
        max_doublings: usize,
        literal_slack: bool,
    ) -> PyResult<(f64, f64, usize, PySolution)> {
        let start = self.params(None, None, 1.0)?;
        let esc = py
            .detach(|| {
                escalate_penalties(
                    &self.inner,
                    &SolverConfig::Exact,
                    start,
                    max_doublings,
                    encoding(literal_slack),
                    0,
                )
            })
            .map_err(err)?;
        Ok((
            esc.params.lambda1,
            esc.params.lambda2,
            esc.doublings,
            esc.solution.into(),
        ))
    }

    /// `(lambda1, feasible, risk)` for each λ₁ value, λ₂ fixed.
    #[pyo3(signature = (values, lambda2 = 0.0, solver = "exact", seed = 0))]
    fn sweep(
        &self,
        py: Python<'_>,
        values: Vec<f64>,
        lambda2: f64,
        solver: &str,
        seed: u64,
    ) -> PyResult<Vec<(f64, bool, f64)>> {
        let config = solver_config(solver, None, None)?;
        let base = PenaltyParams::with_penalties(0.0, lambda2).map_err(err)?;
        let runs = py
            .detach(|| {
                lambda_sweep(
                    &self.inner,
                    &config,
                    &values,
                    &base,
                    SlackEncoding::ZeroBased,
                    seed,
                )
            })
            .map_err(err)?;
        Ok(runs
            .into_iter()
            .map(|r| (r.lambda1, r.feasible, r.risk))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(N={}, n={}, r_star={}, return_mode={:?})",
            self.inner.num_assets(),
            self.inner.n(),
            self.inner.r_star(),
            self.inner.return_mode().as_str()
        )
    }
}

impl PyInstance {
    fn params(
        &self,
        lambda1: Option<f64>,
        lambda2: Option<f64>,
        lambda0: f64,
    ) -> PyResult<PenaltyParams> {
        let (l1, l2) = match (lambda1, lambda2) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                let (h1, h2) = self.estimate_lambdas()?;
                (lambda1.unwrap_or(h1), lambda2.unwrap_or(h2))
            }
        };
        PenaltyParams::new(lambda0, l1, l2).map_err(err)
    }
}

#[pyclass(name = "Qubo", module = "portqubo_py", frozen)]
struct PyQubo {
    q: QuboMatrix,
    layout: Option<VariableLayout>,
}

#[pymethods]
impl PyQubo {
    #[new]
    #[pyo3(signature = (dim, coefficients, offset = 0.0))]
    fn new(dim: usize, coefficients: BTreeMap<(usize, usize), f64>, offset: f64) -> PyResult<Self> {
        let q = QuboMatrix::from_triples(
            dim,
            coefficients.into_iter().map(|((i, j), v)| (i, j, v)),
            offset,
        )
        .map_err(err)?;
        Ok(Self { q, layout: None })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let (q, layout) = read_qubo(text).map_err(err)?;
        Ok(Self { q, layout })
    }

    fn to_text(&self) -> String {
        write_qubo(&self.q, self.layout.as_ref())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.q.dim()
    }

    #[getter]
    fn offset(&self) -> f64 {
        self.q.offset()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.q.nnz()
    }

    #[getter]
    fn slack_weights(&self) -> Vec<u64> {
        self.layout
            .as_ref()
            .map(|l| l.slack_weights.clone())
            .unwrap_or_default()
    }

    /// Upper-triangular coefficients keyed by `(i, j)`, `i <= j`.
    fn coefficients(&self) -> BTreeMap<(usize, usize), f64> {
        self.q.iter().map(|(i, j, v)| ((i, j), v)).collect()
    }

    fn energy(&self, x: Vec<bool>) -> PyResult<f64> {
        portqubo::qubo_energy(&self.q, &x).map_err(err)
    }

    /// `(h, J, offset)` under `x = (s + 1) / 2`.
    fn to_ising(&self) -> (Vec<f64>, BTreeMap<(usize, usize), f64>, f64) {
        let m = portqubo::to_ising(&self.q);
        (m.h, m.j, m.offset)
    }

    fn ising_energy(&self, spins: Vec<i8>) -> PyResult<f64> {
        portqubo::ising_energy(&portqubo::to_ising(&self.q), &spins).map_err(err)
    }

    fn chain_strength_bound(&self) -> f64 {
        portqubo::chain_strength_bound(&self.q)
    }

    #[pyo3(signature = (solver = "sa", seed = 0, restarts = None, time_limit = None))]
    fn solve(
        &self,
        py: Python<'_>,
        solver: &str,
        seed: u64,
        restarts: Option<usize>,
        time_limit: Option<f64>,
    ) -> PyResult<PySolveResult> {
        let config = solver_config(solver, restarts, time_limit)?;
        Ok(py
            .detach(|| config.solve(&self.q, seed))
            .map_err(err)?
            .into())
    }

    /// Best run over `seeds`, ties to the smaller seed.
    #[pyo3(signature = (seeds, solver = "sa"))]
    fn solve_restarts(
        &self,
        py: Python<'_>,
        seeds: Vec<u64>,
        solver: &str,
    ) -> PyResult<PySolveResult> {
        let config = solver_config(solver, None, None)?;
        Ok(py
            .detach(|| portqubo::run_restarts(&config, &self.q, &seeds))
            .map_err(err)?
            .best
            .into())
    }

    fn __repr__(&self) -> String {
        format!(
            "Qubo(dim={}, nnz={}, offset={})",
            self.q.dim(),
            self.q.nnz(),
            self.q.offset()
        )
    }
}

/// Runs a benchmark plan given as JSON text and renders the report.
#[pyfunction]
#[pyo3(signature = (plan_json, base_dir = None, format = "csv", no_timing = false))]
fn run_bench(
    py: Python<'_>,
    plan_json: &str,
    base_dir: Option<PathBuf>,
    format: &str,
    no_timing: bool,
) -> PyResult<String> {
    let plan = BenchPlan::from_json(plan_json).map_err(err)?;
    let format: ReportFormat = format.parse().map_err(err)?;
    let mut report = py
        .detach(|| run_benchmark(&plan, base_dir.as_deref()))
        .map_err(err)?;
    if no_timing {
        report = report.without_timing();
    }
    report.render(format).map_err(err)
}

#[pymodule]
fn portqubo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PortquboError", m.py().get_type::<PortquboError>())?;
    m.add_class::<PyInstance>()?;
    m.add_class::<PyQubo>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PySolveResult>()?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    Ok(())
}
