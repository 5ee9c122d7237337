//! Portfolio selection problem: minimise `xᵀΣx` subject to `Σxᵢ = n` and an
//! optional return constraint on `μᵀx`.
//!
//! Returns are expressed in percent over the evaluation horizon and
//! covariances in percent², so that a target of 3000 with 20 selected assets
//! means an average of 150 percent per asset.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Absolute tolerance on `|σᵢⱼ − σⱼᵢ|`.
pub const SYMMETRY_TOL: f64 = 1e-9;
/// Smallest eigenvalue must be at least `-PSD_REL_TOL * largest`.
pub const PSD_REL_TOL: f64 = 1e-6;
/// Absolute tolerance for `μᵀx = R*` in equality mode.
pub const RETURN_EQ_TOL: f64 = 1e-9;

/// Dense square matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_row_major(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len(n * n, data.len())?;
        Ok(Self { n, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let mut data = Vec::with_capacity(n * n);
        for row in rows {
            check_len(n, row.len())?;
            data.extend(row);
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// Eigenvalues of the symmetric part, ascending.
    pub fn symmetric_eigenvalues(&self) -> Vec<f64> {
        let m = nalgebra::DMatrix::from_row_slice(self.n, self.n, &self.data);
        let sym = (&m + m.transpose()) * 0.5;
        let mut ev: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

impl Serialize for SquareMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = s.serialize_seq(Some(self.n))?;
        for i in 0..self.n {
            seq.serialize_element(self.row(i))?;
        }
        seq.end()
    }
}

/// Asset identifiers with their expected returns and return covariance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssetUniverse {
    symbols: Vec<String>,
    mu: Vec<f64>,
    sigma: SquareMatrix,
}

impl AssetUniverse {
    /// Validates dimensions, symmetry and positive semidefiniteness.
    pub fn new(symbols: Vec<String>, mu: Vec<f64>, sigma: SquareMatrix) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidUniverse(
                "universe needs at least one asset".into(),
            ));
        }
        if symbols.len() != n {
            return Err(Error::InvalidUniverse(format!(
                "{} symbols for {} returns",
                symbols.len(),
                n
            )));
        }
        if sigma.dim() != n {
            return Err(Error::InvalidUniverse(format!(
                "covariance is {0}x{0} for {1} assets",
                sigma.dim(),
                n
            )));
        }
        if let Some(v) = mu.iter().chain(sigma.as_slice()).find(|v| !v.is_finite()) {
            return Err(Error::InvalidUniverse(format!("non-finite value {v}")));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (sigma.get(i, j) - sigma.get(j, i)).abs();
                if d > SYMMETRY_TOL {
                    return Err(Error::InvalidUniverse(format!(
                        "covariance not symmetric at ({i}, {j}): difference {d:e}"
                    )));
                }
            }
        }
        let ev = sigma.symmetric_eigenvalues();
        let (lo, hi) = (ev[0], ev[n - 1]);
        if lo < -PSD_REL_TOL * hi.max(0.0) {
            return Err(Error::InvalidUniverse(format!(
                "covariance not positive semidefinite: smallest eigenvalue {lo:e}, largest {hi:e}"
            )));
        }
        Ok(Self { symbols, mu, sigma })
    }

    /// Builds `σᵢⱼ = ρᵢⱼ σᵢ σⱼ` from standard deviations and correlations.
    pub fn from_sd_correlation(
        symbols: Vec<String>,
        mu: Vec<f64>,
        sd: &[f64],
        correlation: &SquareMatrix,
    ) -> Result<Self> {
        let n = sd.len();
        check_len(n, correlation.dim())?;
        let mut sigma = SquareMatrix::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let v = if i == j {
                    sd[i] * sd[i]
                } else {
                    correlation.get(i, j) * sd[i] * sd[j]
                };
                sigma.set(i, j, v);
            }
        }
        Self::new(symbols, mu, sigma)
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn sigma(&self) -> &SquareMatrix {
        &self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnMode {
    /// No return constraint; `r_star` is ignored.
    None,
    /// `μᵀx ≥ R*`.
    AtLeast,
    /// `μᵀx = R*` within [`RETURN_EQ_TOL`].
    Equality,
}

impl ReturnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnMode::None => "none",
            ReturnMode::AtLeast => "at_least",
            ReturnMode::Equality => "equality",
        }
    }
}

impl fmt::Display for ReturnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ReturnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReturnMode::None),
            "at_least" | "at-least" | "geq" => Ok(ReturnMode::AtLeast),
            "equality" | "eq" => Ok(ReturnMode::Equality),
            other => Err(Error::InvalidField {
                field: "return_mode",
                reason: format!("unknown mode `{other}` (expected none, at_least or equality)"),
            }),
        }
    }
}

/// Select `n` of the universe's assets, optionally subject to a return target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PortfolioInstance {
    universe: AssetUniverse,
    n: usize,
    r_star: f64,
    return_mode: ReturnMode,
}

impl PortfolioInstance {
    pub fn new(
        universe: AssetUniverse,
        n: usize,
        r_star: f64,
        return_mode: ReturnMode,
    ) -> Result<Self> {
        if n == 0 || n > universe.len() {
            return Err(Error::InvalidInstance(format!(
                "n = {n} must lie in 1..={}",
                universe.len()
            )));
        }
        if !r_star.is_finite() {
            return Err(Error::InvalidInstance(format!(
                "non-finite target return {r_star}"
            )));
        }
        Ok(Self {
            universe,
            n,
            r_star,
            return_mode,
        })
    }

    pub fn universe(&self) -> &AssetUniverse {
        &self.universe
    }

    pub fn num_assets(&self) -> usize {
        self.universe.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r_star(&self) -> f64 {
        self.r_star
    }

    pub fn return_mode(&self) -> ReturnMode {
        self.return_mode
    }

    pub fn mu(&self) -> &[f64] {
        self.universe.mu()
    }

    pub fn sigma(&self) -> &SquareMatrix {
        self.universe.sigma()
    }

    pub fn with_return_mode(&self, return_mode: ReturnMode) -> Self {
        Self {
            return_mode,
            ..self.clone()
        }
    }

    pub fn with_n(&self, n: usize) -> Result<Self> {
        Self::new(self.universe.clone(), n, self.r_star, self.return_mode)
    }
}

/// Quadratic form `Σᵢ Σⱼ σᵢⱼ xᵢ xⱼ`.
pub fn portfolio_risk(sigma: &SquareMatrix, x: &[bool]) -> Result<f64> {
    check_len(sigma.dim(), x.len())?;
    let sel: Vec<usize> = x
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i)
        .collect();
    let mut acc = 0.0;
    for &i in &sel {
        let row = sigma.row(i);
        for &j in &sel {
            acc += row[j];
        }
    }
    Ok(acc)
}

/// `μᵀx`.
pub fn portfolio_return(mu: &[f64], x: &[bool]) -> Result<f64> {
    check_len(mu.len(), x.len())?;
    Ok(mu.iter().zip(x).filter(|(_, &b)| b).map(|(m, _)| m).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Feasibility {
    pub cardinality_ok: bool,
    pub return_ok: bool,
    /// `Σxᵢ − n`.
    pub cardinality_residual: i64,
    /// `μᵀx − R*`.
    pub return_residual: f64,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        self.cardinality_ok && self.return_ok
    }

    /// `|Σxᵢ − n|` plus the magnitude of the return violation.
    pub fn total_violation(&self, mode: ReturnMode) -> f64 {
        let ret = match mode {
            ReturnMode::None => 0.0,
            ReturnMode::AtLeast => (-self.return_residual).max(0.0),
            ReturnMode::Equality => self.return_residual.abs(),
        };
        self.cardinality_residual.unsigned_abs() as f64 + ret
    }
}

pub fn check_feasible(instance: &PortfolioInstance, x: &[bool]) -> Result<Feasibility> {
    let ret = portfolio_return(instance.mu(), x)?;
    let card = x.iter().filter(|&&b| b).count() as i64;
    let cardinality_residual = card - instance.n as i64;
    let return_residual = ret - instance.r_star;
    let return_ok = match instance.return_mode {
        ReturnMode::None => true,
        ReturnMode::AtLeast => ret >= instance.r_star,
        ReturnMode::Equality => return_residual.abs() <= RETURN_EQ_TOL,
    };
    Ok(Feasibility {
        cardinality_ok: cardinality_residual == 0,
        return_ok,
        cardinality_residual,
        return_residual,
    })
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub solver: String,
    pub seed: Option<u64>,
    pub wall_time_s: f64,
    /// `Σ wₖ yₖ` when the solution came from a slack encoding.
    pub slack_surplus: Option<u64>,
}

/// A selection with every metric recomputed against its instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x: Vec<bool>,
    pub risk: f64,
    pub ret: f64,
    pub cardinality: usize,
    pub feasible: bool,
    pub energy: f64,
    pub provenance: Provenance,
}

impl Solution {
    /// Evaluates `x` against `instance`; `energy` defaults to the risk.
    pub fn evaluate(
        instance: &PortfolioInstance,
        x: Vec<bool>,
        provenance: Provenance,
    ) -> Result<Self> {
        let risk = portfolio_risk(instance.sigma(), &x)?;
        let feas = check_feasible(instance, &x)?;
        let ret = portfolio_return(instance.mu(), &x)?;
        Ok(Self {
            cardinality: x.iter().filter(|&&b| b).count(),
            feasible: feas.is_feasible(),
            energy: risk,
            risk,
            ret,
            x,
            provenance,
        })
    }

    pub fn with_energy(mut self, energy: f64) -> Self {
        self.energy = energy;
        self
    }

    pub fn selected(&self) -> Vec<usize> {
        self.x
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }
}
