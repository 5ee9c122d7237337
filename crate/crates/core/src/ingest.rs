//! Building universes from price histories or a seeded factor model, and
//! the JSON instance/universe files.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssetUniverse, PortfolioInstance, ReturnMode, SquareMatrix};
use crate::numfmt::to_json_string;

/// Price observations, one row per period and one column per symbol.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub dates: Vec<String>,
    pub symbols: Vec<String>,
    /// `prices[t][i]` is the price of symbol `i` in period `t`.
    pub prices: Vec<Vec<f64>>,
}

impl PricePanel {
    pub fn periods(&self) -> usize {
        self.dates.len()
    }
}

pub fn load_prices_csv(path: impl AsRef<Path>) -> Result<PricePanel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prices_csv(&text)
}

/// Parses `date,SYM1,SYM2,...` followed by one row per period.
pub fn parse_prices_csv(text: &str) -> Result<PricePanel> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let symbols: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut seen = std::collections::HashSet::new();
    for s in &symbols {
        if !seen.insert(s.as_str()) {
            return Err(Error::DuplicateSymbol(s.clone()));
        }
    }
    let width = symbols.len() + 1;
    let mut dates = Vec::new();
    let mut prices = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(Error::RaggedRow {
                line,
                expected: width,
                found: record.len(),
            });
        }
        let period = record[0].to_string();
        let mut row = Vec::with_capacity(symbols.len());
        for (sym, raw) in symbols.iter().zip(record.iter().skip(1)) {
            if raw.is_empty() {
                return Err(Error::MissingValue {
                    symbol: sym.clone(),
                    period,
                });
            }
            let value: f64 = raw.parse().map_err(|_| Error::BadNumber {
                symbol: sym.clone(),
                period: period.clone(),
                value: raw.to_string(),
            })?;
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::NonPositivePrice {
                    symbol: sym.clone(),
                    period,
                    value,
                });
            }
            row.push(value);
        }
        dates.push(period);
        prices.push(row);
    }
    if dates.len() < 2 {
        return Err(Error::TooFewPeriods {
            found: dates.len(),
            required: 2,
        });
    }
    Ok(PricePanel {
        dates,
        symbols,
        prices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReturnKind {
    #[default]
    Simple,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsOptions {
    pub kind: ReturnKind,
    /// Multiplier applied to μ (e.g. 0.001 to express returns in thousands).
    pub mu_scale: f64,
}

impl Default for StatsOptions {
    fn default() -> Self {
        Self {
            kind: ReturnKind::Simple,
            mu_scale: 1.0,
        }
    }
}

pub fn compute_stats(panel: &PricePanel) -> Result<AssetUniverse> {
    compute_stats_with(panel, &StatsOptions::default())
}

/// μ is the whole-horizon return in percent; Σ is the sample covariance
/// (divisor `T − 1`) of per-period percent returns.
pub fn compute_stats_with(panel: &PricePanel, options: &StatsOptions) -> Result<AssetUniverse> {
    let periods = panel.periods();
    if periods < 3 {
        return Err(Error::TooFewPeriods {
            found: periods,
            required: 3,
        });
    }
    let n = panel.symbols.len();
    let ret = |from: f64, to: f64| match options.kind {
        ReturnKind::Simple => (to - from) / from * 100.0,
        ReturnKind::Log => (to / from).ln() * 100.0,
    };
    let first = &panel.prices[0];
    let last = &panel.prices[periods - 1];
    let mu: Vec<f64> = (0..n)
        .map(|i| ret(first[i], last[i]) * options.mu_scale)
        .collect();

    let t = periods - 1;
    let series: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (1..periods)
                .map(|k| ret(panel.prices[k - 1][i], panel.prices[k][i]))
                .collect()
        })
        .collect();
    let means: Vec<f64> = series
        .iter()
        .map(|s| s.iter().sum::<f64>() / t as f64)
        .collect();
    let mut sigma = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let c: f64 = (0..t)
                .map(|k| (series[i][k] - means[i]) * (series[j][k] - means[j]))
                .sum::<f64>()
                / (t - 1) as f64;
            sigma.set(i, j, c);
            sigma.set(j, i, c);
        }
    }
    AssetUniverse::new(panel.symbols.clone(), mu, sigma)
}

/// Seeded factor-model universe: `Σ = F·Fᵀ + floor·I` with normal loadings
/// `F` (unit variance, mean `loading_mean`) and μ uniform in `return_range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n_assets: usize,
    pub n_factors: usize,
    pub idiosyncratic_floor: f64,
    pub return_range: (f64, f64),
    pub seed: u64,
    /// Round μ to whole percent, like the index data.
    #[serde(default)]
    pub integer_returns: bool,
    /// Shifts every loading; a positive value adds a market-wide factor so
    /// most covariances are positive, as in equity data.
    #[serde(default)]
    pub loading_mean: f64,
}

impl SyntheticSpec {
    pub fn new(n_assets: usize, n_factors: usize, seed: u64) -> Self {
        Self {
            n_assets,
            n_factors,
            idiosyncratic_floor: 1.0,
            return_range: (0.0, 100.0),
            seed,
            integer_returns: false,
            loading_mean: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: String| Err(Error::InvalidField { field, reason });
        if self.n_assets == 0 {
            return invalid("n_assets", "must be positive".into());
        }
        if self.n_factors == 0 || self.n_factors > self.n_assets {
            return invalid("n_factors", format!("must lie in 1..={}", self.n_assets));
        }
        if !self.loading_mean.is_finite() {
            return invalid("loading_mean", "must be finite".into());
        }
        if !(self.idiosyncratic_floor.is_finite() && self.idiosyncratic_floor > 0.0) {
            return invalid("idiosyncratic_floor", "must be positive".into());
        }
        let (lo, hi) = self.return_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return invalid("return_range", format!("need low < high, got ({lo}, {hi})"));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<AssetUniverse> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, k) = (spec.n_assets, spec.n_factors);
    let loadings: Vec<f64> = (0..n * k)
        .map(|_| spec.loading_mean + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let (lo, hi) = spec.return_range;
    let mu: Vec<f64> = (0..n)
        .map(|_| {
            let m = rng.random_range(lo..hi);
            if spec.integer_returns {
                m.round()
            } else {
                m
            }
        })
        .collect();
    let mut sigma = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let mut c: f64 = (0..k)
                .map(|f| loadings[i * k + f] * loadings[j * k + f])
                .sum();
            if i == j {
                c += spec.idiosyncratic_floor;
            }
            sigma.set(i, j, c);
            sigma.set(j, i, c);
        }
    }
    let symbols = (0..n).map(|i| format!("S{i:03}")).collect();
    AssetUniverse::new(symbols, mu, sigma)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SigmaSpec {
    Matrix(Vec<Vec<f64>>),
    SdCorrelation {
        sd: Vec<f64>,
        correlation: Vec<Vec<f64>>,
    },
}

#[derive(Deserialize)]
struct RawFile {
    symbols: Option<Vec<String>>,
    mu: Option<Vec<f64>>,
    sigma: Option<SigmaSpec>,
    n: Option<usize>,
    r_star: Option<f64>,
    return_mode: Option<ReturnMode>,
}

#[derive(Serialize)]
struct UniverseFile<'a> {
    symbols: &'a [String],
    mu: &'a [f64],
    sigma: &'a SquareMatrix,
}

#[derive(Serialize)]
struct InstanceFile<'a> {
    symbols: &'a [String],
    mu: &'a [f64],
    sigma: &'a SquareMatrix,
    n: usize,
    r_star: f64,
    return_mode: ReturnMode,
}

fn universe_from_raw(raw: &mut RawFile) -> Result<AssetUniverse> {
    let symbols = raw.symbols.take().ok_or(Error::MissingField("symbols"))?;
    let mu = raw.mu.take().ok_or(Error::MissingField("mu"))?;
    let bad_sigma = |e: Error| Error::InvalidField {
        field: "sigma",
        reason: e.to_string(),
    };
    match raw.sigma.take().ok_or(Error::MissingField("sigma"))? {
        SigmaSpec::Matrix(rows) => AssetUniverse::new(
            symbols,
            mu,
            SquareMatrix::from_rows(rows).map_err(bad_sigma)?,
        ),
        SigmaSpec::SdCorrelation { sd, correlation } => {
            let corr = SquareMatrix::from_rows(correlation).map_err(bad_sigma)?;
            AssetUniverse::from_sd_correlation(symbols, mu, &sd, &corr)
        }
    }
}

pub fn universe_to_json(u: &AssetUniverse) -> String {
    to_json_string(&UniverseFile {
        symbols: u.symbols(),
        mu: u.mu(),
        sigma: u.sigma(),
    })
    .expect("serialisable")
}

pub fn universe_from_json(text: &str) -> Result<AssetUniverse> {
    let mut raw: RawFile = serde_json::from_str(text)?;
    universe_from_raw(&mut raw)
}

pub fn instance_to_json(inst: &PortfolioInstance) -> String {
    let u = inst.universe();
    to_json_string(&InstanceFile {
        symbols: u.symbols(),
        mu: u.mu(),
        sigma: u.sigma(),
        n: inst.n(),
        r_star: inst.r_star(),
        return_mode: inst.return_mode(),
    })
    .expect("serialisable")
}

/// Parses an instance file. `r_star` may be omitted when `return_mode` is
/// `none`.
pub fn instance_from_json(text: &str) -> Result<PortfolioInstance> {
    let mut raw: RawFile = serde_json::from_str(text)?;
    let n = raw.n.ok_or(Error::MissingField("n"))?;
    let mode = raw.return_mode.ok_or(Error::MissingField("return_mode"))?;
    let r_star = match (raw.r_star, mode) {
        (Some(r), _) => r,
        (None, ReturnMode::None) => 0.0,
        (None, _) => return Err(Error::MissingField("r_star")),
    };
    let universe = universe_from_raw(&mut raw)?;
    PortfolioInstance::new(universe, n, r_star, mode)
}

pub fn save_instance(inst: &PortfolioInstance, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, instance_to_json(inst)).map_err(|e| Error::io(path, e))
}

pub fn load_instance(path: impl AsRef<Path>) -> Result<PortfolioInstance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    instance_from_json(&text)
}

pub fn save_universe(u: &AssetUniverse, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, universe_to_json(u)).map_err(|e| Error::io(path, e))
}

pub fn load_universe(path: impl AsRef<Path>) -> Result<AssetUniverse> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    universe_from_json(&text)
}
