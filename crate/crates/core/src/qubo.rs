//! Penalty encoding of a [`PortfolioInstance`] as a QUBO, plus the Ising
//! transform and a plain-text interchange format.
//!
//! The encoded energy is
//!
//! ```text
//! λ₀·xᵀΣx + λ₁·(Σxᵢ − n)² + λ₂·(μᵀx − R* − Σₖ wₖyₖ)²
//! ```
//!
//! where the slack bits `y` only exist for `at_least` instances. Linear terms
//! are folded onto the diagonal using `xᵢ² = xᵢ` and the constant is kept in
//! [`QuboMatrix::offset`] so energies stay comparable across encodings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::model::{PortfolioInstance, Provenance, ReturnMode, Solution};
use crate::numfmt::fmt_f64;

/// Upper-triangular QUBO with a constant offset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuboMatrix {
    dim: usize,
    coeffs: BTreeMap<(usize, usize), f64>,
    offset: f64,
}

impl QuboMatrix {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            coeffs: BTreeMap::new(),
            offset: 0.0,
        }
    }

    /// Builds a canonical matrix from `(i, j, value)` triples; `(j, i)` is
    /// folded onto `(i, j)`.
    pub fn from_triples(
        dim: usize,
        triples: impl IntoIterator<Item = (usize, usize, f64)>,
        offset: f64,
    ) -> Result<Self> {
        let mut q = Self::new(dim);
        for (i, j, v) in triples {
            if i >= dim || j >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: i.max(j) + 1,
                });
            }
            q.add(i, j, v);
        }
        q.offset = offset;
        q.canonicalize();
        Ok(q)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn nnz(&self) -> usize {
        self.coeffs.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.coeffs.get(&key).copied().unwrap_or(0.0)
    }

    /// Stored coefficients in `(i, j)` order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.coeffs.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub(crate) fn add(&mut self, i: usize, j: usize, v: f64) {
        let key = if i <= j { (i, j) } else { (j, i) };
        *self.coeffs.entry(key).or_insert(0.0) += v;
    }

    fn canonicalize(&mut self) {
        self.coeffs.retain(|_, v| *v != 0.0);
    }

    /// Multiplies every coefficient and the offset by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut q = Self {
            dim: self.dim,
            coeffs: self.coeffs.iter().map(|(&k, &v)| (k, v * c)).collect(),
            offset: self.offset * c,
        };
        q.canonicalize();
        q
    }

    /// Adds `weight · (Σ aᵢ zᵢ − b)²`.
    fn add_squared_linear(&mut self, terms: &[(usize, f64)], b: f64, weight: f64) {
        if weight == 0.0 {
            return;
        }
        for (k, &(i, ai)) in terms.iter().enumerate() {
            self.add(i, i, weight * (ai * ai - 2.0 * b * ai));
            for &(j, aj) in &terms[k + 1..] {
                self.add(i, j, 2.0 * weight * ai * aj);
            }
        }
        self.offset += weight * b * b;
    }
}

/// Ising form `offset + Σ hᵢsᵢ + Σ_{i<j} Jᵢⱼ sᵢ sⱼ` with `sᵢ ∈ {−1, +1}`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IsingModel {
    pub h: Vec<f64>,
    pub j: BTreeMap<(usize, usize), f64>,
    pub offset: f64,
}

impl IsingModel {
    pub fn dim(&self) -> usize {
        self.h.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl PenaltyParams {
    pub fn new(lambda0: f64, lambda1: f64, lambda2: f64) -> Result<Self> {
        let p = Self {
            lambda0,
            lambda1,
            lambda2,
        };
        p.validate()?;
        Ok(p)
    }

    /// `λ₀ = 1`, the usual normalisation.
    pub fn with_penalties(lambda1: f64, lambda2: f64) -> Result<Self> {
        Self::new(1.0, lambda1, lambda2)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0.is_finite() && self.lambda0 > 0.0) {
            return Err(Error::InvalidPenalty(format!(
                "lambda0 must be positive, got {}",
                self.lambda0
            )));
        }
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidPenalty(format!(
                    "{name} must be nonnegative, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Slack bit weights for the `at_least` encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SlackEncoding {
    /// `2⁰ … 2^(K−1)`: every surplus in `0..2^K` is representable.
    #[default]
    ZeroBased,
    /// `2¹ … 2^K`: only even surpluses are representable.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub n_assets: usize,
    pub n_slack: usize,
    pub slack_weights: Vec<u64>,
}

impl VariableLayout {
    pub fn assets_only(n_assets: usize) -> Self {
        Self {
            n_assets,
            n_slack: 0,
            slack_weights: Vec::new(),
        }
    }

    pub fn with_slack(n_assets: usize, weights: Vec<u64>) -> Self {
        Self {
            n_assets,
            n_slack: weights.len(),
            slack_weights: weights,
        }
    }

    pub fn dim(&self) -> usize {
        self.n_assets + self.n_slack
    }

    /// Largest surplus the slack bits can absorb.
    pub fn max_surplus(&self) -> u64 {
        self.slack_weights.iter().sum()
    }

    pub fn surplus(&self, slack_bits: &[bool]) -> u64 {
        self.slack_weights
            .iter()
            .zip(slack_bits)
            .filter(|(_, &b)| b)
            .map(|(w, _)| w)
            .sum()
    }
}

/// `K = ⌊log₂ Σμᵢ⌋`, zero when the total is below 2.
pub fn slack_count(mu: &[f64]) -> Result<usize> {
    let total: f64 = mu.iter().sum();
    if !(total > 0.0) {
        return Err(Error::NonPositiveTotalReturn);
    }
    if total < 2.0 {
        return Ok(0);
    }
    // floor(log2) via the exponent avoids rounding in log2 near powers of two.
    let mut k = total.log2().floor() as i32;
    while 2f64.powi(k + 1) <= total {
        k += 1;
    }
    while 2f64.powi(k) > total {
        k -= 1;
    }
    Ok(k as usize)
}

pub fn slack_weights(k: usize, encoding: SlackEncoding) -> Vec<u64> {
    match encoding {
        SlackEncoding::ZeroBased => (0..k).map(|e| 1u64 << e).collect(),
        SlackEncoding::Literal => (1..=k).map(|e| 1u64 << e).collect(),
    }
}

fn add_objective_and_cardinality(
    q: &mut QuboMatrix,
    instance: &PortfolioInstance,
    params: &PenaltyParams,
) {
    let sigma = instance.sigma();
    let n_assets = instance.num_assets();
    for i in 0..n_assets {
        q.add(i, i, params.lambda0 * sigma.get(i, i));
        for j in (i + 1)..n_assets {
            q.add(i, j, params.lambda0 * (sigma.get(i, j) + sigma.get(j, i)));
        }
    }
    let ones: Vec<(usize, f64)> = (0..n_assets).map(|i| (i, 1.0)).collect();
    q.add_squared_linear(&ones, instance.n() as f64, params.lambda1);
}

/// Encoding for `none` and `equality` instances: no slack bits.
pub fn build_qubo_equality(
    instance: &PortfolioInstance,
    params: &PenaltyParams,
) -> Result<(QuboMatrix, VariableLayout)> {
    params.validate()?;
    let n_assets = instance.num_assets();
    let mut q = QuboMatrix::new(n_assets);
    add_objective_and_cardinality(&mut q, instance, params);
    match instance.return_mode() {
        ReturnMode::None => {
            if params.lambda2 > 0.0 {
                return Err(Error::InvalidPenalty(
                    "lambda2 > 0 has no effect without a return constraint".into(),
                ));
            }
        }
        ReturnMode::Equality => {
            let terms: Vec<(usize, f64)> = instance.mu().iter().copied().enumerate().collect();
            q.add_squared_linear(&terms, instance.r_star(), params.lambda2);
        }
        ReturnMode::AtLeast => return Err(Error::UnsupportedReturnMode("at_least")),
    }
    q.canonicalize();
    Ok((q, VariableLayout::assets_only(n_assets)))
}

/// Encoding for `at_least` instances with `K = slack_count(μ)` slack bits.
pub fn build_qubo_inequality(
    instance: &PortfolioInstance,
    params: &PenaltyParams,
    encoding: SlackEncoding,
) -> Result<(QuboMatrix, VariableLayout)> {
    params.validate()?;
    if instance.return_mode() != ReturnMode::AtLeast {
        return Err(Error::UnsupportedReturnMode(
            instance.return_mode().as_str(),
        ));
    }
    let mu = instance.mu();
    let k = slack_count(mu)?;
    let total: f64 = mu.iter().sum();
    if total <= instance.r_star() {
        return Err(Error::ReturnTargetExceedsTotal {
            target: instance.r_star(),
            total,
        });
    }
    let n_assets = instance.num_assets();
    let weights = slack_weights(k, encoding);
    let layout = VariableLayout::with_slack(n_assets, weights);
    let max_surplus = total - instance.r_star();
    if max_surplus > layout.max_surplus() as f64 {
        log::warn!(
            "surplus up to {max_surplus} exceeds slack capacity {}; residual bounded above by {} instead of cancelled",
            layout.max_surplus(),
            max_surplus - layout.max_surplus() as f64
        );
    }

    let mut q = QuboMatrix::new(layout.dim());
    add_objective_and_cardinality(&mut q, instance, params);
    let terms: Vec<(usize, f64)> = mu
        .iter()
        .copied()
        .enumerate()
        .chain(
            layout
                .slack_weights
                .iter()
                .enumerate()
                .map(|(k, &w)| (n_assets + k, -(w as f64))),
        )
        .collect();
    q.add_squared_linear(&terms, instance.r_star(), params.lambda2);
    q.canonicalize();
    Ok((q, layout))
}

/// Dispatches on the instance's return mode.
pub fn build_qubo(
    instance: &PortfolioInstance,
    params: &PenaltyParams,
    encoding: SlackEncoding,
) -> Result<(QuboMatrix, VariableLayout)> {
    match instance.return_mode() {
        ReturnMode::AtLeast => build_qubo_inequality(instance, params, encoding),
        ReturnMode::None | ReturnMode::Equality => build_qubo_equality(instance, params),
    }
}

/// `offset + Σ Qᵢⱼ xᵢ xⱼ`, summed with Neumaier compensation.
pub fn qubo_energy(q: &QuboMatrix, x: &[bool]) -> Result<f64> {
    check_len(q.dim, x.len())?;
    let mut sum = q.offset;
    let mut comp = 0.0;
    for (&(i, j), &v) in &q.coeffs {
        if x[i] && x[j] {
            let t = sum + v;
            if sum.abs() >= v.abs() {
                comp += (sum - t) + v;
            } else {
                comp += (v - t) + sum;
            }
            sum = t;
        }
    }
    Ok(sum + comp)
}

/// Substitutes `xᵢ = (sᵢ + 1)/2`.
pub fn to_ising(q: &QuboMatrix) -> IsingModel {
    let mut h = vec![0.0; q.dim];
    let mut j = BTreeMap::new();
    let mut offset = q.offset;
    for (&(a, b), &v) in &q.coeffs {
        if a == b {
            h[a] += v / 2.0;
            offset += v / 2.0;
        } else {
            *j.entry((a, b)).or_insert(0.0) += v / 4.0;
            h[a] += v / 4.0;
            h[b] += v / 4.0;
            offset += v / 4.0;
        }
    }
    IsingModel { h, j, offset }
}

pub fn ising_energy(m: &IsingModel, s: &[i8]) -> Result<f64> {
    check_len(m.dim(), s.len())?;
    if let Some((index, &value)) = s.iter().enumerate().find(|(_, &v)| v != 1 && v != -1) {
        return Err(Error::NotASpin {
            index,
            value: value.into(),
        });
    }
    let mut e = m.offset;
    for (hi, &si) in m.h.iter().zip(s) {
        e += hi * f64::from(si);
    }
    for (&(a, b), &jab) in &m.j {
        e += jab * f64::from(s[a] * s[b]);
    }
    Ok(e)
}

/// `Σ |Qᵢⱼ|` over stored coefficients: a chain strength at least this large
/// preserves the optimum under embedding.
pub fn chain_strength_bound(q: &QuboMatrix) -> f64 {
    q.coeffs.values().map(|v| v.abs()).sum()
}

/// Splits `bits` into assets and slack and evaluates the asset part.
pub fn decode(
    instance: &PortfolioInstance,
    layout: &VariableLayout,
    bits: &[bool],
) -> Result<Solution> {
    check_len(layout.dim(), bits.len())?;
    check_len(instance.num_assets(), layout.n_assets)?;
    let (x, y) = bits.split_at(layout.n_assets);
    let provenance = Provenance {
        slack_surplus: (layout.n_slack > 0).then(|| layout.surplus(y)),
        ..Provenance::default()
    };
    Solution::evaluate(instance, x.to_vec(), provenance)
}

/// Serialises `q` as `p qubo <dim> <nnz> <offset>` followed by `i j value`
/// lines. The layout, if given, is recorded in a `c layout` comment.
pub fn write_qubo(q: &QuboMatrix, layout: Option<&VariableLayout>) -> String {
    let mut out = String::new();
    if let Some(l) = layout {
        let _ = write!(out, "c layout assets {} slack", l.n_assets);
        for w in &l.slack_weights {
            let _ = write!(out, " {w}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "p qubo {} {} {}", q.dim, q.nnz(), fmt_f64(q.offset));
    for (&(i, j), &v) in &q.coeffs {
        let _ = writeln!(out, "{i} {j} {}", fmt_f64(v));
    }
    out
}

pub fn read_qubo(text: &str) -> Result<(QuboMatrix, Option<VariableLayout>)> {
    let mut header: Option<(usize, usize)> = None;
    let mut q = QuboMatrix::new(0);
    let mut layout = None;
    let bad = |line: usize, reason: String| Error::QuboFormat { line, reason };
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("c") => {
                if parts.next() == Some("layout") {
                    layout = Some(parse_layout(parts).map_err(|r| bad(lineno, r))?);
                }
            }
            Some("p") => {
                if header.is_some() {
                    return Err(bad(lineno, "duplicate header".into()));
                }
                let fields: Vec<&str> = parts.collect();
                if fields.len() != 4 || fields[0] != "qubo" {
                    return Err(bad(lineno, "expected `p qubo <dim> <nnz> <offset>`".into()));
                }
                let dim = fields[1]
                    .parse()
                    .map_err(|e| bad(lineno, format!("dim: {e}")))?;
                let nnz = fields[2]
                    .parse()
                    .map_err(|e| bad(lineno, format!("nnz: {e}")))?;
                q = QuboMatrix::new(dim);
                q.offset = fields[3]
                    .parse()
                    .map_err(|e| bad(lineno, format!("offset: {e}")))?;
                header = Some((dim, nnz));
            }
            Some(first) => {
                let (dim, _) =
                    header.ok_or_else(|| bad(lineno, "coefficient before header".into()))?;
                let rest: Vec<&str> = parts.collect();
                if rest.len() != 2 {
                    return Err(bad(lineno, "expected `i j value`".into()));
                }
                let i: usize = first.parse().map_err(|e| bad(lineno, format!("i: {e}")))?;
                let j: usize = rest[0]
                    .parse()
                    .map_err(|e| bad(lineno, format!("j: {e}")))?;
                let v: f64 = rest[1]
                    .parse()
                    .map_err(|e| bad(lineno, format!("value: {e}")))?;
                if i > j || j >= dim {
                    return Err(bad(
                        lineno,
                        format!("index pair ({i}, {j}) outside 0 ≤ i ≤ j < {dim}"),
                    ));
                }
                if q.coeffs.insert((i, j), v).is_some() {
                    return Err(bad(lineno, format!("duplicate entry ({i}, {j})")));
                }
            }
            None => {}
        }
    }
    let (_, nnz) = header.ok_or_else(|| bad(0, "missing header".into()))?;
    if q.coeffs.len() != nnz {
        return Err(bad(
            0,
            format!("header declares {nnz} entries, found {}", q.coeffs.len()),
        ));
    }
    q.canonicalize();
    if let Some(l) = &layout {
        if l.dim() != q.dim {
            return Err(bad(
                0,
                format!("layout covers {} variables, matrix has {}", l.dim(), q.dim),
            ));
        }
    }
    Ok((q, layout))
}

fn parse_layout<'a>(
    mut parts: impl Iterator<Item = &'a str>,
) -> std::result::Result<VariableLayout, String> {
    if parts.next() != Some("assets") {
        return Err("layout comment must start with `assets`".into());
    }
    let n_assets = parts
        .next()
        .ok_or("missing asset count")?
        .parse()
        .map_err(|e| format!("asset count: {e}"))?;
    if parts.next() != Some("slack") {
        return Err("layout comment needs `slack`".into());
    }
    let weights = parts
        .map(|w| w.parse::<u64>().map_err(|e| format!("slack weight: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(VariableLayout::with_slack(n_assets, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AssetUniverse, SquareMatrix};

    fn instance(
        mu: &[f64],
        sigma: &[&[f64]],
        n: usize,
        r_star: f64,
        mode: ReturnMode,
    ) -> PortfolioInstance {
        let sigma = SquareMatrix::from_rows(sigma.iter().map(|r| r.to_vec()).collect()).unwrap();
        let symbols = (0..mu.len()).map(|i| format!("A{i}")).collect();
        let u = AssetUniverse::new(symbols, mu.to_vec(), sigma).unwrap();
        PortfolioInstance::new(u, n, r_star, mode).unwrap()
    }

    fn bits(v: u32, dim: usize) -> Vec<bool> {
        (0..dim).map(|i| (v >> i) & 1 == 1).collect()
    }

    // Independent evaluation: direct formula, no QUBO.
    fn direct_energy(inst: &PortfolioInstance, p: &PenaltyParams, x: &[bool], surplus: f64) -> f64 {
        let mut risk = 0.0;
        for i in 0..x.len() {
            for j in 0..x.len() {
                if x[i] && x[j] {
                    risk += inst.sigma().get(i, j);
                }
            }
        }
        let card = x.iter().filter(|&&b| b).count() as f64 - inst.n() as f64;
        let ret: f64 = (0..x.len()).filter(|&i| x[i]).map(|i| inst.mu()[i]).sum();
        let ret_term = match inst.return_mode() {
            ReturnMode::None => 0.0,
            _ => (ret - inst.r_star() - surplus).powi(2),
        };
        p.lambda0 * risk + p.lambda1 * card * card + p.lambda2 * ret_term
    }

    #[test]
    fn equality_two_asset_example() {
        let inst = instance(
            &[1.0, 1.0],
            &[&[1.0, 0.0], &[0.0, 1.0]],
            1,
            0.0,
            ReturnMode::None,
        );
        let p = PenaltyParams::new(1.0, 2.0, 0.0).unwrap();
        let (q, layout) = build_qubo_equality(&inst, &p).unwrap();
        assert_eq!(layout.n_slack, 0);
        assert_eq!(q.get(0, 0), -1.0);
        assert_eq!(q.get(1, 1), -1.0);
        assert_eq!(q.get(0, 1), 4.0);
        assert_eq!(q.offset(), 2.0);
        let energies: Vec<f64> = (0..4)
            .map(|v| qubo_energy(&q, &bits(v, 2)).unwrap())
            .collect();
        // order: (0,0), (1,0), (0,1), (1,1)
        assert_eq!(energies, vec![2.0, 1.0, 1.0, 4.0]);
        for v in 0..4 {
            assert_eq!(
                energies[v as usize],
                direct_energy(&inst, &p, &bits(v, 2), 0.0)
            );
        }
    }

    #[test]
    fn penalty_free_fold() {
        let inst = instance(
            &[1.0, 2.0],
            &[&[4.0, 1.0], &[1.0, 9.0]],
            1,
            0.0,
            ReturnMode::None,
        );
        let p = PenaltyParams::new(1.0, 0.0, 0.0).unwrap();
        let (q, _) = build_qubo_equality(&inst, &p).unwrap();
        assert_eq!(
            q.iter().collect::<Vec<_>>(),
            vec![(0, 0, 4.0), (0, 1, 2.0), (1, 1, 9.0)]
        );
        assert_eq!(q.offset(), 0.0);
        assert_eq!(chain_strength_bound(&q), 15.0);
    }

    #[test]
    fn identity_three_assets_full_selection() {
        let eye: &[&[f64]] = &[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]];
        let inst = instance(&[1.0, 1.0, 1.0], eye, 3, 0.0, ReturnMode::None);
        let p = PenaltyParams::new(1.0, 1.0, 0.0).unwrap();
        let (q, _) = build_qubo_equality(&inst, &p).unwrap();
        for v in 0..8 {
            let x = bits(v, 3);
            assert!(
                (qubo_energy(&q, &x).unwrap() - direct_energy(&inst, &p, &x, 0.0)).abs() < 1e-12
            );
        }
        assert_eq!(qubo_energy(&q, &[true; 3]).unwrap(), 3.0);
    }

    #[test]
    fn lambda2_without_return_constraint_is_rejected() {
        let inst = instance(&[1.0], &[&[1.0]], 1, 0.0, ReturnMode::None);
        let p = PenaltyParams::new(1.0, 1.0, 0.5).unwrap();
        assert!(matches!(
            build_qubo_equality(&inst, &p),
            Err(Error::InvalidPenalty(_))
        ));
        let inst = inst.with_return_mode(ReturnMode::AtLeast);
        assert!(matches!(
            build_qubo_equality(&inst, &p),
            Err(Error::UnsupportedReturnMode(_))
        ));
    }

    #[test]
    fn slack_count_examples() {
        assert_eq!(slack_count(&[1.0]).unwrap(), 0);
        assert_eq!(slack_count(&[2.0, 3.0, 3.0]).unwrap(), 3);
        assert_eq!(slack_count(&[1.5]).unwrap(), 0);
        assert_eq!(slack_count(&[1023.0]).unwrap(), 9);
        assert_eq!(slack_count(&[1024.0]).unwrap(), 10);
        assert_eq!(slack_count(&[2047.9]).unwrap(), 10);
        assert!(matches!(
            slack_count(&[0.0]),
            Err(Error::NonPositiveTotalReturn)
        ));
        assert!(matches!(
            slack_count(&[1.0, -3.0]),
            Err(Error::NonPositiveTotalReturn)
        ));
    }

    #[test]
    fn inequality_single_asset_example() {
        let inst = instance(&[3.0], &[&[2.0]], 1, 1.0, ReturnMode::AtLeast);
        let p = PenaltyParams::new(1.0, 0.0, 1.0).unwrap();
        let (q, layout) = build_qubo_inequality(&inst, &p, SlackEncoding::ZeroBased).unwrap();
        assert_eq!(layout, VariableLayout::with_slack(1, vec![1]));
        assert_eq!(qubo_energy(&q, &[true, true]).unwrap(), 3.0);
        for v in 0..4 {
            let z = bits(v, 2);
            let surplus = if z[1] { 1.0 } else { 0.0 };
            assert_eq!(
                qubo_energy(&q, &z).unwrap(),
                direct_energy(&inst, &p, &z[..1], surplus)
            );
        }
        let sol = decode(&inst, &layout, &[true, true]).unwrap();
        assert_eq!(sol.x, vec![true]);
        assert_eq!(sol.provenance.slack_surplus, Some(1));
    }

    #[test]
    fn inequality_without_lambda2_matches_cardinality_only() {
        let inst = instance(
            &[3.0, 5.0],
            &[&[2.0, 0.5], &[0.5, 1.0]],
            1,
            1.0,
            ReturnMode::AtLeast,
        );
        let p = PenaltyParams::new(1.0, 3.0, 0.0).unwrap();
        let (qi, layout) = build_qubo_inequality(&inst, &p, SlackEncoding::ZeroBased).unwrap();
        let (qe, _) = build_qubo_equality(&inst.with_return_mode(ReturnMode::None), &p).unwrap();
        assert_eq!(layout.n_slack, 3);
        assert_eq!(qi.dim(), 5);
        assert_eq!(qi.iter().collect::<Vec<_>>(), qe.iter().collect::<Vec<_>>());
        assert_eq!(qi.offset(), qe.offset());
    }

    #[test]
    fn inequality_errors() {
        let inst = instance(&[3.0], &[&[2.0]], 1, 3.0, ReturnMode::AtLeast);
        let p = PenaltyParams::new(1.0, 1.0, 1.0).unwrap();
        assert!(matches!(
            build_qubo_inequality(&inst, &p, SlackEncoding::ZeroBased),
            Err(Error::ReturnTargetExceedsTotal { .. })
        ));
        let inst = instance(&[-1.0], &[&[2.0]], 1, -3.0, ReturnMode::AtLeast);
        assert!(matches!(
            build_qubo_inequality(&inst, &p, SlackEncoding::ZeroBased),
            Err(Error::NonPositiveTotalReturn)
        ));
    }

    #[test]
    fn literal_slack_weights_skip_unit() {
        assert_eq!(slack_weights(3, SlackEncoding::ZeroBased), vec![1, 2, 4]);
        assert_eq!(slack_weights(3, SlackEncoding::Literal), vec![2, 4, 8]);
    }

    #[test]
    fn energy_examples() {
        let q = QuboMatrix::from_triples(2, [(0, 0, 1.0), (0, 1, 2.0), (1, 1, 3.0)], 0.0).unwrap();
        assert_eq!(qubo_energy(&q, &[true, true]).unwrap(), 6.0);
        let z = QuboMatrix::from_triples(3, [], 2.5).unwrap();
        assert_eq!(qubo_energy(&z, &[true, false, true]).unwrap(), 2.5);
        assert!(qubo_energy(&z, &[true]).is_err());
    }

    #[test]
    fn from_triples_folds_lower_entries_and_drops_zeros() {
        let q = QuboMatrix::from_triples(2, [(1, 0, 1.0), (0, 1, 1.0), (1, 1, 0.0)], 0.0).unwrap();
        assert_eq!(q.iter().collect::<Vec<_>>(), vec![(0, 1, 2.0)]);
        assert!(QuboMatrix::from_triples(2, [(0, 2, 1.0)], 0.0).is_err());
    }

    #[test]
    fn ising_examples() {
        let q = QuboMatrix::from_triples(1, [(0, 0, 2.0)], 0.0).unwrap();
        let m = to_ising(&q);
        assert_eq!(m.h, vec![1.0]);
        assert_eq!(m.offset, 1.0);
        assert_eq!(ising_energy(&m, &[-1]).unwrap(), 0.0);
        assert_eq!(ising_energy(&m, &[1]).unwrap(), 2.0);

        let zero = to_ising(&QuboMatrix::from_triples(3, [], 4.0).unwrap());
        assert_eq!(zero.h, vec![0.0; 3]);
        assert!(zero.j.is_empty());
        assert_eq!(ising_energy(&zero, &[1, -1, 1]).unwrap(), 4.0);

        let m = IsingModel {
            h: vec![0.0, 0.0],
            j: [((0, 1), 1.0)].into(),
            offset: 0.0,
        };
        assert_eq!(ising_energy(&m, &[1, -1]).unwrap(), -1.0);
        assert!(matches!(
            ising_energy(&m, &[1, 0]),
            Err(Error::NotASpin { index: 1, value: 0 })
        ));
    }

    #[test]
    fn ising_of_two_asset_example() {
        let inst = instance(
            &[1.0, 1.0],
            &[&[1.0, 0.0], &[0.0, 1.0]],
            1,
            0.0,
            ReturnMode::None,
        );
        let (q, _) =
            build_qubo_equality(&inst, &PenaltyParams::new(1.0, 2.0, 0.0).unwrap()).unwrap();
        let m = to_ising(&q);
        let spins = |x: &[bool]| {
            x.iter()
                .map(|&b| if b { 1 } else { -1 })
                .collect::<Vec<i8>>()
        };
        let got: Vec<f64> = (0..4)
            .map(|v| ising_energy(&m, &spins(&bits(v, 2))).unwrap())
            .collect();
        assert_eq!(got, vec![2.0, 1.0, 1.0, 4.0]);
    }

    #[test]
    fn chain_strength_examples() {
        assert_eq!(chain_strength_bound(&QuboMatrix::new(4)), 0.0);
        let q =
            QuboMatrix::from_triples(2, [(0, 0, -1.0), (1, 1, -1.0), (0, 1, 4.0)], 2.0).unwrap();
        assert_eq!(chain_strength_bound(&q), 6.0);
    }

    #[test]
    fn decode_identity_split_and_length_check() {
        let inst = instance(
            &[1.0, 2.0],
            &[&[1.0, 0.0], &[0.0, 1.0]],
            1,
            0.0,
            ReturnMode::None,
        );
        let layout = VariableLayout::assets_only(2);
        let s = decode(&inst, &layout, &[true, false]).unwrap();
        assert_eq!(s.x, vec![true, false]);
        assert!(s.feasible);
        assert_eq!(s.provenance.slack_surplus, None);
        assert!(decode(&inst, &layout, &[true]).is_err());
    }

    #[test]
    fn qubo_file_round_trip() {
        let q = QuboMatrix::from_triples(
            3,
            [(0, 0, 0.1), (0, 2, -1.0 / 3.0), (2, 2, 1e-300)],
            std::f64::consts::PI,
        )
        .unwrap();
        let layout = VariableLayout::with_slack(2, vec![1]);
        let text = write_qubo(&q, Some(&layout));
        let (back, l) = read_qubo(&text).unwrap();
        assert_eq!(back, q);
        assert_eq!(l, Some(layout));
        assert_eq!(write_qubo(&back, l.as_ref()), text);
    }

    #[test]
    fn qubo_file_rejects_malformed_input() {
        assert!(read_qubo("0 0 1\n").is_err());
        assert!(read_qubo("p qubo 2 1 0\n1 0 1\n").is_err());
        assert!(read_qubo("p qubo 2 2 0\n0 0 1\n").is_err());
        assert!(read_qubo("p qubo 2 2 0\n0 0 1\n0 0 2\n").is_err());
        assert!(read_qubo("p qubo 2 1 0\n0 2 1\n").is_err());
        assert!(read_qubo("c just a comment\np qubo 1 1 0\n0 0 1\n").is_ok());
    }
}
