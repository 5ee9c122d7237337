use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{check_feasible, PortfolioInstance, Provenance, Solution};
use crate::qubo::{qubo_energy, QuboMatrix};

use super::{improves, tie_tol, CompiledQubo, FlipState};

/// Largest number of `n`-subsets the subset oracle will enumerate.
pub const SUBSET_LIMIT: u128 = 10_000_000;
/// Largest QUBO dimension the brute-force oracle accepts.
pub const BRUTEFORCE_MAX_DIM: usize = 24;

/// `C(n, k)`, saturating just above `cap`.
pub(crate) fn binomial_capped(n: usize, k: usize, cap: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c * (n - i) as u128 / (i + 1) as u128;
        if c > cap {
            return cap + 1;
        }
    }
    c
}

/// Minimum-risk feasible `n`-subset by full enumeration.
pub fn solve_exhaustive_subsets(instance: &PortfolioInstance) -> Result<Solution> {
    let started = Instant::now();
    let n_assets = instance.num_assets();
    let n = instance.n();
    let count = binomial_capped(n_assets, n, SUBSET_LIMIT);
    if count > SUBSET_LIMIT {
        return Err(Error::EnumerationGuard {
            count,
            limit: SUBSET_LIMIT,
        });
    }
    let sigma = instance.sigma();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut x = vec![false; n_assets];
    let mut best: Option<(f64, Vec<bool>)> = None;
    loop {
        x.iter_mut().for_each(|b| *b = false);
        for &i in &idx {
            x[i] = true;
        }
        if check_feasible(instance, &x)?.return_ok {
            let mut risk = 0.0;
            for &i in &idx {
                let row = sigma.row(i);
                for &j in &idx {
                    risk += row[j];
                }
            }
            let better = match &best {
                None => true,
                Some((b, bx)) => improves(risk, &x, *b, bx),
            };
            if better {
                best = Some((risk, x.clone()));
            }
        }
        // Next combination in lexicographic index order.
        let mut pos = n;
        while pos > 0 && idx[pos - 1] == n_assets - n + pos - 1 {
            pos -= 1;
        }
        if pos == 0 {
            break;
        }
        idx[pos - 1] += 1;
        for k in pos..n {
            idx[k] = idx[k - 1] + 1;
        }
    }
    let (_, x) = best.ok_or(Error::Infeasible)?;
    let provenance = Provenance {
        solver: "exact-subsets".into(),
        seed: None,
        wall_time_s: started.elapsed().as_secs_f64(),
        slack_surplus: None,
    };
    Solution::evaluate(instance, x, provenance)
}

// Bit vectors compare lexicographically with x₀ most significant, so the
// ordering key of a mask is its bit reversal.
#[inline]
fn lex_key(mask: u32, dim: usize) -> u32 {
    if dim == 0 {
        0
    } else {
        mask.reverse_bits() >> (32 - dim)
    }
}

/// Global minimum over all `2^dim` assignments; ties go to the
/// lexicographically smallest bit vector.
pub fn solve_qubo_bruteforce(q: &QuboMatrix) -> Result<(Vec<bool>, f64)> {
    let dim = q.dim();
    if dim > BRUTEFORCE_MAX_DIM {
        return Err(Error::EnumerationGuard {
            count: 1u128 << dim,
            limit: 1u128 << BRUTEFORCE_MAX_DIM,
        });
    }
    let compiled = CompiledQubo::new(q);
    // Low bits are walked in Gray-code order; the state is rebuilt from
    // scratch for every high-bit block so rounding cannot accumulate.
    let low = dim.min(12);
    let high = dim - low;
    let to_bits = |mask: u32| {
        (0..dim)
            .map(|i| (mask >> i) & 1 == 1)
            .collect::<Vec<bool>>()
    };

    let mut best_mask = 0u32;
    let mut best_e = f64::INFINITY;
    for h in 0..(1u32 << high) {
        let mut mask = h << low;
        let mut state = FlipState::new(&compiled, to_bits(mask));
        let mut consider = |e: f64, mask: u32| {
            let tol = if best_e.is_finite() {
                tie_tol(best_e)
            } else {
                0.0
            };
            if e < best_e - tol
                || (e <= best_e + tol && lex_key(mask, dim) < lex_key(best_mask, dim))
            {
                best_e = e;
                best_mask = mask;
            }
        };
        consider(state.energy(), mask);
        for t in 1..(1u32 << low) {
            let i = t.trailing_zeros() as usize;
            state.flip(i);
            mask ^= 1 << i;
            consider(state.energy(), mask);
        }
    }
    let bits = to_bits(best_mask);
    let e = qubo_energy(q, &bits)?;
    Ok((bits, e))
}
