//! Relative posterior mass of a fixed-k subspace from one chain's trace.
//!
//! Sampled lengths are binned one nit wide. In each bin the number of
//! distinct models seen (m') is turned into an estimate of how many models
//! the bin really holds (m) by matching the expected number of distinct
//! models after v uniform draws:
//!
//! ```text
//! m · (1 − (1 − 1/m)^v) = m'
//! ```
//!
//! The subspace mass is then `Σ m_j · exp(−centre_j)` over the bins from the
//! shortest upward, stopping once the estimate is no longer trustworthy.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::chain::TraceSample;
use crate::error::{Error, Result};

/// Upper end of the bracket searched for a unique-model estimate.
pub const UNIQUE_CAP: f64 = 1e9;
/// Absolute tolerance of the bisection on m.
pub const UNIQUE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub center: f64,
    pub visits: usize,
    pub distinct: usize,
    /// `None` for empty bins and when no finite estimate exists.
    pub unique_est: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTable {
    pub k: usize,
    pub bin_min: f64,
    pub bins: Vec<Bin>,
}

impl BinTable {
    pub fn total_visits(&self) -> usize {
        self.bins.iter().map(|b| b.visits).sum()
    }
}

/// Bins a single-k trace into one-nit bins spanning
/// `[floor(min), ceil(max)]`; a length on a bin edge goes to the lower bin.
pub fn build_bins(trace: &[TraceSample]) -> Result<BinTable> {
    let first = trace.first().ok_or_else(|| Error::input("cannot bin an empty trace"))?;
    let k = first.k;
    if trace.iter().any(|s| s.k != k) {
        return Err(Error::input("trace mixes class counts"));
    }
    if trace.iter().any(|s| !s.total_nits.is_finite()) {
        return Err(Error::input("trace holds non-finite lengths"));
    }
    let lo = trace.iter().map(|s| s.total_nits).fold(f64::INFINITY, f64::min);
    let hi = trace.iter().map(|s| s.total_nits).fold(f64::NEG_INFINITY, f64::max);
    let bin_min = lo.floor();
    let n_bins = ((hi.ceil() - bin_min) as usize).max(1);

    let mut visits = vec![0usize; n_bins];
    let mut seen: Vec<HashSet<_>> = vec![HashSet::new(); n_bins];
    for s in trace {
        let idx = ((s.total_nits - bin_min).ceil() as isize - 1).clamp(0, n_bins as isize - 1) as usize;
        visits[idx] += 1;
        seen[idx].insert(s.partition_hash);
    }
    let bins = visits
        .into_iter()
        .zip(seen)
        .enumerate()
        .map(|(j, (v, hashes))| {
            let distinct = hashes.len();
            Bin {
                center: bin_min + j as f64 + 0.5,
                visits: v,
                distinct,
                unique_est: if v == 0 { None } else { solve_unique(v, distinct).expect("distinct <= visits") },
            }
        })
        .collect();
    Ok(BinTable { k, bin_min, bins })
}

/// Expected number of distinct models after `v` uniform draws from `m`,
/// `m·(1 − (1 − 1/m)^v)`, evaluated without cancellation for large m.
pub fn expected_distinct(m: f64, v: usize) -> f64 {
    -m * (v as f64 * (-1.0 / m).ln_1p()).exp_m1()
}

/// Estimated number of models in a bin visited `v` times with `m_prime`
/// distinct models. `Ok(None)` when there is no finite estimate: every visit
/// was distinct, or the root lies beyond [`UNIQUE_CAP`].
pub fn solve_unique(v: usize, m_prime: usize) -> Result<Option<f64>> {
    if m_prime == 0 || m_prime > v {
        return Err(Error::input(format!("need 1 <= distinct <= visits, got distinct {m_prime}, visits {v}")));
    }
    if m_prime == v {
        return Ok(None);
    }
    let target = m_prime as f64;
    let f = |m: f64| expected_distinct(m, v) - target;
    let mut lo = target;
    let mut hi = UNIQUE_CAP;
    if f(lo) >= 0.0 {
        return Ok(Some(lo));
    }
    if f(hi) < 0.0 {
        return Ok(None);
    }
    while hi - lo > UNIQUE_TOL {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// Per-bin contribution decision made by [`subspace_mass`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinUse {
    pub included: bool,
    /// Model count used for the bin when included.
    pub weight: f64,
}

/// Walks the bins from the shortest length upward and decides which ones
/// contribute. Empty bins contribute nothing and do not stop the walk; the
/// walk stops before the first visited bin whose estimate is undetermined or
/// differs from its distinct count by more than one. If that happens at the
/// very first visited bin, that bin alone is used with `m = m'`.
pub fn bin_usage(table: &BinTable) -> Vec<BinUse> {
    let mut usage = vec![BinUse { included: false, weight: 0.0 }; table.bins.len()];
    let mut any = false;
    for (j, bin) in table.bins.iter().enumerate() {
        if bin.visits == 0 {
            continue;
        }
        match bin.unique_est {
            Some(m) if (m - bin.distinct as f64).abs() <= 1.0 => {
                usage[j] = BinUse { included: true, weight: m };
                any = true;
            }
            _ => {
                if !any {
                    usage[j] = BinUse { included: true, weight: bin.distinct as f64 };
                }
                break;
            }
        }
    }
    usage
}

/// `−ln Σ m_j·exp(−centre_j)` over the contributing bins, in nits.
pub fn subspace_mass(table: &BinTable) -> f64 {
    let terms: Vec<(f64, f64)> = bin_usage(table)
        .iter()
        .zip(&table.bins)
        .filter(|(u, _)| u.included)
        .map(|(u, b)| (u.weight, b.center))
        .collect();
    mass_from_terms(&terms)
}

/// `−ln Σ m·exp(−centre)` for explicit (m, centre) pairs.
pub fn mass_from_terms(terms: &[(f64, f64)]) -> f64 {
    let shift = terms.iter().map(|&(_, c)| c).fold(f64::INFINITY, f64::min);
    if !shift.is_finite() {
        return f64::INFINITY;
    }
    let sum: f64 = terms.iter().map(|&(m, c)| m * (-(c - shift)).exp()).sum();
    shift - sum.ln()
}

/// Probabilities over subspaces from their masses in nits.
pub fn normalize_subspaces(masses: &[f64]) -> Result<Vec<f64>> {
    if masses.iter().any(|m| m.is_nan()) {
        return Err(Error::input("subspace mass is NaN"));
    }
    if !masses.iter().any(|m| m.is_finite()) {
        return Err(Error::input("no subspace has finite mass"));
    }
    let mut p = masses.to_vec();
    crate::coder::softmax_neg_in_place(&mut p);
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PartitionHash;
    use approx::assert_abs_diff_eq;

    fn sample(total: f64, hash: u64) -> TraceSample {
        TraceSample {
            k: 2,
            sweep: 0,
            total_nits: total,
            part1_nits: 0.0,
            part2_nits: total,
            partition_hash: PartitionHash(hash),
        }
    }

    #[test]
    fn singleton_trace() {
        let t = build_bins(&[sample(10.2, 1)]).unwrap();
        assert_eq!(t.bins.len(), 1);
        assert_eq!(t.bins[0].center, 10.5);
        assert_eq!((t.bins[0].visits, t.bins[0].distinct), (1, 1));
    }

    #[test]
    fn duplicate_model_in_one_bin() {
        let t = build_bins(&[sample(10.2, 1), sample(10.4, 1)]).unwrap();
        assert_eq!((t.bins[0].visits, t.bins[0].distinct), (2, 1));
        assert_eq!(t.bins[0].unique_est, Some(1.0));
    }

    #[test]
    fn two_bins() {
        let t = build_bins(&[sample(10.2, 1), sample(11.7, 2)]).unwrap();
        let centers: Vec<f64> = t.bins.iter().map(|b| b.center).collect();
        assert_eq!(centers, vec![10.5, 11.5]);
        assert!(t.bins.iter().all(|b| b.visits == 1 && b.distinct == 1));
    }

    #[test]
    fn edges_go_to_the_lower_bin() {
        let t = build_bins(&[sample(10.0, 1), sample(11.0, 2), sample(12.0, 3)]).unwrap();
        let v: Vec<usize> = t.bins.iter().map(|b| b.visits).collect();
        assert_eq!(v, vec![2, 1]);
        let flat = build_bins(&[sample(7.0, 1), sample(7.0, 1)]).unwrap();
        assert_eq!(flat.bins.len(), 1);
        assert_eq!(flat.total_visits(), 2);
        assert!(build_bins(&[]).is_err());
    }

    #[test]
    fn unique_examples() {
        assert_eq!(solve_unique(2, 1).unwrap(), Some(1.0));
        let golden = 2.0 / (3.0 - 5f64.sqrt());
        assert_abs_diff_eq!(solve_unique(3, 2).unwrap().unwrap(), golden, epsilon = 1e-8);
        let m = solve_unique(10, 5).unwrap().unwrap();
        assert!((m - 5.96).abs() <= 0.05, "{m}");
        assert_eq!(solve_unique(1, 1).unwrap(), None);
        assert!(solve_unique(3, 4).is_err());
        assert!(solve_unique(3, 0).is_err());
    }

    #[test]
    fn mass_examples() {
        let single = BinTable {
            k: 1,
            bin_min: 10.0,
            bins: vec![Bin { center: 10.5, visits: 2, distinct: 1, unique_est: Some(1.0) }],
        };
        assert_abs_diff_eq!(subspace_mass(&single), 10.5, epsilon = 1e-12);

        let expect = 10.5 - (2.0 + (-1.0f64).exp()).ln();
        assert_abs_diff_eq!(mass_from_terms(&[(2.0, 10.5), (1.0, 11.5)]), expect, epsilon = 1e-12);
        assert_abs_diff_eq!(expect, 9.6381, epsilon = 1e-4);
    }

    #[test]
    fn walk_stops_at_undetermined_bin() {
        let m1 = solve_unique(10, 5).unwrap();
        let table = BinTable {
            k: 2,
            bin_min: 10.0,
            bins: vec![
                Bin { center: 10.5, visits: 10, distinct: 5, unique_est: m1 },
                Bin { center: 11.5, visits: 3, distinct: 3, unique_est: None },
            ],
        };
        let usage = bin_usage(&table);
        assert!(usage[0].included && !usage[1].included);
        assert_abs_diff_eq!(subspace_mass(&table), 10.5 - m1.unwrap().ln(), epsilon = 1e-12);
    }

    #[test]
    fn first_bin_fallback() {
        let table = BinTable {
            k: 2,
            bin_min: 3.0,
            bins: vec![
                Bin { center: 3.5, visits: 0, distinct: 0, unique_est: None },
                Bin { center: 4.5, visits: 4, distinct: 4, unique_est: None },
                Bin { center: 5.5, visits: 2, distinct: 1, unique_est: Some(1.0) },
            ],
        };
        let usage = bin_usage(&table);
        assert_eq!(usage[1], BinUse { included: true, weight: 4.0 });
        assert!(!usage[2].included);
        assert_abs_diff_eq!(subspace_mass(&table), 4.5 - 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_subspaces(&[42.0]).unwrap(), vec![1.0]);
        assert_eq!(normalize_subspaces(&[5.0, 5.0]).unwrap(), vec![0.5, 0.5]);
        let p = normalize_subspaces(&[10.0, 10.0 + 3f64.ln()]).unwrap();
        assert_abs_diff_eq!(p[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);
        let p = normalize_subspaces(&[f64::INFINITY, 3.0]).unwrap();
        assert_eq!(p, vec![0.0, 1.0]);
        assert!(normalize_subspaces(&[f64::INFINITY, f64::INFINITY]).is_err());
    }
}
