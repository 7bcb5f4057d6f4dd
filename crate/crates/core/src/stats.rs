//! Rank correlation between metric scores and human judgments.
//!
//! Kendall coefficients are computed from exact integer pair counts. Small
//! inputs use exhaustive pair enumeration; larger ones use Knight's
//! sort-and-merge counting. Both produce identical [`PairCounts`], so the
//! coefficient is bit-for-bit the same whichever path runs.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inputs at or below this length use exhaustive pair enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub concordant: u64,
    pub discordant: u64,
    /// Pairs tied in `x` but not in `y`.
    pub ties_x_only: u64,
    /// Pairs tied in `y` but not in `x`.
    pub ties_y_only: u64,
    pub ties_both: u64,
}

fn check_inputs(x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::Empty("correlation input (need at least two points)"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("correlation input"));
    }
    Ok(())
}

fn cmp(a: f64, b: f64) -> Ordering {
    a.partial_cmp(&b).expect("finite inputs")
}

/// O(n^2) enumeration of every pair.
pub fn pair_counts_exhaustive(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let mut c = PairCounts::default();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            match (cmp(x[i], x[j]), cmp(y[i], y[j])) {
                (Ordering::Equal, Ordering::Equal) => c.ties_both += 1,
                (Ordering::Equal, _) => c.ties_x_only += 1,
                (_, Ordering::Equal) => c.ties_y_only += 1,
                (a, b) if a == b => c.concordant += 1,
                _ => c.discordant += 1,
            }
        }
    }
    Ok(c)
}

/// O(n log n) counting: sort by `(x, y)`, count discordant pairs as merge
/// sort inversions of `y`.
pub fn pair_counts_fast(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    check_inputs(x, y)?;
    let n = x.len() as u64;
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| cmp(x[a], x[b]).then(cmp(y[a], y[b])));

    let tied_x = tied_pairs(&idx, |a, b| x[a] == x[b]);
    let tied_xy = tied_pairs(&idx, |a, b| x[a] == x[b] && y[a] == y[b]);

    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let mut scratch = vec![0.0; ys.len()];
    let discordant = merge_count(&mut ys, &mut scratch);
    // ys is now sorted
    let order: Vec<usize> = (0..ys.len()).collect();
    let tied_y = tied_pairs(&order, |a, b| ys[a] == ys[b]);

    let total = n * (n - 1) / 2;
    Ok(PairCounts {
        concordant: total - tied_x - tied_y + tied_xy - discordant,
        discordant,
        ties_x_only: tied_x - tied_xy,
        ties_y_only: tied_y - tied_xy,
        ties_both: tied_xy,
    })
}

pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    if x.len() <= EXHAUSTIVE_LIMIT {
        pair_counts_exhaustive(x, y)
    } else {
        pair_counts_fast(x, y)
    }
}

/// Number of tied pairs among runs of consecutive equal elements.
fn tied_pairs(order: &[usize], eq: impl Fn(usize, usize) -> bool) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in order.windows(2) {
        if eq(w[0], w[1]) {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Sorts `v` ascending, returning the number of strict inversions.
fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_count(left, sl) + merge_count(right, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    scratch[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    swaps
}

pub fn kendall_tau_b(x: &[f64], y: &[f64]) -> Result<f64> {
    let c = pair_counts(x, y)?;
    tau_b_from_counts(&c)
}

pub fn tau_b_from_counts(c: &PairCounts) -> Result<f64> {
    let base = c.concordant + c.discordant;
    let denom = ((base + c.ties_x_only) as f64 * (base + c.ties_y_only) as f64).sqrt();
    if denom == 0.0 {
        return Err(Error::DegenerateRanking("all values tied"));
    }
    Ok((c.concordant as f64 - c.discordant as f64) / denom)
}

/// Stuart's tau-c with `m` the smaller number of distinct values.
pub fn kendall_tau_c(x: &[f64], y: &[f64]) -> Result<f64> {
    let c = pair_counts(x, y)?;
    let m = distinct(x).min(distinct(y));
    tau_c_from_counts(&c, x.len(), m)
}

pub fn tau_c_from_counts(c: &PairCounts, n: usize, m: usize) -> Result<f64> {
    if m < 2 {
        return Err(Error::DegenerateRanking("fewer than two distinct values"));
    }
    let (n, m) = (n as f64, m as f64);
    Ok(2.0 * m * (c.concordant as f64 - c.discordant as f64) / (n * n * (m - 1.0)))
}

fn distinct(v: &[f64]) -> usize {
    let mut s = v.to_vec();
    s.sort_by(|a, b| cmp(*a, *b));
    s.dedup();
    s.len()
}

/// 1-based ranks; tied values share the mean of the positions they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| cmp(v[a], v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::DegenerateRanking("zero variance"));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn spearman_rho(x: &[f64], y: &[f64]) -> Result<f64> {
    check_inputs(x, y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationStat {
    KendallB,
    KendallC,
    Spearman,
}

impl CorrelationStat {
    pub fn compute(self, x: &[f64], y: &[f64]) -> Result<f64> {
        match self {
            CorrelationStat::KendallB => kendall_tau_b(x, y),
            CorrelationStat::KendallC => kendall_tau_c(x, y),
            CorrelationStat::Spearman => spearman_rho(x, y),
        }
    }
}

impl fmt::Display for CorrelationStat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorrelationStat::KendallB => "kendall-b",
            CorrelationStat::KendallC => "kendall-c",
            CorrelationStat::Spearman => "spearman",
        })
    }
}

impl FromStr for CorrelationStat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kendall-b" => Ok(CorrelationStat::KendallB),
            "kendall-c" => Ok(CorrelationStat::KendallC),
            "spearman" => Ok(CorrelationStat::Spearman),
            other => Err(Error::InvalidConfig(format!("unknown statistic {other}"))),
        }
    }
}
