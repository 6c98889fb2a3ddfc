//! Mann-Whitney U and McNemar tests with exact small-sample modes.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use super::MetricsError;

/// Samples at or below this size (the smaller side) get an exact p-value.
pub const EXACT_MAX: usize = 8;
/// McNemar uses the exact binomial test below this many discordant pairs.
pub const MCNEMAR_EXACT_BELOW: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Normal,
    ChiSquare,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U for the first sample: its rank sum minus n1(n1+1)/2.
    pub u_a: f64,
    /// min(U_a, U_b).
    pub u: f64,
    pub p: f64,
    pub method: Method,
}

/// Midranks (1-based) of `values`.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn u_of(rank_sum: f64, n1: usize) -> f64 {
    rank_sum - (n1 * (n1 + 1)) as f64 / 2.0
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, MetricsError> {
    if a.is_empty() || b.is_empty() {
        return Err(MetricsError::Sample(
            "Mann-Whitney U needs two non-empty samples".into(),
        ));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let u_a = u_of(ranks[..n1].iter().sum(), n1);
    let u = u_a.min((n1 * n2) as f64 - u_a);
    let (p, method) = if n1.min(n2) <= EXACT_MAX {
        (exact_p(&ranks, n1, u_a), Method::Exact)
    } else {
        (normal_p(&pooled, n1, n2, u_a), Method::Normal)
    };
    Ok(MannWhitney { u_a, u, p, method })
}

/// Two-sided permutation p-value: the share of all C(N, n1) ways to label
/// n1 of the pooled midranks as "first sample" whose U lies at least as far
/// from its mean as the observed one. Counted by dynamic programming over
/// doubled ranks, which are integers.
fn exact_p(ranks: &[f64], n1: usize, u_obs: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s (f64 counts are
    // exact well beyond the sizes used here).
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            for s in (r..=max_sum).rev() {
                let add = ways[k - 1][s - r];
                if add != 0.0 {
                    ways[k][s] += add;
                }
            }
        }
    }
    let n2 = ranks.len() - n1;
    let mean = (n1 * n2) as f64 / 2.0;
    let dev = (u_obs - mean).abs();
    let (mut hit, mut total) = (0.0, 0.0);
    for (s2, &w) in ways[n1].iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        total += w;
        let u = u_of(s2 as f64 / 2.0, n1);
        if (u - mean).abs() >= dev - 1e-9 {
            hit += w;
        }
    }
    (hit / total).min(1.0)
}

/// Normal approximation with tie correction and a 0.5 continuity correction.
fn normal_p(pooled: &[f64], n1: usize, n2: usize, u_a: f64) -> f64 {
    let n = (n1 + n2) as f64;
    let mut sorted = pooled.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut ties = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        ties += t * t * t - t;
        i = j + 1;
    }
    let (n1, n2) = (n1 as f64, n2 as f64);
    let var = n1 * n2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    if var <= 0.0 {
        return 1.0;
    }
    let dev = ((u_a - n1 * n2 / 2.0).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf(z)).min(1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemar {
    /// First succeeds, second fails.
    pub b: u64,
    /// First fails, second succeeds.
    pub c: u64,
    /// min(b, c) in exact mode; the continuity-corrected chi-square otherwise.
    pub statistic: f64,
    pub p: f64,
    pub method: Method,
}

fn choose(n: u64, k: u64) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r * (n - i) as u128 / (i + 1) as u128;
    }
    r
}

pub fn mcnemar_test(pairs: &[(bool, bool)]) -> McNemar {
    let b = pairs.iter().filter(|&&(x, y)| x && !y).count() as u64;
    let c = pairs.iter().filter(|&&(x, y)| !x && y).count() as u64;
    mcnemar_counts(b, c)
}

pub fn mcnemar_counts(b: u64, c: u64) -> McNemar {
    let n = b + c;
    if n == 0 {
        return McNemar {
            b,
            c,
            statistic: 0.0,
            p: 1.0,
            method: Method::Exact,
        };
    }
    if n < MCNEMAR_EXACT_BELOW {
        let k = b.min(c);
        let tail: u128 = (0..=k).map(|i| choose(n, i)).sum();
        let p = (2.0 * tail as f64 / 2f64.powi(n as i32)).min(1.0);
        return McNemar {
            b,
            c,
            statistic: k as f64,
            p,
            method: Method::Exact,
        };
    }
    let d = (b as f64 - c as f64).abs() - 1.0;
    let stat = d.max(0.0).powi(2) / n as f64;
    let chi = ChiSquared::new(1.0).expect("one degree of freedom");
    McNemar {
        b,
        c,
        statistic: stat,
        p: chi.sf(stat).min(1.0),
        method: Method::ChiSquare,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midranks_handle_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn separated_samples() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.method, Method::Exact);
        // only the two extreme labelings out of 20 are as far from the mean
        assert!((r.p - 2.0 / 20.0).abs() < 1e-12);
    }

    #[test]
    fn identical_samples_give_one() {
        let r = mann_whitney_u(&[1.0, 2.0, 2.0, 5.0], &[5.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(r.p, 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mcnemar_edges() {
        assert_eq!(mcnemar_counts(0, 0).p, 1.0);
        assert!((mcnemar_counts(10, 0).p - 2.0 * 0.5f64.powi(10)).abs() < 1e-15);
        assert_eq!(mcnemar_counts(20, 20).method, Method::ChiSquare);
    }
}
