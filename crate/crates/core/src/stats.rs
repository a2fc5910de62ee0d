//! Summary statistics and the one-tailed Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Mean and standard error (sample standard deviation over sqrt(n)).
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, 0.0);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct MannWhitney {
    /// Pairs (a, b) with a > b, ties counting one half.
    pub u_statistic: f64,
    /// P(U >= observed) under the null of exchangeable samples.
    pub p_value_one_tailed: f64,
    pub exact: bool,
}

const EXACT_LIMIT: usize = 60;

/// One-tailed test of the alternative that `a` tends to exceed `b`.
///
/// Without ties and for small samples the exact null distribution of U is
/// used; otherwise the normal approximation with tie and continuity
/// corrections.
pub fn mann_whitney_greater(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InsufficientData("Mann-Whitney needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Input("Mann-Whitney samples must be finite".into()));
    }
    let (n, m) = (a.len(), b.len());
    let u: f64 = a
        .iter()
        .map(|&x| {
            b.iter()
                .map(|&y| {
                    if x > y {
                        1.0
                    } else if x == y {
                        0.5
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
        })
        .sum();

    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i;
        while j + 1 < pooled.len() && pooled[j + 1] == pooled[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }

    if tie_term == 0.0 && n <= EXACT_LIMIT && m <= EXACT_LIMIT {
        let dist = exact_u_distribution(n, m);
        let total: f64 = dist.iter().sum();
        let from = u.round() as usize;
        let tail: f64 = dist[from..].iter().sum();
        return Ok(MannWhitney {
            u_statistic: u,
            p_value_one_tailed: (tail / total).min(1.0),
            exact: true,
        });
    }

    let (nf, mf) = (n as f64, m as f64);
    let big_n = nf + mf;
    let mean = nf * mf / 2.0;
    let var = nf * mf / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = (u - mean - 0.5) / var.sqrt();
        1.0 - Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
    };
    Ok(MannWhitney {
        u_statistic: u,
        p_value_one_tailed: p.clamp(0.0, 1.0),
        exact: false,
    })
}

/// Number of orderings of n + m distinct values giving each U, indexed by U.
fn exact_u_distribution(n: usize, m: usize) -> Vec<f64> {
    // table[j][u]: ways with i values from `a` and j values from `b`.
    let max_u = n * m;
    let mut prev: Vec<Vec<f64>> = (0..=m)
        .map(|_| {
            let mut v = vec![0.0; max_u + 1];
            v[0] = 1.0;
            v
        })
        .collect();
    for i in 1..=n {
        let mut cur = vec![vec![0.0; max_u + 1]; m + 1];
        cur[0][0] = 1.0;
        for j in 1..=m {
            for u in 0..=i * j {
                // Largest value from `a`: it beats all j values of `b`.
                let from_a = if u >= j { prev[j][u - j] } else { 0.0 };
                let from_b = cur[j - 1][u];
                cur[j][u] = from_a + from_b;
            }
        }
        prev = cur;
    }
    prev.swap_remove(m)
}
