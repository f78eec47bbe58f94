//! Two-sided Mann-Whitney U test.
//!
//! Small pooled samples (n1 + n2 <= 12) get an exact p-value: a count-based
//! recurrence for tie-free data, full enumeration of label assignments with
//! midranks otherwise. Larger samples use the normal approximation with tie
//! and continuity corrections.

use statrs::distribution::{ContinuousCDF, Normal};

use super::EvalError;

const EXACT_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UTestMethod {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UTestResult {
    /// U statistic of the first sample; always in [0, n1*n2].
    pub u_statistic: f64,
    pub p_value: f64,
    pub method: UTestMethod,
}

fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&a, &b| pooled[a].partial_cmp(&pooled[b]).expect("finite samples"));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = rank;
        }
        i = j;
    }
    ranks
}

fn u_from_ranks(ranks: &[f64], members: &[usize], n1: usize) -> f64 {
    let r1: f64 = members.iter().map(|&i| ranks[i]).sum();
    r1 - (n1 * (n1 + 1)) as f64 / 2.0
}

/// Counts of each integer U value under the tie-free null distribution.
fn u_distribution(n1: usize, n2: usize) -> Vec<f64> {
    // count(n1, n2, u) = count(n1-1, n2, u-n2) + count(n1, n2-1, u)
    let max_u = n1 * n2;
    let mut table = vec![vec![vec![0.0f64; max_u + 1]; n2 + 1]; n1 + 1];
    for (i, slice) in table.iter_mut().enumerate() {
        for (j, counts) in slice.iter_mut().enumerate() {
            if i == 0 || j == 0 {
                counts[0] = 1.0;
            }
        }
    }
    for i in 1..=n1 {
        for j in 1..=n2 {
            for u in 0..=max_u {
                let a = if u >= j { table[i - 1][j][u - j] } else { 0.0 };
                let b = table[i][j - 1][u];
                table[i][j][u] = a + b;
            }
        }
    }
    table[n1][n2].clone()
}

fn two_sided_from_counts(le: f64, ge: f64, total: f64) -> f64 {
    (2.0 * (le / total).min(ge / total)).min(1.0)
}

fn exact_no_ties(u: f64, n1: usize, n2: usize) -> f64 {
    let dist = u_distribution(n1, n2);
    let total: f64 = dist.iter().sum();
    let le: f64 = dist
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as f64) <= u + 1e-9)
        .map(|(_, c)| c)
        .sum();
    let ge: f64 = dist
        .iter()
        .enumerate()
        .filter(|(i, _)| (*i as f64) >= u - 1e-9)
        .map(|(_, c)| c)
        .sum();
    two_sided_from_counts(le, ge, total)
}

/// Enumerate every assignment of n1 pooled indices to the first sample.
fn exact_with_ties(pooled: &[f64], u_obs: f64, n1: usize) -> f64 {
    let ranks = midranks(pooled);
    let n = pooled.len();
    let mut members: Vec<usize> = (0..n1).collect();
    let (mut le, mut ge, mut total) = (0.0f64, 0.0f64, 0.0f64);
    loop {
        let u = u_from_ranks(&ranks, &members, n1);
        total += 1.0;
        if u <= u_obs + 1e-9 {
            le += 1.0;
        }
        if u >= u_obs - 1e-9 {
            ge += 1.0;
        }
        // next combination in lexicographic order
        let mut i = n1;
        loop {
            if i == 0 {
                return two_sided_from_counts(le, ge, total);
            }
            i -= 1;
            if members[i] != i + n - n1 {
                break;
            }
        }
        members[i] += 1;
        for j in i + 1..n1 {
            members[j] = members[j - 1] + 1;
        }
    }
}

/// Two-sided test that the two samples come from one distribution.
pub fn mann_whitney_u(sample_a: &[f32], sample_b: &[f32]) -> Result<UTestResult, EvalError> {
    if sample_a.is_empty() || sample_b.is_empty() {
        return Err(EvalError::Degenerate(
            "both samples must be nonempty".into(),
        ));
    }
    let n1 = sample_a.len();
    let n2 = sample_b.len();
    let pooled: Vec<f64> = sample_a
        .iter()
        .chain(sample_b.iter())
        .map(|&v| v as f64)
        .collect();
    let ranks = midranks(&pooled);
    let members: Vec<usize> = (0..n1).collect();
    let u = u_from_ranks(&ranks, &members, n1);

    if n1 + n2 <= EXACT_LIMIT {
        let has_ties = {
            let mut sorted = pooled.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sorted.windows(2).any(|w| w[0] == w[1])
        };
        let p_value = if has_ties {
            exact_with_ties(&pooled, u, n1)
        } else {
            exact_no_ties(u, n1, n2)
        };
        return Ok(UTestResult {
            u_statistic: u,
            p_value,
            method: UTestMethod::Exact,
        });
    }

    let n = (n1 + n2) as f64;
    let mean = (n1 * n2) as f64 / 2.0;
    // tie correction: sum of t^3 - t over tie groups
    let mut tie_term = 0.0f64;
    {
        let mut sorted = pooled.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut i = 0;
        while i < sorted.len() {
            let mut j = i;
            while j < sorted.len() && sorted[j] == sorted[i] {
                j += 1;
            }
            let t = (j - i) as f64;
            tie_term += t * t * t - t;
            i = j;
        }
    }
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    let p_value = if var <= 0.0 {
        1.0
    } else {
        let diff = u - mean;
        let cc = 0.5 * diff.signum();
        let z = if diff == 0.0 {
            0.0
        } else {
            (diff - cc) / var.sqrt()
        };
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
    };
    Ok(UTestResult {
        u_statistic: u,
        p_value,
        method: UTestMethod::NormalApproximation,
    })
}
