//! Two-sample Kolmogorov–Smirnov test.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest pooled size accepted by [`ks_pvalue_exact_small`].
pub const EXACT_MAX_POOLED: usize = 16;
const SERIES_CUTOFF: f64 = 1e-12;
const EXACT_SLACK: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum KsError {
    #[error("empty sample")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("exact enumeration supports n + m <= {EXACT_MAX_POOLED}, got {0}")]
    TooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub m: usize,
}

fn sorted_copy(xs: &[f64]) -> Result<Vec<f64>, KsError> {
    if xs.is_empty() {
        return Err(KsError::EmptySample);
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(KsError::NonFinite);
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `sup |F_a - F_b|` over the pooled points.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> Result<f64, KsError> {
    let a = sorted_copy(a)?;
    let b = sorted_copy(b)?;
    Ok(ks_statistic_sorted(&a, &b))
}

/// Same as [`ks_statistic`] for inputs already sorted ascending and non-empty.
///
/// Both step functions advance through every tie at a pooled point before
/// their difference is taken.
pub fn ks_statistic_sorted(a: &[f64], b: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let (nf, mf) = (n as f64, m as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = a[i].min(b[j]);
        while i < n && a[i] == v {
            i += 1;
        }
        while j < m && b[j] == v {
            j += 1;
        }
        d = d.max((i as f64 / nf - j as f64 / mf).abs());
    }
    d
}

/// Survival function of the Kolmogorov distribution, `P(K > λ)`.
///
/// Uses the alternating series for `λ >= 1` and the equivalent Jacobi theta
/// form below that, where the alternating series converges slowly.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if !(lambda > 0.0) {
        return 1.0;
    }
    let p = if lambda < 1.0 {
        let mut cdf = 0.0;
        let scale = PI * PI / (8.0 * lambda * lambda);
        for j in 1.. {
            let odd = (2 * j - 1) as f64;
            let term = (-odd * odd * scale).exp();
            cdf += term;
            if term < SERIES_CUTOFF * 1e-3 {
                break;
            }
        }
        1.0 - (2.0 * PI).sqrt() / lambda * cdf
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for j in 1.. {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += sign * term;
            if term < SERIES_CUTOFF {
                break;
            }
            sign = -sign;
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// Asymptotic two-sample P-value with effective size `nm / (n + m)`.
pub fn ks_pvalue_asymptotic(d: f64, n: usize, m: usize) -> f64 {
    let ne = (n * m) as f64 / (n + m) as f64;
    let root = ne.sqrt();
    kolmogorov_sf((root + 0.12 + 0.11 / root) * d)
}

/// Statistic and asymptotic P-value.
pub fn ks_test(a: &[f64], b: &[f64]) -> Result<KsResult, KsError> {
    let d = ks_statistic(a, b)?;
    Ok(KsResult {
        d_statistic: d,
        p_value: ks_pvalue_asymptotic(d, a.len(), b.len()),
        n: a.len(),
        m: b.len(),
    })
}

/// Exact permutation P-value: the fraction of all `C(n+m, n)` relabellings of
/// the pooled sample whose statistic is at least `d`.
pub fn ks_pvalue_exact_small(d: f64, a: &[f64], b: &[f64]) -> Result<f64, KsError> {
    sorted_copy(a)?;
    sorted_copy(b)?;
    let (n, m) = (a.len(), b.len());
    let total = n + m;
    if total > EXACT_MAX_POOLED {
        return Err(KsError::TooLarge(total));
    }
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    // Ends (exclusive) of each run of tied values.
    let mut group_ends = Vec::new();
    for i in 1..=total {
        if i == total || pooled[i] != pooled[i - 1] {
            group_ends.push(i);
        }
    }
    let (nf, mf) = (n as f64, m as f64);
    let mut hits = 0u64;
    let mut count = 0u64;
    for mask in 0u32..(1u32 << total) {
        if mask.count_ones() as usize != n {
            continue;
        }
        count += 1;
        let (mut ca, mut start, mut stat) = (0usize, 0usize, 0.0f64);
        for &end in &group_ends {
            let in_a = (mask >> start) & ((1u32 << (end - start)) - 1);
            ca += in_a.count_ones() as usize;
            let cb = end - ca;
            stat = stat.max((ca as f64 / nf - cb as f64 / mf).abs());
            start = end;
        }
        if stat >= d - EXACT_SLACK {
            hits += 1;
        }
    }
    Ok(hits as f64 / count as f64)
}
