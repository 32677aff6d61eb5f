use alloc::vec;
use alloc::vec::Vec;

use super::{average_ranks, normal_cdf};
use crate::error::{Error, Result};

/// Largest number of nonzero differences for which the exact null
/// distribution is used by default.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Alternative {
    TwoSided,
    /// Differences `x - y` tend to be positive.
    Greater,
    Less,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TestResult {
    /// Signed-rank sum `W = sum sign(d_i) R_i`.
    pub statistic: f64,
    pub p_value: f64,
    pub n_effective: usize,
    pub method: TestMethod,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pairs: Vec<(f64, f64)>,
}

impl PairedSample {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::Shape(alloc::format!("paired sample of {} and {}", x.len(), y.len())));
        }
        if x.is_empty() {
            return Err(Error::EmptyInput);
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numerics("paired sample contains non-finite values".into()));
        }
        Ok(Self { pairs: x.iter().copied().zip(y.iter().copied()).collect() })
    }

    pub fn differences(&self) -> Vec<f64> {
        self.pairs.iter().map(|(x, y)| x - y).collect()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Nonzero differences, their doubled (integer) ranks and the doubled statistic.
struct SignedRanks {
    doubled_ranks: Vec<u64>,
    doubled_w: i64,
    ranks: Vec<f64>,
}

fn signed_ranks(diffs: &[f64]) -> Result<SignedRanks> {
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(Error::DegenerateSample("all differences are zero".into()));
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    // average ranks are multiples of 1/2
    let doubled_ranks: Vec<u64> = ranks.iter().map(|r| libm::round(2.0 * r) as u64).collect();
    let doubled_w = nonzero
        .iter()
        .zip(&doubled_ranks)
        .map(|(d, &r)| if *d > 0.0 { r as i64 } else { -(r as i64) })
        .sum();
    Ok(SignedRanks { doubled_ranks, doubled_w, ranks })
}

/// Exact p-value of a doubled signed-rank statistic under the sign-flip null.
///
/// The null distribution of the positive-rank sum is built by dynamic
/// programming over the ranks, which counts all `2^m` sign assignments.
pub fn exact_signed_rank_p(doubled_ranks: &[u64], doubled_w: i64, alternative: Alternative) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let mut hits = 0.0;
    for (t, &c) in counts.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let w = 2 * t as i64 - total as i64;
        let extreme = match alternative {
            Alternative::TwoSided => w.abs() >= doubled_w.abs(),
            Alternative::Greater => w >= doubled_w,
            Alternative::Less => w <= doubled_w,
        };
        if extreme {
            hits += c;
        }
    }
    let p = hits / libm::pow(2.0, doubled_ranks.len() as f64);
    p.clamp(0.0, 1.0)
}

fn normal_p(ranks: &[f64], w: f64, alternative: Alternative) -> f64 {
    let sd = libm::sqrt(ranks.iter().map(|r| r * r).sum::<f64>());
    let p = match alternative {
        Alternative::TwoSided => {
            let z = (w.abs() - 1.0).max(0.0) / sd;
            2.0 * (1.0 - normal_cdf(z))
        }
        Alternative::Greater => 1.0 - normal_cdf((w - 1.0) / sd),
        Alternative::Less => normal_cdf((w + 1.0) / sd),
    };
    p.clamp(0.0, 1.0)
}

/// Signed-rank test on the paired differences `x - y`.
///
/// Zero differences are dropped, tied magnitudes get average ranks. The
/// exact null distribution is used up to [`EXACT_LIMIT`] nonzero differences,
/// beyond that a normal approximation with continuity correction.
pub fn wilcoxon_signed_rank(sample: &PairedSample, alternative: Alternative) -> Result<TestResult> {
    let diffs = sample.differences();
    let m = diffs.iter().filter(|&&d| d != 0.0).count();
    let method = if m <= EXACT_LIMIT { TestMethod::Exact } else { TestMethod::NormalApprox };
    wilcoxon_with_method(&diffs, alternative, method)
}

pub fn wilcoxon_with_method(diffs: &[f64], alternative: Alternative, method: TestMethod) -> Result<TestResult> {
    let sr = signed_ranks(diffs)?;
    let w = sr.doubled_w as f64 / 2.0;
    let p_value = match method {
        TestMethod::Exact => exact_signed_rank_p(&sr.doubled_ranks, sr.doubled_w, alternative),
        TestMethod::NormalApprox => normal_p(&sr.ranks, w, alternative),
    };
    Ok(TestResult { statistic: w, p_value, n_effective: sr.ranks.len(), method })
}
