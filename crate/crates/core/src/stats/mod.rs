//! Nonparametric statistics: signed-rank test, isotonic regression, rank correlation.

mod isotonic;
mod spearman;
mod wilcoxon;

pub use isotonic::isotonic_pava;
pub use spearman::{spearman, spearman_rank_difference};
pub use wilcoxon::{
    exact_signed_rank_p, wilcoxon_signed_rank, wilcoxon_with_method, Alternative, PairedSample,
    TestMethod, TestResult, EXACT_LIMIT,
};

use alloc::vec;
use alloc::vec::Vec;

/// One-based ranks with ties sharing the average of the positions they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}
