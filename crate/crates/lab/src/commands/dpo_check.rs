use dleaf_core::dpo::{analytic_grad_init, fd_grad, relative_frobenius_error, DpoInstance, FeatureGapInstance, FeatureGapSeries, GradientMode};
use serde::Serialize;

use crate::error::LabResult;

pub const LOSS_TOLERANCE: f64 = 1e-12;
pub const FD_TOLERANCE: f64 = 1e-5;
pub const RATIO_TOLERANCE: f64 = 1e-9;
/// Entries of the simplified gradient smaller than this are checked by
/// absolute difference instead of by ratio.
pub const RATIO_FLOOR: f64 = 1e-6;
pub const GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DpoParams {
    pub instances: usize,
    pub dim: usize,
    pub vocab: usize,
    pub pairs: usize,
    pub beta: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for DpoParams {
    fn default() -> Self {
        Self { instances: 20, dim: 8, vocab: 16, pairs: 8, beta: 0.1, eps: 1e-5, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceCheck {
    pub seed: u64,
    pub loss_at_init: f64,
    pub fd_relative_error: f64,
    /// `‖exact - simplified/2‖ / ‖exact‖` with distinct contexts.
    pub distinct_context_discrepancy: f64,
    pub shared_ratio_max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpoCheckReport {
    pub params: DpoParams,
    pub instances: Vec<InstanceCheck>,
    pub max_loss_deviation: f64,
    pub max_fd_relative_error: f64,
    pub max_shared_ratio_deviation: f64,
    pub feature_gap: FeatureGapSeries,
    pub loss_is_ln2: bool,
    pub gradient_matches_fd: bool,
    pub shared_ratio_is_half: bool,
    pub feature_gap_non_increasing: bool,
}

impl DpoCheckReport {
    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.loss_is_ln2 {
            out.push(format!("loss at init deviates from ln 2 by {:e}", self.max_loss_deviation));
        }
        if !self.gradient_matches_fd {
            out.push(format!("finite-difference relative error {:e}", self.max_fd_relative_error));
        }
        if !self.shared_ratio_is_half {
            out.push(format!("shared-context ratio deviates from 1/2 by {:e}", self.max_shared_ratio_deviation));
        }
        if !self.feature_gap_non_increasing {
            out.push(format!("feature gap series not non-increasing: {:?}", self.feature_gap.gaps));
        }
        out
    }
}

fn shared_ratio_deviation(instance: &DpoInstance) -> LabResult<f64> {
    let exact = analytic_grad_init(&instance.reference, &instance.pairs, instance.beta, GradientMode::Exact)?;
    let simple = analytic_grad_init(&instance.reference, &instance.pairs, instance.beta, GradientMode::Simplified)?;
    Ok(exact
        .data
        .iter()
        .zip(&simple.data)
        .map(|(&e, &s)| if s.abs() > RATIO_FLOOR { (e / s - 0.5).abs() } else { (e - 0.5 * s).abs() })
        .fold(0.0, f64::max))
}

pub fn dpo_check(params: &DpoParams) -> LabResult<DpoCheckReport> {
    let mut instances = Vec::with_capacity(params.instances);
    for i in 0..params.instances as u64 {
        let seed = params.seed.wrapping_add(i);
        let distinct = DpoInstance::random(seed, params.dim, params.vocab, params.pairs, false, params.beta)?;
        let loss = distinct.loss_at(&distinct.reference.weights)?;
        let exact = analytic_grad_init(&distinct.reference, &distinct.pairs, params.beta, GradientMode::Exact)?;
        let simple = analytic_grad_init(&distinct.reference, &distinct.pairs, params.beta, GradientMode::Simplified)?;
        let fd = fd_grad(|w| distinct.loss_at(w), &distinct.reference.weights, params.eps)?;
        let shared = DpoInstance::random(seed, params.dim, params.vocab, params.pairs, true, params.beta)?;
        instances.push(InstanceCheck {
            seed,
            loss_at_init: loss,
            fd_relative_error: relative_frobenius_error(&fd, &exact),
            distinct_context_discrepancy: relative_frobenius_error(&simple.scale(0.5), &exact),
            shared_ratio_max_deviation: shared_ratio_deviation(&shared)?,
        });
    }
    let max_of = |f: fn(&InstanceCheck) -> f64| instances.iter().map(f).fold(0.0, f64::max);
    let max_loss_deviation = max_of(|c| (c.loss_at_init - std::f64::consts::LN_2).abs());
    let max_fd_relative_error = max_of(|c| c.fd_relative_error);
    let max_shared_ratio_deviation = max_of(|c| c.shared_ratio_max_deviation);
    let feature_gap = FeatureGapInstance::constructed(params.seed)?.gap_series(&GAMMA_GRID)?;
    Ok(DpoCheckReport {
        params: *params,
        loss_is_ln2: max_loss_deviation <= LOSS_TOLERANCE,
        gradient_matches_fd: max_fd_relative_error < FD_TOLERANCE,
        shared_ratio_is_half: max_shared_ratio_deviation <= RATIO_TOLERANCE,
        feature_gap_non_increasing: feature_gap.is_non_increasing(),
        instances,
        max_loss_deviation,
        max_fd_relative_error,
        max_shared_ratio_deviation,
        feature_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_check_passes() {
        let r = dpo_check(&DpoParams { instances: 4, ..DpoParams::default() }).unwrap();
        assert!(r.failures().is_empty(), "{:?}", r.failures());
        assert!(r.instances.iter().all(|c| c.distinct_context_discrepancy > 1e-6));
    }
}
