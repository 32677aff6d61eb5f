//! Layer- and head-level image-attention metrics.
//!
//! Layer metrics work on the maximum attention matrix (MAM): for each image
//! token, the largest weight any head of the layer puts on it. Head metrics
//! work on a single head's span slice. Entropies use the natural logarithm.

use alloc::vec::Vec;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::error::{Error, Result};

/// Per-image-token maximum over heads.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MamVector(pub Vec<f64>);

impl MamVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn compute_mam(snapshot: &AttentionSnapshot, span: ImageSpan) -> Result<MamVector> {
    span.check(snapshot.keys())?;
    let mut mam = snapshot.span_slice(0, span).to_vec();
    for h in 1..snapshot.heads() {
        for (m, &a) in mam.iter_mut().zip(snapshot.span_slice(h, span)) {
            if a > *m {
                *m = a;
            }
        }
    }
    Ok(MamVector(mam))
}

/// Shannon entropy (nats) of `values` after normalizing them to sum to one.
pub fn normalized_entropy(values: &[f64]) -> Result<f64> {
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(Error::ZeroMass);
    }
    let mut h = 0.0;
    for &v in values {
        if v > 0.0 {
            let p = v / total;
            h -= p * libm::log(p);
        }
    }
    // Rounding can leave a tiny negative value for one-hot inputs.
    Ok(if h < 0.0 { 0.0 } else { h })
}

/// Layer image attention entropy: entropy of the normalized MAM.
pub fn liae(mam: &MamVector) -> Result<f64> {
    normalized_entropy(&mam.0)
}

/// Layer image attention focus: total MAM mass.
pub fn liaf(mam: &MamVector) -> f64 {
    mam.0.iter().sum()
}

/// `alpha * liae - (1 - alpha) * liaf`.
pub fn lias(liae: f64, liaf: f64, alpha: f64) -> f64 {
    alpha * liae - (1.0 - alpha) * liaf
}

fn check_head(snapshot: &AttentionSnapshot, head: usize) -> Result<()> {
    if head >= snapshot.heads() {
        return Err(Error::Shape(alloc::format!(
            "head {head} out of range for {} heads",
            snapshot.heads()
        )));
    }
    Ok(())
}

/// Image attention focus: a head's total attention on the image span.
pub fn iaf(snapshot: &AttentionSnapshot, head: usize, span: ImageSpan) -> Result<f64> {
    check_head(snapshot, head)?;
    span.check(snapshot.keys())?;
    Ok(snapshot.span_slice(head, span).iter().sum())
}

/// Image attention entropy of one head, normalized over the span.
pub fn iae(snapshot: &AttentionSnapshot, head: usize, span: ImageSpan) -> Result<f64> {
    check_head(snapshot, head)?;
    span.check(snapshot.keys())?;
    normalized_entropy(snapshot.span_slice(head, span))
}

/// `beta * iaf + (1 - beta) * iae`.
pub fn ias(iaf: f64, iae: f64, beta: f64) -> f64 {
    beta * iaf + (1.0 - beta) * iae
}
