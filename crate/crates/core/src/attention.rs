//! Attention rows captured at one layer for the current query position.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Half-open interval `[start, end)` of key positions holding image tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImageSpan {
    pub start: usize,
    pub end: usize,
}

impl ImageSpan {
    pub const fn new(start: usize, end: usize) -> Self {
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end.saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }

    /// Checks that the span is nonempty and addresses at most `keys` positions.
    pub fn check(&self, keys: usize) -> Result<()> {
        if self.is_empty() || self.end > keys {
            return Err(Error::Span { start: self.start, end: self.end, keys });
        }
        Ok(())
    }

    pub fn contains(&self, k: usize) -> bool {
        k >= self.start && k < self.end
    }
}

/// Post-softmax attention of every head at one layer, for a single query row.
///
/// Rows are stored head-major: `weights[h * keys + k]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttentionSnapshot {
    pub layer: usize,
    heads: usize,
    keys: usize,
    weights: Vec<f64>,
}

impl AttentionSnapshot {
    pub fn zeros(layer: usize, heads: usize, keys: usize) -> Self {
        Self { layer, heads, keys, weights: vec![0.0; heads * keys] }
    }

    pub fn from_rows(layer: usize, rows: &[Vec<f64>]) -> Result<Self> {
        let heads = rows.len();
        if heads == 0 {
            return Err(Error::Shape("snapshot needs at least one head".into()));
        }
        let keys = rows[0].len();
        if rows.iter().any(|r| r.len() != keys) {
            return Err(Error::Shape("ragged attention rows".into()));
        }
        let weights = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self { layer, heads, keys, weights })
    }

    pub fn from_flat(layer: usize, heads: usize, keys: usize, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != heads * keys || heads == 0 {
            return Err(Error::Shape(alloc::format!(
                "expected {heads}x{keys} weights, got {}",
                weights.len()
            )));
        }
        Ok(Self { layer, heads, keys, weights })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn keys(&self) -> usize {
        self.keys
    }

    pub fn row(&self, head: usize) -> &[f64] {
        &self.weights[head * self.keys..(head + 1) * self.keys]
    }

    pub fn row_mut(&mut self, head: usize) -> &mut [f64] {
        &mut self.weights[head * self.keys..(head + 1) * self.keys]
    }

    pub fn span_slice(&self, head: usize, span: ImageSpan) -> &[f64] {
        &self.row(head)[span.start..span.end]
    }

    pub fn row_sum(&self, head: usize) -> f64 {
        self.row(head).iter().sum()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.weights
    }

    /// Copy of the span columns only, as a snapshot whose span is `[0, N)`.
    pub fn restrict(&self, span: ImageSpan) -> Result<Self> {
        span.check(self.keys)?;
        let mut weights = Vec::with_capacity(self.heads * span.len());
        for h in 0..self.heads {
            weights.extend_from_slice(self.span_slice(h, span));
        }
        Ok(Self { layer: self.layer, heads: self.heads, keys: span.len(), weights })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_validation() {
        assert!(ImageSpan::new(2, 2).check(5).is_err());
        assert!(ImageSpan::new(1, 6).check(5).is_err());
        assert!(ImageSpan::new(1, 5).check(5).is_ok());
    }

    #[test]
    fn restrict_keeps_span_columns() {
        let s = AttentionSnapshot::from_rows(0, &[vec![0.1, 0.2, 0.7], vec![0.5, 0.25, 0.25]]).unwrap();
        let r = s.restrict(ImageSpan::new(1, 3)).unwrap();
        assert_eq!(r.row(0), &[0.2, 0.7]);
        assert_eq!(r.row(1), &[0.25, 0.25]);
    }
}
