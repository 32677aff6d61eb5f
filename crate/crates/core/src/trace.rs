//! In-memory form of recorded attention traces.
//!
//! A trace keeps, for every generated token, the image-span slice of each
//! layer's and head's attention row. Serialization lives in `dleaf-lab`.

use alloc::string::String;
use alloc::vec::Vec;

use crate::attention::{AttentionSnapshot, ImageSpan};
use crate::error::{Error, Result};

pub const TRACE_MAGIC: &str = "DLEAF-TRACE";
pub const TRACE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Label {
    Real,
    Hallucinated,
    #[default]
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceHeader {
    pub magic: String,
    pub schema_version: u32,
    pub num_layers: usize,
    pub num_heads: usize,
    pub num_image_tokens: usize,
    pub vocab_size: usize,
    pub source: String,
    pub image_span: (usize, usize),
}

impl TraceHeader {
    pub fn new(num_layers: usize, num_heads: usize, span: ImageSpan, vocab_size: usize, source: &str) -> Self {
        Self {
            magic: TRACE_MAGIC.into(),
            schema_version: TRACE_SCHEMA_VERSION,
            num_layers,
            num_heads,
            num_image_tokens: span.len(),
            vocab_size,
            source: source.into(),
            image_span: (span.start, span.end),
        }
    }

    pub fn span(&self) -> ImageSpan {
        ImageSpan::new(self.image_span.0, self.image_span.1)
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceRecord {
    pub step: usize,
    pub token_id: u32,
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub token: Option<String>,
    #[cfg_attr(feature = "serde", serde(default))]
    pub label: Label,
    /// `attention[layer][head][n]` over the image span.
    pub attention: Vec<Vec<Vec<f64>>>,
    /// Full-row attention sum per layer and head, when recorded.
    #[cfg_attr(feature = "serde", serde(default, skip_serializing_if = "Option::is_none"))]
    pub row_sums: Option<Vec<Vec<f64>>>,
}

impl TraceRecord {
    /// Builds a record from live per-layer snapshots.
    pub fn from_snapshots(step: usize, token_id: u32, snapshots: &[AttentionSnapshot], span: ImageSpan) -> Result<Self> {
        let mut attention = Vec::with_capacity(snapshots.len());
        let mut sums = Vec::with_capacity(snapshots.len());
        for snap in snapshots {
            span.check(snap.keys())?;
            attention.push((0..snap.heads()).map(|h| snap.span_slice(h, span).to_vec()).collect());
            sums.push((0..snap.heads()).map(|h| snap.row_sum(h)).collect());
        }
        Ok(Self { step, token_id, token: None, label: Label::Unlabeled, attention, row_sums: Some(sums) })
    }

    pub fn num_layers(&self) -> usize {
        self.attention.len()
    }

    /// Span slice of one layer as a snapshot whose image span is `[0, N)`.
    pub fn layer_snapshot(&self, layer: usize) -> Result<AttentionSnapshot> {
        let rows = self
            .attention
            .get(layer)
            .ok_or_else(|| Error::Shape(alloc::format!("record has no layer {layer}")))?;
        let mut snap = AttentionSnapshot::from_rows(layer, rows)?;
        snap.layer = layer;
        Ok(snap)
    }

    pub fn layer_snapshots(&self) -> Result<Vec<AttentionSnapshot>> {
        (0..self.num_layers()).map(|l| self.layer_snapshot(l)).collect()
    }

    /// Checks the record against declared dimensions.
    pub fn check_dims(&self, num_layers: usize, num_heads: usize, num_image_tokens: usize) -> Result<()> {
        let bad = |what: &str| Err(Error::Shape(alloc::format!("step {}: {what}", self.step)));
        if self.attention.len() != num_layers {
            return bad("layer count differs from header");
        }
        for layer in &self.attention {
            if layer.len() != num_heads {
                return bad("head count differs from header");
            }
            if layer.iter().any(|row| row.len() != num_image_tokens) {
                return bad("image token count differs from header");
            }
        }
        if let Some(sums) = &self.row_sums {
            if sums.len() != num_layers || sums.iter().any(|s| s.len() != num_heads) {
                return bad("row_sums dims differ from header");
            }
        }
        Ok(())
    }
}

/// Span used when metrics read a stored record: the whole stored slice.
pub fn stored_span(record: &TraceRecord) -> ImageSpan {
    let n = record.attention.first().and_then(|l| l.first()).map_or(0, |r| r.len());
    ImageSpan::new(0, n)
}
