use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Block {
    weighted_sum: f64,
    weight: f64,
    plain_sum: f64,
    len: usize,
}

impl Block {
    fn value(&self) -> f64 {
        if self.weight > 0.0 {
            self.weighted_sum / self.weight
        } else {
            // only zero-weight members: any value is optimal, keep their mean
            self.plain_sum / self.len as f64
        }
    }

    fn absorb(&mut self, other: Block) {
        self.weighted_sum += other.weighted_sum;
        self.weight += other.weight;
        self.plain_sum += other.plain_sum;
        self.len += other.len;
    }
}

/// Weighted least-squares non-decreasing fit by pooling adjacent violators.
pub fn isotonic_pava(y: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    if y.is_empty() {
        return Err(Error::EmptyInput);
    }
    if y.len() != w.len() {
        return Err(Error::Shape(alloc::format!("{} values but {} weights", y.len(), w.len())));
    }
    if w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerics("weights must be finite and non-negative, values finite".into()));
    }
    if w.iter().sum::<f64>() <= 0.0 {
        return Err(Error::DegenerateSample("total weight is zero".into()));
    }

    let mut stack: Vec<Block> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        let mut block = Block { weighted_sum: wi * yi, weight: wi, plain_sum: yi, len: 1 };
        while let Some(prev) = stack.last() {
            if prev.value() > block.value() {
                let mut merged = stack.pop().expect("non-empty");
                merged.absorb(block);
                block = merged;
            } else {
                break;
            }
        }
        stack.push(block);
    }

    let mut fit = Vec::with_capacity(y.len());
    for block in stack {
        let v = block.value();
        fit.extend(core::iter::repeat_n(v, block.len));
    }
    Ok(fit)
}
