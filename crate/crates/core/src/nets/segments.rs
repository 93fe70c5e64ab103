//! Per-segment output activations and the matching rounding rule.

use crate::autodiff::{Axis, NodeId, Tape};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Softmax,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub len: usize,
    pub activation: Activation,
}

/// Consecutive column blocks of an output row, each with its activation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan(Vec<Segment>);

impl SegmentPlan {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() || segments.iter().any(|s| s.len == 0) {
            return Err(Error::invalid("segment plans need non-empty segments"));
        }
        Ok(Self(segments))
    }

    pub fn softmax_blocks(lens: &[usize]) -> Result<Self> {
        Self::new(lens.iter().map(|&len| Segment { len, activation: Activation::Softmax }).collect())
    }

    pub fn sigmoid(width: usize) -> Result<Self> {
        Self::new(vec![Segment { len: width, activation: Activation::Sigmoid }])
    }

    pub fn segments(&self) -> &[Segment] {
        &self.0
    }

    pub fn width(&self) -> usize {
        self.0.iter().map(|s| s.len).sum()
    }

    /// Applies each segment's activation to the matching columns of `logits`.
    pub fn activate(&self, tape: &mut Tape, logits: NodeId) -> Result<NodeId> {
        let cols = tape.value(logits).cols();
        if cols != self.width() {
            return Err(Error::shape("SegmentPlan::activate", format!("{cols} columns, plan covers {}", self.width())));
        }
        let mut parts = Vec::with_capacity(self.0.len());
        let mut start = 0;
        for s in &self.0 {
            let block = if self.0.len() == 1 {
                logits
            } else {
                tape.slice_cols(logits, start, s.len)?
            };
            parts.push(match s.activation {
                Activation::Softmax => tape.softmax(block, Axis::Row)?,
                Activation::Sigmoid => tape.sigmoid(block),
            });
            start += s.len;
        }
        if parts.len() == 1 {
            return Ok(parts[0]);
        }
        tape.concat_cols(&parts)
    }

    /// Binary rounding: one-hot argmax (lowest index on ties) within
    /// softmax segments, threshold 0.5 within sigmoid segments.
    pub fn round_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.width() {
            return Err(Error::shape("SegmentPlan::round_row", format!("{} values, plan covers {}", row.len(), self.width())));
        }
        let mut out = vec![0.0; row.len()];
        let mut start = 0;
        for s in &self.0 {
            let block = &row[start..start + s.len];
            match s.activation {
                Activation::Softmax => {
                    let mut best = 0;
                    for (i, &v) in block.iter().enumerate() {
                        if v > block[best] {
                            best = i;
                        }
                    }
                    out[start + best] = 1.0;
                }
                Activation::Sigmoid => {
                    for (o, &v) in out[start..start + s.len].iter_mut().zip(block) {
                        *o = if v >= 0.5 { 1.0 } else { 0.0 };
                    }
                }
            }
            start += s.len;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Matrix;

    #[test]
    fn activation_normalizes_softmax_blocks() {
        let plan = SegmentPlan::new(vec![
            Segment { len: 3, activation: Activation::Softmax },
            Segment { len: 2, activation: Activation::Sigmoid },
            Segment { len: 2, activation: Activation::Softmax },
        ])
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.param(Matrix::from_rows(&[[1.0, -2.0, 0.5, 3.0, -3.0, 0.0, 9.0]]).unwrap());
        let y = plan.activate(&mut tape, x).unwrap();
        let v = tape.value(y).row(0).to_vec();
        assert!((v[..3].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((v[5..].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(
            plan.round_row(&v).unwrap(),
            [1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        );
    }

    #[test]
    fn rounding_ties_pick_the_first_index() {
        let plan = SegmentPlan::softmax_blocks(&[2]).unwrap();
        assert_eq!(plan.round_row(&[0.5, 0.5]).unwrap(), [1.0, 0.0]);
        let plan = SegmentPlan::sigmoid(2).unwrap();
        assert_eq!(plan.round_row(&[0.5, 0.49]).unwrap(), [1.0, 0.0]);
        assert!(plan.round_row(&[0.5]).is_err());
        assert!(SegmentPlan::new(vec![]).is_err());
    }
}
