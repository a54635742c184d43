use crate::data::MrcExample;
use crate::mrc::SpanPrediction;
use crate::{Error, Result};

/// Percentage of predicted spans that coincide exactly with a constituent of
/// the passage sentence they fall in.
pub fn constituent_consistency(
    examples: &[MrcExample],
    predictions: &[SpanPrediction],
) -> Result<f64> {
    if examples.len() != predictions.len() {
        return Err(Error::contract("one prediction per example"));
    }
    if examples.is_empty() {
        return Err(Error::Undefined("consistency over zero predictions".into()));
    }
    let mut hits = 0;
    for (ex, p) in examples.iter().zip(predictions) {
        if p.end >= ex.passage.len() || p.start > p.end {
            return Err(Error::contract(format!(
                "{}: span ({}, {}) outside a {}-token passage",
                ex.id,
                p.start,
                p.end,
                ex.passage.len()
            )));
        }
        let trees = ex.trees()?;
        if ex.is_constituent_span(&trees, p.start, p.end) {
            hits += 1;
        }
    }
    Ok(100.0 * hits as f64 / examples.len() as f64)
}
