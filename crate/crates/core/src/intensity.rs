//! Per-frame expression intensity relative to the apex frame.
//!
//! Each frame is compared with the apex frame by cosine similarity and the
//! similarities are min-max normalized over the sequence, so the apex maps to
//! 1 and the least similar frame to 0. Neutral sequences get an all-zero trace.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::math::{dot, norm2};
use crate::synth::FeatureSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityTrace {
    pub values: Vec<f64>,
}

impl IntensityTrace {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    check_dim("cosine_similarity", a.len(), b.len())?;
    let na = norm2(a);
    let nb = norm2(b);
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Degenerate(
            "cosine similarity of a zero-norm vector".into(),
        ));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Raw similarities to the apex frame. The apex itself is pinned to exactly 1.
pub fn apex_similarities(seq: &FeatureSequence) -> Result<Vec<f64>> {
    let apex = seq
        .frames
        .get(seq.apex_index)
        .ok_or_else(|| Error::Degenerate(format!("apex_index {} out of range", seq.apex_index)))?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(t, f)| {
            if t == seq.apex_index {
                Ok(1.0)
            } else {
                cosine_similarity(f, apex)
            }
        })
        .collect()
}

/// Min-max normalization to `[0, 1]`; fails when all values are equal.
/// Similarity spans at or below this are rounding noise.
pub const DEGENERATE_SPAN: f64 = 1e-12;

pub fn min_max_normalize(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::EmptyInput("min-max normalization of an empty trace"));
    }
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= DEGENERATE_SPAN {
        return Err(Error::Degenerate(
            "constant similarity across the sequence, intensity is undefined".into(),
        ));
    }
    let span = max - min;
    Ok(raw.iter().map(|v| (v - min) / span).collect())
}

pub fn estimate_trace(seq: &FeatureSequence) -> Result<IntensityTrace> {
    if seq.frames.is_empty() {
        return Err(Error::EmptyInput("sequence has no frames"));
    }
    if seq.apex_index >= seq.frames.len() {
        return Err(Error::Degenerate(format!(
            "apex_index {} out of range",
            seq.apex_index
        )));
    }
    if seq.is_neutral() {
        return Ok(IntensityTrace {
            values: vec![0.0; seq.frames.len()],
        });
    }
    let raw = apex_similarities(seq)?;
    Ok(IntensityTrace {
        values: min_max_normalize(&raw)?,
    })
}
