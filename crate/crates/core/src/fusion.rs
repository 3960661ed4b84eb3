//! Feature fusion: the weighted multi-crop object embedding, the running
//! averages used for object and relation features, and plain averaging of
//! per-cluster map features.
//!
//! Fused features are never re-normalized; normalization only happens inside
//! cosine similarity so that stored features stay exact means.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::Embedding;

const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum FusionError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("fusion weights must lie in [0, 1] and sum to 1 (got {mask} + {bbox} + {label} = {sum})")]
    InvalidWeights {
        mask: f64,
        bbox: f64,
        label: f64,
        sum: f64,
    },
    #[error("cannot average an empty feature list")]
    Empty,
}

/// Convex weights for the masked crop, box crop and label text embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionWeights {
    pub alpha_mask: f64,
    pub alpha_bbox: f64,
    pub alpha_label: f64,
}

impl Default for FusionWeights {
    fn default() -> Self {
        Self {
            alpha_mask: 0.4,
            alpha_bbox: 0.4,
            alpha_label: 0.2,
        }
    }
}

impl FusionWeights {
    pub fn new(alpha_mask: f64, alpha_bbox: f64, alpha_label: f64) -> Result<Self, FusionError> {
        let w = Self {
            alpha_mask,
            alpha_bbox,
            alpha_label,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), FusionError> {
        let parts = [self.alpha_mask, self.alpha_bbox, self.alpha_label];
        let sum: f64 = parts.iter().sum();
        let in_range = parts.iter().all(|a| (0.0..=1.0).contains(a));
        if !in_range || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(FusionError::InvalidWeights {
                mask: self.alpha_mask,
                bbox: self.alpha_bbox,
                label: self.alpha_label,
                sum,
            });
        }
        Ok(())
    }
}

fn check_dims(a: &Embedding, b: &Embedding) -> Result<(), FusionError> {
    if a.dim() != b.dim() {
        return Err(FusionError::DimMismatch(a.dim(), b.dim()));
    }
    Ok(())
}

/// `alpha_mask * masked + alpha_bbox * boxed + alpha_label * label`.
pub fn combine_object_embedding(
    masked: &Embedding,
    boxed: &Embedding,
    label: &Embedding,
    w: &FusionWeights,
) -> Result<Embedding, FusionError> {
    w.validate()?;
    check_dims(masked, boxed)?;
    check_dims(masked, label)?;
    // Equal inputs come back bit-identical: a convex combination of one value
    // is not guaranteed to round back to it.
    let values = masked
        .iter()
        .zip(boxed.iter())
        .zip(label.iter())
        .map(|((m, b), l)| {
            if m == b && b == l {
                *m
            } else {
                w.alpha_mask * m + w.alpha_bbox * b + w.alpha_label * l
            }
        })
        .collect();
    Ok(Embedding::new(values))
}

/// Fold `new` into a mean of `count` previous observations.
///
/// Returns the mean of all `count + 1` observations and the new count. With
/// `count == 0` there is no prior and the result is `new` itself. Evaluated as
/// `old + (new - old) / (count + 1)`, which is algebraically
/// `(count * old + new) / (count + 1)` and leaves a repeated value untouched.
pub fn running_average(
    old: Option<&Embedding>,
    count: u64,
    new: &Embedding,
) -> Result<(Embedding, u64), FusionError> {
    let old = match old {
        Some(old) if count > 0 => old,
        _ => return Ok((new.clone(), 1)),
    };
    check_dims(old, new)?;
    let denom = (count + 1) as f64;
    let values = old
        .iter()
        .zip(new.iter())
        .map(|(o, n)| o + (n - o) / denom)
        .collect();
    Ok((Embedding::new(values), count + 1))
}

/// Combine two means over disjoint observation sets into the mean of their union.
pub fn merge_means(
    a: &Embedding,
    count_a: u64,
    b: &Embedding,
    count_b: u64,
) -> Result<(Embedding, u64), FusionError> {
    if count_b == 0 {
        return Ok((a.clone(), count_a));
    }
    if count_a == 0 {
        return Ok((b.clone(), count_b));
    }
    check_dims(a, b)?;
    let total = count_a + count_b;
    let wb = count_b as f64 / total as f64;
    let values = a.iter().zip(b.iter()).map(|(x, y)| x + (y - x) * wb).collect();
    Ok((Embedding::new(values), total))
}

/// Componentwise mean of a non-empty list.
pub fn average_features(features: &[&Embedding]) -> Result<Embedding, FusionError> {
    let first = features.first().ok_or(FusionError::Empty)?;
    let dim = first.dim();
    let mut acc = vec![0.0f64; dim];
    for f in features {
        if f.dim() != dim {
            return Err(FusionError::DimMismatch(dim, f.dim()));
        }
        for (a, v) in acc.iter_mut().zip(f.iter()) {
            *a += v;
        }
    }
    if features.iter().all(|f| f.values() == first.values()) {
        return Ok((*first).clone());
    }
    let n = features.len() as f64;
    Ok(Embedding::new(acc.into_iter().map(|a| a / n).collect()))
}
