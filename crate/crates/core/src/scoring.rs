//! Cosine trial scoring.

use rayon::prelude::*;

use crate::data::{EmbeddingSet, ScoreSet, TrialList};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Returns a unit-norm copy of `v`.
pub fn length_normalize<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    let norm = v.iter().map(|&x| x * x).sum::<T>().sqrt();
    if !(norm > T::zero()) || !norm.is_finite() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(v.iter().map(|&x| x / norm).collect())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

/// Cosine similarity, computed on length-normalized copies and clamped to
/// `[-1, 1]`. Exactly symmetric in its arguments.
pub fn cosine_score<T: Scalar>(e: &[T], t: &[T]) -> Result<T> {
    if e.len() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: e.len(),
            found: t.len(),
            context: "cosine operands".into(),
        });
    }
    let e = length_normalize(e)?;
    let t = length_normalize(t)?;
    Ok(dot(&e, &t).max(-T::one()).min(T::one()))
}

/// Raw cosine score for every trial, in trial order.
pub fn score_trials(embeddings: &EmbeddingSet, trials: &TrialList) -> Result<ScoreSet> {
    let scores = trials
        .trials()
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let (e, v) = embeddings.resolve(i, t)?;
            cosine_score(&e.vector, &v.vector)
        })
        .collect::<Result<Vec<f64>>>()?;
    ScoreSet::new(scores, "cosine")
}
