//! Adaptive symmetric score normalization (s-norm).
//!
//! Each side of a trial is normalized by the mean and standard deviation of
//! its `top_x` highest cohort scores, and the two normalized scores are
//! averaged.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::{EmbeddingSet, ScoreSet, TrialList};
use crate::error::{Error, Result};
use crate::scalar::{mean_std, Scalar};
use crate::scoring::cosine_score;

pub const DEFAULT_TOP_X: usize = 200;

/// Lower bound applied to cohort standard deviations.
pub const SIGMA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats<T = f64> {
    pub mu: T,
    pub sigma: T,
}

impl<T: Scalar> NormStats<T> {
    pub fn identity() -> Self {
        NormStats {
            mu: T::zero(),
            sigma: T::one(),
        }
    }
}

/// Normalization cohort: utterances never used as enrollment or test.
#[derive(Debug, Clone)]
pub struct Cohort {
    embeddings: EmbeddingSet,
    top_x: usize,
}

impl Cohort {
    pub fn new(embeddings: EmbeddingSet, top_x: usize) -> Result<Self> {
        if embeddings.is_empty() {
            return Err(Error::config("s-norm cohort is empty"));
        }
        check_top_x(top_x, embeddings.len())?;
        Ok(Self { embeddings, top_x })
    }

    pub fn embeddings(&self) -> &EmbeddingSet {
        &self.embeddings
    }

    pub fn top_x(&self) -> usize {
        self.top_x
    }

    /// Ids shared between the cohort and `trials`. Overlap is allowed but
    /// logged, since a cohort member scoring against itself inflates the
    /// top scores.
    pub fn overlapping_ids(&self, trials: &TrialList) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in trials {
            for id in [&t.enroll_id, &t.test_id] {
                if self.embeddings.get(id).is_some() && !out.contains(id) {
                    out.push(id.clone());
                }
            }
        }
        if !out.is_empty() {
            log::warn!("{} evaluation utterance(s) also appear in the s-norm cohort", out.len());
        }
        out
    }
}

fn check_top_x(top_x: usize, available: usize) -> Result<()> {
    if top_x == 0 {
        return Err(Error::config("top_x must be positive"));
    }
    if top_x > available {
        return Err(Error::config(format!(
            "top_x = {top_x} exceeds cohort size {available}"
        )));
    }
    Ok(())
}

/// Mean and population standard deviation of the `top_x` largest scores,
/// with the deviation floored at [`SIGMA_FLOOR`].
pub fn stats_from_scores<T: Scalar>(scores: &[T], top_x: usize) -> Result<NormStats<T>> {
    check_top_x(top_x, scores.len())?;
    let mut sorted = scores.to_vec();
    if top_x < sorted.len() {
        sorted.select_nth_unstable_by(top_x - 1, |a, b| b.partial_cmp(a).expect("finite cohort score"));
        sorted.truncate(top_x);
    }
    sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite cohort score"));
    let (mu, sigma) = mean_std(&sorted);
    Ok(NormStats {
        mu,
        sigma: sigma.max(T::lit(SIGMA_FLOOR)),
    })
}

/// Scores `u` against every cohort member by cosine and summarizes the
/// closest `top_x`.
pub fn cohort_stats(u: &[f64], cohort: &Cohort) -> Result<NormStats> {
    let scores = cohort
        .embeddings
        .iter()
        .map(|c| cosine_score(u, &c.vector))
        .collect::<Result<Vec<f64>>>()?;
    stats_from_scores(&scores, cohort.top_x)
}

/// `½[(s − μ_e)/σ_e + (s − μ_t)/σ_t]`.
#[inline]
pub fn normalize_score<T: Scalar>(s: T, enroll: &NormStats<T>, test: &NormStats<T>) -> T {
    T::lit(0.5) * ((s - enroll.mu) / enroll.sigma + (s - test.mu) / test.sigma)
}

/// Adaptive s-norm of raw cosine scores. Per-utterance statistics are
/// computed once per distinct id.
pub fn snorm(
    trials: &TrialList,
    raw: &ScoreSet,
    embeddings: &EmbeddingSet,
    cohort: &Cohort,
) -> Result<ScoreSet> {
    raw.check_aligned(trials)?;
    cohort.overlapping_ids(trials);
    let mut ids: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, t) in trials.iter().enumerate() {
        embeddings.resolve(i, t)?;
        for id in [t.enroll_id.as_str(), t.test_id.as_str()] {
            if seen.insert(id) {
                ids.push(id);
            }
        }
    }
    let stats: HashMap<&str, NormStats> = ids
        .par_iter()
        .map(|&id| {
            let rec = embeddings.get(id).expect("resolved above");
            cohort_stats(&rec.vector, cohort).map(|s| (id, s))
        })
        .collect::<Result<_>>()?;
    let out = trials
        .iter()
        .zip(raw.scores())
        .map(|(t, &s)| normalize_score(s, &stats[t.enroll_id.as_str()], &stats[t.test_id.as_str()]))
        .collect();
    ScoreSet::new(out, "snorm")
}
