//! Data model for embeddings, trials and scores, plus their on-disk formats.
//!
//! Embedding vectors are stored as `f32` on disk and held as `f64` in memory.

mod evec;
mod tsv;

use std::collections::{HashMap, HashSet};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use evec::{
    evec_file_size, read_embeddings, read_evec, read_tsv_embeddings, write_embeddings, write_evec,
    write_tsv_embeddings, EmbeddingFormat, EVEC_MAGIC, EVEC_VERSION,
};
pub use tsv::{read_scores, read_trials, write_scores, write_trials, parse_trials, render_trials};

/// One utterance: its vector (embedding or pooling activations), duration and
/// optional acoustic-domain tag.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: String,
    pub vector: Vec<f64>,
    pub duration_s: f64,
    pub domain: Option<String>,
}

impl EmbeddingRecord {
    pub fn new(id: impl Into<String>, vector: Vec<f64>, duration_s: f64) -> Self {
        Self {
            id: id.into(),
            vector,
            duration_s,
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        let d = domain.into();
        self.domain = if d.is_empty() { None } else { Some(d) };
        self
    }

    fn validate(&self, dim: usize) -> std::result::Result<(), String> {
        if self.id.is_empty() {
            return Err("empty id".into());
        }
        if self.vector.len() != dim {
            return Err(format!("dimension {} does not match set dimension {dim}", self.vector.len()));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(format!("duration must be positive and finite, got {}", self.duration_s));
        }
        if let Some(j) = self.vector.iter().position(|x| !x.is_finite()) {
            return Err(format!("non-finite vector component {}", j + 1));
        }
        Ok(())
    }
}

/// Ordered embedding collection with a fixed dimension and unique ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    records: Vec<EmbeddingRecord>,
    index: HashMap<String, usize>,
}

impl EmbeddingSet {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            records: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_records(dim: usize, records: impl IntoIterator<Item = EmbeddingRecord>) -> Result<Self> {
        let mut set = Self::new(dim);
        for r in records {
            set.push(r)?;
        }
        Ok(set)
    }

    /// Appends a record, rejecting dimension mismatches, non-positive
    /// durations, non-finite components and duplicate ids.
    pub fn push(&mut self, record: EmbeddingRecord) -> Result<()> {
        let n = self.records.len() + 1;
        record
            .validate(self.dim)
            .map_err(|reason| Error::malformed(format!("record {n}"), reason))?;
        if self.index.contains_key(&record.id) {
            return Err(Error::malformed(
                format!("record {n}"),
                format!("duplicate id {:?}", record.id),
            ));
        }
        self.index.insert(record.id.clone(), self.records.len());
        self.records.push(record);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddingRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn iter(&self) -> std::slice::Iter<'_, EmbeddingRecord> {
        self.records.iter()
    }

    /// Resolves both sides of trial `index`.
    pub fn resolve(&self, index: usize, trial: &Trial) -> Result<(&EmbeddingRecord, &EmbeddingRecord)> {
        let look = |id: &str| {
            self.get(id).ok_or_else(|| Error::UnknownId {
                index,
                id: id.to_string(),
            })
        };
        Ok((look(&trial.enroll_id)?, look(&trial.test_id)?))
    }
}

impl<'a> IntoIterator for &'a EmbeddingSet {
    type Item = &'a EmbeddingRecord;
    type IntoIter = std::slice::Iter<'a, EmbeddingRecord>;
    fn into_iter(self) -> Self::IntoIter {
        self.records.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
    Unlabeled,
}

impl Label {
    pub fn token(self) -> &'static str {
        match self {
            Label::Target => "tgt",
            Label::Nontarget => "imp",
            Label::Unlabeled => "",
        }
    }

    pub fn from_token(t: &str) -> Option<Self> {
        match t {
            "tgt" => Some(Label::Target),
            "imp" => Some(Label::Nontarget),
            "" => Some(Label::Unlabeled),
            _ => None,
        }
    }

    pub fn is_target(self) -> Option<bool> {
        match self {
            Label::Target => Some(true),
            Label::Nontarget => Some(false),
            Label::Unlabeled => None,
        }
    }
}

/// A directed (enrollment, test) comparison.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Label,
    pub domain: Option<String>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Label) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
            domain: None,
        }
    }

    pub fn with_domain(mut self, domain: impl Into<String>) -> Self {
        let d = domain.into();
        self.domain = if d.is_empty() { None } else { Some(d) };
        self
    }
}

/// Ordered trials without duplicate (enroll, test) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialList {
    trials: Vec<Trial>,
    n_target: usize,
    n_nontarget: usize,
}

impl TrialList {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trials(trials: impl IntoIterator<Item = Trial>) -> Result<Self> {
        let mut list = Self::new();
        let mut seen = HashSet::new();
        for t in trials {
            if !seen.insert((t.enroll_id.clone(), t.test_id.clone())) {
                return Err(Error::malformed(
                    format!("trial {}", list.len() + 1),
                    format!("duplicate pair ({}, {})", t.enroll_id, t.test_id),
                ));
            }
            list.push_unchecked(t);
        }
        Ok(list)
    }

    fn push_unchecked(&mut self, t: Trial) {
        match t.label {
            Label::Target => self.n_target += 1,
            Label::Nontarget => self.n_nontarget += 1,
            Label::Unlabeled => {}
        }
        self.trials.push(t);
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn trials(&self) -> &[Trial] {
        &self.trials
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Trial> {
        self.trials.iter()
    }

    pub fn n_target(&self) -> usize {
        self.n_target
    }

    pub fn n_nontarget(&self) -> usize {
        self.n_nontarget
    }

    pub fn n_unlabeled(&self) -> usize {
        self.trials.len() - self.n_target - self.n_nontarget
    }

    /// Per-trial target flags; fails if any trial is unlabeled.
    pub fn labels(&self) -> Result<Vec<bool>> {
        if self.n_unlabeled() > 0 {
            return Err(Error::Unlabeled {
                count: self.n_unlabeled(),
            });
        }
        Ok(self
            .trials
            .iter()
            .map(|t| t.label == Label::Target)
            .collect())
    }

    /// Distinct domain tags in first-appearance order.
    pub fn domains(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for t in &self.trials {
            if let Some(d) = &t.domain {
                if !out.contains(d) {
                    out.push(d.clone());
                }
            }
        }
        out
    }

    /// Indices of trials tagged with `domain`.
    pub fn indices_in_domain(&self, domain: &str) -> Vec<usize> {
        self.trials
            .iter()
            .enumerate()
            .filter(|(_, t)| t.domain.as_deref() == Some(domain))
            .map(|(i, _)| i)
            .collect()
    }

    /// Sub-list at the given indices (which must be distinct).
    pub fn select(&self, indices: &[usize]) -> TrialList {
        let mut out = TrialList::new();
        for &i in indices {
            out.push_unchecked(self.trials[i].clone());
        }
        out
    }
}

impl<'a> IntoIterator for &'a TrialList {
    type Item = &'a Trial;
    type IntoIter = std::slice::Iter<'a, Trial>;
    fn into_iter(self) -> Self::IntoIter {
        self.trials.iter()
    }
}

/// Per-trial scores aligned with a [`TrialList`], tagged with the pipeline
/// stage that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    scores: Vec<f64>,
    stage: String,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, stage: impl Into<String>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::malformed(format!("score {}", i + 1), "non-finite score"));
        }
        Ok(Self {
            scores,
            stage: stage.into(),
        })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn stage(&self) -> &str {
        &self.stage
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }

    pub fn check_aligned(&self, trials: &TrialList) -> Result<()> {
        if self.scores.len() != trials.len() {
            return Err(Error::DimensionMismatch {
                expected: trials.len(),
                found: self.scores.len(),
                context: "score count vs trial count".into(),
            });
        }
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> ScoreSet {
        ScoreSet {
            scores: indices.iter().map(|&i| self.scores[i]).collect(),
            stage: self.stage.clone(),
        }
    }
}

/// Scores split by class. Construction guarantees both classes are present
/// and every score is finite.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores<T = f64> {
    targets: Vec<T>,
    nontargets: Vec<T>,
}

impl<T: Scalar> LabeledScores<T> {
    pub fn new(targets: Vec<T>, nontargets: Vec<T>) -> Result<Self> {
        if targets.is_empty() || nontargets.is_empty() {
            return Err(Error::MissingClass {
                targets: targets.len(),
                nontargets: nontargets.len(),
            });
        }
        if targets.iter().chain(&nontargets).any(|s| !s.is_finite()) {
            return Err(Error::invalid("non-finite score"));
        }
        Ok(Self { targets, nontargets })
    }

    /// Builds from parallel score and label slices (`true` = target).
    pub fn from_flags(scores: &[T], is_target: &[bool]) -> Result<Self> {
        if scores.len() != is_target.len() {
            return Err(Error::DimensionMismatch {
                expected: is_target.len(),
                found: scores.len(),
                context: "scores vs labels".into(),
            });
        }
        let mut targets = Vec::new();
        let mut nontargets = Vec::new();
        for (&s, &t) in scores.iter().zip(is_target) {
            if t {
                targets.push(s)
            } else {
                nontargets.push(s)
            }
        }
        Self::new(targets, nontargets)
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn nontargets(&self) -> &[T] {
        &self.nontargets
    }

    pub fn n_target(&self) -> usize {
        self.targets.len()
    }

    pub fn n_nontarget(&self) -> usize {
        self.nontargets.len()
    }

    /// Applies `f` to every score.
    pub fn map(&self, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(
            self.targets.iter().map(|&s| f(s)).collect(),
            self.nontargets.iter().map(|&s| f(s)).collect(),
        )
    }
}

impl LabeledScores<f64> {
    /// Pairs a score set with its (fully labeled) trial list.
    pub fn from_trials(trials: &TrialList, scores: &ScoreSet) -> Result<Self> {
        scores.check_aligned(trials)?;
        let labels = trials.labels()?;
        Self::from_flags(scores.scores(), &labels)
    }
}
