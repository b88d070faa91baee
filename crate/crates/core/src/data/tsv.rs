use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::text::format_sig;

use super::{Label, ScoreSet, Trial, TrialList};

/// Significant digits used for every score written to text.
pub(crate) const SCORE_DIGITS: usize = 9;

pub fn read_trials(path: impl AsRef<Path>) -> Result<TrialList> {
    parse_trials(&fs::read_to_string(path)?)
}

/// Parses `enroll<TAB>test[<TAB>label[<TAB>domain]]` lines. An empty label
/// column is allowed when a domain follows.
pub fn parse_trials(text: &str) -> Result<TrialList> {
    let mut trials = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if !(2..=4).contains(&cols.len()) {
            return Err(Error::malformed(loc, format!("expected 2 to 4 columns, found {}", cols.len())));
        }
        if cols[0].is_empty() || cols[1].is_empty() {
            return Err(Error::malformed(loc, "empty utterance id"));
        }
        let label = match cols.get(2) {
            None => Label::Unlabeled,
            Some(tok) => Label::from_token(tok)
                .ok_or_else(|| Error::malformed(&loc, format!("unknown label {tok:?} (tgt|imp)")))?,
        };
        let mut t = Trial::new(cols[0], cols[1], label);
        if let Some(d) = cols.get(3) {
            t = t.with_domain(*d);
        }
        trials.push(t);
    }
    TrialList::from_trials(trials)
}

pub fn render_trials(trials: &TrialList) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&t.enroll_id);
        out.push('\t');
        out.push_str(&t.test_id);
        match (&t.label, &t.domain) {
            (Label::Unlabeled, None) => {}
            (label, None) => {
                out.push('\t');
                out.push_str(label.token());
            }
            (label, Some(d)) => {
                out.push('\t');
                out.push_str(label.token());
                out.push('\t');
                out.push_str(d);
            }
        }
        out.push('\n');
    }
    out
}

pub fn write_trials(trials: &TrialList, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_trials(trials))?;
    Ok(())
}

/// `enroll<TAB>test<TAB>score`, scores with 9 significant digits.
pub fn write_scores(trials: &TrialList, scores: &ScoreSet, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_scores(trials, scores)?)?;
    Ok(())
}

pub(crate) fn render_scores(trials: &TrialList, scores: &ScoreSet) -> Result<String> {
    scores.check_aligned(trials)?;
    let mut out = String::with_capacity(trials.len() * 32);
    for (t, &s) in trials.iter().zip(scores.scores()) {
        out.push_str(&t.enroll_id);
        out.push('\t');
        out.push_str(&t.test_id);
        out.push('\t');
        out.push_str(&format_sig(s, SCORE_DIGITS));
        out.push('\n');
    }
    Ok(out)
}

/// Reads a score file whose rows must match `trials` in order.
pub fn read_scores(path: impl AsRef<Path>, trials: &TrialList) -> Result<ScoreSet> {
    parse_scores(&fs::read_to_string(path)?, trials)
}

pub(crate) fn parse_scores(text: &str, trials: &TrialList) -> Result<ScoreSet> {
    let mut scores = Vec::with_capacity(trials.len());
    let mut expected = trials.iter();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let loc = format!("line {}", i + 1);
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::malformed(loc, format!("expected 3 columns, found {}", cols.len())));
        }
        let t = expected
            .next()
            .ok_or_else(|| Error::malformed(&loc, "more scores than trials"))?;
        if t.enroll_id != cols[0] || t.test_id != cols[1] {
            return Err(Error::malformed(
                loc,
                format!(
                    "ids ({}, {}) do not match trial ({}, {})",
                    cols[0], cols[1], t.enroll_id, t.test_id
                ),
            ));
        }
        let s: f64 = cols[2]
            .trim()
            .parse()
            .map_err(|_| Error::malformed(&loc, format!("bad score {:?}", cols[2])))?;
        scores.push(s);
    }
    if scores.len() != trials.len() {
        return Err(Error::malformed(
            "end of file",
            format!("{} scores for {} trials", scores.len(), trials.len()),
        ));
    }
    ScoreSet::new(scores, "file")
}
