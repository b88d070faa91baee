//! Explicit ordered scoring pipelines.
//!
//! A pipeline starts from a score source (cosine on embeddings, or an
//! external score file) and applies s-norm, neural and affine stages in the
//! order given. When s-norm follows other stages, cohort scores are passed
//! through those same stages so utterance and cohort scores live on one
//! scale.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{EmbeddingRecord, EmbeddingSet, ScoreSet, TrialList};
use crate::error::{Error, Result};
use crate::linear::{LinearCalibration, OperatingPoint};
use crate::neural::{CalibratorKind, NeuralModel};
use crate::scoring::cosine_score;
use crate::snorm::{normalize_score, stats_from_scores, Cohort, NormStats};

/// Stage names as written in a stage list such as `cosine,snorm,affine`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageKind {
    Cosine,
    /// Precomputed raw scores.
    Scores,
    Snorm,
    Magneto,
    Sonet,
    Affine,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageKind::Cosine => "cosine",
            StageKind::Scores => "scores",
            StageKind::Snorm => "snorm",
            StageKind::Magneto => "magneto",
            StageKind::Sonet => "sonet",
            StageKind::Affine => "affine",
        })
    }
}

impl FromStr for StageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "cosine" => StageKind::Cosine,
            "scores" => StageKind::Scores,
            "snorm" => StageKind::Snorm,
            "magneto" => StageKind::Magneto,
            "sonet" => StageKind::Sonet,
            "affine" => StageKind::Affine,
            other => {
                return Err(Error::config(format!(
                    "unknown stage {other:?} (cosine|scores|snorm|magneto|sonet|affine)"
                )))
            }
        })
    }
}

/// Parses a comma-separated stage list and checks its shape: a single
/// source first, at most one neural stage and at most one s-norm stage.
pub fn parse_stage_list(text: &str) -> Result<Vec<StageKind>> {
    let stages = text.split(',').map(str::parse).collect::<Result<Vec<StageKind>>>()?;
    check_shape(&stages)?;
    Ok(stages)
}

fn check_shape(stages: &[StageKind]) -> Result<()> {
    use StageKind::*;
    let is_source = |s: &StageKind| matches!(s, Cosine | Scores);
    match stages.first() {
        Some(s) if is_source(s) => {}
        _ => return Err(Error::config("a pipeline must start with cosine or scores")),
    }
    if stages[1..].iter().any(is_source) {
        return Err(Error::config("cosine/scores may only appear as the first stage"));
    }
    if stages.iter().filter(|s| matches!(s, Magneto | Sonet)).count() > 1 {
        return Err(Error::config("at most one neural stage (magneto or sonet) per pipeline"));
    }
    if stages.iter().filter(|s| **s == Snorm).count() > 1 {
        return Err(Error::config("at most one snorm stage per pipeline"));
    }
    if stages[0] == Scores && stages.contains(&Snorm) {
        return Err(Error::config(
            "snorm needs cohort scores, which only the cosine source can produce",
        ));
    }
    Ok(())
}

/// A stage with its loaded artifact.
#[derive(Debug, Clone)]
pub enum Stage {
    Cosine,
    Scores(ScoreSet),
    Snorm(Cohort),
    Neural(NeuralModel<f64>),
    Affine(LinearCalibration<f64>),
}

impl Stage {
    pub fn kind(&self) -> StageKind {
        match self {
            Stage::Cosine => StageKind::Cosine,
            Stage::Scores(_) => StageKind::Scores,
            Stage::Snorm(_) => StageKind::Snorm,
            Stage::Neural(m) => match m.kind() {
                CalibratorKind::Magneto => StageKind::Magneto,
                CalibratorKind::Sonet => StageKind::Sonet,
            },
            Stage::Affine(_) => StageKind::Affine,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    stages: Vec<Stage>,
    pub operating_point: OperatingPoint,
}

impl Pipeline {
    pub fn new(stages: Vec<Stage>) -> Result<Self> {
        check_shape(&stages.iter().map(Stage::kind).collect::<Vec<_>>())?;
        Ok(Self {
            stages,
            operating_point: OperatingPoint::DEFAULT,
        })
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn stage_names(&self) -> String {
        self.stages.iter().map(|s| s.kind().to_string()).collect::<Vec<_>>().join(",")
    }

    /// Applies stages `1..end` (everything after the source) to the score
    /// `s` of pair `(e, t)`.
    fn pair_through(&self, end: usize, e: &EmbeddingRecord, t: &EmbeddingRecord, mut s: f64) -> Result<f64> {
        for stage in &self.stages[1..end] {
            s = match stage {
                Stage::Neural(m) => m.score(e, t, s)?,
                Stage::Affine(c) => c.apply(s),
                Stage::Cosine | Stage::Scores(_) | Stage::Snorm(_) => unreachable!("checked shape"),
            };
        }
        Ok(s)
    }

    /// Cohort statistics of `u`, as enrollment (`u` vs cohort) or test
    /// (cohort vs `u`), using the stages before `end`.
    fn side_stats(&self, end: usize, cohort: &Cohort, u: &EmbeddingRecord, enroll_side: bool) -> Result<NormStats> {
        let scores = cohort
            .embeddings()
            .iter()
            .map(|c| {
                let s = cosine_score(&u.vector, &c.vector)?;
                if enroll_side {
                    self.pair_through(end, u, c, s)
                } else {
                    self.pair_through(end, c, u, s)
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        stats_from_scores(&scores, cohort.top_x())
    }

    /// Scores every trial through the pipeline.
    pub fn run(&self, embeddings: &EmbeddingSet, trials: &TrialList) -> Result<ScoreSet> {
        let pairs: Vec<(&EmbeddingRecord, &EmbeddingRecord)> = trials
            .iter()
            .enumerate()
            .map(|(i, t)| embeddings.resolve(i, t))
            .collect::<Result<_>>()?;
        let mut cur: Vec<f64> = match &self.stages[0] {
            Stage::Cosine => pairs
                .par_iter()
                .map(|(e, t)| cosine_score(&e.vector, &t.vector))
                .collect::<Result<_>>()?,
            Stage::Scores(s) => {
                s.check_aligned(trials)?;
                s.scores().to_vec()
            }
            _ => unreachable!("checked shape"),
        };
        let mut stage_name = self.stages[0].kind().to_string();
        for (k, stage) in self.stages.iter().enumerate().skip(1) {
            match stage {
                Stage::Neural(m) => {
                    cur = pairs
                        .par_iter()
                        .zip(&cur)
                        .map(|((e, t), &s)| m.score(e, t, s))
                        .collect::<Result<_>>()?;
                }
                Stage::Affine(c) => cur.iter_mut().for_each(|s| *s = c.apply(*s)),
                Stage::Snorm(cohort) => {
                    cohort.overlapping_ids(trials);
                    let mut wanted: Vec<(&EmbeddingRecord, bool)> = Vec::new();
                    let mut seen = std::collections::HashSet::new();
                    for (e, t) in &pairs {
                        for key in [(*e, true), (*t, false)] {
                            if seen.insert((key.0.id.as_str(), key.1)) {
                                wanted.push(key);
                            }
                        }
                    }
                    let stats: HashMap<(&str, bool), NormStats> = wanted
                        .par_iter()
                        .map(|&(u, side)| self.side_stats(k, cohort, u, side).map(|s| ((u.id.as_str(), side), s)))
                        .collect::<Result<_>>()?;
                    for ((e, t), s) in pairs.iter().zip(cur.iter_mut()) {
                        *s = normalize_score(*s, &stats[&(e.id.as_str(), true)], &stats[&(t.id.as_str(), false)]);
                    }
                }
                Stage::Cosine | Stage::Scores(_) => unreachable!("checked shape"),
            }
            stage_name = stage.kind().to_string();
        }
        ScoreSet::new(cur, stage_name)
    }
}

/// A named system configuration: `baseline`, `magneto`, `sonet`, each
/// optionally followed by `+dur`, `+snorm` and `+stdloss`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub neural: Option<CalibratorKind>,
    pub duration: bool,
    pub snorm: bool,
    /// The neural model must have been trained with the std penalty.
    pub stdloss: bool,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let neural = match parts.next().unwrap_or_default() {
            "baseline" => None,
            "magneto" => Some(CalibratorKind::Magneto),
            "sonet" => Some(CalibratorKind::Sonet),
            other => {
                return Err(Error::config(format!(
                    "unknown preset base {other:?} (baseline|magneto|sonet)"
                )))
            }
        };
        let mut p = Preset {
            neural,
            duration: false,
            snorm: false,
            stdloss: false,
        };
        for mod_ in parts {
            let flag = match mod_ {
                "dur" => &mut p.duration,
                "snorm" => &mut p.snorm,
                "stdloss" => &mut p.stdloss,
                other => return Err(Error::config(format!("unknown preset modifier {other:?} (dur|snorm|stdloss)"))),
            };
            if *flag {
                return Err(Error::config(format!("preset modifier {mod_:?} repeated")));
            }
            *flag = true;
        }
        if neural.is_none() && (p.duration || p.stdloss) {
            return Err(Error::config("+dur and +stdloss apply only to magneto and sonet presets"));
        }
        Ok(p)
    }
}

impl Preset {
    /// Stage order: `cosine,affine` and `cosine,snorm,affine` for the
    /// baseline; `cosine,<neural>` and `cosine,<neural>,snorm,affine` for
    /// neural systems (their final tuning lives in the model).
    pub fn stages(&self) -> Vec<StageKind> {
        use StageKind::*;
        let neural = self.neural.map(|k| match k {
            CalibratorKind::Magneto => Magneto,
            CalibratorKind::Sonet => Sonet,
        });
        match (neural, self.snorm) {
            (None, false) => vec![Cosine, Affine],
            (None, true) => vec![Cosine, Snorm, Affine],
            (Some(n), false) => vec![Cosine, n],
            (Some(n), true) => vec![Cosine, n, Snorm, Affine],
        }
    }

    /// Checks a neural model against the preset's train-time settings.
    pub fn check_model(&self, model: &NeuralModel<f64>) -> Result<()> {
        let Some(kind) = self.neural else {
            return Err(Error::config("baseline presets take no neural model"));
        };
        if model.kind() != kind {
            return Err(Error::config(format!(
                "preset expects a {kind} model but the model file holds {}",
                model.kind()
            )));
        }
        if model.use_duration() != self.duration {
            return Err(Error::config(format!(
                "preset {} duration input but the model was trained {} it",
                if self.duration { "uses" } else { "has no" },
                if model.use_duration() { "with" } else { "without" }
            )));
        }
        let trained_with_std = model.meta().std_lambda > 0.0;
        if trained_with_std != self.stdloss {
            return Err(Error::config(format!(
                "preset {} +stdloss but the model was trained with std_lambda = {}",
                if self.stdloss { "requires" } else { "omits" },
                model.meta().std_lambda
            )));
        }
        Ok(())
    }
}
