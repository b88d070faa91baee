//! Detection metrics: DET sweep, EER, normalized DCF (minimum and actual)
//! and Cllr.
//!
//! A trial is accepted as target when `score >= threshold`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::LabeledScores;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::text::{format_sig, parse_decimal};

pub use crate::linear::{cllr, OperatingPoint};

/// One threshold of the sweep with its exact error counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint<T = f64> {
    pub threshold: T,
    pub n_miss: usize,
    pub n_fa: usize,
    pub p_miss: f64,
    pub p_fa: f64,
}

impl<T: Scalar> DetPoint<T> {
    fn from_counts(threshold: T, n_miss: usize, n_fa: usize, n_t: usize, n_n: usize) -> Self {
        Self {
            threshold,
            n_miss,
            n_fa,
            p_miss: n_miss as f64 / n_t as f64,
            p_fa: n_fa as f64 / n_n as f64,
        }
    }
}

fn sorted<T: Scalar>(xs: &[T]) -> Vec<T> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    v
}

/// One point per distinct score value, in increasing threshold order, plus
/// sentinels at −∞ (accept everything) and +∞ (reject everything).
pub fn det_sweep<T: Scalar>(scores: &LabeledScores<T>) -> Vec<DetPoint<T>> {
    let tgt = sorted(scores.targets());
    let non = sorted(scores.nontargets());
    let (n_t, n_n) = (tgt.len(), non.len());
    let mut points = Vec::with_capacity(n_t + n_n + 2);
    points.push(DetPoint::from_counts(T::neg_infinity(), 0, n_n, n_t, n_n));
    // below_t / below_n: number of scores strictly below the current value.
    let (mut below_t, mut below_n) = (0usize, 0usize);
    while below_t < n_t || below_n < n_n {
        let v = match (tgt.get(below_t), non.get(below_n)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        points.push(DetPoint::from_counts(v, below_t, n_n - below_n, n_t, n_n));
        while below_t < n_t && tgt[below_t] == v {
            below_t += 1;
        }
        while below_n < n_n && non[below_n] == v {
            below_n += 1;
        }
    }
    points.push(DetPoint::from_counts(T::infinity(), n_t, 0, n_t, n_n));
    points
}

/// Equal error rate from a sweep: linear interpolation on the segment where
/// `p_miss − p_fa` changes sign.
pub fn eer_from_sweep<T: Scalar>(points: &[DetPoint<T>]) -> f64 {
    let k = points
        .iter()
        .position(|p| p.p_miss >= p.p_fa)
        .expect("the +inf sentinel has p_miss >= p_fa");
    let hi = &points[k];
    let d1 = hi.p_miss - hi.p_fa;
    if d1 == 0.0 || k == 0 {
        return hi.p_miss;
    }
    let lo = &points[k - 1];
    let d0 = lo.p_miss - lo.p_fa;
    let t = d0 / (d0 - d1);
    lo.p_miss + t * (hi.p_miss - lo.p_miss)
}

pub fn eer<T: Scalar>(scores: &LabeledScores<T>) -> f64 {
    eer_from_sweep(&det_sweep(scores))
}

/// Normalized detection cost for the given error counts.
pub fn dcf_from_counts(op: OperatingPoint, n_miss: usize, n_t: usize, n_fa: usize, n_n: usize) -> f64 {
    let pi = op.pi();
    let p_miss = n_miss as f64 / n_t as f64;
    let p_fa = n_fa as f64 / n_n as f64;
    (pi * p_miss + (1.0 - pi) * p_fa) / pi.min(1.0 - pi)
}

/// `[π·P_miss(θ) + (1 − π)·P_fa(θ)] / min(π, 1 − π)` with unit costs.
pub fn dcf<T: Scalar>(scores: &LabeledScores<T>, op: OperatingPoint, threshold: T) -> f64 {
    let n_miss = scores.targets().iter().filter(|&&s| s < threshold).count();
    let n_fa = scores.nontargets().iter().filter(|&&s| s >= threshold).count();
    dcf_from_counts(op, n_miss, scores.n_target(), n_fa, scores.n_nontarget())
}

pub fn min_dcf_from_sweep<T: Scalar>(points: &[DetPoint<T>], op: OperatingPoint, n_t: usize, n_n: usize) -> f64 {
    points
        .iter()
        .map(|p| dcf_from_counts(op, p.n_miss, n_t, p.n_fa, n_n))
        .fold(f64::INFINITY, f64::min)
}

pub fn min_dcf<T: Scalar>(scores: &LabeledScores<T>, op: OperatingPoint) -> f64 {
    min_dcf_from_sweep(&det_sweep(scores), op, scores.n_target(), scores.n_nontarget())
}

/// DCF at the Bayes threshold `ln((1 − π)/π)`, reading scores as LLRs.
pub fn act_dcf<T: Scalar>(scores: &LabeledScores<T>, op: OperatingPoint) -> f64 {
    dcf(scores, op, T::lit(op.bayes_threshold()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub eer: f64,
    pub min_dcf: f64,
    pub act_dcf: f64,
    pub cllr: f64,
    pub n_target: usize,
    pub n_nontarget: usize,
    pub pi: f64,
}

impl MetricsReport {
    /// EER above one half means the scores are most likely inverted.
    pub fn polarity_warning(&self) -> bool {
        self.eer > 0.5
    }

    /// `key<TAB>value` lines.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "eer\t{}", format_sig(self.eer, 9));
        let _ = writeln!(out, "min_dcf\t{}", format_sig(self.min_dcf, 9));
        let _ = writeln!(out, "act_dcf\t{}", format_sig(self.act_dcf, 9));
        let _ = writeln!(out, "cllr\t{}", format_sig(self.cllr, 9));
        let _ = writeln!(out, "n_target\t{}", self.n_target);
        let _ = writeln!(out, "n_nontarget\t{}", self.n_nontarget);
        let _ = writeln!(out, "p_target\t{}", format_sig(self.pi, 9));
        if self.polarity_warning() {
            let _ = writeln!(out, "warning\tEER above 0.5; scores may have inverted polarity");
        }
        out
    }

    /// Human-readable block.
    pub fn to_block(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "trials      {} target / {} nontarget", self.n_target, self.n_nontarget);
        let _ = writeln!(out, "EER         {:.3} %", 100.0 * self.eer);
        let _ = writeln!(out, "minDCF      {:.4}  (P_tar = {})", self.min_dcf, self.pi);
        let _ = writeln!(out, "actDCF      {:.4}", self.act_dcf);
        let _ = writeln!(out, "Cllr        {:.4} bits", self.cllr);
        if self.polarity_warning() {
            let _ = writeln!(out, "warning     EER above 50 %: scores may have inverted polarity");
        }
        out
    }
}

pub fn report<T: Scalar>(scores: &LabeledScores<T>, op: OperatingPoint) -> MetricsReport {
    let sweep = det_sweep(scores);
    let r = MetricsReport {
        eer: eer_from_sweep(&sweep),
        min_dcf: min_dcf_from_sweep(&sweep, op, scores.n_target(), scores.n_nontarget()),
        act_dcf: act_dcf(scores, op),
        cllr: cllr(scores).as_f64(),
        n_target: scores.n_target(),
        n_nontarget: scores.n_nontarget(),
        pi: op.pi(),
    };
    if r.polarity_warning() {
        log::warn!("EER {:.3} exceeds 0.5; check score polarity", r.eer);
    }
    r
}

/// `threshold<TAB>p_miss<TAB>p_fa` with 9 significant digits.
pub fn render_det<T: Scalar>(points: &[DetPoint<T>]) -> String {
    let mut out = String::with_capacity(points.len() * 40);
    for p in points {
        let _ = writeln!(
            out,
            "{}\t{}\t{}",
            format_sig(p.threshold.as_f64(), 9),
            format_sig(p.p_miss, 9),
            format_sig(p.p_fa, 9)
        );
    }
    out
}

pub fn emit_det<T: Scalar>(points: &[DetPoint<T>], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_det(points))?;
    Ok(())
}

/// Reads a DET table back as `(threshold, p_miss, p_fa)` rows.
pub fn read_det(path: impl AsRef<Path>) -> Result<Vec<(f64, f64, f64)>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<Option<f64>> = line.split('\t').map(parse_decimal).collect();
        match cols.as_slice() {
            [Some(t), Some(m), Some(f)] => rows.push((*t, *m, *f)),
            _ => return Err(Error::malformed(format!("line {}", i + 1), "expected threshold, p_miss, p_fa")),
        }
    }
    Ok(rows)
}
