//! Calibration objectives: prior-weighted binary cross-entropy and Cllr.

use std::fmt;
use std::str::FromStr;

use crate::data::LabeledScores;
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, sigmoid, softplus, Scalar};

/// Prior probability of a target trial, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint(f64);

impl OperatingPoint {
    /// The evaluation operating point used throughout: P_tar = 0.05.
    pub const DEFAULT: OperatingPoint = OperatingPoint(0.05);

    pub fn new(pi: f64) -> Result<Self> {
        if pi > 0.0 && pi < 1.0 {
            Ok(Self(pi))
        } else {
            Err(Error::config(format!("operating point must lie in (0, 1), got {pi}")))
        }
    }

    pub fn pi(self) -> f64 {
        self.0
    }

    /// `ln(π / (1 − π))`.
    pub fn logit(self) -> f64 {
        (self.0 / (1.0 - self.0)).ln()
    }

    /// Bayes decision threshold for LLR scores, `ln((1 − π) / π)`.
    pub fn bayes_threshold(self) -> f64 {
        ((1.0 - self.0) / self.0).ln()
    }
}

impl Default for OperatingPoint {
    fn default() -> Self {
        Self::DEFAULT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum LossKind {
    #[default]
    Cllr,
    WeightedBce(OperatingPoint),
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossKind::Cllr => f.write_str("cllr"),
            LossKind::WeightedBce(p) => write!(f, "weighted_bce(pi={})", p.pi()),
        }
    }
}

impl FromStr for LossKind {
    type Err = Error;
    /// `cllr`, `weighted_bce` (π = 0.05) or `weighted_bce:<pi>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "cllr" => Ok(LossKind::Cllr),
            None if s == "weighted_bce" || s == "wbce" => Ok(LossKind::WeightedBce(OperatingPoint::DEFAULT)),
            Some(("weighted_bce" | "wbce", pi)) => {
                let pi: f64 = pi
                    .parse()
                    .map_err(|_| Error::config(format!("bad prior in loss {s:?}")))?;
                Ok(LossKind::WeightedBce(OperatingPoint::new(pi)?))
            }
            _ => Err(Error::config(format!(
                "unknown loss {s:?} (cllr | weighted_bce[:pi])"
            ))),
        }
    }
}

impl LossKind {
    pub fn evaluate<T: Scalar>(self, scores: &LabeledScores<T>) -> T {
        match self {
            LossKind::Cllr => cllr(scores),
            LossKind::WeightedBce(p) => weighted_bce(scores, p),
        }
    }
}

fn mean_softplus<T: Scalar>(xs: &[T], sign: T, shift: T) -> T {
    let terms: Vec<T> = xs.iter().map(|&x| softplus(sign * (x + shift))).collect();
    pairwise_sum(&terms) / T::from_count(xs.len())
}

/// Prior-weighted binary cross-entropy (natural log) of scores read as LLRs:
/// `π·mean_T log(1+e^{−p}) + (1−π)·mean_N log(1+e^{p})`, `p = l + logit π`.
pub fn weighted_bce<T: Scalar>(scores: &LabeledScores<T>, op: OperatingPoint) -> T {
    let pi = T::lit(op.pi());
    let shift = T::lit(op.logit());
    pi * mean_softplus(scores.targets(), -T::one(), shift)
        + (T::one() - pi) * mean_softplus(scores.nontargets(), T::one(), shift)
}

/// Cost of the log-likelihood ratio, in bits. 1 bit for uninformative
/// (all-zero) scores.
pub fn cllr<T: Scalar>(scores: &LabeledScores<T>) -> T {
    let ln2 = T::lit(std::f64::consts::LN_2);
    (mean_softplus(scores.targets(), -T::one(), T::zero())
        + mean_softplus(scores.nontargets(), T::one(), T::zero()))
        / (T::lit(2.0) * ln2)
}

/// Per-sample weights for targets and nontargets, and the score shift.
fn class_weights<T: Scalar>(kind: LossKind, is_target: &[bool]) -> (T, T, T) {
    let n_t = is_target.iter().filter(|&&t| t).count();
    let n_n = is_target.len() - n_t;
    let (w_t, w_n, shift) = match kind {
        LossKind::Cllr => {
            let norm = 1.0 / (2.0 * std::f64::consts::LN_2);
            (norm, norm, 0.0)
        }
        LossKind::WeightedBce(op) => (op.pi(), 1.0 - op.pi(), op.logit()),
    };
    let w_t = if n_t > 0 { T::lit(w_t) / T::from_count(n_t) } else { T::zero() };
    let w_n = if n_n > 0 { T::lit(w_n) / T::from_count(n_n) } else { T::zero() };
    (w_t, w_n, T::lit(shift))
}

/// Loss of a (possibly single-class) batch together with `∂loss/∂score`
/// written into `grad`. A class missing from the batch contributes nothing.
pub(crate) fn loss_and_grad<T: Scalar>(kind: LossKind, scores: &[T], is_target: &[bool], grad: &mut [T]) -> T {
    debug_assert_eq!(scores.len(), is_target.len());
    debug_assert_eq!(scores.len(), grad.len());
    let (w_t, w_n, shift) = class_weights::<T>(kind, is_target);
    let mut terms = Vec::with_capacity(scores.len());
    for ((&s, &tgt), g) in scores.iter().zip(is_target).zip(grad.iter_mut()) {
        let p = s + shift;
        if tgt {
            terms.push(w_t * softplus(-p));
            *g = -w_t * sigmoid(-p);
        } else {
            terms.push(w_n * softplus(p));
            *g = w_n * sigmoid(p);
        }
    }
    pairwise_sum(&terms)
}

/// `∂²loss/∂score²` per sample.
pub(crate) fn loss_curvature<T: Scalar>(kind: LossKind, scores: &[T], is_target: &[bool], curv: &mut [T]) {
    let (w_t, w_n, shift) = class_weights::<T>(kind, is_target);
    for ((&s, &tgt), h) in scores.iter().zip(is_target).zip(curv.iter_mut()) {
        let q = sigmoid(s + shift);
        *h = if tgt { w_t } else { w_n } * q * (T::one() - q);
    }
}
