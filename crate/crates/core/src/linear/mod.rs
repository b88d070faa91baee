//! Affine score calibration `l = α·s + β`, trained by minimizing Cllr or
//! prior-weighted cross-entropy over a labeled development set.

mod loss;

pub use loss::{cllr, weighted_bce, LossKind, OperatingPoint};
pub(crate) use loss::loss_and_grad;
use loss::loss_curvature;

use crate::data::{LabeledScores, ScoreSet};
use crate::error::{Error, Result};
use crate::scalar::{pairwise_sum, Scalar};
use crate::text::{format_hex, parse_hex, KeyValues};

/// Upper bound on the learned scale. Reached only for (nearly) separable
/// training data.
pub const ALPHA_MAX: f64 = 1e4;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearCalibration<T = f64> {
    pub alpha: T,
    pub beta: T,
    pub loss: LossKind,
    pub trained_on: String,
}

impl<T: Scalar> LinearCalibration<T> {
    pub fn new(alpha: T, beta: T) -> Result<Self> {
        if !(alpha > T::zero() && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "affine calibration needs finite alpha > 0 and finite beta (got {alpha}, {beta})"
            )));
        }
        Ok(Self {
            alpha,
            beta,
            loss: LossKind::Cllr,
            trained_on: String::new(),
        })
    }

    pub fn identity() -> Self {
        Self::new(T::one(), T::zero()).expect("identity is valid")
    }

    #[inline]
    pub fn apply(&self, s: T) -> T {
        self.alpha * s + self.beta
    }

    pub(crate) fn write_kv(&self, kv: &mut KeyValues, prefix: &str) {
        kv.set_hex(format!("{prefix}alpha"), self.alpha);
        kv.set_hex(format!("{prefix}beta"), self.beta);
        match self.loss {
            LossKind::Cllr => kv.set(format!("{prefix}loss"), "cllr"),
            LossKind::WeightedBce(op) => {
                kv.set(format!("{prefix}loss"), "weighted_bce");
                kv.set(format!("{prefix}pi"), format_hex(op.pi()));
            }
        }
        kv.set(format!("{prefix}trained_on"), &self.trained_on);
    }

    pub(crate) fn read_kv(kv: &KeyValues, prefix: &str) -> Result<Self> {
        let mut cal = Self::new(kv.hex(&format!("{prefix}alpha"))?, kv.hex(&format!("{prefix}beta"))?)?;
        cal.loss = match kv.require(&format!("{prefix}loss"))? {
            "cllr" => LossKind::Cllr,
            "weighted_bce" => {
                let pi = parse_hex(kv.require(&format!("{prefix}pi"))?)?;
                LossKind::WeightedBce(OperatingPoint::new(pi)?)
            }
            other => return Err(Error::malformed(format!("{prefix}loss"), format!("unknown loss {other:?}"))),
        };
        cal.trained_on = kv.get(&format!("{prefix}trained_on")).unwrap_or("").to_string();
        Ok(cal)
    }

    /// Line-oriented model file with hexadecimal float parameters.
    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("calib.kind", "linear");
        self.write_kv(&mut kv, "calib.");
        kv.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        match kv.require("calib.kind")? {
            "linear" => Self::read_kv(&kv, "calib."),
            other => Err(Error::invalid(format!("expected a linear model, found kind {other:?}"))),
        }
    }
}

/// `l = α·s + β` elementwise.
pub fn apply_affine(scores: &ScoreSet, cal: &LinearCalibration<f64>) -> Result<ScoreSet> {
    ScoreSet::new(scores.scores().iter().map(|&s| cal.apply(s)).collect(), "affine")
}

#[derive(Debug, Clone, Copy)]
pub struct LinearTrainOptions {
    pub loss: LossKind,
    pub max_iter: usize,
    pub grad_tol: f64,
    pub alpha_max: f64,
}

impl Default for LinearTrainOptions {
    fn default() -> Self {
        Self {
            loss: LossKind::Cllr,
            max_iter: 10_000,
            grad_tol: 1e-9,
            alpha_max: ALPHA_MAX,
        }
    }
}

impl LinearTrainOptions {
    pub fn with_loss(loss: LossKind) -> Self {
        Self {
            loss,
            ..Self::default()
        }
    }
}

/// Result of [`train_linear`]. Non-convergence is reported here rather than
/// as an error; the best point found is always returned.
#[derive(Debug, Clone)]
pub struct LinearFit<T = f64> {
    pub calibration: LinearCalibration<T>,
    pub initial_loss: T,
    pub final_loss: T,
    pub grad_norm: T,
    pub iterations: usize,
    pub converged: bool,
    pub alpha_capped: bool,
}

struct Objective<T> {
    scores: Vec<T>,
    labels: Vec<bool>,
    kind: LossKind,
}

impl<T: Scalar> Objective<T> {
    /// Loss and gradient with respect to `(ln α, β)`.
    fn eval(&self, log_alpha: T, beta: T, buf: &mut Vec<T>, grad: &mut Vec<T>) -> (T, [T; 2]) {
        let alpha = log_alpha.exp();
        buf.clear();
        buf.extend(self.scores.iter().map(|&s| alpha * s + beta));
        grad.resize(buf.len(), T::zero());
        let loss = loss_and_grad(self.kind, buf, &self.labels, grad);
        let da: Vec<T> = grad.iter().zip(&self.scores).map(|(&g, &s)| g * alpha * s).collect();
        (loss, [pairwise_sum(&da), pairwise_sum(grad)])
    }

    /// Hessian with respect to `(ln α, β)` given the gradient `g` there.
    fn hessian(&self, log_alpha: T, beta: T, g: [T; 2], buf: &mut Vec<T>, curv: &mut Vec<T>) -> [T; 3] {
        let alpha = log_alpha.exp();
        buf.clear();
        buf.extend(self.scores.iter().map(|&s| alpha * s + beta));
        curv.resize(buf.len(), T::zero());
        loss_curvature(self.kind, buf, &self.labels, curv);
        let haa: Vec<T> = curv.iter().zip(&self.scores).map(|(&h, &s)| h * (alpha * s).powi(2)).collect();
        let hab: Vec<T> = curv.iter().zip(&self.scores).map(|(&h, &s)| h * alpha * s).collect();
        [pairwise_sum(&haa) + g[0], pairwise_sum(&hab), pairwise_sum(curv)]
    }
}

/// Newton direction for the 2×2 system, restricted to β when `beta_only`.
/// `None` when the Hessian is not safely positive definite.
fn newton_direction<T: Scalar>(h: [T; 3], g: [T; 2], beta_only: bool) -> Option<[T; 2]> {
    let [haa, hab, hbb] = h;
    let tiny = T::lit(1e-12);
    if !(hbb > T::zero()) {
        return None;
    }
    if beta_only {
        return Some([T::zero(), g[1] / hbb]);
    }
    let det = haa * hbb - hab * hab;
    if !(haa > T::zero() && det > tiny * haa * hbb) {
        return None;
    }
    let d = [(hbb * g[0] - hab * g[1]) / det, (haa * g[1] - hab * g[0]) / det];
    (d[0] * g[0] + d[1] * g[1] > T::zero()).then_some(d)
}

/// Fits `(α, β)` by projected descent with backtracking line search on
/// `(ln α, β)`, starting from `α = 1, β = 0`. Steps follow the Newton
/// direction where the Hessian is positive definite and the gradient
/// otherwise. Stops when the (projected) gradient norm falls below
/// `grad_tol` or after `max_iter` iterations.
///
/// Strictly separable data has no finite minimizer; there α is pinned to
/// `alpha_max` and only β is fitted, starting from the margin midpoint.
pub fn train_linear<T: Scalar>(scores: &LabeledScores<T>, opts: &LinearTrainOptions) -> LinearFit<T> {
    let mut all = scores.targets().to_vec();
    all.extend_from_slice(scores.nontargets());
    let mut labels = vec![true; scores.n_target()];
    labels.resize(all.len(), false);
    let obj = Objective {
        scores: all,
        labels,
        kind: opts.loss,
    };
    let log_alpha_max = T::lit(opts.alpha_max.ln());
    let tol = T::lit(opts.grad_tol);
    let mut buf = Vec::new();
    let mut gbuf = Vec::new();

    let min_t = scores.targets().iter().copied().fold(T::infinity(), T::min);
    let max_n = scores.nontargets().iter().copied().fold(T::neg_infinity(), T::max);
    let separable = min_t > max_n;

    let (initial_loss, _) = obj.eval(T::zero(), T::zero(), &mut buf, &mut gbuf);
    let (mut a, mut b) = (T::zero(), T::zero());
    if separable && opts.max_iter > 0 {
        a = log_alpha_max;
        b = -a.exp() * (min_t + max_n) * T::lit(0.5);
    }
    let (mut loss, mut g) = obj.eval(a, b, &mut buf, &mut gbuf);
    let project = |a: T, g: [T; 2]| -> [T; 2] {
        if separable || (a >= log_alpha_max && g[0] < T::zero()) {
            [T::zero(), g[1]]
        } else {
            g
        }
    };
    let norm = |g: [T; 2]| (g[0] * g[0] + g[1] * g[1]).sqrt();
    let mut pg = project(a, g);
    let mut gnorm = norm(pg);
    let mut step = T::one();
    let mut iterations = 0;
    let armijo = T::lit(1e-4);
    let min_step = T::lit(1e-30);
    let resolution = T::lit(1e-14);

    let mut cbuf = Vec::new();
    while iterations < opts.max_iter && gnorm > tol {
        iterations += 1;
        let at_cap = separable || (a >= log_alpha_max && g[0] < T::zero());
        let newton = newton_direction(obj.hessian(a, b, g, &mut buf, &mut cbuf), g, at_cap);
        let (dir, mut t) = match newton {
            Some(d) => (d, T::one()),
            None => {
                step = (step * T::lit(2.0)).min(T::lit(1e6));
                (pg, step)
            }
        };
        let mut accepted = false;
        while t > min_step {
            let na = (a - t * dir[0]).min(log_alpha_max);
            let nb = b - t * dir[1];
            let (nl, ng) = obj.eval(na, nb, &mut buf, &mut gbuf);
            let decrease = pg[0] * (a - na) + pg[1] * (b - nb);
            let sufficient = nl <= loss - armijo * decrease;
            // Below the loss's rounding level the Armijo test is noise; fall
            // back to requiring a smaller gradient.
            let unresolved = decrease <= resolution * loss.abs().max(T::min_positive_value())
                && nl <= loss + resolution * loss.abs()
                && norm(project(na, ng)) < gnorm;
            if nl.is_finite() && (sufficient || unresolved) {
                a = na;
                b = nb;
                loss = nl;
                g = ng;
                accepted = true;
                break;
            }
            t = t * T::lit(0.5);
        }
        if newton.is_none() {
            step = t;
        }
        pg = project(a, g);
        gnorm = norm(pg);
        if !accepted {
            break;
        }
    }

    let converged = gnorm <= tol;
    let alpha_capped = a >= log_alpha_max;
    if alpha_capped {
        log::warn!(
            "linear calibration hit alpha_max = {}; training scores look separable",
            opts.alpha_max
        );
    }
    if !converged {
        log::warn!("linear calibration stopped after {iterations} iterations with gradient norm {gnorm}");
    }
    let mut calibration = LinearCalibration::new(a.exp(), b).expect("finite iterate");
    calibration.loss = opts.loss;
    LinearFit {
        calibration,
        initial_loss,
        final_loss: loss,
        grad_norm: gnorm,
        iterations,
        converged,
        alpha_capped,
    }
}
