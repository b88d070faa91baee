use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{trial_features, utterance_features, CalibratorKind, MagnetoModel, NeuralModel, SonetModel, TrainingMeta};
use crate::data::{EmbeddingSet, LabeledScores, ScoreSet, TrialList};
use crate::error::{Error, Result};
use crate::linear::{loss_and_grad, train_linear, LinearFit, LinearTrainOptions, LossKind};
use crate::nn::{Adam, AdamConfig, Architecture, ForwardTrace, Head, Network, Standardizer, DEFAULT_HIDDEN};
use crate::scalar::{pairwise_sum, Scalar};

/// λ used when the std penalty is switched on without an explicit value.
pub const DEFAULT_STD_LAMBDA: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub use_duration: bool,
    pub std_loss_lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Every minibatch comes from a single domain; domains take turns.
    pub domain_batching: bool,
    /// Equal target and nontarget counts per minibatch.
    pub balanced_sampling: bool,
    pub hidden: Vec<usize>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Cllr,
            use_duration: false,
            std_loss_lambda: 0.0,
            batch_size: 512,
            epochs: 20,
            seed: 0,
            domain_batching: false,
            balanced_sampling: true,
            hidden: DEFAULT_HIDDEN.to_vec(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.std_loss_lambda >= 0.0 && self.std_loss_lambda.is_finite()) {
            return Err(Error::config(format!("std_loss_lambda must be >= 0, got {}", self.std_loss_lambda)));
        }
        if self.std_loss_lambda > 0.0 && !self.domain_batching {
            return Err(Error::config("std_loss_lambda > 0 requires domain_batching"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if !(self.adam.step_size > 0.0) {
            return Err(Error::config("learning rate must be positive"));
        }
        Architecture::new(1, &self.hidden, Head::Linear).map(|_| ())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Mean minibatch objective (base loss plus λ·penalty) during the epoch.
    pub objective: f64,
    /// Base loss over the whole training set after the epoch.
    pub train_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T = f64> {
    pub model: NeuralModel<T>,
    /// Base loss over the training set before the first update.
    pub initial_loss: f64,
    pub history: Vec<EpochStats>,
}

/// Population standard deviation of the scales plus that of the offsets.
/// Zero for batches smaller than two.
pub fn std_penalty<T: Scalar>(scales: &[T], offsets: &[T]) -> T {
    std_penalty_grad(scales).0 + std_penalty_grad(offsets).0
}

/// Population std of `xs` and its gradient. The gradient is taken as zero
/// where the std vanishes.
pub(crate) fn std_penalty_grad<T: Scalar>(xs: &[T]) -> (T, Vec<T>) {
    let n = xs.len();
    if n < 2 {
        return (T::zero(), vec![T::zero(); n]);
    }
    let nf = T::from_count(n);
    let mean = pairwise_sum(xs) / nf;
    let dev: Vec<T> = xs.iter().map(|&x| x - mean).collect();
    let sq: Vec<T> = dev.iter().map(|&d| d * d).collect();
    let sd = (pairwise_sum(&sq) / nf).sqrt();
    if !(sd > T::zero()) {
        return (T::zero(), vec![T::zero(); n]);
    }
    (sd, dev.into_iter().map(|d| d / (nf * sd)).collect())
}

/// Network inputs for a trial set, laid out per calibrator kind.
pub(crate) enum Inputs<T> {
    /// Distinct utterance features and, per trial, (enroll, test) rows.
    Utterances { rows: Vec<Vec<T>>, pairs: Vec<(usize, usize)> },
    Trials(Vec<Vec<T>>),
}

pub(crate) struct TrainData<T> {
    inputs: Inputs<T>,
    raw: Vec<T>,
    is_target: Vec<bool>,
}

impl<T: Scalar> TrainData<T> {
    fn build(
        kind: CalibratorKind,
        embeddings: &EmbeddingSet,
        trials: &TrialList,
        raw: &ScoreSet,
        use_duration: bool,
    ) -> Result<Self> {
        raw.check_aligned(trials)?;
        let is_target = trials.labels()?;
        let inputs = match kind {
            CalibratorKind::Magneto => {
                let mut index = std::collections::HashMap::new();
                let mut rows = Vec::new();
                let mut pairs = Vec::with_capacity(trials.len());
                let mut row_of = |rec: &crate::data::EmbeddingRecord| -> Result<usize> {
                    if let Some(&r) = index.get(rec.id.as_str()) {
                        return Ok(r);
                    }
                    rows.push(utterance_features(rec, use_duration)?);
                    index.insert(rec.id.clone(), rows.len() - 1);
                    Ok(rows.len() - 1)
                };
                for (i, trial) in trials.iter().enumerate() {
                    let (e, t) = embeddings.resolve(i, trial)?;
                    pairs.push((row_of(e)?, row_of(t)?));
                }
                Inputs::Utterances { rows, pairs }
            }
            CalibratorKind::Sonet => {
                let mut rows = Vec::with_capacity(trials.len());
                for (i, trial) in trials.iter().enumerate() {
                    let (e, t) = embeddings.resolve(i, trial)?;
                    rows.push(trial_features(e, t, use_duration)?);
                }
                Inputs::Trials(rows)
            }
        };
        Ok(Self {
            inputs,
            raw: raw.scores().iter().map(|&s| T::lit(s)).collect(),
            is_target,
        })
    }

    fn rows(&self) -> &[Vec<T>] {
        match &self.inputs {
            Inputs::Utterances { rows, .. } => rows,
            Inputs::Trials(rows) => rows,
        }
    }

    fn input_dim(&self) -> usize {
        self.rows().first().map_or(0, Vec::len)
    }
}

fn fresh_model<T: Scalar>(
    kind: CalibratorKind,
    input_dim: usize,
    standardizer: Standardizer<T>,
    config: &TrainConfig,
) -> Result<NeuralModel<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let meta = TrainingMeta {
        loss: config.loss,
        std_lambda: config.std_loss_lambda,
    };
    let mut net = |head| -> Result<Network<T>> {
        let mut n = Network::init(Architecture::new(input_dim, &config.hidden, head)?, &mut rng);
        n.set_standardizer(standardizer.clone())?;
        Ok(n)
    };
    Ok(match kind {
        CalibratorKind::Magneto => NeuralModel::Magneto(MagnetoModel {
            magnitude_net: net(Head::Softplus)?,
            use_duration: config.use_duration,
            final_tune: None,
            meta,
        }),
        CalibratorKind::Sonet => {
            let scale_net = net(Head::Softplus)?;
            let offset_net = net(Head::Linear)?;
            NeuralModel::Sonet(SonetModel {
                scale_net,
                offset_net,
                use_duration: config.use_duration,
                final_tune: None,
                meta,
            })
        }
    })
}

fn check_training_set(trials: &TrialList, config: &TrainConfig) -> Result<()> {
    config.validate()?;
    if trials.n_unlabeled() > 0 {
        return Err(Error::Unlabeled {
            count: trials.n_unlabeled(),
        });
    }
    if trials.n_target() == 0 || trials.n_nontarget() == 0 {
        return Err(Error::MissingClass {
            targets: trials.n_target(),
            nontargets: trials.n_nontarget(),
        });
    }
    if config.domain_batching {
        let missing = trials.iter().filter(|t| t.domain.is_none()).count();
        if missing > 0 {
            return Err(Error::config(format!(
                "domain batching needs a domain on every training trial; {missing} have none"
            )));
        }
    }
    Ok(())
}

/// The model training would start from: seeded initialization with input
/// standardization fitted on the training set.
pub fn init_calibrator<T: Scalar>(
    kind: CalibratorKind,
    embeddings: &EmbeddingSet,
    trials: &TrialList,
    raw: &ScoreSet,
    config: &TrainConfig,
) -> Result<NeuralModel<T>> {
    check_training_set(trials, config)?;
    let data = TrainData::build(kind, embeddings, trials, raw, config.use_duration)?;
    fresh_model(kind, data.input_dim(), Standardizer::fit(data.rows())?, config)
}

/// Per-trial outputs and the information needed to backpropagate them.
struct Evaluated<T> {
    scores: Vec<T>,
    /// SONet: (α, β, trace) per trial. MagNetO: per trial (m_e, m_t, trace_e, trace_t).
    detail: Detail<T>,
}

enum Detail<T> {
    Magneto(Vec<(T, T, ForwardTrace<T>, ForwardTrace<T>)>),
    Sonet(Vec<(T, T, ForwardTrace<T>, ForwardTrace<T>)>),
}

fn evaluate<T: Scalar>(model: &NeuralModel<T>, data: &TrainData<T>, idx: &[usize]) -> Result<Evaluated<T>> {
    let mut scores = Vec::with_capacity(idx.len());
    let detail = match (model, &data.inputs) {
        (NeuralModel::Magneto(m), Inputs::Utterances { rows, pairs }) => {
            let mut d = Vec::with_capacity(idx.len());
            for &i in idx {
                let (re, rt) = pairs[i];
                let (me, te) = m.magnitude_net.forward(&rows[re])?;
                let (mt, tt) = m.magnitude_net.forward(&rows[rt])?;
                scores.push(me * mt * data.raw[i]);
                d.push((me, mt, te, tt));
            }
            Detail::Magneto(d)
        }
        (NeuralModel::Sonet(m), Inputs::Trials(rows)) => {
            let mut d = Vec::with_capacity(idx.len());
            for &i in idx {
                let (a, ta) = m.scale_net.forward(&rows[i])?;
                let (b, tb) = m.offset_net.forward(&rows[i])?;
                scores.push(a * data.raw[i] + b);
                d.push((a, b, ta, tb));
            }
            Detail::Sonet(d)
        }
        _ => unreachable!("training data built for a different calibrator"),
    };
    Ok(Evaluated { scores, detail })
}

/// Gradient buffers, one per network in model order.
fn grad_buffers<T: Scalar>(model: &NeuralModel<T>) -> Vec<Vec<T>> {
    match model {
        NeuralModel::Magneto(m) => vec![m.magnitude_net.zero_grads()],
        NeuralModel::Sonet(m) => vec![m.scale_net.zero_grads(), m.offset_net.zero_grads()],
    }
}

/// Minibatch objective `loss + λ·penalty`; accumulates its gradient into
/// `grads` (laid out as by `grad_buffers`).
pub(crate) fn batch_objective<T: Scalar>(
    model: &NeuralModel<T>,
    data: &TrainData<T>,
    idx: &[usize],
    loss: LossKind,
    lambda: T,
    grads: &mut [Vec<T>],
) -> Result<T> {
    let ev = evaluate(model, data, idx)?;
    let labels: Vec<bool> = idx.iter().map(|&i| data.is_target[i]).collect();
    let mut dl = vec![T::zero(); idx.len()];
    let mut obj = loss_and_grad(loss, &ev.scores, &labels, &mut dl);
    match (model, ev.detail) {
        (NeuralModel::Magneto(m), Detail::Magneto(d)) => {
            let factors: Vec<T> = d.iter().map(|(me, mt, ..)| *me * *mt).collect();
            let (pen, dpen) = std_penalty_grad(&factors);
            obj += lambda * pen;
            for (k, (me, mt, te, tt)) in d.iter().enumerate() {
                let dc = dl[k] * data.raw[idx[k]] + lambda * dpen[k];
                m.magnitude_net.backward(te, dc * *mt, &mut grads[0]);
                m.magnitude_net.backward(tt, dc * *me, &mut grads[0]);
            }
        }
        (NeuralModel::Sonet(m), Detail::Sonet(d)) => {
            let alphas: Vec<T> = d.iter().map(|x| x.0).collect();
            let betas: Vec<T> = d.iter().map(|x| x.1).collect();
            let (pa, da) = std_penalty_grad(&alphas);
            let (pb, db) = std_penalty_grad(&betas);
            obj += lambda * (pa + pb);
            let (gs, go) = grads.split_at_mut(1);
            for (k, (_, _, ta, tb)) in d.iter().enumerate() {
                m.scale_net.backward(ta, dl[k] * data.raw[idx[k]] + lambda * da[k], &mut gs[0]);
                m.offset_net.backward(tb, dl[k] + lambda * db[k], &mut go[0]);
            }
        }
        _ => unreachable!(),
    }
    Ok(obj)
}

fn full_loss<T: Scalar>(model: &NeuralModel<T>, data: &TrainData<T>, loss: LossKind) -> Result<f64> {
    let all: Vec<usize> = (0..data.raw.len()).collect();
    let ev = evaluate(model, data, &all)?;
    Ok(loss.evaluate(&LabeledScores::from_flags(&ev.scores, &data.is_target)?).as_f64())
}

/// Trial-index groups that minibatches are drawn from: one per domain in
/// order of first appearance, or a single group.
fn batch_groups(trials: &TrialList, domain_batching: bool) -> Vec<Vec<usize>> {
    if !domain_batching {
        return vec![(0..trials.len()).collect()];
    }
    trials.domains().iter().map(|d| trials.indices_in_domain(d)).collect()
}

fn group_batches(
    group: &[usize],
    is_target: &[bool],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    if !config.balanced_sampling {
        let mut order = group.to_vec();
        order.shuffle(rng);
        return order.chunks(config.batch_size).map(<[usize]>::to_vec).collect();
    }
    let (mut tgt, mut non): (Vec<usize>, Vec<usize>) = group.iter().partition(|&&i| is_target[i]);
    tgt.shuffle(rng);
    non.shuffle(rng);
    let half = (config.batch_size / 2).max(1);
    let n_batches = tgt.len().max(non.len()).div_ceil(half);
    // the smaller class is cycled so each batch stays balanced
    let take = |pool: &[usize], b: usize| -> Vec<usize> {
        let k = half.min(pool.len());
        (0..k).map(|j| pool[(b * half + j) % pool.len()]).collect()
    };
    (0..n_batches)
        .map(|b| {
            let mut batch = take(&tgt, b);
            batch.extend(take(&non, b));
            batch
        })
        .collect()
}

fn epoch_batches(groups: &[Vec<usize>], is_target: &[bool], config: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let per_group: Vec<Vec<Vec<usize>>> = groups.iter().map(|g| group_batches(g, is_target, config, rng)).collect();
    let rounds = per_group.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::new();
    for r in 0..rounds {
        for g in &per_group {
            if let Some(b) = g.get(r) {
                out.push(b.clone());
            }
        }
    }
    out
}

/// Trains a MagNetO or SONet calibrator with Adam on seeded minibatches.
/// `raw` holds the score each trial is calibrated from (cosine for MagNetO).
pub fn train_calibrator<T: Scalar>(
    kind: CalibratorKind,
    embeddings: &EmbeddingSet,
    trials: &TrialList,
    raw: &ScoreSet,
    config: &TrainConfig,
) -> Result<TrainingOutcome<T>> {
    check_training_set(trials, config)?;
    let data = TrainData::build(kind, embeddings, trials, raw, config.use_duration)?;
    let mut model = fresh_model(kind, data.input_dim(), Standardizer::fit(data.rows())?, config)?;
    let initial_loss = full_loss(&model, &data, config.loss)?;
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(TrainingOutcome {
            model,
            initial_loss,
            history,
        });
    }

    let groups = batch_groups(trials, config.domain_batching);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut optimizers: Vec<Adam<T>> = grad_buffers(&model)
        .iter()
        .map(|g| Adam::new(g.len(), config.adam))
        .collect();
    let lambda = T::lit(config.std_loss_lambda);
    for epoch in 0..config.epochs {
        let batches = epoch_batches(&groups, &data.is_target, config, &mut rng);
        let mut objectives = Vec::with_capacity(batches.len());
        for batch in &batches {
            let mut grads = grad_buffers(&model);
            let obj = batch_objective(&model, &data, batch, config.loss, lambda, &mut grads)?;
            objectives.push(obj.as_f64());
            match &mut model {
                NeuralModel::Magneto(m) => optimizers[0].step(m.magnitude_net.params_mut(), &grads[0]),
                NeuralModel::Sonet(m) => {
                    optimizers[0].step(m.scale_net.params_mut(), &grads[0]);
                    optimizers[1].step(m.offset_net.params_mut(), &grads[1]);
                }
            }
        }
        let stats = EpochStats {
            objective: pairwise_sum(&objectives) / objectives.len().max(1) as f64,
            train_loss: full_loss(&model, &data, config.loss)?,
        };
        log::debug!(
            "epoch {}: objective {:.6} train loss {:.6}",
            epoch + 1,
            stats.objective,
            stats.train_loss
        );
        history.push(stats);
    }
    Ok(TrainingOutcome {
        model,
        initial_loss,
        history,
    })
}

/// Fits the final affine calibration on the model's pre-tune outputs for a
/// labeled development set and stores it in the model.
pub fn final_tune<T: Scalar>(
    model: &mut NeuralModel<T>,
    embeddings: &EmbeddingSet,
    dev_trials: &TrialList,
    dev_raw: &ScoreSet,
    opts: &LinearTrainOptions,
) -> Result<LinearFit<T>> {
    if dev_trials.is_empty() {
        return Err(Error::invalid("final tuning needs a non-empty development set"));
    }
    dev_raw.check_aligned(dev_trials)?;
    let labels = dev_trials.labels()?;
    let mut outputs = Vec::with_capacity(dev_trials.len());
    for (i, trial) in dev_trials.iter().enumerate() {
        let (e, t) = embeddings.resolve(i, trial)?;
        outputs.push(model.score_untuned(e, t, T::lit(dev_raw.scores()[i]))?);
    }
    let fit = train_linear(&LabeledScores::from_flags(&outputs, &labels)?, opts);
    let mut cal = fit.calibration.clone();
    cal.trained_on = "dev".into();
    model.set_final_tune(Some(cal));
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{EmbeddingRecord, Label, Trial};
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    /// Two-domain toy world: vectors carry a domain-dependent offset in the
    /// first coordinate; nontarget scores in domain "b" are shifted up.
    fn toy(n_per_class: usize, seed: u64) -> (EmbeddingSet, TrialList, ScoreSet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut set = EmbeddingSet::new(3);
        let mut trials = Vec::new();
        let mut raw = Vec::new();
        let mut k = 0;
        for dom in ["a", "b"] {
            let shift = if dom == "a" { -2.0 } else { 2.0 };
            for label in [Label::Target, Label::Nontarget] {
                for _ in 0..n_per_class {
                    for side in ["e", "t"] {
                        let v = vec![shift + noise.sample(&mut rng), noise.sample(&mut rng), noise.sample(&mut rng)];
                        let dur = rng.random_range(2.0..60.0);
                        set.push(EmbeddingRecord::new(format!("{side}{k}"), v, dur).with_domain(dom)).unwrap();
                    }
                    let mu = match (label, dom) {
                        (Label::Target, _) => 0.6,
                        (_, "a") => 0.0,
                        _ => 0.2,
                    };
                    raw.push(mu + 0.15 * noise.sample(&mut rng));
                    trials.push(Trial::new(format!("e{k}"), format!("t{k}"), label).with_domain(dom));
                    k += 1;
                }
            }
        }
        (set, TrialList::from_trials(trials).unwrap(), ScoreSet::new(raw, "cosine").unwrap())
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            hidden: vec![6, 5],
            batch_size: 32,
            epochs: 3,
            seed: 11,
            adam: AdamConfig {
                step_size: 1e-2,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(std_penalty(&[2.0, 2.0, 2.0], &[-1.0, -1.0, -1.0]), 0.0);
        assert_eq!(std_penalty(&[1.0, 3.0], &[0.0, 0.0]), 1.0);
        assert_eq!(std_penalty(&[5.0], &[1.0]), 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let xs: [f64; 5] = [0.3, -1.2, 2.5, 0.7, 0.0];
        let (_, g) = std_penalty_grad(&xs);
        for i in 0..xs.len() {
            let h = 1e-6;
            let mut p = xs;
            p[i] += h;
            let mut m = xs;
            m[i] -= h;
            let fd = (std_penalty_grad(&p).0 - std_penalty_grad(&m).0) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "{i}: {fd} vs {}", g[i]);
        }
    }

    fn objective_gradient_check(kind: CalibratorKind, use_duration: bool) {
        let (set, trials, raw) = toy(6, 1);
        let mut cfg = small_config();
        cfg.use_duration = use_duration;
        let mut model = init_calibrator::<f64>(kind, &set, &trials, &raw, &cfg).unwrap();
        let data = TrainData::build(kind, &set, &trials, &raw, use_duration).unwrap();
        let idx: Vec<usize> = (0..trials.len()).step_by(2).collect();
        let lambda = 0.7;
        let loss = LossKind::WeightedBce(crate::linear::OperatingPoint::DEFAULT);
        let mut grads = grad_buffers(&model);
        batch_objective(&model, &data, &idx, loss, lambda, &mut grads).unwrap();
        let n_nets = grads.len();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for net in 0..n_nets {
            for _ in 0..25 {
                let p = rng.random_range(0..grads[net].len());
                let h = 1e-6;
                let eval = |model: &NeuralModel<f64>| {
                    let mut g = grad_buffers(model);
                    batch_objective(model, &data, &idx, loss, lambda, &mut g).unwrap()
                };
                let bump = |model: &mut NeuralModel<f64>, d: f64| match model {
                    NeuralModel::Magneto(m) => m.magnitude_net.params_mut()[p] += d,
                    NeuralModel::Sonet(m) => {
                        if net == 0 {
                            m.scale_net.params_mut()[p] += d
                        } else {
                            m.offset_net.params_mut()[p] += d
                        }
                    }
                };
                bump(&mut model, h);
                let up = eval(&model);
                bump(&mut model, -2.0 * h);
                let down = eval(&model);
                bump(&mut model, h);
                let fd = (up - down) / (2.0 * h);
                let g = grads[net][p];
                assert!(
                    (fd - g).abs() <= 1e-4 * fd.abs().max(g.abs()).max(1e-4),
                    "{kind} net {net} param {p}: fd {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn sonet_objective_gradient() {
        objective_gradient_check(CalibratorKind::Sonet, true);
    }

    #[test]
    fn magneto_objective_gradient() {
        objective_gradient_check(CalibratorKind::Magneto, false);
        objective_gradient_check(CalibratorKind::Magneto, true);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (set, trials, raw) = toy(10, 2);
        let mut cfg = small_config();
        cfg.epochs = 0;
        for kind in [CalibratorKind::Magneto, CalibratorKind::Sonet] {
            let out = train_calibrator::<f64>(kind, &set, &trials, &raw, &cfg).unwrap();
            assert!(out.history.is_empty());
            assert_eq!(out.model, init_calibrator(kind, &set, &trials, &raw, &cfg).unwrap());
        }
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let (set, trials, raw) = toy(60, 3);
        let cfg = small_config();
        for kind in [CalibratorKind::Magneto, CalibratorKind::Sonet] {
            let a = train_calibrator::<f64>(kind, &set, &trials, &raw, &cfg).unwrap();
            let b = train_calibrator::<f64>(kind, &set, &trials, &raw, &cfg).unwrap();
            assert_eq!(a.model, b.model);
            assert_eq!(a.history, b.history);
            assert_eq!(a.history.len(), 3);
            assert!(a.history.last().unwrap().train_loss < a.initial_loss, "{kind}");
        }
    }

    #[test]
    fn f32_training_runs() {
        let (set, trials, raw) = toy(20, 4);
        let out = train_calibrator::<f32>(CalibratorKind::Sonet, &set, &trials, &raw, &small_config()).unwrap();
        assert!(out.history.iter().all(|h| h.train_loss.is_finite()));
    }

    #[test]
    fn config_errors() {
        let (set, trials, raw) = toy(5, 5);
        let mut cfg = small_config();
        cfg.std_loss_lambda = 0.1;
        assert!(train_calibrator::<f64>(CalibratorKind::Sonet, &set, &trials, &raw, &cfg).is_err());
        cfg.domain_batching = true;
        assert!(train_calibrator::<f64>(CalibratorKind::Sonet, &set, &trials, &raw, &cfg).is_ok());

        let undomained = TrialList::from_trials(
            trials.iter().map(|t| Trial::new(t.enroll_id.clone(), t.test_id.clone(), t.label)),
        )
        .unwrap();
        assert!(train_calibrator::<f64>(CalibratorKind::Sonet, &set, &undomained, &raw, &cfg).is_err());

        let targets_only: Vec<usize> = (0..trials.len()).filter(|&i| trials.trials()[i].label == Label::Target).collect();
        let t = trials.select(&targets_only);
        let r = raw.select(&targets_only);
        let err = train_calibrator::<f64>(CalibratorKind::Magneto, &set, &t, &r, &small_config()).unwrap_err();
        assert!(matches!(err, Error::MissingClass { nontargets: 0, .. }));
    }

    #[test]
    fn balanced_batches_have_equal_class_counts() {
        let (_, trials, _) = toy(10, 6);
        let labels = trials.labels().unwrap();
        let mut cfg = small_config();
        cfg.batch_size = 8;
        cfg.domain_batching = true;
        let groups = batch_groups(&trials, true);
        assert_eq!(groups.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let batches = epoch_batches(&groups, &labels, &cfg, &mut rng);
        // 10 per class and domain, 4 per class per batch -> 3 batches per domain
        assert_eq!(batches.len(), 6);
        for (k, b) in batches.iter().enumerate() {
            let nt = b.iter().filter(|&&i| labels[i]).count();
            assert_eq!(nt, 4);
            assert_eq!(b.len(), 8);
            let dom = &trials.trials()[b[0]].domain;
            assert!(b.iter().all(|&i| &trials.trials()[i].domain == dom));
            // domains alternate
            assert_eq!(dom.as_deref(), Some(if k % 2 == 0 { "a" } else { "b" }));
        }
    }

    fn sonet_with_offset(dim: usize, offset: f64) -> NeuralModel<f64> {
        let d = 2 * dim;
        let mut scale = Network::zeros(Architecture::new(d, &[3], Head::Softplus).unwrap());
        let n = scale.n_params();
        scale.params_mut()[n - 1] = (std::f64::consts::E - 1.0).ln();
        let mut off = Network::zeros(Architecture::new(d, &[3], Head::Linear).unwrap());
        let n = off.n_params();
        off.params_mut()[n - 1] = offset;
        NeuralModel::Sonet(SonetModel {
            scale_net: scale,
            offset_net: off,
            use_duration: false,
            final_tune: None,
            meta: TrainingMeta::default(),
        })
    }

    /// Labeled scores that are calibrated LLRs by construction: on a grid,
    /// target counts follow N(μ, 2μ) and nontarget counts N(−μ, 2μ), whose
    /// density ratio at `s` is `e^s`.
    fn calibrated_dev() -> (EmbeddingSet, TrialList, ScoreSet) {
        let mu: f64 = 2.0;
        let var = 2.0 * mu;
        let density = |x: f64| (-x * x / (2.0 * var)).exp();
        let mut set = EmbeddingSet::new(2);
        let mut trials = Vec::new();
        let mut raw = Vec::new();
        let mut k = 0;
        for g in -60..=60 {
            let s = g as f64 * 0.25;
            for (label, count) in [
                (Label::Target, (2000.0 * density(s - mu)).round() as usize),
                (Label::Nontarget, (2000.0 * density(s + mu)).round() as usize),
            ] {
                for _ in 0..count {
                    set.push(EmbeddingRecord::new(format!("e{k}"), vec![0.5, -0.5], 5.0)).unwrap();
                    set.push(EmbeddingRecord::new(format!("t{k}"), vec![1.0, 0.25], 5.0)).unwrap();
                    raw.push(s);
                    trials.push(Trial::new(format!("e{k}"), format!("t{k}"), label));
                    k += 1;
                }
            }
        }
        (set, TrialList::from_trials(trials).unwrap(), ScoreSet::new(raw, "llr").unwrap())
    }

    #[test]
    fn final_tune_fixed_point_and_shift_recovery() {
        let (set, trials, raw) = calibrated_dev();
        let mut model = sonet_with_offset(2, 0.0);
        let fit = final_tune(&mut model, &set, &trials, &raw, &LinearTrainOptions::default()).unwrap();
        assert!((fit.calibration.alpha - 1.0).abs() < 1e-2, "{:?}", fit.calibration);
        assert!(fit.calibration.beta.abs() < 1e-2, "{:?}", fit.calibration);
        assert!(model.final_tune().is_some());

        let mut shifted = sonet_with_offset(2, 5.0);
        let fit = final_tune(&mut shifted, &set, &trials, &raw, &LinearTrainOptions::default()).unwrap();
        let cal = fit.calibration;
        // tuned output α(s + 5) + β matches the calibrated s
        assert!((cal.alpha - 1.0).abs() < 1e-2);
        assert!((cal.beta + 5.0 * cal.alpha).abs() < 5e-2, "{cal:?}");
        assert!((cal.beta + 5.0).abs() < 6e-2);

        let empty = TrialList::from_trials(Vec::new()).unwrap();
        let none = ScoreSet::new(Vec::new(), "llr").unwrap();
        assert!(final_tune(&mut shifted, &set, &empty, &none, &LinearTrainOptions::default()).is_err());
    }
}
