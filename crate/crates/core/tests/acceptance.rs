//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scorecal::data::{read_evec, write_evec, EmbeddingRecord, EmbeddingSet, LabeledScores, ScoreSet, TrialList};
use scorecal::linear::{cllr, train_linear, weighted_bce, LinearCalibration, LinearTrainOptions, OperatingPoint};
use scorecal::metrics::{act_dcf, det_sweep, eer, min_dcf};
use scorecal::model::Model;
use scorecal::neural::{final_tune, init_calibrator, train_calibrator, CalibratorKind, NeuralModel, TrainConfig};
use scorecal::nn::{Architecture, Head, Network, Standardizer};
use scorecal::pipeline::{Pipeline, Stage};
use scorecal::snorm::Cohort;
use scorecal::synth::{gen_embeddings, gen_scores, EmbeddingWorldConfig, ScoreWorld, ScoreWorldConfig};
use scorecal::scoring::score_trials;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gauss(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn labeled(w: &ScoreWorld, idx: &[usize], scores: &ScoreSet) -> LabeledScores {
    LabeledScores::from_trials(&w.trials.select(idx), &scores.select(idx)).unwrap()
}

fn pop_std(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;

/// Checks every parameter of `net` at input `x` against central differences.
/// Returns (checked, kinks, failures, worst relative error). A perturbation
/// that crosses a PReLU kink shows up as disagreeing one-sided differences
/// and is counted separately.
fn check_network(net: &Network, x: &[f64]) -> (usize, usize, usize, f64) {
    let (y0, trace) = net.forward(x).unwrap();
    let mut g = net.zero_grads();
    net.backward(&trace, 1.0, &mut g);
    let mut probe = net.clone();
    let (mut checked, mut kinks, mut fails, mut worst) = (0, 0, 0, 0.0f64);
    for i in 0..net.n_params() {
        let p = net.params()[i];
        probe.params_mut()[i] = p + FD_STEP;
        let up = probe.predict(x).unwrap();
        probe.params_mut()[i] = p - FD_STEP;
        let dn = probe.predict(x).unwrap();
        probe.params_mut()[i] = p;
        let fd = (up - dn) / (2.0 * FD_STEP);
        let rel = (g[i] - fd).abs() / (g[i].abs() + 1e-8);
        if rel <= GRAD_TOL {
            worst = worst.max(rel);
            checked += 1;
            continue;
        }
        let (fwd, bwd) = ((up - y0) / FD_STEP, (y0 - dn) / FD_STEP);
        if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs() + 1e-8) {
            kinks += 1;
        } else {
            fails += 1;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (checked, kinks, fails, worst)
}

fn randomize(net: &mut Network, rng: &mut ChaCha8Rng) {
    let ranges = net.tensor_ranges();
    for (name, r) in ranges {
        for p in &mut net.params_mut()[r] {
            if name.ends_with("bias") {
                *p = 0.3 * gauss(rng);
            } else if name.ends_with("prelu") {
                *p = rng.random_range(0.05..0.5);
            } else {
                *p *= rng.random_range(0.5..1.5);
            }
        }
    }
}

/// Random rows for fitting a standardizer with non-trivial statistics.
fn random_rows(dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let shift: Vec<f64> = (0..dim).map(|_| 2.0 * gauss(rng)).collect();
    (0..64)
        .map(|_| shift.iter().map(|&m| m + 3.0 * gauss(rng)).collect())
        .collect()
}

fn net_params(model: &mut NeuralModel, k: usize) -> &mut [f64] {
    match (model, k) {
        (NeuralModel::Magneto(m), _) => m.magnitude_net.params_mut(),
        (NeuralModel::Sonet(m), 0) => m.scale_net.params_mut(),
        (NeuralModel::Sonet(m), _) => m.offset_net.params_mut(),
    }
}

/// Gradient of a calibrator's untuned score with respect to each network,
/// assembled from per-network backward passes, against finite differences
/// through the public scoring API.
fn check_calibrator(model: &NeuralModel, e: &EmbeddingRecord, t: &EmbeddingRecord, s: f64) -> (usize, usize) {
    let (analytic, nets): (Vec<Vec<f64>>, usize) = match model {
        NeuralModel::Magneto(m) => {
            let xe = scorecal::neural::utterance_features::<f64>(e, m.use_duration).unwrap();
            let xt = scorecal::neural::utterance_features::<f64>(t, m.use_duration).unwrap();
            let (me, te) = m.magnitude_net.forward(&xe).unwrap();
            let (mt, tt) = m.magnitude_net.forward(&xt).unwrap();
            let mut g = m.magnitude_net.zero_grads();
            m.magnitude_net.backward(&te, mt * s, &mut g);
            m.magnitude_net.backward(&tt, me * s, &mut g);
            (vec![g], 1)
        }
        NeuralModel::Sonet(m) => {
            let x = scorecal::neural::trial_features::<f64>(e, t, m.use_duration).unwrap();
            let (_, ta) = m.scale_net.forward(&x).unwrap();
            let (_, tb) = m.offset_net.forward(&x).unwrap();
            let mut ga = m.scale_net.zero_grads();
            let mut gb = m.offset_net.zero_grads();
            m.scale_net.backward(&ta, s, &mut ga);
            m.offset_net.backward(&tb, 1.0, &mut gb);
            (vec![ga, gb], 2)
        }
    };
    let mut probe = model.clone();
    let (mut fails, mut kinks) = (0, 0);
    let y0 = model.score_untuned(e, t, s).unwrap();
    for k in 0..nets {
        for i in 0..analytic[k].len() {
            let mut eval = |delta: f64| {
                let p = net_params(&mut probe, k)[i];
                net_params(&mut probe, k)[i] = p + delta;
                let y = probe.score_untuned(e, t, s).unwrap();
                net_params(&mut probe, k)[i] = p;
                y
            };
            let (up, dn) = (eval(FD_STEP), eval(-FD_STEP));
            let fd = (up - dn) / (2.0 * FD_STEP);
            let a = analytic[k][i];
            if (a - fd).abs() / (a.abs() + 1e-8) > GRAD_TOL {
                let (fwd, bwd) = ((up - y0) / FD_STEP, (y0 - dn) / FD_STEP);
                if (fwd - bwd).abs() > 1e-3 * (fwd.abs() + bwd.abs() + 1e-8) {
                    kinks += 1;
                } else {
                    fails += 1;
                }
            }
        }
    }
    (fails, kinks)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let dim = 8;
    let hidden = [12, 12];
    let archs = [
        ("magneto", dim, Head::Softplus),
        ("magneto+dur", dim + 1, Head::Softplus),
        ("sonet.scale", 2 * dim, Head::Softplus),
        ("sonet.offset", 2 * dim, Head::Linear),
        ("sonet.scale+dur", 2 * dim + 2, Head::Softplus),
        ("sonet.offset+dur", 2 * dim + 2, Head::Linear),
    ];
    let (mut checked, mut kinks, mut fails, mut worst) = (0, 0, 0, 0.0f64);
    for (_, input, head) in archs {
        let arch = Architecture::new(input, &hidden, head).unwrap();
        for point in 0..10 {
            let mut net = Network::init_seeded(arch.clone(), 1000 + point);
            randomize(&mut net, &mut rng);
            net.set_standardizer(Standardizer::fit(&random_rows(input, &mut rng)).unwrap()).unwrap();
            let x: Vec<f64> = (0..input).map(|_| 3.0 * gauss(&mut rng)).collect();
            let (c, k, f, w) = check_network(&net, &x);
            checked += c;
            kinks += k;
            fails += f;
            worst = worst.max(w);
        }
    }

    // composed calibrators on a small S2 sample, through the scoring API
    let w = gen_scores(&ScoreWorldConfig {
        trials_per_class: 50,
        ..ScoreWorldConfig::s2()
    })
    .unwrap();
    let mut cal_fails = 0;
    let mut cal_kinks = 0;
    for kind in [CalibratorKind::Magneto, CalibratorKind::Sonet] {
        for dur in [false, true] {
            let cfg = TrainConfig {
                use_duration: dur,
                hidden: hidden.to_vec(),
                seed: 5,
                ..TrainConfig::default()
            };
            let mut model: NeuralModel = init_calibrator(kind, &w.embeddings, &w.trials, &w.scores, &cfg).unwrap();
            match &mut model {
                NeuralModel::Magneto(m) => randomize(&mut m.magnitude_net, &mut rng),
                NeuralModel::Sonet(m) => {
                    randomize(&mut m.scale_net, &mut rng);
                    randomize(&mut m.offset_net, &mut rng);
                }
            }
            for i in (0..w.trials.len()).step_by(w.trials.len() / 10).take(10) {
                let (e, t) = w.embeddings.resolve(i, &w.trials.trials()[i]).unwrap();
                let (f, k) = check_calibrator(&model, e, t, w.scores.scores()[i]);
                cal_fails += f;
                cal_kinks += k;
            }
        }
    }
    let total = checked + kinks;
    let pass = fails == 0 && cal_fails == 0 && kinks * 100 <= total;
    outcome(
        pass,
        format!(
            "{checked} network gradients checked, worst rel err {worst:.2e}, {fails} failures, {kinks} kink crossings skipped; calibrator compositions: {cal_fails} failures, {cal_kinks} kinks"
        ),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let w = gen_scores(&ScoreWorldConfig::s1()).unwrap();
    let s = LabeledScores::from_trials(&w.trials, &w.scores).unwrap();
    let fit = train_linear(&s, &LinearTrainOptions::default());
    let c = &fit.calibration;
    let cal = s.map(|x| c.apply(x)).unwrap();
    let op = OperatingPoint::DEFAULT;
    let (act, min) = (act_dcf(&cal, op), min_dcf(&cal, op));
    let pass = (c.alpha / 2.0 - 1.0).abs() <= 0.05 && c.beta.abs() <= 0.05 && act <= 1.05 * min + 0.01;
    outcome(
        pass,
        format!("alpha {:.4}, beta {:.4}, act_dcf {act:.4}, min_dcf {min:.4}", c.alpha, c.beta),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_3() -> Outcome {
    let s = LabeledScores::new(vec![0.0; 17], vec![0.0; 31]).unwrap();
    let c: f64 = cllr(&s);
    let w: f64 = weighted_bce(&s, OperatingPoint::new(0.5).unwrap());
    let pass = (c - 1.0).abs() <= 1e-12 && (w - std::f64::consts::LN_2).abs() <= 1e-12;
    outcome(pass, format!("cllr {c}, weighted_bce(0.5) {w}"))
}

// ---------------------------------------------------------------- 4

fn random_set(rng: &mut ChaCha8Rng, min_per_class: usize, max_per_class: usize, grid: bool) -> LabeledScores {
    let n_t = rng.random_range(min_per_class..=max_per_class);
    let n_n = rng.random_range(min_per_class..=max_per_class);
    // LLR-like spread, so that a fair share of trials sits on either side
    // of the Bayes threshold
    let scale = 10f64.powf(rng.random_range(0.0..1.0));
    let shift = rng.random_range(0.0..3.0);
    let mut draw = |mu: f64| {
        let x = scale * (mu + gauss(rng));
        // a coarse grid produces ties
        if grid {
            (x * 4.0).round() / 4.0
        } else {
            x
        }
    };
    let t = (0..n_t).map(|_| draw(shift)).collect();
    let n = (0..n_n).map(|_| draw(0.0)).collect();
    LabeledScores::new(t, n).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let op = OperatingPoint::DEFAULT;
    let (mut invariant, mut changed) = (0, 0);
    for _ in 0..100 {
        let s = random_set(&mut rng, 20, 250, false);
        let alpha = 10f64.powf(rng.random_range(-1.0..1.0));
        let beta = rng.random_range(-3.0..3.0);
        let cal = LinearCalibration::new(alpha, beta).unwrap();
        let m = s.map(|x| cal.apply(x)).unwrap();
        let counts = |v: &LabeledScores| det_sweep(v).iter().map(|p| (p.n_miss, p.n_fa)).collect::<Vec<_>>();
        if counts(&s) == counts(&m) && eer(&s) == eer(&m) && min_dcf(&s, op) == min_dcf(&m, op) {
            invariant += 1;
        }
        if act_dcf(&s, op) != act_dcf(&m, op) && cllr(&s) != cllr(&m) {
            changed += 1;
        }
    }
    outcome(
        invariant == 100 && changed >= 95,
        format!("rank metrics unchanged on {invariant}/100, act_dcf and cllr changed on {changed}/100"),
    )
}

// ---------------------------------------------------------------- 5

fn domain_gap(w: &ScoreWorld, scores: &ScoreSet) -> f64 {
    let a = labeled(w, &w.domain_indices("A"), scores);
    let b = labeled(w, &w.domain_indices("B"), scores);
    let c = train_linear(&a, &LinearTrainOptions::default()).calibration;
    let b = b.map(|x| c.apply(x)).unwrap();
    let op = OperatingPoint::DEFAULT;
    act_dcf(&b, op) - min_dcf(&b, op)
}

fn criterion_5() -> Outcome {
    let w = gen_scores(&ScoreWorldConfig::s2()).unwrap();
    let raw_gap = domain_gap(&w, &w.scores);
    let normed = w.snorm(1000, 200, 5).unwrap();
    let snorm_gap = domain_gap(&w, &normed);
    let reduction = 1.0 - snorm_gap / raw_gap;
    outcome(
        reduction >= 0.5,
        format!("domain B gap {raw_gap:.4} raw, {snorm_gap:.4} with s-norm ({:.1}% reduction)", 100.0 * reduction),
    )
}

// ---------------------------------------------------------------- 6

fn sonet_config(lambda: f64, epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden: vec![32, 32],
        epochs,
        batch_size: 512,
        seed: 1,
        domain_batching: true,
        std_loss_lambda: lambda,
        ..TrainConfig::default()
    }
}

fn criterion_6() -> Outcome {
    let w = gen_scores(&ScoreWorldConfig::s2()).unwrap();
    let train_idx: Vec<usize> = (0..w.trials.len()).step_by(2).collect();
    let eval_idx: Vec<usize> = (1..w.trials.len()).step_by(2).collect();
    let (train_t, train_s) = (w.trials.select(&train_idx), w.scores.select(&train_idx));
    let (eval_t, eval_s) = (w.trials.select(&eval_idx), w.scores.select(&eval_idx));
    let mut model = train_calibrator::<f64>(CalibratorKind::Sonet, &w.embeddings, &train_t, &train_s, &sonet_config(0.0, 20))
        .unwrap()
        .model;
    final_tune(&mut model, &w.embeddings, &train_t, &train_s, &LinearTrainOptions::default()).unwrap();
    let out: Vec<f64> = eval_t
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (e, v) = w.embeddings.resolve(i, t).unwrap();
            model.score(e, v, eval_s.scores()[i]).unwrap()
        })
        .collect();
    let sonet = cllr(&LabeledScores::from_flags(&out, &eval_t.labels().unwrap()).unwrap());
    let pooled = LabeledScores::from_trials(&eval_t, &eval_s).unwrap();
    let best = train_linear(&pooled, &LinearTrainOptions::default()).calibration;
    let linear = cllr(&pooled.map(|x| best.apply(x)).unwrap());
    let margin = 1.0 - sonet / linear;
    outcome(
        margin >= 0.02,
        format!("eval cllr sonet {sonet:.4}, best single linear {linear:.4} ({:.1}% better)", 100.0 * margin),
    )
}

// ---------------------------------------------------------------- 7

fn factor_stds(model: &NeuralModel, w: &ScoreWorld, domain: &str) -> (f64, f64) {
    let NeuralModel::Sonet(m) = model else { unreachable!() };
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for i in w.domain_indices(domain) {
        let (e, t) = w.embeddings.resolve(i, &w.trials.trials()[i]).unwrap();
        let (x, y) = m.factors(e, t).unwrap();
        a.push(x);
        b.push(y);
    }
    (pop_std(&a), pop_std(&b))
}

/// Largest residual of the least-squares line through `(s, y)`, relative to
/// the range of `y`.
fn affine_deviation(s: &[f64], y: &[f64]) -> f64 {
    let n = s.len() as f64;
    let (ms, my) = (s.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = s.iter().zip(y).map(|(a, b)| (a - ms) * (b - my)).sum();
    let sxx: f64 = s.iter().map(|a| (a - ms).powi(2)).sum();
    let slope = sxy / sxx;
    let max_dev = s.iter().zip(y).map(|(a, b)| (b - (my + slope * (a - ms))).abs()).fold(0.0, f64::max);
    let range = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) - y.iter().copied().fold(f64::INFINITY, f64::min);
    max_dev / range
}

fn criterion_7() -> Outcome {
    let w = gen_scores(&ScoreWorldConfig::s2()).unwrap();
    let train = |lambda| {
        train_calibrator::<f64>(CalibratorKind::Sonet, &w.embeddings, &w.trials, &w.scores, &sonet_config(lambda, 20))
            .unwrap()
            .model
    };
    let (free, tied) = (train(0.0), train(10.0));
    let mut worst = f64::INFINITY;
    let mut parts = Vec::new();
    for d in ["A", "B"] {
        let (a0, b0) = factor_stds(&free, &w, d);
        let (a1, b1) = factor_stds(&tied, &w, d);
        let (ra, rb) = (1.0 - a1 / a0, 1.0 - b1 / b0);
        worst = worst.min(ra).min(rb);
        parts.push(format!("{d}: alpha std {a0:.3}->{a1:.4}, beta std {b0:.3}->{b1:.4}"));
    }

    let s1 = gen_scores(&ScoreWorldConfig::s1()).unwrap();
    let model = train_calibrator::<f64>(CalibratorKind::Sonet, &s1.embeddings, &s1.trials, &s1.scores, &sonet_config(100.0, 10))
        .unwrap()
        .model;
    let y: Vec<f64> = s1
        .trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let (e, v) = s1.embeddings.resolve(i, t).unwrap();
            model.score(e, v, s1.scores.scores()[i]).unwrap()
        })
        .collect();
    let dev = affine_deviation(s1.scores.scores(), &y);
    outcome(
        worst >= 0.9 && dev <= 0.01,
        format!(
            "{}; min reduction {:.2}%; lambda=100 on S1 max affine deviation {:.4}% of range",
            parts.join("; "),
            100.0 * worst,
            100.0 * dev
        ),
    )
}

// ---------------------------------------------------------------- 8

/// Brute-force recount: every distinct score is a threshold, counts come
/// from a full scan of both classes.
fn brute_points(s: &LabeledScores) -> Vec<(f64, usize, usize)> {
    let mut ths = vec![f64::NEG_INFINITY, f64::INFINITY];
    for &x in s.targets().iter().chain(s.nontargets()) {
        if !ths.contains(&x) {
            ths.push(x);
        }
    }
    ths.sort_by(f64::total_cmp);
    ths.into_iter()
        .map(|th| {
            let miss = s.targets().iter().filter(|&&x| x < th).count();
            let fa = s.nontargets().iter().filter(|&&x| x >= th).count();
            (th, miss, fa)
        })
        .collect()
}

fn brute_eer(s: &LabeledScores, pts: &[(f64, usize, usize)]) -> f64 {
    let rates: Vec<(f64, f64)> = pts
        .iter()
        .map(|&(_, m, f)| (m as f64 / s.n_target() as f64, f as f64 / s.n_nontarget() as f64))
        .collect();
    for k in 0..rates.len() {
        let (pm, pf) = rates[k];
        if pm >= pf {
            if k == 0 || pm - pf == 0.0 {
                return pm;
            }
            let (lm, lf) = rates[k - 1];
            let (d0, d1) = (lm - lf, pm - pf);
            return lm + d0 / (d0 - d1) * (pm - lm);
        }
    }
    unreachable!("the last point rejects everything")
}

fn brute_min_dcf(s: &LabeledScores, pts: &[(f64, usize, usize)], pi: f64) -> f64 {
    pts.iter()
        .map(|&(_, m, f)| {
            let pm = m as f64 / s.n_target() as f64;
            let pf = f as f64 / s.n_nontarget() as f64;
            (pi * pm + (1.0 - pi) * pf) / pi.min(1.0 - pi)
        })
        .fold(f64::INFINITY, f64::min)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let op = OperatingPoint::DEFAULT;
    let mut ok = 0;
    for k in 0..50 {
        let s = random_set(&mut rng, 1, 250, k % 2 == 0);
        let sweep = det_sweep(&s);
        let pts = brute_points(&s);
        let same_sweep = sweep.len() == pts.len()
            && sweep
                .iter()
                .zip(&pts)
                .all(|(p, &(th, m, f))| p.threshold == th && p.n_miss == m && p.n_fa == f);
        if same_sweep && eer(&s) == brute_eer(&s, &pts) && min_dcf(&s, op) == brute_min_dcf(&s, &pts, op.pi()) {
            ok += 1;
        }
    }
    outcome(ok == 50, format!("{ok}/50 sets match the recount oracle exactly"))
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let op = OperatingPoint::DEFAULT;
    let th = op.bayes_threshold();
    let zeros = LabeledScores::new(vec![0.0; 10], vec![0.0; 90]).unwrap();
    let act = act_dcf(&zeros, op);
    // just below the threshold is a miss, at it an acceptance
    let below = LabeledScores::new(vec![th - 1e-9], vec![-5.0]).unwrap();
    let at = LabeledScores::new(vec![th], vec![-5.0]).unwrap();
    let pass = (th - 2.944439).abs() <= 1e-6
        && (th - 19f64.ln()).abs() <= 1e-15
        && act == 1.0
        && act_dcf(&below, op) == 1.0
        && act_dcf(&at, op) == 0.0;
    outcome(pass, format!("threshold {th:.9}, all-zero act_dcf {act}"))
}

// ---------------------------------------------------------------- 10

fn random_embeddings(rng: &mut ChaCha8Rng) -> EmbeddingSet {
    let dim = 13;
    let mut set = EmbeddingSet::new(dim);
    for i in 0..200 {
        // arbitrary finite f32 bit patterns, the format's storage precision
        let v = (0..dim)
            .map(|_| loop {
                let x = f32::from_bits(rng.random());
                if x.is_finite() {
                    break x as f64;
                }
            })
            .collect();
        let dur = rng.random_range(0.1f32..100.0) as f64;
        let mut rec = EmbeddingRecord::new(format!("utt-{i}-é"), v, dur);
        if i % 3 != 0 {
            rec = rec.with_domain(format!("dom{}", i % 5));
        }
        set.push(rec).unwrap();
    }
    set
}

fn reload(model: &Model, dir: &std::path::Path, name: &str) -> Model {
    let path = dir.join(name);
    model.save(&path).unwrap();
    Model::load(&path).unwrap()
}

fn bits(s: &ScoreSet) -> Vec<u64> {
    s.scores().iter().map(|x| x.to_bits()).collect()
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1010);
    let mut failures = Vec::new();

    let set = random_embeddings(&mut rng);
    let mut buf = Vec::new();
    write_evec(&set, &mut buf).unwrap();
    let back = read_evec(buf.as_slice()).unwrap();
    let mut again = Vec::new();
    write_evec(&back, &mut again).unwrap();
    let evec_ok = back.records().iter().zip(set.records()).all(|(a, b)| {
        a.id == b.id
            && a.domain == b.domain
            && a.duration_s.to_bits() == b.duration_s.to_bits()
            && a.vector.iter().zip(&b.vector).all(|(x, y)| x.to_bits() == y.to_bits())
    }) && back.len() == set.len()
        && again == buf;
    if !evec_ok {
        failures.push("evec");
    }

    let world = gen_embeddings(&EmbeddingWorldConfig::default()).unwrap();
    let train: &TrialList = &world.splits["train"];
    let eval: &TrialList = &world.splits["eval"];
    let raw = score_trials(&world.embeddings, train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        hidden: vec![16, 16],
        epochs: 3,
        seed: 9,
        use_duration: true,
        ..TrainConfig::default()
    };
    let mut pipelines = 0;
    for kind in [CalibratorKind::Magneto, CalibratorKind::Sonet] {
        let mut model = train_calibrator::<f64>(kind, &world.embeddings, train, &raw, &cfg).unwrap().model;
        final_tune(&mut model, &world.embeddings, train, &raw, &LinearTrainOptions::default()).unwrap();
        let affine = {
            let mut c = LinearCalibration::new(1.25, -0.5).unwrap();
            c.trained_on = "fixed".into();
            c
        };
        let neural = Model::Neural(model);
        let linear = Model::Linear(affine);
        let neural_back = reload(&neural, dir.path(), &format!("{kind}.model"));
        let linear_back = reload(&linear, dir.path(), "affine.model");
        if neural_back != neural || neural_back.to_text() != neural.to_text() {
            failures.push("neural model file");
        }
        if linear_back != linear || linear_back.to_text() != linear.to_text() {
            failures.push("linear model file");
        }
        let build = |n: Model, l: Model| {
            let cohort = Cohort::new(world.cohort.clone(), 20).unwrap();
            Pipeline::new(vec![
                Stage::Cosine,
                Stage::Neural(n.into_neural().unwrap()),
                Stage::Snorm(cohort),
                Stage::Affine(l.into_linear().unwrap()),
            ])
            .unwrap()
        };
        let before = build(neural, linear).run(&world.embeddings, eval).unwrap();
        let after = build(neural_back, linear_back).run(&world.embeddings, eval).unwrap();
        if bits(&before) == bits(&after) {
            pipelines += 1;
        } else {
            failures.push("pipeline scores");
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "evec {} records, {pipelines}/2 reloaded pipelines bit-identical{}",
            set.len(),
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(", ")) }
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 10] = [
        ("gradient correctness", criterion_1, Duration::from_secs(30)),
        ("linear calibration recovery", criterion_2, Duration::from_secs(10)),
        ("identity cllr", criterion_3, Duration::MAX),
        ("monotone invariance", criterion_4, Duration::MAX),
        ("s-norm stabilization", criterion_5, Duration::from_secs(60)),
        ("sonet generalization", criterion_6, Duration::from_secs(300)),
        ("std-loss regularization", criterion_7, Duration::MAX),
        ("det oracle equivalence", criterion_8, Duration::MAX),
        ("bayes threshold", criterion_9, Duration::MAX),
        ("round-trip determinism", criterion_10, Duration::MAX),
    ];
    let mut failed = 0;
    for (i, (name, run, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = run();
        let took = start.elapsed();
        let in_time = took < *limit;
        let pass = out.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = if *limit == Duration::MAX { String::new() } else { format!(" (limit {}s)", limit.as_secs()) };
        println!(
            "{} criterion {}: {name}: {} [{:.2}s{budget}]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            out.detail,
            took.as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
