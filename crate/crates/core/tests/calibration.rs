use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scorecal::data::LabeledScores;
use scorecal::linear::*;
use scorecal::metrics::{eer, min_dcf};
use scorecal::synth::{gen_scores, ScoreWorldConfig};

fn labeled() -> impl Strategy<Value = LabeledScores> {
    (
        prop::collection::vec(-5.0f64..5.0, 1..40),
        prop::collection::vec(-5.0f64..5.0, 1..40),
    )
        .prop_map(|(t, n)| LabeledScores::new(t, n).unwrap())
}

fn affine(s: &LabeledScores, a: f64, b: f64) -> LabeledScores {
    s.map(|x| a * x + b).unwrap()
}

proptest! {
    #[test]
    fn weighted_bce_at_half_is_ln2_cllr(s in labeled()) {
        let half = OperatingPoint::new(0.5).unwrap();
        prop_assert!((weighted_bce(&s, half) - std::f64::consts::LN_2 * cllr(&s)).abs() < 1e-12);
    }

    #[test]
    fn losses_are_convex_in_affine_parameters(
        s in labeled(),
        p in (0.01f64..5.0, -3.0f64..3.0),
        q in (0.01f64..5.0, -3.0f64..3.0),
    ) {
        let mid = ((p.0 + q.0) / 2.0, (p.1 + q.1) / 2.0);
        for kind in [LossKind::Cllr, LossKind::WeightedBce(OperatingPoint::DEFAULT)] {
            let f = |(a, b): (f64, f64)| kind.evaluate(&affine(&s, a, b));
            prop_assert!(f(mid) <= 0.5 * (f(p) + f(q)) + 1e-12);
        }
    }

    #[test]
    fn positive_affine_preserves_rank_metrics(s in labeled(), a in 0.01f64..100.0, b in -10.0f64..10.0) {
        let cal = LinearCalibration::new(a, b).unwrap();
        let m = s.map(|x| cal.apply(x)).unwrap();
        prop_assert_eq!(eer(&m), eer(&s));
        prop_assert_eq!(min_dcf(&m, OperatingPoint::DEFAULT), min_dcf(&s, OperatingPoint::DEFAULT));
    }
}

fn s1(n: usize, seed: u64) -> LabeledScores {
    let w = gen_scores(&ScoreWorldConfig {
        trials_per_class: n,
        seed,
        ..ScoreWorldConfig::s1()
    })
    .unwrap();
    LabeledScores::from_trials(&w.trials, &w.scores).unwrap()
}

#[test]
fn recovers_analytic_llr_map() {
    let fit = train_linear(&s1(20_000, 3), &LinearTrainOptions::default());
    assert!(fit.converged);
    assert!((fit.calibration.alpha - 2.0).abs() < 0.1, "{:?}", fit.calibration);
    assert!(fit.calibration.beta.abs() < 0.05, "{:?}", fit.calibration);
    assert!(fit.final_loss <= fit.initial_loss);
}

#[test]
fn rescaled_scores_rescale_alpha() {
    let s = s1(2000, 4);
    let a = train_linear(&s, &LinearTrainOptions::default()).calibration;
    let b = train_linear(&s.map(|x| 10.0 * x).unwrap(), &LinearTrainOptions::default()).calibration;
    assert!((b.alpha * 10.0 - a.alpha).abs() < 1e-6 * a.alpha);
    assert!((b.beta - a.beta).abs() < 1e-6);
}

#[test]
fn trial_order_does_not_matter() {
    let s = s1(1500, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = s.targets().to_vec();
    let mut n = s.nontargets().to_vec();
    t.shuffle(&mut rng);
    n.shuffle(&mut rng);
    let a = train_linear(&s, &LinearTrainOptions::default()).calibration;
    let b = train_linear(&LabeledScores::new(t, n).unwrap(), &LinearTrainOptions::default()).calibration;
    for x in [-4.0, -1.0, 0.0, 2.5, 6.0] {
        assert!((a.apply(x) - b.apply(x)).abs() < 1e-6);
    }
}

#[test]
fn weighted_loss_moves_the_offset() {
    let s = s1(3000, 6);
    let cllr_fit = train_linear(&s, &LinearTrainOptions::default());
    let wbce = LinearTrainOptions::with_loss(LossKind::WeightedBce(OperatingPoint::DEFAULT));
    let fit = train_linear(&s, &wbce);
    assert!(fit.converged);
    assert_eq!(fit.calibration.loss, wbce.loss);
    assert!(fit.calibration.alpha > 0.0);
    assert_ne!(fit.calibration.beta, cllr_fit.calibration.beta);
}

#[test]
fn loss_kind_parsing() {
    assert_eq!("cllr".parse::<LossKind>().unwrap(), LossKind::Cllr);
    assert_eq!(
        "weighted_bce:0.5".parse::<LossKind>().unwrap(),
        LossKind::WeightedBce(OperatingPoint::new(0.5).unwrap())
    );
    assert!("weighted_bce:1.5".parse::<LossKind>().is_err());
    assert!("hinge".parse::<LossKind>().is_err());
}
