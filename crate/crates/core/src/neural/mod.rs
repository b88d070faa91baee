//! Condition-aware neural calibrators.
//!
//! * MagNetO: one network maps each utterance to a positive magnitude; a
//!   trial scores `m(e)·m(t)·s`.
//! * SONet: two networks read the concatenated (enroll ‖ test) inputs and
//!   predict a per-trial scale `α > 0` and offset `β`; a trial scores
//!   `α·s + β`.
//!
//! Inputs are the raw utterance vectors, optionally followed by the log
//! duration. Either model may carry a final affine calibration fitted on a
//! development set.

mod train;

pub use train::{
    DEFAULT_STD_LAMBDA,
    final_tune, init_calibrator, std_penalty, train_calibrator, EpochStats, TrainConfig, TrainingOutcome,
};

use std::fmt;
use std::str::FromStr;

use crate::data::EmbeddingRecord;
use crate::error::{Error, Result};
use crate::linear::{LinearCalibration, LossKind, OperatingPoint};
use crate::nn::Network;
use crate::scalar::Scalar;
use crate::text::{format_hex, parse_hex, KeyValues};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibratorKind {
    Magneto,
    Sonet,
}

impl fmt::Display for CalibratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CalibratorKind::Magneto => "magneto",
            CalibratorKind::Sonet => "sonet",
        })
    }
}

impl FromStr for CalibratorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "magneto" => Ok(CalibratorKind::Magneto),
            "sonet" => Ok(CalibratorKind::Sonet),
            _ => Err(Error::invalid(format!("unknown calibrator {s:?} (magneto|sonet)"))),
        }
    }
}

/// Settings a model was trained with, kept in the model file so pipelines
/// can check them.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub loss: LossKind,
    pub std_lambda: f64,
}

impl Default for TrainingMeta {
    fn default() -> Self {
        Self {
            loss: LossKind::Cllr,
            std_lambda: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MagnetoModel<T = f64> {
    /// Softplus-headed; input `d` or `d + 1` with log duration.
    pub magnitude_net: Network<T>,
    pub use_duration: bool,
    pub final_tune: Option<LinearCalibration<T>>,
    pub meta: TrainingMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SonetModel<T = f64> {
    /// Softplus-headed; input `2d` or `2d + 2`.
    pub scale_net: Network<T>,
    /// Linear-headed; same input as `scale_net`.
    pub offset_net: Network<T>,
    pub use_duration: bool,
    pub final_tune: Option<LinearCalibration<T>>,
    pub meta: TrainingMeta,
}

fn log_duration<T: Scalar>(rec: &EmbeddingRecord) -> Result<T> {
    if !(rec.duration_s > 0.0) {
        return Err(Error::invalid(format!(
            "utterance {:?}: duration must be positive for duration-aware calibration",
            rec.id
        )));
    }
    Ok(T::lit(rec.duration_s.ln()))
}

/// Network input for one utterance: its vector, then `ln(duration)` if used.
pub fn utterance_features<T: Scalar>(rec: &EmbeddingRecord, use_duration: bool) -> Result<Vec<T>> {
    let mut x: Vec<T> = rec.vector.iter().map(|&v| T::lit(v)).collect();
    if use_duration {
        x.push(log_duration(rec)?);
    }
    Ok(x)
}

/// Network input for one trial: `enroll ‖ test`, then both log durations.
pub fn trial_features<T: Scalar>(e: &EmbeddingRecord, t: &EmbeddingRecord, use_duration: bool) -> Result<Vec<T>> {
    let mut x: Vec<T> = e.vector.iter().chain(&t.vector).map(|&v| T::lit(v)).collect();
    if use_duration {
        x.push(log_duration(e)?);
        x.push(log_duration(t)?);
    }
    Ok(x)
}

impl<T: Scalar> MagnetoModel<T> {
    pub fn magnitude(&self, rec: &EmbeddingRecord) -> Result<T> {
        self.magnitude_net.predict(&utterance_features(rec, self.use_duration)?)
    }

    /// `m(e)·m(t)·s` before any final tuning.
    pub fn score_untuned(&self, e: &EmbeddingRecord, t: &EmbeddingRecord, base_cosine: T) -> Result<T> {
        Ok(self.magnitude(e)? * self.magnitude(t)? * base_cosine)
    }
}

impl<T: Scalar> SonetModel<T> {
    /// Per-trial `(α, β)`.
    pub fn factors(&self, e: &EmbeddingRecord, t: &EmbeddingRecord) -> Result<(T, T)> {
        let x = trial_features(e, t, self.use_duration)?;
        Ok((self.scale_net.predict(&x)?, self.offset_net.predict(&x)?))
    }

    pub fn score_untuned(&self, e: &EmbeddingRecord, t: &EmbeddingRecord, raw: T) -> Result<T> {
        let (a, b) = self.factors(e, t)?;
        Ok(a * raw + b)
    }
}

/// Calibrated MagNetO score: `m(e)·m(t)·cos(e, t)`, then the final affine
/// tuning if present.
pub fn magneto_score<T: Scalar>(
    model: &MagnetoModel<T>,
    e: &EmbeddingRecord,
    t: &EmbeddingRecord,
    base_cosine: T,
) -> Result<T> {
    let l = model.score_untuned(e, t, base_cosine)?;
    Ok(model.final_tune.as_ref().map_or(l, |c| c.apply(l)))
}

/// Calibrated SONet score: `α(e,t)·s + β(e,t)`, then the final affine tuning
/// if present.
pub fn sonet_score<T: Scalar>(model: &SonetModel<T>, e: &EmbeddingRecord, t: &EmbeddingRecord, raw: T) -> Result<T> {
    let l = model.score_untuned(e, t, raw)?;
    Ok(model.final_tune.as_ref().map_or(l, |c| c.apply(l)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum NeuralModel<T = f64> {
    Magneto(MagnetoModel<T>),
    Sonet(SonetModel<T>),
}

impl<T: Scalar> NeuralModel<T> {
    pub fn kind(&self) -> CalibratorKind {
        match self {
            NeuralModel::Magneto(_) => CalibratorKind::Magneto,
            NeuralModel::Sonet(_) => CalibratorKind::Sonet,
        }
    }

    pub fn use_duration(&self) -> bool {
        match self {
            NeuralModel::Magneto(m) => m.use_duration,
            NeuralModel::Sonet(m) => m.use_duration,
        }
    }

    pub fn meta(&self) -> &TrainingMeta {
        match self {
            NeuralModel::Magneto(m) => &m.meta,
            NeuralModel::Sonet(m) => &m.meta,
        }
    }

    /// Embedding dimension the model expects.
    pub fn embedding_dim(&self) -> usize {
        let dur = self.use_duration() as usize;
        match self {
            NeuralModel::Magneto(m) => m.magnitude_net.input_dim() - dur,
            NeuralModel::Sonet(m) => (m.scale_net.input_dim() - 2 * dur) / 2,
        }
    }

    pub fn final_tune(&self) -> Option<&LinearCalibration<T>> {
        match self {
            NeuralModel::Magneto(m) => m.final_tune.as_ref(),
            NeuralModel::Sonet(m) => m.final_tune.as_ref(),
        }
    }

    pub fn set_final_tune(&mut self, cal: Option<LinearCalibration<T>>) {
        match self {
            NeuralModel::Magneto(m) => m.final_tune = cal,
            NeuralModel::Sonet(m) => m.final_tune = cal,
        }
    }

    pub fn score_untuned(&self, e: &EmbeddingRecord, t: &EmbeddingRecord, s: T) -> Result<T> {
        match self {
            NeuralModel::Magneto(m) => m.score_untuned(e, t, s),
            NeuralModel::Sonet(m) => m.score_untuned(e, t, s),
        }
    }

    pub fn score(&self, e: &EmbeddingRecord, t: &EmbeddingRecord, s: T) -> Result<T> {
        match self {
            NeuralModel::Magneto(m) => magneto_score(m, e, t, s),
            NeuralModel::Sonet(m) => sonet_score(m, e, t, s),
        }
    }

    pub fn to_text(&self) -> String {
        let mut kv = KeyValues::new();
        kv.set("calib.kind", self.kind());
        kv.set("calib.use_duration", self.use_duration() as u8);
        kv.set("calib.embedding_dim", self.embedding_dim());
        let meta = self.meta();
        match meta.loss {
            LossKind::Cllr => kv.set("train.loss", "cllr"),
            LossKind::WeightedBce(op) => {
                kv.set("train.loss", "weighted_bce");
                kv.set("train.pi", format_hex(op.pi()));
            }
        }
        kv.set("train.std_lambda", format_hex(meta.std_lambda));
        match self {
            NeuralModel::Magneto(m) => m.magnitude_net.write_kv(&mut kv, "net.magnitude."),
            NeuralModel::Sonet(m) => {
                m.scale_net.write_kv(&mut kv, "net.scale.");
                m.offset_net.write_kv(&mut kv, "net.offset.");
            }
        }
        if let Some(cal) = self.final_tune() {
            kv.set("tune.present", 1);
            cal.write_kv(&mut kv, "tune.");
        }
        kv.render()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    pub(crate) fn from_kv(kv: &KeyValues) -> Result<Self> {
        let kind: CalibratorKind = kv.require("calib.kind")?.parse()?;
        let use_duration = match kv.require("calib.use_duration")? {
            "0" => false,
            "1" => true,
            other => return Err(Error::malformed("calib.use_duration", format!("expected 0 or 1, got {other:?}"))),
        };
        let dim: usize = kv.parse_value("calib.embedding_dim")?;
        let loss = match kv.require("train.loss")? {
            "cllr" => LossKind::Cllr,
            "weighted_bce" => LossKind::WeightedBce(OperatingPoint::new(parse_hex(kv.require("train.pi")?)?)?),
            other => return Err(Error::malformed("train.loss", format!("unknown loss {other:?}"))),
        };
        let meta = TrainingMeta {
            loss,
            std_lambda: parse_hex(kv.require("train.std_lambda")?)?,
        };
        let final_tune = if kv.contains("tune.present") {
            Some(LinearCalibration::read_kv(kv, "tune.")?)
        } else {
            None
        };
        let dur = use_duration as usize;
        let expect_dim = |net: &Network<T>, want: usize, name: &str| -> Result<()> {
            if net.input_dim() != want {
                return Err(Error::malformed(
                    name,
                    format!("input dimension {} inconsistent with embedding_dim {dim}", net.input_dim()),
                ));
            }
            Ok(())
        };
        Ok(match kind {
            CalibratorKind::Magneto => {
                let net = Network::read_kv(kv, "net.magnitude.")?;
                expect_dim(&net, dim + dur, "net.magnitude")?;
                NeuralModel::Magneto(MagnetoModel {
                    magnitude_net: net,
                    use_duration,
                    final_tune,
                    meta,
                })
            }
            CalibratorKind::Sonet => {
                let scale = Network::read_kv(kv, "net.scale.")?;
                let offset = Network::read_kv(kv, "net.offset.")?;
                expect_dim(&scale, 2 * dim + 2 * dur, "net.scale")?;
                expect_dim(&offset, 2 * dim + 2 * dur, "net.offset")?;
                NeuralModel::Sonet(SonetModel {
                    scale_net: scale,
                    offset_net: offset,
                    use_duration,
                    final_tune,
                    meta,
                })
            }
        })
    }
}
