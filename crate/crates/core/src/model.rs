//! Loading and saving any calibration model by its `calib.kind`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linear::LinearCalibration;
use crate::neural::NeuralModel;
use crate::text::KeyValues;

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Linear(LinearCalibration<f64>),
    Neural(NeuralModel<f64>),
}

impl Model {
    pub fn kind(&self) -> String {
        match self {
            Model::Linear(_) => "linear".into(),
            Model::Neural(m) => m.kind().to_string(),
        }
    }

    pub fn to_text(&self) -> String {
        match self {
            Model::Linear(m) => m.to_text(),
            Model::Neural(m) => m.to_text(),
        }
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        match kv.require("calib.kind")? {
            "linear" => LinearCalibration::from_text(text).map(Model::Linear),
            "magneto" | "sonet" => NeuralModel::from_kv(&kv).map(Model::Neural),
            other => Err(Error::malformed("calib.kind", format!("unknown model kind {other:?}"))),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path)?).map_err(|e| match e {
            Error::Malformed { location, reason } => Error::Malformed {
                location: format!("{}: {location}", path.display()),
                reason,
            },
            other => other,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn into_linear(self) -> Result<LinearCalibration<f64>> {
        match self {
            Model::Linear(m) => Ok(m),
            other => Err(Error::invalid(format!("expected a linear model, found {}", other.kind()))),
        }
    }

    pub fn into_neural(self) -> Result<NeuralModel<f64>> {
        match self {
            Model::Neural(m) => Ok(m),
            other => Err(Error::invalid(format!(
                "expected a magneto or sonet model, found {}",
                other.kind()
            ))),
        }
    }
}
