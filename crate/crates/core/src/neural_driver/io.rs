//! JSON driver parameter files.
//!
//! The primary network (h1, or empty for a network-free linear h1) is stored
//! flat at the top level; the shift network h2 or the interaction network phi
//! goes under `secondary`. Reals are written with shortest round-trip
//! formatting and parsed exactly, so save followed by load is the identity.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::driver::{
    DriverKind, MeanFieldDriver, MonotoneNet, Polynomial, QuadraticDriver, ShiftedMonotone, SpecializedDriver,
};
use super::mlp::{Activation, MlpParams};
use super::DriverError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRecord {
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub raw_weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub positivity_mask: Vec<Vec<bool>>,
}

impl NetworkRecord {
    fn from_mlp(m: &MlpParams) -> Self {
        NetworkRecord {
            layer_sizes: m.layer_sizes().to_vec(),
            activation: m.activation(),
            raw_weights: m.raw_weights().to_vec(),
            biases: m.biases().to_vec(),
            positivity_mask: m.positivity_mask().to_vec(),
        }
    }

    fn to_mlp(&self, field: &'static str) -> Result<MlpParams, DriverError> {
        MlpParams::new(
            self.layer_sizes.clone(),
            self.raw_weights.clone(),
            self.biases.clone(),
            self.activation,
            self.positivity_mask.clone(),
        )
        .map_err(|e| parse_err(field, e.to_string()))
    }
}

/// On-disk layout of a [`SpecializedDriver`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverFile {
    pub kind: DriverKind,
    #[serde(default)]
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Option<Activation>,
    #[serde(default)]
    pub raw_weights: Vec<Vec<f64>>,
    #[serde(default)]
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub positivity_mask: Vec<Vec<bool>>,
    #[serde(default)]
    pub skip_raw_slope: Option<f64>,
    #[serde(default)]
    pub secondary: Option<NetworkRecord>,
    #[serde(default)]
    pub mu: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub c_h: Option<f64>,
    #[serde(default)]
    pub coefficients: Option<Vec<f64>>,
}

fn parse_err(field: &str, message: impl Into<String>) -> DriverError {
    DriverError::Parse { field: field.to_string(), message: message.into() }
}

fn required<T: Copy>(v: Option<T>, field: &str) -> Result<T, DriverError> {
    v.ok_or_else(|| parse_err(field, "missing for this driver kind"))
}

impl DriverFile {
    fn empty(kind: DriverKind) -> Self {
        DriverFile {
            kind,
            layer_sizes: Vec::new(),
            activation: None,
            raw_weights: Vec::new(),
            biases: Vec::new(),
            positivity_mask: Vec::new(),
            skip_raw_slope: None,
            secondary: None,
            mu: None,
            alpha: None,
            beta: None,
            c_h: None,
            coefficients: None,
        }
    }

    fn with_monotone(mut self, h: &MonotoneNet) -> Self {
        if let Some(m) = h.mlp() {
            let rec = NetworkRecord::from_mlp(m);
            self.layer_sizes = rec.layer_sizes;
            self.activation = Some(rec.activation);
            self.raw_weights = rec.raw_weights;
            self.biases = rec.biases;
            self.positivity_mask = rec.positivity_mask;
        }
        self.skip_raw_slope = Some(h.skip_raw_slope());
        self.c_h = Some(h.c_h());
        self
    }

    pub fn from_driver(d: &SpecializedDriver) -> Self {
        match d {
            SpecializedDriver::QuadraticConstant(q) => {
                let mut f = DriverFile::empty(DriverKind::QuadraticConstant);
                f.alpha = Some(q.alpha());
                f.beta = Some(q.beta());
                f
            }
            SpecializedDriver::MonotoneNetwork(h) => DriverFile::empty(DriverKind::MonotoneNetwork).with_monotone(h),
            SpecializedDriver::ShiftedMonotone(s) => {
                let mut f = DriverFile::empty(DriverKind::ShiftedMonotone).with_monotone(s.h());
                f.secondary = Some(NetworkRecord::from_mlp(s.shift()));
                f.mu = Some(s.mu());
                f
            }
            SpecializedDriver::PolynomialTest(p) => {
                let mut f = DriverFile::empty(DriverKind::PolynomialTest);
                f.coefficients = Some(p.coefficients().to_vec());
                f
            }
            SpecializedDriver::MeanField(m) => {
                let mut f = DriverFile::empty(DriverKind::MeanField).with_monotone(m.h());
                f.secondary = Some(NetworkRecord::from_mlp(m.interaction()));
                f
            }
        }
    }

    fn monotone(&self) -> Result<MonotoneNet, DriverError> {
        let mlp = if self.layer_sizes.is_empty() {
            None
        } else {
            let rec = NetworkRecord {
                layer_sizes: self.layer_sizes.clone(),
                activation: required(self.activation, "activation")?,
                raw_weights: self.raw_weights.clone(),
                biases: self.biases.clone(),
                positivity_mask: self.positivity_mask.clone(),
            };
            Some(rec.to_mlp("raw_weights")?)
        };
        let skip = required(self.skip_raw_slope, "skip_raw_slope")?;
        let c_h = required(self.c_h, "c_h")?;
        MonotoneNet::new(mlp, skip, c_h).map_err(|e| match e {
            DriverError::Precondition(msg) if !(c_h > 0.0) => parse_err("c_h", msg),
            other => parse_err("positivity_mask", other.to_string()),
        })
    }

    pub fn to_driver(&self) -> Result<SpecializedDriver, DriverError> {
        match self.kind {
            DriverKind::QuadraticConstant => {
                let alpha = required(self.alpha, "alpha")?;
                let beta = required(self.beta, "beta")?;
                QuadraticDriver::new(alpha, beta)
                    .map(SpecializedDriver::QuadraticConstant)
                    .map_err(|e| parse_err("beta", e.to_string()))
            }
            DriverKind::MonotoneNetwork => Ok(SpecializedDriver::MonotoneNetwork(self.monotone()?)),
            DriverKind::ShiftedMonotone => {
                let h = self.monotone()?;
                let shift = self
                    .secondary
                    .as_ref()
                    .ok_or_else(|| parse_err("secondary", "shift network missing"))?
                    .to_mlp("secondary")?;
                let mu = required(self.mu, "mu")?;
                ShiftedMonotone::new(h, shift, mu)
                    .map(SpecializedDriver::ShiftedMonotone)
                    .map_err(|e| parse_err("mu", e.to_string()))
            }
            DriverKind::PolynomialTest => {
                let c = self
                    .coefficients
                    .clone()
                    .ok_or_else(|| parse_err("coefficients", "missing for this driver kind"))?;
                Polynomial::new(c)
                    .map(SpecializedDriver::PolynomialTest)
                    .map_err(|e| parse_err("coefficients", e.to_string()))
            }
            DriverKind::MeanField => {
                let h = self.monotone()?;
                let phi = self
                    .secondary
                    .as_ref()
                    .ok_or_else(|| parse_err("secondary", "interaction network missing"))?
                    .to_mlp("secondary")?;
                MeanFieldDriver::new(h, phi)
                    .map(SpecializedDriver::MeanField)
                    .map_err(|e| parse_err("secondary", e.to_string()))
            }
        }
    }
}

pub fn driver_to_json(d: &SpecializedDriver) -> String {
    serde_json::to_string_pretty(&DriverFile::from_driver(d)).expect("driver files serialise")
}

pub fn driver_from_json(text: &str) -> Result<SpecializedDriver, DriverError> {
    let file: DriverFile = serde_json::from_str(text).map_err(|e| parse_err("<document>", e.to_string()))?;
    file.to_driver()
}

pub fn save_driver(d: &SpecializedDriver, path: impl AsRef<Path>) -> Result<(), DriverError> {
    fs::write(path, driver_to_json(d))?;
    Ok(())
}

pub fn load_driver(path: impl AsRef<Path>) -> Result<SpecializedDriver, DriverError> {
    let text = fs::read_to_string(path)?;
    driver_from_json(&text)
}
