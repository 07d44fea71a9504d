//! Pipeline configuration. Every field has a default, so a config file only
//! needs the values it changes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detector::DetectorParams;
use crate::error::{Error, Result};
use crate::pose_graph::GraphParams;
use crate::refine::RefineParams;
use crate::verifier::VerifierParams;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Model sampling distance as a fraction of the model diameter.
    pub tau: f64,
    /// PPF angle quantization step in radians.
    pub angle_step: f64,
    /// Scenes are thinned to this fraction of the codebook distance step
    /// before verification.
    pub verify_sample_factor: f64,
    /// Rigidly re-register the refined union to the model.
    pub anchor: bool,
    /// Multiplies every coordinate read from mesh and scene files.
    pub unit_scale: f64,
    pub detector: DetectorParams,
    pub verifier: VerifierParams,
    pub graph: GraphParams,
    pub refine: RefineParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tau: 0.03,
            angle_step: 12f64.to_radians(),
            verify_sample_factor: 0.5,
            anchor: true,
            unit_scale: 1.0,
            detector: DetectorParams::default(),
            verifier: VerifierParams::default(),
            graph: GraphParams::default(),
            refine: RefineParams::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 0.2) {
            return Err(Error::Config(format!("tau = {}, need 0 < tau < 0.2", self.tau)));
        }
        if !(self.angle_step > 0.0 && self.angle_step <= std::f64::consts::PI) {
            return Err(Error::Config(format!(
                "angle_step = {}, need 0 < step <= pi",
                self.angle_step
            )));
        }
        if !(self.verify_sample_factor > 0.0 && self.verify_sample_factor <= 1.0) {
            return Err(Error::Config("verify_sample_factor must lie in (0, 1]".into()));
        }
        if !(self.unit_scale > 0.0 && self.unit_scale.is_finite()) {
            return Err(Error::Config("unit_scale must be positive".into()));
        }
        self.detector.validate()?;
        self.verifier.validate()?;
        self.graph.validate()?;
        self.refine.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }
}
