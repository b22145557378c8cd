//! Single JSON run configuration echoing every module default.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::actuation::ActuationParams;
use crate::baselines::BridgeParams;
use crate::policy::{Architecture, ExpertConfig, TrainConfig};
use crate::sensor::CameraModel;
use crate::simulate::{CollectConfig, SimParams};
use crate::world::ScenarioParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcdConfig {
    /// Lane spacing, meters. Derived from the camera footprint when absent.
    pub lane_spacing_m: Option<f64>,
}

/// Everything a pipeline stage reads. Unknown keys are rejected at any depth.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioParams,
    pub camera: CameraModel,
    pub sim: SimParams,
    pub expert: ExpertConfig,
    pub collect: CollectConfig,
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub bridge: BridgeParams,
    pub bcd: BcdConfig,
    pub actuation: ActuationParams,
}

impl RunConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse { path: origin.to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_value(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// First 8 bytes of SHA-256 over the compact JSON, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(&Sha256::digest(text.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_hash_is_stable() {
        let c = RunConfig::default();
        let back = RunConfig::from_json(&serde_json::to_string(&c).unwrap(), "inline").unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(RunConfig::from_json("{}", "inline").unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#, "inline").is_err());
        assert!(RunConfig::from_json(r#"{"sim": {"speed": 1.0, "warp": 2}}"#, "inline").is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let mut c = RunConfig::default();
        let h = c.hash();
        c.sim.speed = 1.5;
        assert_ne!(c.hash(), h);
    }
}
