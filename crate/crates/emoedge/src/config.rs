//! TOML configuration covering the frontend, augmentation, compiler
//! policy and streaming runtime. Every section and key is optional.

use std::path::Path;

use emoedge_core::compiler::OpSupportPolicy;
use emoedge_core::datapipe::AugmentConfig;
use emoedge_core::models::DB_FLOOR;
use emoedge_core::FrontendConfig;
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RuntimeOptions {
    /// Decibel floor applied to features before inference.
    pub db_floor: f32,
    /// Completed windows allowed to wait for the inference thread.
    pub queue_depth: usize,
    /// Samples handed to the frontend per read.
    pub chunk_samples: usize,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self { db_floor: DB_FLOOR, queue_depth: 2, chunk_samples: 160 }
    }
}

impl RuntimeOptions {
    pub fn validate(&self) -> Result<(), Error> {
        if !(self.db_floor < 0.0) {
            return Err(Error::Config(format!("db_floor must be negative, got {}", self.db_floor)));
        }
        if self.queue_depth == 0 || self.chunk_samples == 0 {
            return Err(Error::Config("queue_depth and chunk_samples must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub frontend: FrontendConfig,
    pub augment: AugmentConfig,
    pub policy: OpSupportPolicy,
    pub runtime: RuntimeOptions,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.frontend.validate()?;
        cfg.runtime.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::io(path, source))?;
        Self::parse(&text)
    }

    /// The file at `path`, or defaults when none is given.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self, Error> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = Config::default();
        assert_eq!(Config::parse(&cfg.to_toml()).unwrap(), cfg);
        assert_eq!(Config::parse("").unwrap(), cfg);
    }

    #[test]
    fn partial_and_invalid() {
        let cfg = Config::parse("[frontend]\npcan_enabled = true\n[runtime]\ndb_floor = -60.0\n").unwrap();
        assert!(cfg.frontend.pcan_enabled);
        assert_eq!(cfg.runtime.db_floor, -60.0);
        assert!(Config::parse("[runtime]\ndb_floor = 3.0\n").is_err());
        assert!(Config::parse("[frontend]\nbogus = 1\n").is_err());
    }
}
