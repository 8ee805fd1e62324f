//! Run configuration shared by every command.
//!
//! One TOML document with a section per module. Unknown keys are rejected.
//! Precedence is flag > file > default; command-line overrides are applied
//! by the caller after [`RunConfig::from_toml_str`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::connector::ConnectorConfig;
use crate::error::{Error, Result};
use crate::geotrans::{GeoConfig, GeoTrainConfig};
use crate::policy::{PolicyConfig, PolicyTrainConfig};
use crate::scenegen::RandomizationConfig;
use crate::simrobot::SimConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeoSection {
    pub model: GeoConfig,
    pub train: GeoTrainConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub model: PolicyConfig,
    pub train: PolicyTrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the seed of every section.
    pub seed: Option<u64>,
    /// Forces single-threaded execution.
    pub deterministic: bool,
    pub scenegen: RandomizationConfig,
    pub geotrans: GeoSection,
    pub connector: ConnectorConfig,
    pub policy: PolicySection,
    pub simrobot: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            deterministic: true,
            scenegen: RandomizationConfig::default(),
            geotrans: GeoSection::default(),
            connector: ConnectorConfig::default(),
            policy: PolicySection::default(),
            simrobot: SimConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("{}: {}", origin.display(), e.message())))?;
        if let Some(seed) = cfg.seed {
            cfg.set_seed(seed);
        }
        Ok(cfg)
    }

    /// Reads `path`, or returns defaults when no file is given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::from_toml_str(&text, p)
            }
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = Some(seed);
        self.scenegen.master_seed = seed;
        self.geotrans.train.seed = seed;
        self.policy.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.scenegen.validate()?;
        self.geotrans.model.validate()?;
        self.policy.model.validate()?;
        self.simrobot.validate()?;
        let geo = (self.geotrans.model.image_width, self.geotrans.model.image_height);
        for (name, w, h) in [
            ("scenegen", self.scenegen.width, self.scenegen.height),
            ("simrobot.scene", self.simrobot.scene.width, self.simrobot.scene.height),
        ] {
            if (w as usize, h as usize) != geo {
                return Err(Error::Config(format!("{name} image {w}x{h} does not match geotrans {}x{}", geo.0, geo.1)));
            }
        }
        Ok(())
    }

    /// Canonical TOML rendering, logged and embedded in artifacts.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
