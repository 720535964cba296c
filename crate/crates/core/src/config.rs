//! Workbench configuration: one JSON file carrying every tunable, with
//! defaults for anything left out.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::SummaryOptions;
use crate::domain::Catalog;
use crate::error::{Error, Result};
use crate::sequencer::SuiteConfig;
use crate::session::SessionConfig;
use crate::simulator::{SimConfig, UserModel};
use crate::sink::SinkConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: SocketAddr,
    /// Session logs are written here when a connection closes.
    pub log_dir: PathBuf,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8765)),
            log_dir: PathBuf::from("logs"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkbenchConfig {
    pub catalog: Catalog,
    pub session: SessionConfig,
    pub suite: SuiteConfig,
    pub simulation: SimConfig,
    pub user_model: UserModel,
    pub sink: SinkConfig,
    pub serve: ServeConfig,
    pub analysis: SummaryOptions,
}

impl WorkbenchConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        self.suite.validate()?;
        self.simulation.validate()?;
        self.user_model.validate()?;
        if self.sink.buffer_bound == 0 {
            return Err(Error::InvalidConfig(
                "sink.buffer_bound must be positive".into(),
            ));
        }
        Ok(())
    }
}
