//! Run-configuration files (TOML, explicit schema version, unknown keys
//! rejected).
//!
//! ```toml
//! schema_version = 1
//!
//! [run]
//! horizon = 500
//! beta = 0.1
//! pm_eval = "pre_update"
//! normalization = "raw"
//! seed = 7
//!
//! [run.alpha_schedule]
//! kind = "linear"
//! alpha0 = 0.5
//! alpha_min = 0.0
//!
//! [run.environment]
//! dim = 2
//! learning_rate = 0.05
//! theta0 = [0.0, 0.0]
//!
//! [run.environment.target]
//! label = "target"
//! center = [1.0, 1.0]
//! curvature = [1.0, 1.0]
//!
//! [[run.environment.auxiliaries]]
//! label = "aux-0"
//! center = [2.0, 0.5]
//! curvature = [1.0, 1.0]
//! ```
//!
//! Omitting `[run.environment]` configures an external trainer.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::RunConfig;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub schema_version: u32,
    pub run: RunConfig,
}

impl ConfigFile {
    pub fn new(run: RunConfig) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            run,
        }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(Error::config(format!(
            "schema_version {} is not supported (expected {SCHEMA_VERSION})",
            file.schema_version
        )));
    }
    file.run.validate()?;
    Ok(file.run)
}

pub fn render_config(run: &RunConfig) -> Result<String> {
    toml::to_string(&ConfigFile::new(run.clone())).map_err(|e| Error::config(e.to_string()))
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_config(path: &Path, run: &RunConfig) -> Result<()> {
    let text = render_config(run)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
