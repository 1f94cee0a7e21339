//! Command-line harness around `lowrank-duel`: instance generation, landscape
//! and SDP runs, the duel between them, RIP tables, certificates and completion.
//!
//! Exit codes: 0 expectations met, 1 violated, 2 usage error, 3 not applicable.

pub mod commands;
pub mod config;
pub mod duel;

use std::path::Path;

use serde::Serialize;

use crate::config::{EffectiveTolerances, ExperimentConfig};

pub const EXIT_OK: u8 = 0;
pub const EXIT_VIOLATED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NOT_APPLICABLE: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] lowrank_duel::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use lowrank_duel::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(E::NotApplicable(_)) => EXIT_NOT_APPLICABLE,
            CliError::Core(E::InvalidInput(_) | E::Json(_) | E::Io(_)) => EXIT_USAGE,
            CliError::Core(_) | CliError::Csv(_) => EXIT_VIOLATED,
        }
    }
}

/// Rendered output of a command and the exit code it asks for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Outcome {
    pub body: String,
    pub code: u8,
}

/// Header attached to every output: versions, the command, the effective
/// configuration and every tolerance in force.
#[derive(Clone, Debug, Serialize)]
pub struct Meta<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ExperimentConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<&'a Path>,
    pub tolerances: &'a EffectiveTolerances,
}

impl<'a> Meta<'a> {
    pub fn new(command: &'a str, tolerances: &'a EffectiveTolerances) -> Self {
        Meta {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            command,
            config: None,
            input: None,
            tolerances,
        }
    }

    pub fn csv_header(&self) -> String {
        let mut s = format!("# tool {} {}\n# command {}\n", self.tool, self.version, self.command);
        if let Some(cfg) = &self.config {
            s += &format!("# config {}\n", serde_json::to_string(cfg).expect("serializable"));
        }
        if let Some(p) = self.input {
            s += &format!("# input {}\n", p.display());
        }
        s += &format!(
            "# tolerances {}\n",
            serde_json::to_string(self.tolerances).expect("serializable")
        );
        s
    }
}

/// `{"meta": meta, key: value}` pretty-printed with a trailing newline.
pub fn json_with_meta<T: Serialize>(meta: &Meta, key: &str, value: &T) -> String {
    let mut map = serde_json::Map::new();
    map.insert("meta".into(), serde_json::to_value(meta).expect("serializable"));
    map.insert(key.into(), serde_json::to_value(value).expect("serializable"));
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("serializable");
    s.push('\n');
    s
}
